"""Finite-difference verification of every analytic gradient path.

Builds small random two-branch instances (3 classes, 8-dim embeddings,
batch of 6) and compares the analytic gradients of each loss against
central finite differences over a sampled subset of encoder parameters and
prototypes. Loss values for the differencing are recomputed from scratch
on perturbed parameters, so the numeric side never touches the backward
code it is checking.
"""

from __future__ import annotations

import numpy as np

from .encoder import (
    EncoderParams,
    EncoderSpec,
    FiniteDiffReport,
    encoder_backward,
    encoder_forward,
    finite_diff_check,
)
from .inconsistency import (
    DivHyperParams,
    inconsistency_loss,
    own_class_dots,
    proximity_probs,
    triplet_loss,
)
from .prototypes import PrototypeSet, compactness_loss, dce_loss, pl_loss

_SPEC = EncoderSpec(input_dim=12, hidden_dims=(16,), output_dim=8, activation="relu")
_N_CLASSES = 3
_BATCH = 6


def _random_branch_arrays(rng: np.random.Generator) -> list[np.ndarray]:
    dims = _SPEC.layer_dims
    arrays = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        arrays.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        arrays.append(rng.standard_normal(fan_out) * 0.1)
    arrays.append(rng.standard_normal((_N_CLASSES, _SPEC.output_dim)))
    return arrays


def _rebuild(arrays: list[np.ndarray]) -> tuple[EncoderParams, PrototypeSet]:
    n_layers = len(_SPEC.layer_dims) - 1
    enc = EncoderParams(
        spec=_SPEC,
        weights=[arrays[2 * i] for i in range(n_layers)],
        biases=[arrays[2 * i + 1] for i in range(n_layers)],
        init_seed=0,
    )
    protos = PrototypeSet(prototypes=arrays[-1], seed=0)
    return enc, protos


def _single_branch_case(loss_kind: str, hp: DivHyperParams, x, labels):
    """(loss_fn over arrays, analytic_grads_fn over arrays) for one branch."""

    def compute(arrays):
        enc, protos = _rebuild(arrays)
        emb, cache = encoder_forward(enc, x)
        if loss_kind == "dce":
            loss, dz, dp = dce_loss(emb, labels, protos)
        elif loss_kind == "compactness":
            loss, dz, dp = compactness_loss(emb, labels, protos)
        elif loss_kind == "pl":
            loss, dz, dp = pl_loss(emb, labels, protos, hp.pl())
        elif loss_kind == "triplet":
            loss, dz, dp = triplet_loss(emb, labels, protos, hp.m2)
        else:
            raise ValueError(loss_kind)
        return loss, encoder_backward(cache, dz).arrays() + [dp]

    return (lambda arrays: compute(arrays)[0]), (lambda arrays: compute(arrays)[1])


def _frozen_own_dots(base_arrays, x, labels):
    """Stop-gradient reference dots z.p^y, fixed at the unperturbed point.

    The margin distance treats this term as a constant under
    differentiation, so the finite-difference target function must hold it
    frozen while everything else varies.
    """
    half = len(base_arrays) // 2
    frozen = []
    for side in (base_arrays[:half], base_arrays[half:]):
        enc, protos = _rebuild(side)
        emb, _ = encoder_forward(enc, x)
        frozen.append(own_class_dots(emb, labels, protos))
    return frozen


def _incon_case(hp: DivHyperParams, x, labels, base_arrays):
    own_a, own_b = _frozen_own_dots(base_arrays, x, labels)

    def compute(arrays):
        half = len(arrays) // 2
        enc_a, protos_a = _rebuild(arrays[:half])
        enc_b, protos_b = _rebuild(arrays[half:])
        emb_a, cache_a = encoder_forward(enc_a, x)
        emb_b, cache_b = encoder_forward(enc_b, x)
        dist_a = proximity_probs(emb_a, labels, protos_a, hp.m1, own_dots=own_a)
        dist_b = proximity_probs(emb_b, labels, protos_b, hp.m1, own_dots=own_b)
        inc = inconsistency_loss(dist_a, dist_b, hp.epsilon_log)
        grads = (
            encoder_backward(cache_a, inc.d_embeddings_a).arrays()
            + [inc.d_prototypes_a]
            + encoder_backward(cache_b, inc.d_embeddings_b).arrays()
            + [inc.d_prototypes_b]
        )
        return inc.loss, grads

    return (lambda arrays: compute(arrays)[0]), (lambda arrays: compute(arrays)[1])


def _div_case(hp: DivHyperParams, x, labels, base_arrays):
    own_a, own_b = _frozen_own_dots(base_arrays, x, labels)

    def compute(arrays):
        half = len(arrays) // 2
        enc_a, protos_a = _rebuild(arrays[:half])
        enc_b, protos_b = _rebuild(arrays[half:])
        emb_a, cache_a = encoder_forward(enc_a, x)
        emb_b, cache_b = encoder_forward(enc_b, x)
        pl_a, dz_a, dp_a = pl_loss(emb_a, labels, protos_a, hp.pl())
        pl_b, dz_b, dp_b = pl_loss(emb_b, labels, protos_b, hp.pl())
        dist_a = proximity_probs(emb_a, labels, protos_a, hp.m1, own_dots=own_a)
        dist_b = proximity_probs(emb_b, labels, protos_b, hp.m1, own_dots=own_b)
        inc = inconsistency_loss(dist_a, dist_b, hp.epsilon_log)
        trip_a, dz_ta, dp_ta = triplet_loss(emb_a, labels, protos_a, hp.m2)
        trip_b, dz_tb, dp_tb = triplet_loss(emb_b, labels, protos_b, hp.m2)
        total = pl_a + pl_b + hp.gamma * inc.loss + hp.alpha * (trip_a + trip_b)
        dz_a = dz_a + hp.gamma * inc.d_embeddings_a + hp.alpha * dz_ta
        dz_b = dz_b + hp.gamma * inc.d_embeddings_b + hp.alpha * dz_tb
        dp_a = dp_a + hp.gamma * inc.d_prototypes_a + hp.alpha * dp_ta
        dp_b = dp_b + hp.gamma * inc.d_prototypes_b + hp.alpha * dp_tb
        grads = (
            encoder_backward(cache_a, dz_a).arrays()
            + [dp_a]
            + encoder_backward(cache_b, dz_b).arrays()
            + [dp_b]
        )
        return total, grads

    return (lambda arrays: compute(arrays)[0]), (lambda arrays: compute(arrays)[1])


LOSS_NAMES = ("dce", "compactness", "pl", "incon", "triplet", "div")


def check_loss_gradients(
    loss_name: str, instance_seed: int, n_coords: int = 420, eps: float = 1e-4
) -> FiniteDiffReport:
    """Finite-difference check of one loss on one random instance."""
    rng = np.random.default_rng(instance_seed)
    x = rng.standard_normal((_BATCH, _SPEC.input_dim))
    labels = rng.integers(1, _N_CLASSES + 1, size=_BATCH)
    hp = DivHyperParams()
    if loss_name in ("dce", "compactness", "pl", "triplet"):
        arrays = _random_branch_arrays(rng)
        loss_fn, grads_fn = _single_branch_case(loss_name, hp, x, labels)
    elif loss_name == "incon":
        arrays = _random_branch_arrays(rng) + _random_branch_arrays(rng)
        loss_fn, grads_fn = _incon_case(hp, x, labels, arrays)
    elif loss_name == "div":
        arrays = _random_branch_arrays(rng) + _random_branch_arrays(rng)
        loss_fn, grads_fn = _div_case(hp, x, labels, arrays)
    else:
        raise ValueError(f"unknown loss {loss_name!r}")
    return finite_diff_check(
        arrays, loss_fn, grads_fn(arrays), eps=eps, n_coords=n_coords, seed=instance_seed
    )


def run_gradient_suite(n_seeds: int = 5, n_coords: int = 420, eps: float = 1e-4):
    """All losses x seeds, aggregated per loss.

    Returns [(loss_name, FiniteDiffReport)] where each report carries the
    worst relative error and the summed coordinate counts over the seeds.
    """
    results = []
    for name in LOSS_NAMES:
        worst = FiniteDiffReport(0.0, 0, 0, 0)
        for t in range(n_seeds):
            rep = check_loss_gradients(name, instance_seed=1000 + t, n_coords=n_coords, eps=eps)
            worst = FiniteDiffReport(
                max_rel_error=max(worst.max_rel_error, rep.max_rel_error),
                n_checked=worst.n_checked + rep.n_checked,
                n_kink_skipped=worst.n_kink_skipped + rep.n_kink_skipped,
                n_small_skipped=worst.n_small_skipped + rep.n_small_skipped,
            )
        results.append((name, worst))
    return results
