"""Flatten-then-MLP encoder with analytic forward/backward and SGD updates.

Everything is float64 and deterministic. The backward pass is written for
exactness, not speed: every gradient produced on top of this encoder is
validated against central finite differences (finite_diff_check).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_deriv(z):
    # subgradient 0 at the kink
    return (z > 0.0).astype(np.float64)


def _tanh(z):
    return np.tanh(z)


def _tanh_deriv(z):
    t = np.tanh(z)
    return 1.0 - t * t


ACTIVATIONS = {"relu": (_relu, _relu_deriv), "tanh": (_tanh, _tanh_deriv)}


@dataclass(frozen=True)
class EncoderSpec:
    """Layer widths of the encoder: input -> hidden_dims... -> output_dim.

    Hidden layers carry the activation; the output layer is linear so the
    embedding space spans all of R^d.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dims must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class EncoderParams:
    """Per-layer weights (fan_out, fan_in) and biases (fan_out,)."""

    spec: EncoderSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...] in update order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class TrainBatch:
    """Flattened window inputs (M, input_dim) with class labels 1..N."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError(f"inputs must be (M, D) with M >= 1, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be one per input row")
        if (self.labels < 1).any():
            raise ValueError("labels must be >= 1 (contiguous class ids)")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def init_encoder(spec: EncoderSpec, seed: int) -> EncoderParams:
    """He-style init: W ~ N(0, 2/fan_in), biases zero, deterministic per seed."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(spec=spec, weights=weights, biases=biases, init_seed=seed)


@dataclass
class ForwardCache:
    """Activations recorded by encoder_forward, consumed by encoder_backward."""

    params: EncoderParams
    layer_inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each layer


def encoder_forward(params: EncoderParams, inputs: np.ndarray):
    """Map a batch (M, input_dim) to embeddings (M, output_dim).

    Returns (embeddings, cache); the cache holds everything backward needs.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"inputs must be (M, {params.spec.input_dim}), got {x.shape}"
        )
    act, _ = ACTIVATIONS[params.spec.activation]
    n_layers = len(params.weights)
    layer_inputs, preacts = [], []
    a = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = act(z) if i < n_layers - 1 else z
    return a, ForwardCache(params=params, layer_inputs=layer_inputs, preacts=preacts)


@dataclass
class EncoderGrads:
    """Gradients mirroring EncoderParams shapes."""

    dweights: list[np.ndarray]
    dbiases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for dw, db in zip(self.dweights, self.dbiases):
            out.extend((dw, db))
        return out


def encoder_backward(cache: ForwardCache, grad_embeddings: np.ndarray) -> EncoderGrads:
    """Backpropagate d(loss)/d(embeddings) to parameter gradients."""
    params = cache.params
    grad = np.asarray(grad_embeddings, dtype=np.float64)
    expected = cache.preacts[-1].shape
    if grad.shape != expected:
        raise RuntimeError(
            f"stale or mismatched cache: grad_embeddings has shape {grad.shape}, "
            f"forward produced {expected}"
        )
    _, deriv = ACTIVATIONS[params.spec.activation]
    dweights = [np.empty(0)] * len(params.weights)
    dbiases = [np.empty(0)] * len(params.biases)
    delta = grad
    for i in range(len(params.weights) - 1, -1, -1):
        dweights[i] = delta.T @ cache.layer_inputs[i]
        dbiases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * deriv(cache.preacts[i - 1])
    return EncoderGrads(dweights=dweights, dbiases=dbiases)


@dataclass
class OptimizerState:
    """SGD-with-momentum state over a fixed list of parameter arrays."""

    learning_rate: float
    momentum: float
    velocities: list[np.ndarray]
    epoch: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


def init_optimizer(arrays: list[np.ndarray], learning_rate: float, momentum: float = 0.9) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate,
        momentum=momentum,
        velocities=[np.zeros_like(a) for a in arrays],
    )


def sgd_step(arrays: list[np.ndarray], grads: list[np.ndarray], opt: OptimizerState) -> None:
    """In-place update: v <- momentum*v + g; p <- p - lr*v.

    Raises on non-finite gradients so the trainer can surface the batch.
    """
    if len(arrays) != len(grads) or len(arrays) != len(opt.velocities):
        raise ValueError("arrays, grads, and velocities must align")
    for a, g, v in zip(arrays, grads, opt.velocities):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {a.shape}")
        if not np.isfinite(g).all():
            raise ValueError("non-finite gradient")
        v *= opt.momentum
        v += g
        a -= opt.learning_rate * v


def lr_schedule(epoch: int, base_lr: float) -> float:
    """Step decay by 0.1 at epochs 60 and 80."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch < 60:
        return base_lr
    if epoch < 80:
        return base_lr * 0.1
    return base_lr * 0.01


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    n_checked: int
    n_kink_skipped: int
    n_small_skipped: int
    worst_coord: tuple[int, int] | None = None  # (array index, flat offset)


def finite_diff_check(
    arrays: list[np.ndarray],
    loss_fn,
    analytic_grads: list[np.ndarray],
    eps: float = 1e-4,
    n_coords: int = 200,
    seed: int = 0,
    kink_tol: float = 1e-3,
) -> FiniteDiffReport:
    """Compare analytic gradients against central finite differences.

    Samples up to n_coords coordinates across the given arrays. Coordinates
    where the two one-sided slopes disagree are skipped as kink-adjacent
    (the test never consults the analytic value, so it cannot mask a wrong
    gradient); coordinates where both analytic and numeric are below 1e-8
    are exempt from the relative comparison.
    """
    work = [np.array(a, dtype=np.float64) for a in arrays]
    base = float(loss_fn(work))
    sizes = [a.size for a in work]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(total, size=min(n_coords, total), replace=False))
    bounds = np.cumsum(sizes)

    max_rel = 0.0
    worst = None
    n_checked = n_kink = n_small = 0
    for flat in picked:
        ai = int(np.searchsorted(bounds, flat, side="right"))
        off = int(flat - (bounds[ai - 1] if ai > 0 else 0))
        orig = work[ai].flat[off]
        work[ai].flat[off] = orig + eps
        f_plus = float(loss_fn(work))
        work[ai].flat[off] = orig - eps
        f_minus = float(loss_fn(work))
        work[ai].flat[off] = orig

        s_plus = (f_plus - base) / eps
        s_minus = (base - f_minus) / eps
        if abs(s_plus - s_minus) > kink_tol * max(1.0, abs(s_plus), abs(s_minus)):
            n_kink += 1
            continue
        numeric = (f_plus - f_minus) / (2 * eps)
        analytic = float(analytic_grads[ai].flat[off])
        if abs(analytic) < 1e-8 and abs(numeric) < 1e-8:
            n_small += 1
            continue
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
        n_checked += 1
        if rel > max_rel:
            max_rel = rel
            worst = (ai, off)
    return FiniteDiffReport(
        max_rel_error=max_rel,
        n_checked=n_checked,
        n_kink_skipped=n_kink,
        n_small_skipped=n_small,
        worst_coord=worst,
    )


CHECKPOINT_FORMAT = "predin-encoder-v1"


def save_encoder(path, params: EncoderParams) -> None:
    """Write an exact (bitwise round-trippable) encoder checkpoint."""
    payload = {
        "format": np.array(CHECKPOINT_FORMAT),
        "activation": np.array(params.spec.activation),
        "layer_dims": np.array(params.spec.layer_dims, dtype=np.int64),
        "init_seed": np.array(params.init_seed, dtype=np.int64),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_encoder(path) -> EncoderParams:
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {fmt!r}")
        dims = tuple(int(d) for d in data["layer_dims"])
        spec = EncoderSpec(
            input_dim=dims[0],
            hidden_dims=dims[1:-1],
            output_dim=dims[-1],
            activation=str(data["activation"]),
        )
        n_layers = len(dims) - 1
        weights = [data[f"w{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
        return EncoderParams(
            spec=spec, weights=weights, biases=biases, init_seed=int(data["init_seed"])
        )
