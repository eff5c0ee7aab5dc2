"""Per-class learnable prototypes with a distance-softmax classifier.

The generalized distance between an embedding z and a prototype p is the
negated dot product d(z, p) = -z.p, so the class posterior is a softmax over
dot products. The training objective of a single branch combines the
distance cross-entropy with a compactness term pulling embeddings onto
their own prototype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COMPACTNESS_FORMS = ("huber_sq", "literal")


@dataclass
class PrototypeSet:
    """N learnable class prototypes, row k-1 for remapped class k."""

    prototypes: np.ndarray  # (N, d)
    seed: int

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise ValueError(
                f"prototypes must be (N >= 2, d), got shape {self.prototypes.shape}"
            )

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True)
class PLHyperParams:
    """Weight of the compactness term and which small-residual form to use."""

    beta: float = 1.0
    compactness_form: str = "huber_sq"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.compactness_form not in COMPACTNESS_FORMS:
            raise ValueError(f"compactness_form must be one of {COMPACTNESS_FORMS}")


def init_prototypes(n_classes: int, dim: int, seed: int) -> PrototypeSet:
    """Standard-normal prototype init, deterministic per seed."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    return PrototypeSet(prototypes=rng.standard_normal((n_classes, dim)), seed=seed)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    logits = np.atleast_2d(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 1 or labels.max() > n_classes:
        raise ValueError(f"labels must lie in 1..{n_classes}")
    return labels


def class_posterior(z: np.ndarray, prototypes: PrototypeSet) -> np.ndarray:
    """Posterior over the N known classes for a single embedding."""
    z = np.asarray(z, dtype=np.float64)
    return softmax(prototypes.prototypes @ z)[0]


def dce_loss(embeddings: np.ndarray, labels, prototypes: PrototypeSet):
    """Distance cross-entropy: mean negative log posterior of the true class.

    Returns (loss, d_embeddings, d_prototypes). Computed through log-softmax,
    so the log argument never underflows.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    p = prototypes.prototypes
    y0 = _check_labels(labels, prototypes.n_classes) - 1
    m = z.shape[0]
    logits = z @ p.T
    logp = log_softmax(logits)
    loss = -logp[np.arange(m), y0].mean()
    dlogits = softmax(logits)
    dlogits[np.arange(m), y0] -= 1.0
    dlogits /= m
    return loss, dlogits @ p, dlogits.T @ z


def compactness_loss(
    embeddings: np.ndarray, labels, prototypes: PrototypeSet, form: str = "huber_sq"
):
    """Smooth-L1 pull of each embedding onto its own prototype.

    With u = z - p^y:  0.5*||u||_2^2 when ||u||_1 < 1, else ||u||_1 - 0.5.
    form="literal" keeps the unsquared small branch 0.5*||u||_2 instead.
    """
    if form not in COMPACTNESS_FORMS:
        raise ValueError(f"form must be one of {COMPACTNESS_FORMS}")
    z = np.asarray(embeddings, dtype=np.float64)
    p = prototypes.prototypes
    y0 = _check_labels(labels, prototypes.n_classes) - 1
    m = z.shape[0]
    u = z - p[y0]
    l1 = np.abs(u).sum(axis=1)
    small = l1 < 1.0
    if form == "huber_sq":
        small_vals = 0.5 * (u * u).sum(axis=1)
        du_small = u
    else:
        l2 = np.sqrt((u * u).sum(axis=1))
        small_vals = 0.5 * l2
        denom = np.where(l2 > 0, l2, 1.0)
        du_small = 0.5 * u / denom[:, None]  # subgradient 0 at u = 0
        du_small[l2 == 0] = 0.0
    loss = np.where(small, small_vals, l1 - 0.5).mean()
    du = np.where(small[:, None], du_small, np.sign(u)) / m
    d_protos = np.zeros_like(p)
    np.add.at(d_protos, y0, -du)
    return loss, du, d_protos


def pl_loss(embeddings: np.ndarray, labels, prototypes: PrototypeSet, hp: PLHyperParams):
    """Single-branch objective: DCE plus beta times the compactness term."""
    dce, dz_dce, dp_dce = dce_loss(embeddings, labels, prototypes)
    if hp.beta == 0.0:
        return dce, dz_dce, dp_dce
    com, dz_com, dp_com = compactness_loss(
        embeddings, labels, prototypes, form=hp.compactness_form
    )
    return (
        dce + hp.beta * com,
        dz_dce + hp.beta * dz_com,
        dp_dce + hp.beta * dp_com,
    )
