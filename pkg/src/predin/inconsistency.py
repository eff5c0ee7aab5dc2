"""Cross-branch inconsistency learning: the core training machinery.

Two prototype branches are trained on identical mini-batches. Within each
branch, per-sample proximity distributions over the non-corresponding
classes are built from margin-clamped relative distances; the inconsistency
loss then pushes the two branches' distributions toward opposite extremes,
while a triplet term keeps classes separated inside each branch.

Loss pieces, with y the sample's class and sg() a stop-gradient:
  margin distance   d(z, p^j) = -max(sg(z.p^y) - z.p^j - m1, 0),  j != y
  proximity row     softmax_j of -d(z, p^j)       (uniform when all clamp)
  inconsistency     -mean_i log sum_j [pA(1-pB) + pB(1-pA)]   (clamped log)
  triplet           mean_i max(||z-p^y|| - ||z-p^j*|| + m2, 0),
                    j* the nearest other prototype to p^y, refreshed per batch
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import (
    EncoderGrads,
    EncoderParams,
    EncoderSpec,
    OptimizerState,
    TrainBatch,
    encoder_backward,
    encoder_forward,
    init_encoder,
    init_optimizer,
    lr_schedule,
    sgd_step,
)
from .prototypes import PLHyperParams, PrototypeSet, init_prototypes, pl_loss, softmax
from .signals import DatasetPartition


class TrainingError(RuntimeError):
    """Training diverged; the message carries epoch/batch diagnostics."""


@dataclass(frozen=True)
class DivHyperParams:
    """Weights and margins of the combined objective.

    beta scales compactness inside each branch's PL loss, gamma the
    cross-branch inconsistency loss, alpha the triplet loss; m1 is the
    inconsistency margin, m2 the triplet margin.
    """

    beta: float = 1.0
    gamma: float = 1.0
    alpha: float = 1.0
    m1: float = 0.5
    m2: float = 1.0
    epsilon_log: float = 1e-12
    compactness_form: str = "huber_sq"

    def __post_init__(self):
        if self.gamma < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be >= 0")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("margins must be >= 0")
        if not self.epsilon_log > 0:
            raise ValueError("epsilon_log must be > 0")

    def pl(self) -> PLHyperParams:
        return PLHyperParams(beta=self.beta, compactness_form=self.compactness_form)


@dataclass
class BranchState:
    """One perspective: encoder, prototypes, and their shared optimizer."""

    encoder: EncoderParams
    prototypes: PrototypeSet
    optimizer: OptimizerState

    def arrays(self) -> list[np.ndarray]:
        return self.encoder.arrays() + [self.prototypes.prototypes]


@dataclass
class DualModel:
    branch_a: BranchState
    branch_b: BranchState
    hp: DivHyperParams


def init_branch(
    spec: EncoderSpec,
    n_classes: int,
    encoder_seed: int,
    prototype_seed: int,
    learning_rate: float = 0.01,
    momentum: float = 0.9,
) -> BranchState:
    enc = init_encoder(spec, encoder_seed)
    protos = init_prototypes(n_classes, spec.output_dim, prototype_seed)
    arrays = enc.arrays() + [protos.prototypes]
    return BranchState(
        encoder=enc,
        prototypes=protos,
        optimizer=init_optimizer(arrays, learning_rate, momentum),
    )


# ---------------------------------------------------------------------------
# proximity distributions and the inconsistency loss
# ---------------------------------------------------------------------------


@dataclass
class ProximityCache:
    """Intermediates needed to backpropagate through a proximity row."""

    embeddings: np.ndarray  # (M, d)
    prototypes: np.ndarray  # (N, d)
    cols: np.ndarray  # (M, N-1) class indices (0-based) per row, own class removed
    active: np.ndarray  # (M, N-1) where the margin clamp is not engaged


@dataclass
class ProximityDistribution:
    """Row-stochastic (M, N-1) proximity over non-corresponding classes."""

    probs: np.ndarray
    labels: np.ndarray  # (M,) excluded class per row, 1..N
    cache: ProximityCache | None = None


def margin_distance(
    z: np.ndarray, prototypes: PrototypeSet, label: int, m1: float
) -> np.ndarray:
    """Margin-clamped relative distances of one embedding to the other classes.

    Entry j (in ascending class order, own class skipped) is
    -max(z.p^y - z.p^j - m1, 0); the z.p^y term is a constant under
    differentiation.
    """
    z = np.asarray(z, dtype=np.float64)
    n = prototypes.n_classes
    if not 1 <= label <= n:
        raise ValueError(f"label must lie in 1..{n}")
    dots = prototypes.prototypes @ z
    own = dots[label - 1]
    others = np.delete(dots, label - 1)
    return -np.maximum(own - others - m1, 0.0)


def own_class_dots(embeddings: np.ndarray, labels, prototypes: PrototypeSet) -> np.ndarray:
    """Per-sample dot product with the own-class prototype, z_i . p^{y_i}."""
    z = np.asarray(embeddings, dtype=np.float64)
    y0 = np.asarray(labels, dtype=np.int64) - 1
    return (z * prototypes.prototypes[y0]).sum(axis=1)


def proximity_probs(
    embeddings: np.ndarray,
    labels,
    prototypes: PrototypeSet,
    m1: float,
    keep_cache: bool = True,
    own_dots: np.ndarray | None = None,
) -> ProximityDistribution:
    """Per-sample softmax over margin-clamped relative distances.

    When every distance of a row clamps to zero the row is uniform.
    own_dots overrides the computed z.p^y reference per row; the
    finite-difference oracle uses it to hold that stop-gradient term at its
    unperturbed value.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    p = prototypes.prototypes
    labels = np.asarray(labels, dtype=np.int64)
    n = prototypes.n_classes
    if labels.min() < 1 or labels.max() > n:
        raise ValueError(f"labels must lie in 1..{n}")
    m = z.shape[0]
    y0 = labels - 1
    dots = z @ p.T
    grid = np.tile(np.arange(n), (m, 1))
    cols = grid[grid != y0[:, None]].reshape(m, n - 1)
    if own_dots is None:
        own = dots[np.arange(m), y0][:, None]
    else:
        own = np.asarray(own_dots, dtype=np.float64)[:, None]
    gaps = own - np.take_along_axis(dots, cols, axis=1)
    logits = np.maximum(gaps - m1, 0.0)
    probs = softmax(logits)
    cache = None
    if keep_cache:
        cache = ProximityCache(embeddings=z, prototypes=p, cols=cols, active=gaps > m1)
    return ProximityDistribution(probs=probs, labels=labels, cache=cache)


@dataclass
class InconResult:
    """Inconsistency loss with gradients at two depths.

    dprobs_* are gradients w.r.t. the raw distributions (always present);
    d_embeddings_*/d_prototypes_* are the fully backpropagated gradients,
    present for each side that carried a cache.
    """

    loss: float
    dprobs_a: np.ndarray
    dprobs_b: np.ndarray
    d_embeddings_a: np.ndarray | None = None
    d_prototypes_a: np.ndarray | None = None
    d_embeddings_b: np.ndarray | None = None
    d_prototypes_b: np.ndarray | None = None


def _prox_backward(dist: ProximityDistribution, dprobs: np.ndarray):
    """Backprop row-softmax and margin clamp to embeddings/prototypes."""
    cache = dist.cache
    probs = dist.probs
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
    m, n = cache.embeddings.shape[0], cache.prototypes.shape[0]
    ddots = np.zeros((m, n))
    # d logit / d (z.p^j) = -1 where unclamped; own-class dot is stop-gradient
    np.put_along_axis(ddots, cache.cols, -dlogits * cache.active, axis=1)
    return ddots @ cache.prototypes, ddots.T @ cache.embeddings


def inconsistency_loss(
    dist_a: ProximityDistribution,
    dist_b: ProximityDistribution,
    epsilon_log: float = 1e-12,
) -> InconResult:
    """Cross-branch inconsistency over aligned proximity rows.

    Minimized (-ln 2) when the two rows are one-hot at different classes;
    the log argument is clamped below at epsilon_log, where the gradient
    vanishes.
    """
    pa, pb = dist_a.probs, dist_b.probs
    if pa.shape != pb.shape:
        raise ValueError(f"misaligned batches: {pa.shape} vs {pb.shape}")
    if not np.array_equal(dist_a.labels, dist_b.labels):
        raise ValueError("misaligned batches: branch rows exclude different classes")
    m = pa.shape[0]
    inner = (pa * (1.0 - pb) + pb * (1.0 - pa)).sum(axis=1)
    arg = np.maximum(inner, epsilon_log)
    loss = -np.log(arg).mean()
    dinner = np.where(inner > epsilon_log, -1.0 / (m * arg), 0.0)
    dprobs_a = dinner[:, None] * (1.0 - 2.0 * pb)
    dprobs_b = dinner[:, None] * (1.0 - 2.0 * pa)
    result = InconResult(loss=loss, dprobs_a=dprobs_a, dprobs_b=dprobs_b)
    if dist_a.cache is not None:
        result.d_embeddings_a, result.d_prototypes_a = _prox_backward(dist_a, dprobs_a)
    if dist_b.cache is not None:
        result.d_embeddings_b, result.d_prototypes_b = _prox_backward(dist_b, dprobs_b)
    return result


# ---------------------------------------------------------------------------
# triplet separability
# ---------------------------------------------------------------------------


def nearest_other_prototype(prototypes: PrototypeSet) -> np.ndarray:
    """For each class, the 0-based index of the nearest other prototype."""
    p = prototypes.prototypes
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    return dist.argmin(axis=1)


def triplet_loss(embeddings: np.ndarray, labels, prototypes: PrototypeSet, m2: float):
    """Hinge on anchor-positive vs anchor-negative prototype distances.

    The negative for class y is the prototype nearest to p^y (recomputed
    here, i.e. every batch). Returns (loss, d_embeddings, d_prototypes).
    """
    z = np.asarray(embeddings, dtype=np.float64)
    p = prototypes.prototypes
    labels = np.asarray(labels, dtype=np.int64)
    y0 = labels - 1
    if y0.min() < 0 or y0.max() >= prototypes.n_classes:
        raise ValueError(f"labels must lie in 1..{prototypes.n_classes}")
    m = z.shape[0]
    neg0 = nearest_other_prototype(prototypes)[y0]
    u_pos = z - p[y0]
    u_neg = z - p[neg0]
    d_pos = np.sqrt((u_pos * u_pos).sum(axis=1))
    d_neg = np.sqrt((u_neg * u_neg).sum(axis=1))
    viol = d_pos - d_neg + m2
    active = viol > 0
    loss = np.maximum(viol, 0.0).mean()
    # unit vectors with subgradient 0 at zero distance
    pos_hat = u_pos / np.where(d_pos > 0, d_pos, 1.0)[:, None]
    neg_hat = u_neg / np.where(d_neg > 0, d_neg, 1.0)[:, None]
    w = active.astype(np.float64)[:, None] / m
    dz = w * (pos_hat - neg_hat)
    dp = np.zeros_like(p)
    np.add.at(dp, y0, -w * pos_hat)
    np.add.at(dp, neg0, w * neg_hat)
    return loss, dz, dp


# ---------------------------------------------------------------------------
# combined objective and training loops
# ---------------------------------------------------------------------------


@dataclass
class BranchGrads:
    encoder: EncoderGrads
    prototypes: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return self.encoder.arrays() + [self.prototypes]


@dataclass
class DivLossResult:
    pl_a: float
    pl_b: float
    incon: float
    trip_a: float
    trip_b: float
    total: float
    grads_a: BranchGrads
    grads_b: BranchGrads


def _branch_pl_terms(batch: TrainBatch, branch: BranchState, hp: DivHyperParams):
    emb, cache = encoder_forward(branch.encoder, batch.inputs)
    pl, dz, dp = pl_loss(emb, batch.labels, branch.prototypes, hp.pl())
    return emb, cache, pl, dz, dp


def div_loss(
    batch: TrainBatch, branch_a: BranchState, branch_b: BranchState, hp: DivHyperParams
) -> DivLossResult:
    """Full objective on one batch: PL per branch, shared inconsistency term,
    triplet per branch. Gradients flow into both branches."""
    emb_a, cache_a, pl_a, dz_a, dp_a = _branch_pl_terms(batch, branch_a, hp)
    emb_b, cache_b, pl_b, dz_b, dp_b = _branch_pl_terms(batch, branch_b, hp)

    dist_a = proximity_probs(emb_a, batch.labels, branch_a.prototypes, hp.m1)
    dist_b = proximity_probs(emb_b, batch.labels, branch_b.prototypes, hp.m1)
    inc = inconsistency_loss(dist_a, dist_b, hp.epsilon_log)
    if hp.gamma != 0.0:
        dz_a += hp.gamma * inc.d_embeddings_a
        dp_a += hp.gamma * inc.d_prototypes_a
        dz_b += hp.gamma * inc.d_embeddings_b
        dp_b += hp.gamma * inc.d_prototypes_b

    trip_a, dz_ta, dp_ta = triplet_loss(emb_a, batch.labels, branch_a.prototypes, hp.m2)
    trip_b, dz_tb, dp_tb = triplet_loss(emb_b, batch.labels, branch_b.prototypes, hp.m2)
    if hp.alpha != 0.0:
        dz_a += hp.alpha * dz_ta
        dp_a += hp.alpha * dp_ta
        dz_b += hp.alpha * dz_tb
        dp_b += hp.alpha * dp_tb

    total = pl_a + pl_b + hp.gamma * inc.loss + hp.alpha * (trip_a + trip_b)
    return DivLossResult(
        pl_a=pl_a,
        pl_b=pl_b,
        incon=inc.loss,
        trip_a=trip_a,
        trip_b=trip_b,
        total=total,
        grads_a=BranchGrads(encoder_backward(cache_a, dz_a), dp_a),
        grads_b=BranchGrads(encoder_backward(cache_b, dz_b), dp_b),
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    base_lr: float = 0.01
    momentum: float = 0.9
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class EpochTrace:
    """Per-epoch means of the loss components (None where not applicable)."""

    epoch: int
    pl_a: float
    pl_b: float | None
    incon: float | None
    trip_a: float | None
    trip_b: float | None
    total: float


def training_arrays(partition: DatasetPartition):
    """Flattened train inputs and remapped 1..N labels."""
    if not partition.train_windows:
        raise ValueError("training partition is empty")
    x = np.stack([w.x.ravel() for w in partition.train_windows])
    if partition.label_split is not None:
        y = np.array([partition.label_split.remap(w.label) for w in partition.train_windows])
        if (y < 1).any():
            raise ValueError("unknown-class window found in the training partition")
    else:
        y = np.array([w.label for w in partition.train_windows], dtype=np.int64)
    return x, y


def _check_standardized(partition: DatasetPartition):
    if partition.stats is None:
        raise ValueError("partition must be standardized before training")


def _epoch_order(rng: np.random.Generator, n: int, batch_size: int):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def train(model: DualModel, partition: DatasetPartition, config: TrainConfig):
    """Jointly train both branches on identical shuffled mini-batches.

    Returns (model, trace); the model is updated in place. Non-finite losses
    abort with epoch/batch diagnostics.
    """
    _check_standardized(partition)
    x, y = training_arrays(partition)
    rng = np.random.default_rng(config.shuffle_seed)
    arrays_a = model.branch_a.arrays()
    arrays_b = model.branch_b.arrays()
    opt_a, opt_b = model.branch_a.optimizer, model.branch_b.optimizer
    trace: list[EpochTrace] = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.base_lr)
        opt_a.learning_rate = lr
        opt_b.learning_rate = lr
        opt_a.epoch = epoch
        opt_b.epoch = epoch
        sums = np.zeros(6)
        for bi, idx in enumerate(_epoch_order(rng, len(y), config.batch_size)):
            batch = TrainBatch(x[idx], y[idx])
            res = div_loss(batch, model.branch_a, model.branch_b, model.hp)
            if not np.isfinite(res.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(pl_a={res.pl_a}, pl_b={res.pl_b}, incon={res.incon})"
                )
            sgd_step(arrays_a, res.grads_a.arrays(), opt_a)
            sgd_step(arrays_b, res.grads_b.arrays(), opt_b)
            w = len(idx)
            sums += w * np.array(
                [res.pl_a, res.pl_b, res.incon, res.trip_a, res.trip_b, res.total]
            )
        means = sums / len(y)
        trace.append(EpochTrace(epoch, *means[:5], means[5]))
    return model, trace


def train_single(
    branch: BranchState,
    partition: DatasetPartition,
    config: TrainConfig,
    hp: DivHyperParams,
):
    """Train one branch with the PL loss alone (the single-branch baseline)."""
    _check_standardized(partition)
    x, y = training_arrays(partition)
    rng = np.random.default_rng(config.shuffle_seed)
    arrays = branch.arrays()
    opt = branch.optimizer
    trace: list[EpochTrace] = []
    for epoch in range(config.epochs):
        opt.learning_rate = lr_schedule(epoch, config.base_lr)
        opt.epoch = epoch
        sums = np.zeros(2)
        for bi, idx in enumerate(_epoch_order(rng, len(y), config.batch_size)):
            batch = TrainBatch(x[idx], y[idx])
            emb, cache, pl, dz, dp = _branch_pl_terms(batch, branch, hp)
            if not np.isfinite(pl):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi} (pl={pl})")
            grads = BranchGrads(encoder_backward(cache, dz), dp)
            sgd_step(arrays, grads.arrays(), opt)
            sums += len(idx) * np.array([pl, pl])
        means = sums / len(y)
        trace.append(EpochTrace(epoch, means[0], None, None, None, None, means[1]))
    return branch, trace


def _train_against_frozen(
    branch: BranchState,
    frozen: BranchState,
    partition: DatasetPartition,
    config: TrainConfig,
    hp: DivHyperParams,
):
    """Train one branch with the full objective, pairing the inconsistency
    term against a frozen predecessor (no gradient flows into it)."""
    _check_standardized(partition)
    x, y = training_arrays(partition)
    rng = np.random.default_rng(config.shuffle_seed)
    arrays = branch.arrays()
    opt = branch.optimizer
    trace: list[EpochTrace] = []
    for epoch in range(config.epochs):
        opt.learning_rate = lr_schedule(epoch, config.base_lr)
        opt.epoch = epoch
        sums = np.zeros(4)
        for bi, idx in enumerate(_epoch_order(rng, len(y), config.batch_size)):
            batch = TrainBatch(x[idx], y[idx])
            emb, cache, pl, dz, dp = _branch_pl_terms(batch, branch, hp)
            dist = proximity_probs(emb, batch.labels, branch.prototypes, hp.m1)
            emb_f, _ = encoder_forward(frozen.encoder, batch.inputs)
            dist_f = proximity_probs(
                emb_f, batch.labels, frozen.prototypes, hp.m1, keep_cache=False
            )
            inc = inconsistency_loss(dist, dist_f, hp.epsilon_log)
            if hp.gamma != 0.0:
                dz += hp.gamma * inc.d_embeddings_a
                dp += hp.gamma * inc.d_prototypes_a
            trip, dz_t, dp_t = triplet_loss(emb, batch.labels, branch.prototypes, hp.m2)
            if hp.alpha != 0.0:
                dz += hp.alpha * dz_t
                dp += hp.alpha * dp_t
            total = pl + hp.gamma * inc.loss + hp.alpha * trip
            if not np.isfinite(total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(pl={pl}, incon={inc.loss}, trip={trip})"
                )
            grads = BranchGrads(encoder_backward(cache, dz), dp)
            sgd_step(arrays, grads.arrays(), opt)
            sums += len(idx) * np.array([pl, inc.loss, trip, total])
        means = sums / len(y)
        trace.append(EpochTrace(epoch, means[0], None, means[1], means[2], None, means[3]))
    return branch, trace


def train_sequential(
    k: int,
    partition: DatasetPartition,
    config: TrainConfig,
    hp: DivHyperParams,
    spec: EncoderSpec,
    n_classes: int,
    branch_seeds: list[tuple[int, int]],
):
    """Train K branches one after another.

    The first branch is a plain PL baseline; each later branch trains with
    the full objective, its inconsistency term paired against the previous
    (frozen) branch. Returns (branches, traces).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(branch_seeds) < k:
        raise ValueError(f"need {k} (encoder, prototype) seed pairs, got {len(branch_seeds)}")
    branches: list[BranchState] = []
    traces: list[list[EpochTrace]] = []
    for t in range(k):
        enc_seed, proto_seed = branch_seeds[t]
        branch = init_branch(
            spec, n_classes, enc_seed, proto_seed, config.base_lr, config.momentum
        )
        if t == 0:
            branch, trace = train_single(branch, partition, config, hp)
        else:
            branch, trace = _train_against_frozen(
                branch, branches[t - 1], partition, config, hp
            )
        branches.append(branch)
        traces.append(trace)
    return branches, traces


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

DUAL_CHECKPOINT_FORMAT = "predin-dual-v1"


def write_loss_trace(path, trace: list[EpochTrace]) -> None:
    """CSV loss trace: epoch,pl_a,pl_b,incon,trip_a,trip_b,total."""

    def cell(v):
        return "" if v is None else repr(float(v))

    lines = ["epoch,pl_a,pl_b,incon,trip_a,trip_b,total"]
    for t in trace:
        lines.append(
            ",".join(
                [str(t.epoch)]
                + [cell(v) for v in (t.pl_a, t.pl_b, t.incon, t.trip_a, t.trip_b, t.total)]
            )
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def save_dual_checkpoint(path, model: DualModel) -> None:
    """Both branches plus hyperparameters, bitwise round-trippable."""
    payload = {
        "format": np.array(DUAL_CHECKPOINT_FORMAT),
        "hp": np.array(
            [
                model.hp.beta,
                model.hp.gamma,
                model.hp.alpha,
                model.hp.m1,
                model.hp.m2,
                model.hp.epsilon_log,
            ]
        ),
        "compactness_form": np.array(model.hp.compactness_form),
    }
    for tag, branch in (("a", model.branch_a), ("b", model.branch_b)):
        spec = branch.encoder.spec
        payload[f"{tag}_layer_dims"] = np.array(spec.layer_dims, dtype=np.int64)
        payload[f"{tag}_activation"] = np.array(spec.activation)
        payload[f"{tag}_seeds"] = np.array(
            [branch.encoder.init_seed, branch.prototypes.seed], dtype=np.int64
        )
        for i, (w, b) in enumerate(zip(branch.encoder.weights, branch.encoder.biases)):
            payload[f"{tag}_w{i}"] = w
            payload[f"{tag}_b{i}"] = b
        payload[f"{tag}_prototypes"] = branch.prototypes.prototypes
        payload[f"{tag}_opt"] = np.array(
            [branch.optimizer.learning_rate, branch.optimizer.momentum, branch.optimizer.epoch]
        )
        for i, v in enumerate(branch.optimizer.velocities):
            payload[f"{tag}_v{i}"] = v
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_dual_checkpoint(path) -> DualModel:
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != DUAL_CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {fmt!r}")
        hp_vals = data["hp"]
        hp = DivHyperParams(
            beta=float(hp_vals[0]),
            gamma=float(hp_vals[1]),
            alpha=float(hp_vals[2]),
            m1=float(hp_vals[3]),
            m2=float(hp_vals[4]),
            epsilon_log=float(hp_vals[5]),
            compactness_form=str(data["compactness_form"]),
        )

        def load_branch(tag: str) -> BranchState:
            dims = tuple(int(d) for d in data[f"{tag}_layer_dims"])
            spec = EncoderSpec(
                input_dim=dims[0],
                hidden_dims=dims[1:-1],
                output_dim=dims[-1],
                activation=str(data[f"{tag}_activation"]),
            )
            enc_seed, proto_seed = (int(s) for s in data[f"{tag}_seeds"])
            n_layers = len(dims) - 1
            enc = EncoderParams(
                spec=spec,
                weights=[data[f"{tag}_w{i}"] for i in range(n_layers)],
                biases=[data[f"{tag}_b{i}"] for i in range(n_layers)],
                init_seed=enc_seed,
            )
            protos = PrototypeSet(prototypes=data[f"{tag}_prototypes"], seed=proto_seed)
            lr, mom, epoch = data[f"{tag}_opt"]
            n_arrays = 2 * n_layers + 1
            opt = OptimizerState(
                learning_rate=float(lr),
                momentum=float(mom),
                velocities=[data[f"{tag}_v{i}"] for i in range(n_arrays)],
                epoch=int(epoch),
            )
            return BranchState(encoder=enc, prototypes=protos, optimizer=opt)

        return DualModel(branch_a=load_branch("a"), branch_b=load_branch("b"), hp=hp)
