"""End-to-end experiment driver: config, model variants, multi-seed runs.

A run is fully determined by its config: per seed it splits classes,
windows and routes the recordings, trains the requested model variant,
scores the test set, and computes metrics; seed results are aggregated by
arithmetic mean. Reports re-run bit-identically from their config echo.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .encoder import (
    EncoderParams,
    EncoderSpec,
    TrainBatch,
    encoder_backward,
    encoder_forward,
    init_encoder,
    init_optimizer,
    lr_schedule,
    sgd_step,
)
from .inconsistency import (
    BranchState,
    DivHyperParams,
    DualModel,
    EpochTrace,
    TrainConfig,
    TrainingError,
    init_branch,
    save_dual_checkpoint,
    train,
    train_sequential,
    train_single,
    training_arrays,
    write_loss_trace,
)
from .metrics import (
    MetricsReport,
    agreement_confusion,
    aggregate_reports,
    auc,
    closed_acc,
    incon_metric,
    oscr,
    proximity_matrix,
    report_to_json,
    write_matrix_csv,
)
from .prototypes import log_softmax, softmax
from .scoring import (
    ScoredSample,
    Threshold,
    calibrate_threshold,
    prototype_score_fn,
    score_windows,
    write_score_dump,
)
from .signals import (
    UNKNOWN_LABEL,
    DatasetPartition,
    SyntheticConfig,
    generate_synthetic,
    load_csv,
    segment_windows,
    split_known_unknown,
    split_trials,
    standardize,
)

VARIANTS = (
    "softmax",
    "pl_baseline",
    "dual",
    "dual_trip",
    "predin_wo_trip",
    "predin",
    "sequential_k",
)

# stream tags for deriving independent sub-seeds from one run seed
_ENC_A, _PROTO_A, _ENC_B, _PROTO_B, _SHUFFLE, _HEAD = 1, 2, 3, 4, 5, 6


def derive_seed(base_seed: int, stream: int) -> int:
    """Stable independent sub-seed for one role of a run."""
    return int(np.random.SeedSequence([base_seed, stream]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict = field(
        default_factory=lambda: {"type": "synthetic", "data_seed": 2024}
    )
    window_ms: float = 200.0
    step_ms: float = 50.0
    n_known: int = 6
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    variant: str = "predin"
    train_trials: tuple[int, ...] = (1, 2)
    test_trials: tuple[int, ...] = (3,)
    hyperparams: DivHyperParams = field(default_factory=DivHyperParams)
    hidden_dims: tuple[int, ...] = (256,)
    feature_dim: int = 128
    # harness defaults are the tuned desk-scale protocol: the bounded tanh
    # keeps unknown-input feature norms comparable to known ones, and the
    # plain-MLP setup needs a smaller step than deep-backbone training
    activation: str = "tanh"
    epochs: int = 100
    batch_size: int = 256
    lr: float = 0.002
    momentum: float = 0.9
    retention: float = 0.95
    sequential_k: int = 2
    output_dir: str = "runs/out"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "train_trials", tuple(self.train_trials))
        object.__setattr__(self, "test_trials", tuple(self.test_trials))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "dataset": dict(self.dataset),
            "window_ms": self.window_ms,
            "step_ms": self.step_ms,
            "n_known": self.n_known,
            "seeds": list(self.seeds),
            "variant": self.variant,
            "train_trials": list(self.train_trials),
            "test_trials": list(self.test_trials),
            "hyperparams": {
                "beta": hp.beta,
                "gamma": hp.gamma,
                "alpha": hp.alpha,
                "m1": hp.m1,
                "m2": hp.m2,
                "epsilon_log": hp.epsilon_log,
                "compactness_form": hp.compactness_form,
            },
            "encoder": {
                "hidden_dims": list(self.hidden_dims),
                "feature_dim": self.feature_dim,
                "activation": self.activation,
            },
            "training": {
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "lr": self.lr,
                "momentum": self.momentum,
            },
            "retention": self.retention,
            "sequential_k": self.sequential_k,
            "output_dir": self.output_dir,
        }


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from the documented JSON schema, filling defaults."""
    d = dict(d)
    hp_d = d.pop("hyperparams", {})
    enc_d = d.pop("encoder", {})
    tr_d = d.pop("training", {})
    kwargs = {}
    for key in (
        "dataset",
        "window_ms",
        "step_ms",
        "n_known",
        "seeds",
        "variant",
        "train_trials",
        "test_trials",
        "retention",
        "sequential_k",
        "output_dir",
    ):
        if key in d:
            kwargs[key] = d.pop(key)
    if d:
        raise ValueError(f"unknown config keys: {sorted(d)}")
    if hp_d:
        kwargs["hyperparams"] = DivHyperParams(**hp_d)
    if "hidden_dims" in enc_d:
        kwargs["hidden_dims"] = tuple(enc_d["hidden_dims"])
    if "feature_dim" in enc_d:
        kwargs["feature_dim"] = enc_d["feature_dim"]
    if "activation" in enc_d:
        kwargs["activation"] = enc_d["activation"]
    for key in ("epochs", "batch_size", "lr", "momentum"):
        if key in tr_d:
            kwargs[key] = tr_d[key]
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def load_dataset(config: ExperimentConfig):
    """Materialize recordings and the full class-id set from the config."""
    ds = dict(config.dataset)
    kind = ds.pop("type", "synthetic")
    if kind == "synthetic":
        data_seed = ds.pop("data_seed", 2024)
        syn = SyntheticConfig(**ds)
        return generate_synthetic(syn, data_seed)
    if kind == "csv":
        recordings = load_csv(ds["data_path"], ds["meta_path"])
        return recordings, {r.gesture_label for r in recordings}
    raise ValueError(f"unknown dataset type {kind!r}")


def build_partition(config: ExperimentConfig, recordings, classes, seed: int) -> DatasetPartition:
    split = split_known_unknown(classes, config.n_known, seed)
    windows = [
        w for r in recordings for w in segment_windows(r, config.window_ms, config.step_ms)
    ]
    part = split_trials(windows, config.train_trials, config.test_trials, split)
    return standardize(part)


def _encoder_spec(config: ExperimentConfig, input_dim: int) -> EncoderSpec:
    return EncoderSpec(
        input_dim=input_dim,
        hidden_dims=config.hidden_dims,
        output_dim=config.feature_dim,
        activation=config.activation,
    )


def _train_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        base_lr=config.lr,
        momentum=config.momentum,
        shuffle_seed=derive_seed(seed, _SHUFFLE),
    )


def _variant_hp(config: ExperimentConfig) -> DivHyperParams:
    hp = config.hyperparams
    v = config.variant
    if v in ("pl_baseline", "softmax"):
        return hp
    if v == "dual":
        return replace(hp, gamma=0.0, alpha=0.0)
    if v == "dual_trip":
        return replace(hp, gamma=0.0)
    if v == "predin_wo_trip":
        return replace(hp, alpha=0.0)
    return hp  # predin, sequential_k


# ---------------------------------------------------------------------------
# softmax baseline (linear head instead of prototypes)
# ---------------------------------------------------------------------------


@dataclass
class SoftmaxModel:
    encoder: EncoderParams
    head_w: np.ndarray  # (N, d)
    head_b: np.ndarray  # (N,)


def baseline_softmax_train(
    partition: DatasetPartition,
    spec: EncoderSpec,
    n_classes: int,
    config: TrainConfig,
    encoder_seed: int,
    head_seed: int,
):
    """Cross-entropy training of the same encoder with a linear head.

    The rejection score of a sample is its maximum softmax probability, so
    the scored samples flow through the same evaluation path as prototype
    models.
    """
    if partition.stats is None:
        raise ValueError("partition must be standardized before training")
    x, y = training_arrays(partition)
    enc = init_encoder(spec, encoder_seed)
    rng = np.random.default_rng(head_seed)
    head_w = rng.normal(0.0, np.sqrt(2.0 / spec.output_dim), size=(n_classes, spec.output_dim))
    head_b = np.zeros(n_classes)
    arrays = enc.arrays() + [head_w, head_b]
    opt = init_optimizer(arrays, config.base_lr, config.momentum)
    rng_shuffle = np.random.default_rng(config.shuffle_seed)
    trace: list[EpochTrace] = []
    for epoch in range(config.epochs):
        opt.learning_rate = lr_schedule(epoch, config.base_lr)
        opt.epoch = epoch
        loss_sum = 0.0
        perm = rng_shuffle.permutation(len(y))
        for bi in range(0, len(y), config.batch_size):
            idx = perm[bi : bi + config.batch_size]
            batch = TrainBatch(x[idx], y[idx])
            emb, cache = encoder_forward(enc, batch.inputs)
            logits = emb @ head_w.T + head_b
            m = len(idx)
            y0 = batch.labels - 1
            ce = -log_softmax(logits)[np.arange(m), y0].mean()
            if not np.isfinite(ce):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            dlogits = softmax(logits)
            dlogits[np.arange(m), y0] -= 1.0
            dlogits /= m
            enc_grads = encoder_backward(cache, dlogits @ head_w)
            sgd_step(arrays, enc_grads.arrays() + [dlogits.T @ emb, dlogits.sum(axis=0)], opt)
            loss_sum += ce * m
        mean = loss_sum / len(y)
        trace.append(EpochTrace(epoch, mean, None, None, None, None, mean))
    return SoftmaxModel(encoder=enc, head_w=head_w, head_b=head_b), trace


def softmax_score_fn(model: SoftmaxModel):
    """Branch scorer for the softmax baseline: posterior probabilities."""

    def fn(x: np.ndarray) -> np.ndarray:
        emb, _ = encoder_forward(model.encoder, x)
        return softmax(emb @ model.head_w.T + model.head_b)

    return fn


# ---------------------------------------------------------------------------
# per-seed execution
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    branches: list[BranchState]  # empty for the softmax baseline
    traces: list[list[EpochTrace]]
    dual_model: DualModel | None = None
    softmax_model: SoftmaxModel | None = None
    report: MetricsReport | None = None
    scored: list[ScoredSample] = field(default_factory=list)
    matrices: dict = field(default_factory=dict)


def _train_variant(config: ExperimentConfig, partition: DatasetPartition, seed: int):
    """Train the configured variant; returns (score_fns, SeedResult skeleton)."""
    input_dim = partition.train_windows[0].x.size
    spec = _encoder_spec(config, input_dim)
    n_classes = partition.label_split.n_known
    tc = _train_config(config, seed)
    hp = _variant_hp(config)
    variant = config.variant

    if variant == "softmax":
        model, trace = baseline_softmax_train(
            partition, spec, n_classes, tc,
            derive_seed(seed, _ENC_A), derive_seed(seed, _HEAD),
        )
        return [softmax_score_fn(model)], SeedResult(
            branches=[], traces=[trace], softmax_model=model
        )

    if variant == "pl_baseline":
        branch = init_branch(
            spec, n_classes, derive_seed(seed, _ENC_A), derive_seed(seed, _PROTO_A),
            tc.base_lr, tc.momentum,
        )
        branch, trace = train_single(branch, partition, tc, hp)
        fns = [prototype_score_fn(branch.encoder, branch.prototypes)]
        return fns, SeedResult(branches=[branch], traces=[trace])

    if variant == "sequential_k":
        seeds = [
            (derive_seed(seed, 101 + 2 * t), derive_seed(seed, 102 + 2 * t))
            for t in range(config.sequential_k)
        ]
        branches, traces = train_sequential(
            config.sequential_k, partition, tc, hp, spec, n_classes, seeds
        )
        fns = [prototype_score_fn(b.encoder, b.prototypes) for b in branches]
        return fns, SeedResult(branches=branches, traces=traces)

    # joint two-branch variants: dual, dual_trip, predin_wo_trip, predin
    model = DualModel(
        branch_a=init_branch(
            spec, n_classes, derive_seed(seed, _ENC_A), derive_seed(seed, _PROTO_A),
            tc.base_lr, tc.momentum,
        ),
        branch_b=init_branch(
            spec, n_classes, derive_seed(seed, _ENC_B), derive_seed(seed, _PROTO_B),
            tc.base_lr, tc.momentum,
        ),
        hp=hp,
    )
    model, trace = train(model, partition, tc)
    branches = [model.branch_a, model.branch_b]
    fns = [prototype_score_fn(b.encoder, b.prototypes) for b in branches]
    return fns, SeedResult(branches=branches, traces=[trace], dual_model=model)


def evaluate_scored(
    scored: list[ScoredSample], retention: float, n_classes: int, seed: int
) -> tuple[MetricsReport, dict]:
    """Metrics plus analysis matrices from one seed's scored test set."""
    known = [s for s in scored if s.true_label != UNKNOWN_LABEL]
    unknown = [s for s in scored if s.true_label == UNKNOWN_LABEL]
    if not known or not unknown:
        raise ValueError("test set must contain both known and unknown samples")
    ks = np.array([s.s_max for s in known])
    us = np.array([s.s_max for s in unknown])
    correct = np.array([s.predicted_class == s.true_label for s in known])
    thr = calibrate_threshold(ks, retention)
    matrices: dict[str, np.ndarray] = {}
    n_branches = scored[0].sims_per_branch.shape[0]
    incon = None
    if n_branches >= 2:
        # disagreement between the two most recently paired perspectives
        preds = np.array([s.branch_predictions[-2:] for s in scored])
        is_known = np.array([s.true_label != UNKNOWN_LABEL for s in scored])
        incon = incon_metric(preds[:, 0], preds[:, 1], is_known)
        matrices["agreement_known"] = agreement_confusion(
            preds[is_known, 0], preds[is_known, 1], n_classes
        )
        matrices["agreement_unknown"] = agreement_confusion(
            preds[~is_known, 0], preds[~is_known, 1], n_classes
        )
    report = MetricsReport(
        auc=auc(ks, us),
        acc=closed_acc([s.predicted_class for s in known], [s.true_label for s in known]),
        oscr=oscr(ks, correct, us),
        incon=incon,
        threshold=thr.value,
        retention_achieved=float((ks >= thr.value).mean()),
        n_known=len(known),
        n_unknown=len(unknown),
        seed=seed,
    )
    return report, matrices


def run_seed(config: ExperimentConfig, recordings, classes, seed: int) -> SeedResult:
    partition = build_partition(config, recordings, classes, seed)
    score_fns, result = _train_variant(config, partition, seed)
    scored = score_windows(score_fns, partition.test_windows, partition.label_split)
    report, matrices = evaluate_scored(
        scored, config.retention, partition.label_split.n_known, seed
    )
    result.report = report
    result.scored = scored
    result.matrices = matrices
    return result


# ---------------------------------------------------------------------------
# artifacts and the full run
# ---------------------------------------------------------------------------


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_seed_artifacts(seed_dir: str, config: ExperimentConfig, result: SeedResult) -> dict:
    os.makedirs(seed_dir, exist_ok=True)
    rel = {}
    threshold = Threshold(
        value=result.report.threshold,
        retention_target=config.retention,
        calibration_size=result.report.n_known,
    )
    write_score_dump(os.path.join(seed_dir, "scores.csv"), result.scored, threshold)
    rel["scores"] = "scores.csv"
    for t, trace in enumerate(result.traces):
        name = "loss_trace.csv" if len(result.traces) == 1 else f"loss_trace_branch{t+1}.csv"
        write_loss_trace(os.path.join(seed_dir, name), trace)
        rel.setdefault("loss_traces", []).append(name)
    for i, branch in enumerate(result.branches):
        name = f"proximity_branch{i+1}.csv"
        write_matrix_csv(os.path.join(seed_dir, name), proximity_matrix(branch.prototypes))
        rel.setdefault("proximity_matrices", []).append(name)
    for key, mat in result.matrices.items():
        name = f"{key}.csv"
        write_matrix_csv(os.path.join(seed_dir, name), mat)
        rel[key] = name
    if result.dual_model is not None:
        save_dual_checkpoint(os.path.join(seed_dir, "checkpoint.npz"), result.dual_model)
        rel["checkpoint"] = "checkpoint.npz"
    return rel


@dataclass
class RunRecord:
    config_echo: dict
    per_seed: list[dict]
    aggregate: dict
    artifacts: dict
    wall_clock_s: float  # kept out of report.json so reports stay bit-stable

    def report_dict(self) -> dict:
        return {
            "version": f"predin {__version__}",
            "config": self.config_echo,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "artifacts": self.artifacts,
        }


def run_experiment(config: ExperimentConfig, write_artifacts: bool = True) -> RunRecord:
    """Execute the configured variant across all seeds and aggregate.

    Per-seed training failures are recorded without aborting the run; the
    aggregate marks the failed seeds.
    """
    started = time.perf_counter()
    out_dir = config.output_dir
    if write_artifacts:
        try:
            os.makedirs(out_dir, exist_ok=True)
            probe = os.path.join(out_dir, ".write_probe")
            with open(probe, "w") as f:
                f.write("ok")
            os.remove(probe)
        except OSError as e:
            raise OSError(f"output directory {out_dir!r} is not writable: {e}") from e

    recordings, classes = load_dataset(config)
    per_seed: list[dict] = []
    artifacts: dict[str, dict] = {}
    reports: list[MetricsReport] = []
    failed: list[int] = []
    for seed in config.seeds:
        try:
            result = run_seed(config, recordings, classes, seed)
        except TrainingError as e:
            failed.append(seed)
            per_seed.append({"seed": seed, "error": str(e)})
            continue
        reports.append(result.report)
        per_seed.append(result.report.to_dict())
        if write_artifacts:
            seed_dir = os.path.join(out_dir, f"seed_{seed}")
            artifacts[f"seed_{seed}"] = _write_seed_artifacts(seed_dir, config, result)
    aggregate = aggregate_reports(reports)
    aggregate["failed_seeds"] = failed
    record = RunRecord(
        config_echo=config.to_dict(),
        per_seed=per_seed,
        aggregate=aggregate,
        artifacts=artifacts,
        wall_clock_s=time.perf_counter() - started,
    )
    if write_artifacts:
        emit_report(record, {"json", "csv"}, out_dir)
    return record


def emit_report(record: RunRecord, formats: set, out_dir: str) -> list[str]:
    """Write the run report; every file is written atomically.

    json -> report.json (deterministic), csv -> metrics_table.csv. Timing
    goes to a separate sidecar so report files re-run bit-identically.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        _atomic_write_text(path, report_to_json(record.report_dict()) + "\n")
        written.append(path)
    if "csv" in formats:
        lines = ["seed,auc,acc,oscr,incon,threshold,retention_achieved,n_known,n_unknown"]
        for row in record.per_seed:
            if "error" in row:
                msg = row["error"].replace(",", ";")
                lines.append(f"{row['seed']},error:{msg},,,,,,,")
                continue
            lines.append(
                ",".join(
                    str(row[k]) if row[k] is not None else ""
                    for k in (
                        "seed", "auc", "acc", "oscr", "incon",
                        "threshold", "retention_achieved", "n_known", "n_unknown",
                    )
                )
            )
        agg = record.aggregate
        if agg.get("n_seeds"):
            lines.append(
                "mean,{auc},{acc},{oscr},{incon},,,,".format(
                    auc=agg["auc_mean"],
                    acc=agg["acc_mean"],
                    oscr=agg["oscr_mean"],
                    incon=agg["incon_mean"] if agg["incon_mean"] is not None else "",
                )
            )
        path = os.path.join(out_dir, "metrics_table.csv")
        _atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    _atomic_write_text(
        os.path.join(out_dir, "timing.txt"), f"wall_clock_s={record.wall_clock_s:.3f}\n"
    )
    return written


ABLATION_VARIANTS = ("softmax", "pl_baseline", "dual", "dual_trip", "predin_wo_trip", "predin")


def run_ablation(base_config: ExperimentConfig, write_artifacts: bool = True) -> dict:
    """Run every ablation variant with identical seeds and tabulate.

    Returns {variant: RunRecord}; writes ablation_table.csv plus one report
    directory per variant under the base output dir.
    """
    records: dict[str, RunRecord] = {}
    for variant in ABLATION_VARIANTS:
        cfg = replace(
            base_config,
            variant=variant,
            output_dir=os.path.join(base_config.output_dir, variant),
        )
        records[variant] = run_experiment(cfg, write_artifacts=write_artifacts)
    if write_artifacts:
        lines = ["variant,auc,oscr,acc,incon"]
        for variant, rec in records.items():
            agg = rec.aggregate
            if not agg.get("n_seeds"):
                lines.append(f"{variant},,,,")
                continue
            incon = agg["incon_mean"] if agg["incon_mean"] is not None else ""
            lines.append(
                f"{variant},{agg['auc_mean']},{agg['oscr_mean']},{agg['acc_mean']},{incon}"
            )
        os.makedirs(base_config.output_dir, exist_ok=True)
        _atomic_write_text(
            os.path.join(base_config.output_dir, "ablation_table.csv"),
            "\n".join(lines) + "\n",
        )
    return records
