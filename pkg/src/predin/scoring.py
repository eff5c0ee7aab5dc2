"""Score fusion, rejection thresholding, and accept/reject decisions.

Each branch scores a test sample by dot-product similarity to its
prototypes; branch scores are averaged, the maximum fused score S_max is
compared against a threshold calibrated to retain a target fraction of
known samples, and everything below is rejected as unknown.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, encoder_forward
from .prototypes import PrototypeSet
from .signals import UNKNOWN_LABEL, LabelSplit, WindowSample


@dataclass
class ScoredSample:
    """Per-branch similarity vectors plus the fused decision inputs."""

    sims_per_branch: np.ndarray  # (K, N)
    fused_scores: np.ndarray  # (N,)
    s_max: float
    predicted_class: int  # 1..N
    true_label: int  # 1..N, or UNKNOWN_LABEL

    @property
    def branch_predictions(self) -> np.ndarray:
        """Per-branch argmax classes (1..N), lowest index on ties."""
        return self.sims_per_branch.argmax(axis=1) + 1


@dataclass(frozen=True)
class Threshold:
    value: float
    retention_target: float
    calibration_size: int


def branch_similarity(z: np.ndarray, prototypes: PrototypeSet) -> np.ndarray:
    """Similarity of one embedding to every prototype: Sim(z, p^k) = z.p^k."""
    return prototypes.prototypes @ np.asarray(z, dtype=np.float64)


def fuse_scores(sims) -> np.ndarray:
    """Element-wise mean over any number of branch score vectors."""
    sims = [np.asarray(s, dtype=np.float64) for s in sims]
    if not sims:
        raise ValueError("need at least one branch")
    length = sims[0].shape
    if any(s.shape != length for s in sims):
        raise ValueError("branch score vectors differ in length")
    return np.mean(sims, axis=0)


def classify(fused: np.ndarray) -> tuple[float, int]:
    """(s_max, predicted class 1..N); ties go to the lowest class index."""
    fused = np.asarray(fused, dtype=np.float64)
    k0 = int(fused.argmax())
    return float(fused[k0]), k0 + 1


def prototype_score_fn(encoder: EncoderParams, prototypes: PrototypeSet):
    """Branch scorer: batch of flattened windows -> (M, N) similarities."""

    def fn(x: np.ndarray) -> np.ndarray:
        emb, _ = encoder_forward(encoder, x)
        return emb @ prototypes.prototypes.T

    return fn


def score_windows(
    branch_score_fns, windows: list[WindowSample], label_split: LabelSplit | None
) -> list[ScoredSample]:
    """Score test windows with every branch and fuse.

    True labels are remapped through the label split; windows of classes
    outside it carry UNKNOWN_LABEL.
    """
    if not windows:
        return []
    x = np.stack([w.x.ravel() for w in windows])
    all_sims = np.stack([fn(x) for fn in branch_score_fns], axis=1)  # (M, K, N)
    out = []
    for i, w in enumerate(windows):
        fused = fuse_scores(list(all_sims[i]))
        s_max, k_star = classify(fused)
        true = label_split.remap(w.label) if label_split is not None else w.label
        out.append(
            ScoredSample(
                sims_per_branch=all_sims[i],
                fused_scores=fused,
                s_max=s_max,
                predicted_class=k_star,
                true_label=true,
            )
        )
    return out


def calibrate_threshold(known_smax, retention: float) -> Threshold:
    """Nearest-rank threshold retaining at least the target fraction.

    The threshold is the ceil((1 - retention) * n)-th smallest calibration
    score; acceptance is score >= threshold, so at least retention * n of
    the calibration scores are accepted.
    """
    scores = np.asarray(known_smax, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold from an empty score list")
    if not 0.0 < retention < 1.0:
        raise ValueError(f"retention must lie in (0, 1), got {retention}")
    n = scores.size
    # 1e-9 guard so float fuzz in (1-retention)*n cannot shift the rank
    rank = max(1, math.ceil((1.0 - retention) * n - 1e-9))
    value = float(np.sort(scores)[rank - 1])
    return Threshold(value=value, retention_target=retention, calibration_size=n)


def decide(scored: ScoredSample, threshold: Threshold) -> int:
    """Accept as the predicted class iff s_max >= threshold, else reject.

    Returns the accepted class id, or UNKNOWN_LABEL on rejection. Scores
    exactly at the threshold are accepted.
    """
    if scored.s_max >= threshold.value:
        return scored.predicted_class
    return UNKNOWN_LABEL


def write_score_dump(path, scored: list[ScoredSample], threshold: Threshold | None) -> None:
    """Per-sample score CSV consumed by the metrics module and external tools."""
    n_branches = scored[0].sims_per_branch.shape[0] if scored else 0
    header = (
        ["sample_id", "true_label"]
        + [f"branch{k+1}_smax" for k in range(n_branches)]
        + ["fused_smax", "k_star", "decision"]
    )
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, s in enumerate(scored):
            decision = decide(s, threshold) if threshold is not None else ""
            writer.writerow(
                [i, s.true_label]
                + [repr(float(v)) for v in s.sims_per_branch.max(axis=1)]
                + [repr(s.s_max), s.predicted_class, decision]
            )
