"""Threshold-independent open-set metrics and analysis matrices.

AUC follows the Mann-Whitney convention (ties count 0.5), OSCR integrates
the correct-classification-rate vs false-positive-rate step curve, and the
Incon ratio compares how often the two branches disagree on unknown vs
known samples. Both AUC and OSCR are checked against brute-force oracles
in the test suite.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .prototypes import PrototypeSet, softmax


def auc(known_scores, unknown_scores) -> float:
    """P(known score > unknown score) + 0.5 P(tie), via midranks."""
    known = np.asarray(known_scores, dtype=np.float64)
    unknown = np.asarray(unknown_scores, dtype=np.float64)
    if known.size == 0 or unknown.size == 0:
        raise ValueError("need at least one known and one unknown score")
    combined = np.concatenate([known, unknown])
    order = combined.argsort(kind="mergesort")
    ranks = np.empty(combined.size, dtype=np.float64)
    ranks[order] = np.arange(1, combined.size + 1)
    # average ranks over tied values
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    u = ranks[: known.size].sum() - known.size * (known.size + 1) / 2.0
    return float(u / (known.size * unknown.size))


def closed_acc(predictions, labels) -> float:
    """Fraction of correct predictions over known-class samples."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("need at least one prediction")
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must align")
    return float((predictions == labels).mean())


def _oscr_points(known_scores, known_correct, unknown_scores):
    """(FPR, CCR) points in decreasing-threshold order, endpoints included."""
    ks = np.asarray(known_scores, dtype=np.float64)
    kc = np.asarray(known_correct, dtype=bool)
    us = np.asarray(unknown_scores, dtype=np.float64)
    thresholds = np.unique(np.concatenate([ks, us]))[::-1]
    points = [(0.0, 0.0)]  # threshold = +inf
    for t in thresholds:
        ccr = float((kc & (ks >= t)).mean())
        fpr = float((us >= t).mean())
        points.append((fpr, ccr))
    points.append((1.0, float(kc.mean())))  # threshold = -inf
    return points


def step_area(points) -> float:
    """Area under a right-continuous step curve given (x, y) points.

    Points must be sorted with x non-decreasing; at a repeated x the last
    point wins (the value after the vertical jump).
    """
    by_x: dict[float, float] = {}
    for x, y in points:
        by_x[x] = y
    xs = sorted(by_x)
    area = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        area += (x1 - x0) * by_x[x0]
    return area


def oscr(known_scores, known_correct, unknown_scores) -> float:
    """Area under the CCR-vs-FPR curve over all score thresholds.

    CCR(t) is the fraction of known samples that are correctly classified
    and score >= t; FPR(t) is the fraction of unknown samples scoring >= t.
    """
    ks = np.asarray(known_scores, dtype=np.float64)
    us = np.asarray(unknown_scores, dtype=np.float64)
    if ks.size == 0 or us.size == 0:
        raise ValueError("need at least one known and one unknown score")
    if np.asarray(known_correct).shape != ks.shape:
        raise ValueError("known_correct must align with known_scores")
    return step_area(_oscr_points(ks, known_correct, us))


def incon_metric(preds_a, preds_b, is_known) -> float | None:
    """Ratio of unknown-sample to known-sample branch-disagreement rates.

    Returns None (undefined) when the known disagreement rate is zero;
    callers exclude undefined values from averages.
    """
    preds_a = np.asarray(preds_a)
    preds_b = np.asarray(preds_b)
    is_known = np.asarray(is_known, dtype=bool)
    if preds_a.shape != preds_b.shape or preds_a.shape != is_known.shape:
        raise ValueError("prediction lists and mask must align")
    if not is_known.any() or is_known.all():
        raise ValueError("need both known and unknown samples")
    change = preds_a != preds_b
    known_frac = float(change[is_known].mean())
    unknown_frac = float(change[~is_known].mean())
    if known_frac == 0.0:
        return None
    return unknown_frac / known_frac


def proximity_matrix(prototypes: PrototypeSet) -> np.ndarray:
    """Row-stochastic class-proximity matrix of one branch.

    Row k softmaxes the dot products p^k . p^j over j != k; the diagonal is
    zero. Comparing the two branches' matrices visualizes how differently
    they lay out the classes.
    """
    p = prototypes.prototypes
    n = p.shape[0]
    dots = p @ p.T
    off = ~np.eye(n, dtype=bool)
    out = np.zeros((n, n))
    for k in range(n):
        out[k, off[k]] = softmax(dots[k, off[k]])[0]
    return out


def agreement_confusion(preds_a, preds_b, n_classes: int) -> np.ndarray:
    """Counts of samples predicted class a by one branch and b by the other."""
    preds_a = np.asarray(preds_a, dtype=np.int64)
    preds_b = np.asarray(preds_b, dtype=np.int64)
    if preds_a.shape != preds_b.shape:
        raise ValueError("prediction lists must align")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (preds_a - 1, preds_b - 1), 1)
    return out


@dataclass
class MetricsReport:
    """One seed's evaluation summary."""

    auc: float
    acc: float
    oscr: float
    incon: float | None
    threshold: float
    retention_achieved: float
    n_known: int
    n_unknown: int
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "auc": self.auc,
            "acc": self.acc,
            "oscr": self.oscr,
            "incon": self.incon,
            "threshold": self.threshold,
            "retention_achieved": self.retention_achieved,
            "n_known": self.n_known,
            "n_unknown": self.n_unknown,
        }


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Arithmetic means across seeds; undefined Incon values are excluded."""
    if not reports:
        return {"n_seeds": 0}
    incons = [r.incon for r in reports if r.incon is not None]
    return {
        "n_seeds": len(reports),
        "auc_mean": float(np.mean([r.auc for r in reports])),
        "acc_mean": float(np.mean([r.acc for r in reports])),
        "oscr_mean": float(np.mean([r.oscr for r in reports])),
        "incon_mean": float(np.mean(incons)) if incons else None,
        "incon_defined": len(incons),
    }


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in np.asarray(matrix):
            writer.writerow([repr(float(v)) for v in row])


def report_to_json(report: dict) -> str:
    """Canonical JSON used for emitted reports (stable key order)."""
    return json.dumps(report, indent=2, sort_keys=True)
