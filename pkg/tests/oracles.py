"""Brute-force reference implementations used to validate the package.

These deliberately recompute results the slow, obvious way (pairwise
loops, exhaustive sweeps, scalar arithmetic) and never call the code paths
they are oracles for.
"""

import numpy as np


def auc_pairwise(known, unknown) -> float:
    """Mann-Whitney AUC by directly counting ordered pairs."""
    known = np.asarray(known, dtype=np.float64)
    unknown = np.asarray(unknown, dtype=np.float64)
    gt = (known[:, None] > unknown[None, :]).sum()
    eq = (known[:, None] == unknown[None, :]).sum()
    return float((gt + 0.5 * eq) / (known.size * unknown.size))


def auc_pairwise_scalar(known, unknown) -> float:
    """Same count in pure Python, for small inputs."""
    num = 0.0
    for k in known:
        for u in unknown:
            if k > u:
                num += 1.0
            elif k == u:
                num += 0.5
    return num / (len(known) * len(unknown))


def oscr_sweep(known_scores, known_correct, unknown_scores) -> float:
    """OSCR via an exhaustive sweep over every distinct threshold.

    Builds the full (FPR, CCR) point list in decreasing-threshold order,
    then integrates the right-continuous step curve: at each x the last
    point wins, and each segment contributes width times the left value.
    """
    ks = np.asarray(known_scores, dtype=np.float64)
    kc = np.asarray(known_correct, dtype=bool)
    us = np.asarray(unknown_scores, dtype=np.float64)
    points = [(0.0, 0.0)]
    for t in sorted(set(ks.tolist()) | set(us.tolist()), reverse=True):
        ccr = float(np.mean(kc & (ks >= t)))
        fpr = float(np.mean(us >= t))
        points.append((fpr, ccr))
    points.append((1.0, float(np.mean(kc))))
    heights = {}
    for x, y in points:
        heights[x] = y
    xs = sorted(heights)
    return sum((x1 - x0) * heights[x0] for x0, x1 in zip(xs[:-1], xs[1:]))


def count_windows_enumeration(length: int, window_len: int, stride: int) -> int:
    """Window count by walking every start position."""
    count = 0
    start = 0
    while start + window_len <= length:
        count += 1
        start += stride
    return count


def mlp_forward_scalar(weights, biases, activation, x_row):
    """Scalar triple-loop forward pass of one input row."""
    a = list(x_row)
    n_layers = len(weights)
    for li, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(w.shape[0]):
            s = b[j]
            for i in range(w.shape[1]):
                s += w[j][i] * a[i]
            if li < n_layers - 1:
                if activation == "relu":
                    s = s if s > 0 else 0.0
                else:
                    s = np.tanh(s)
            out.append(s)
        a = out
    return np.array(a)


def dot_scalar(a, b) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s
