"""Evaluation measures: masked BCE losses, depth statistics, cloud metrics.

The loss functions evaluate decision-mask quality against the analytic hard
mask (no training happens here).  Cloud metrics follow the usual two-sided
convention: accuracy looks from the prediction toward the ground truth,
completeness the other way round; they aggregate as a harmonic mean in
percentage mode and as a plain mean in distance mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .decision import ground_truth_oracle as gt_mask  # shared Eq-style comparison

BCE_CLAMP = 1e-7
DEFAULT_LOSS_WEIGHTS = (0.25, 0.5, 1.0)


@dataclass(frozen=True)
class LossWeights:
    """Per-level loss weights (quarter, half, full)."""

    l0: float = DEFAULT_LOSS_WEIGHTS[0]
    l1: float = DEFAULT_LOSS_WEIGHTS[1]
    l2: float = DEFAULT_LOSS_WEIGHTS[2]

    def __post_init__(self):
        if self.l0 < 0 or self.l1 < 0 or self.l2 < 0:
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l0, self.l1, self.l2)


def bce(b, b_gt) -> np.ndarray:
    """Binary cross entropy -(b_gt ln b + (1 - b_gt) ln(1 - b)), natural log."""
    p = np.clip(np.asarray(b, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(b_gt, dtype=np.float64)
    return -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))


def masked_bce_loss(mask_values, gt_values, validity) -> tuple[float, bool]:
    """Mean BCE over valid pixels; returns (loss, defined).

    With no valid pixels the loss is 0 and ``defined`` is False.
    """
    b = np.asarray(mask_values, dtype=np.float64)
    t = np.asarray(gt_values, dtype=np.float64)
    v = np.asarray(validity, dtype=np.float64)
    if not (b.shape == t.shape == v.shape):
        raise ValueError(f"shape mismatch: {b.shape}, {t.shape}, {v.shape}")
    count = float(np.sum(v > 0))
    if count == 0:
        return 0.0, False
    total = float(np.sum(np.where(v > 0, bce(b, t), 0.0)))
    return total / count, True


def multiscale_loss(losses, weights: LossWeights | tuple = DEFAULT_LOSS_WEIGHTS) -> float:
    """Weighted sum of the per-level losses."""
    w = weights.as_tuple() if isinstance(weights, LossWeights) else tuple(weights)
    if len(losses) != len(w):
        raise ValueError(f"{len(losses)} losses vs {len(w)} weights")
    return float(sum(wk * lk for wk, lk in zip(w, losses)))


def depth_error_stats(depth, gt_depth, validity=None, delta: float = 0.01) -> dict:
    """Robust error statistics in depth and inverse-depth domains.

    ``delta`` is an absolute threshold applied in each domain for the
    within-fraction statistic.
    """
    d = np.asarray(depth, dtype=np.float64)
    g = np.asarray(gt_depth, dtype=np.float64)
    if d.shape != g.shape:
        raise ValueError(f"depth shapes differ: {d.shape} vs {g.shape}")
    v = np.isfinite(d) & np.isfinite(g) & (d > 0) & (g > 0)
    if validity is not None:
        v &= np.asarray(validity) > 0
    n = int(v.sum())
    if n == 0:
        nan = float("nan")
        return {"n_valid": 0,
                "depth_mean_abs": nan, "depth_median_abs": nan, "depth_frac_within": nan,
                "inv_mean_abs": nan, "inv_median_abs": nan, "inv_frac_within": nan}
    ed = np.abs(d[v] - g[v])
    ei = np.abs(1.0 / d[v] - 1.0 / g[v])
    return {
        "n_valid": n,
        "depth_mean_abs": float(ed.mean()),
        "depth_median_abs": float(np.median(ed)),
        "depth_frac_within": float((ed <= delta).mean()),
        "inv_mean_abs": float(ei.mean()),
        "inv_median_abs": float(np.median(ei)),
        "inv_frac_within": float((ei <= delta).mean()),
    }


@dataclass(frozen=True)
class CloudMetrics:
    """Two-sided cloud comparison at threshold tau.

    In percentage mode the fields are percentages in [0, 100] and
    ``aggregate`` is their harmonic mean (F-score); in distance mode they are
    mean distances and ``aggregate`` is the arithmetic mean.
    """

    accuracy: float
    completeness: float
    aggregate: float
    threshold: float
    percentage: bool
    accuracy_defined: bool = True

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "aggregate": self.aggregate,
            "threshold": self.threshold,
            "mode": "percentage" if self.percentage else "distance",
            "accuracy_defined": int(self.accuracy_defined),
        }


def _positions(cloud) -> np.ndarray:
    pts = getattr(cloud, "positions", cloud)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def _nn_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    tree = cKDTree(dst)
    dist, _ = tree.query(src, k=1)
    return np.asarray(dist, dtype=np.float64)


def cloud_accuracy_completeness(pred, gt, tau: float,
                                percentage: bool = True) -> CloudMetrics:
    """Exact nearest-neighbor accuracy/completeness between two clouds."""
    p = _positions(pred)
    g = _positions(gt)
    if len(g) == 0:
        raise ValueError("ground-truth cloud must be non-empty")
    if tau <= 0:
        raise ValueError("distance threshold must be positive")
    if len(p) == 0:
        if percentage:
            return CloudMetrics(float("nan"), 0.0, 0.0, tau, True, accuracy_defined=False)
        return CloudMetrics(float("nan"), float("inf"), float("inf"), tau, False,
                            accuracy_defined=False)
    d_pg = _nn_distances(p, g)
    d_gp = _nn_distances(g, p)
    if percentage:
        acc = 100.0 * float((d_pg <= tau).mean())
        cmp_ = 100.0 * float((d_gp <= tau).mean())
        f = 2.0 * acc * cmp_ / (acc + cmp_) if (acc + cmp_) > 0 else 0.0
        return CloudMetrics(acc, cmp_, f, tau, True)
    acc = float(d_pg.mean())
    cmp_ = float(d_gp.mean())
    return CloudMetrics(acc, cmp_, (acc + cmp_) / 2.0, tau, False)
