"""Entropy, confidence weights, and multi-source hypothesis fusion.

Fusion is a per-pixel weighted average of the per-source inverse-depth
hypotheses, H = sum_s W_s H_s / sum_s W_s.  Weights come either from a
network logit (W = exp(-w)), from the decision mask's binary entropy
(training-free heuristic), or are uniform (the naive-averaging baseline).
"""

from __future__ import annotations

import numpy as np

from .errors import InvariantError

LOG_CLAMP = 1e-7
WEIGHT_FLOOR = 1e-12
LN2 = float(np.log(2.0))


def entropy(mask_values: np.ndarray) -> np.ndarray:
    """Binary entropy -(B ln B + (1-B) ln(1-B)), natural log, range [0, ln 2]."""
    b = np.clip(np.asarray(mask_values, dtype=np.float64), LOG_CLAMP, 1.0 - LOG_CLAMP)
    return -(b * np.log(b) + (1.0 - b) * np.log(1.0 - b))


def weight_from_logit(logits: np.ndarray) -> np.ndarray:
    """Map network logits w to fusion weights exp(-w), floored for stability."""
    return np.maximum(np.exp(-np.asarray(logits, dtype=np.float64)), WEIGHT_FLOOR)


def heuristic_weight(mask_values: np.ndarray, validity: np.ndarray | None = None) -> np.ndarray:
    """Entropy-based confidence: ~1 at certain decisions, ~0 at B = 0.5.

    Pixels whose decision validity is 0 are scaled down to near-zero weight so
    they cannot steer the fusion.
    """
    w = 1.0 - entropy(mask_values) / LN2 + 1e-6
    if validity is not None:
        w = np.where(np.asarray(validity) > 0, w, w * 1e-6)
    return w


def fuse_hypotheses(hypotheses: list[np.ndarray], weights: list[np.ndarray]) -> np.ndarray:
    """Per-pixel weighted average of per-source hypotheses.

    The result is a convex combination, so it is clipped into the exact
    per-pixel [min, max] envelope to keep the containment invariant free of
    last-ulp floating-point escape.
    """
    if len(hypotheses) == 0:
        raise ValueError("need at least one source hypothesis")
    if len(hypotheses) != len(weights):
        raise ValueError("hypotheses and weights lists differ in length")
    hs = np.stack([np.asarray(h, dtype=np.float64) for h in hypotheses])
    ws = np.stack([np.asarray(w, dtype=np.float64) for w in weights])
    if hs.shape != ws.shape:
        raise ValueError(f"shape mismatch: hypotheses {hs.shape} vs weights {ws.shape}")
    if not np.all(ws > 0):
        raise InvariantError("fusion weights must be strictly positive")
    total = ws.sum(axis=0)
    fused = (ws * hs).sum(axis=0) / total
    lo = hs.min(axis=0)
    hi = hs.max(axis=0)
    fused = np.clip(fused, lo, hi)
    if not (np.all(fused >= lo) and np.all(fused <= hi)):
        raise InvariantError("fused hypothesis escaped the convex envelope")
    return fused


def naive_fuse(hypotheses: list[np.ndarray]) -> np.ndarray:
    """Unweighted mean in inverse-depth space (ablation baseline).

    Implemented as uniform-weight fusion so the algebraic identity with
    :func:`fuse_hypotheses` holds exactly.
    """
    if len(hypotheses) == 0:
        raise ValueError("need at least one source hypothesis")
    ones = [np.ones_like(np.asarray(h, dtype=np.float64)) for h in hypotheses]
    return fuse_hypotheses(hypotheses, ones)


class UniformWeightOracle:
    """Constant weight 1 for every source: fusion degenerates to the mean."""

    def weigh(self, mask) -> np.ndarray:
        return np.ones_like(np.asarray(mask.values, dtype=np.float64))


class EntropyWeightOracle:
    """Training-free confidence from the decision mask's binary entropy."""

    def weigh(self, mask) -> np.ndarray:
        return heuristic_weight(mask.values, mask.valid)
