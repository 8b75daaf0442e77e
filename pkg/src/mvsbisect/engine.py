"""Iterative binary-decision depth inference over an inverse-depth interval.

Starting from the interval midpoint, each iteration t asks a decision oracle,
per source view, whether the true surface lies in front of (B -> 1) or behind
(B -> 0) the current hypothesis, then moves every pixel by the geometrically
shrinking step R / 2^(t+1):

    H_s[t+1] = H[t] - (R / 2^(t+1)) * (2 B_s[t] - 1)

Because R is negative under this package's inverse-depth convention (see
:mod:`mvsbisect.geometry`), B = 1 moves the hypothesis toward larger inverse
depth, i.e. toward the nearer surface.  The per-source hypotheses are fused
with per-pixel confidence weights and the final depth is 1 / H[T].
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError
from .fusion import fuse_hypotheses
from .geometry import InverseDepthInterval


@dataclass
class HypothesisMap:
    """Per-pixel inverse-depth state at iteration ``t``."""

    values: np.ndarray
    t: int
    interval: InverseDepthInterval

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"hypothesis map must be non-empty 2D, got {self.values.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class EngineConfig:
    """Iteration count, source count, oracle plumbing, and trace switch."""

    oracle: object
    weight_oracle: object
    iterations: int = 8
    num_sources: int | None = None
    record_trace: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration count must be >= 1")
        if self.num_sources is not None and self.num_sources < 1:
            raise ValueError("source count must be >= 1")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")


@dataclass
class Trace:
    """Optional per-iteration snapshots for diagnostics and figures.

    ``hypotheses`` holds H^0 .. H^T (length T + 1); ``masks`` and ``weights``
    hold one entry per (iteration, source).
    """

    hypotheses: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    weights: list = field(default_factory=list)


def init_hypothesis(interval: InverseDepthInterval, dims: tuple[int, int]) -> HypothesisMap:
    """Constant map at the interval midpoint, iteration 0."""
    h, w = dims
    if h <= 0 or w <= 0:
        raise ValueError(f"hypothesis dims must be positive, got {dims}")
    return HypothesisMap(values=np.full((h, w), interval.midpoint, dtype=np.float64),
                         t=0, interval=interval)


def step_size(t: int, R: float) -> float:
    """Signed per-iteration step R / 2^(t+1)."""
    if t < 0:
        raise ValueError("iteration index must be >= 0")
    return R * (0.5 ** (t + 1))


def update_hypothesis(hyp: HypothesisMap, mask) -> HypothesisMap:
    """Move the hypothesis by the signed step, scaled by (2B - 1).

    Pixels with decision validity 0 are left unmoved.  The result is clamped
    into the interval; in-range values pass through bit-exactly.
    """
    b = np.asarray(mask.values, dtype=np.float64)
    if b.shape != hyp.values.shape:
        raise ValueError(f"mask shape {b.shape} does not match hypothesis {hyp.values.shape}")
    delta = step_size(hyp.t, hyp.interval.R) * (2.0 * b - 1.0)
    if mask.valid is not None:
        delta = np.where(np.asarray(mask.valid) > 0, delta, 0.0)
    nxt = hyp.interval.clamp(hyp.values - delta)
    return HypothesisMap(values=nxt, t=hyp.t + 1, interval=hyp.interval)


def _check_containment(values: np.ndarray, interval: InverseDepthInterval) -> None:
    if not np.all((values >= interval.lo) & (values <= interval.hi)):
        raise InvariantError("hypothesis escaped the inverse-depth interval")


def run(bundle, interval: InverseDepthInterval, cfg: EngineConfig):
    """Run T iterations of decide / update / fuse; returns (depth, trace).

    ``bundle`` provides ``ref`` and ``sources`` views (see scenegen).  The
    engine consumes the source list as given; view selection policy lives in
    the caller.  Results are identical for any worker count: per-source work
    is dispatched to a pool but reduced in source order.
    """
    sources = list(bundle.sources)
    if cfg.num_sources is not None:
        sources = sources[:cfg.num_sources]
    if len(sources) == 0:
        raise ValueError("need at least one source view")
    ref = bundle.ref
    dims = ref.image.shape[:2]
    hyp = init_hypothesis(interval, dims)
    trace = Trace() if cfg.record_trace else None
    if trace is not None:
        trace.hypotheses.append(hyp.values.copy())

    def decide_and_weigh(args):
        s, current = args
        try:
            mask = cfg.oracle.decide(ref, sources[s], current)
            weight = cfg.weight_oracle.weigh(mask)
        except Exception as e:
            e.args = (f"[iteration {current.t}, source {s}] {e}",)
            raise
        return mask, weight

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(cfg.iterations):
            jobs = [(s, hyp) for s in range(len(sources))]
            if pool is not None:
                results = list(pool.map(decide_and_weigh, jobs))
            else:
                results = [decide_and_weigh(j) for j in jobs]
            updated = [update_hypothesis(hyp, mask) for mask, _ in results]
            fused = fuse_hypotheses([u.values for u in updated],
                                    [w for _, w in results])
            _check_containment(fused, interval)
            if trace is not None:
                trace.masks.append([m.values.copy() for m, _ in results])
                trace.weights.append([w.copy() for _, w in results])
                trace.hypotheses.append(fused.copy())
            hyp = HypothesisMap(values=fused, t=t + 1, interval=interval)
    finally:
        if pool is not None:
            pool.shutdown()
    depth = 1.0 / hyp.values
    return depth, trace
