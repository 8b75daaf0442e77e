"""Per-pixel binary decision oracles.

A decision oracle answers, softly, the question "is the true surface in front
of (B -> 1) or behind (B -> 0) the current inverse-depth hypothesis?".  Three
implementations share one interface:

* :class:`GroundTruthOracle` compares analytic depth directly (exact, for
  verification);
* :class:`ZnccOracle` probes the hypothesis one half-step toward each side
  and compares windowed zero-mean normalized cross-correlation of the
  epipolar-warped source against the reference (training-free classical
  stand-in);
* :class:`NeuralOracle` runs the multi-level decision network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.special import expit

from . import neural
from .engine import HypothesisMap, step_size
from .errors import InvariantError
from .geometry import Camera, pixel_grid, project_points

TEXTURELESS_VARIANCE = 1e-6
DEFAULT_ZNCC_WINDOW = 7
DEFAULT_PROBE_FACTOR = 0.5
DEFAULT_SHARPNESS = 10.0


@dataclass
class SoftMask:
    """Per-pixel soft decision in [0, 1] plus a validity mask.

    ``levels`` optionally carries the mask pyramid (quarter, half, full) when
    the producing oracle runs multi-resolution; weight oracles may use it.
    """

    values: np.ndarray
    valid: np.ndarray
    levels: list | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=np.float64)
        if self.values.shape != self.valid.shape:
            raise ValueError(f"mask/validity shapes differ: {self.values.shape} vs {self.valid.shape}")
        ok = self.valid > 0
        vals = self.values[ok]
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise InvariantError("decision mask has valid entries outside [0, 1]")


def ground_truth_oracle(gt_depth: np.ndarray, hyp_values: np.ndarray) -> SoftMask:
    """Hard mask from analytic depth: 1 where d_GT < 1/H, else 0.

    Pixels with non-finite ground truth are flagged invalid.
    """
    d = np.asarray(gt_depth, dtype=np.float64)
    H = np.asarray(hyp_values, dtype=np.float64)
    if d.shape != H.shape:
        raise ValueError(f"depth {d.shape} and hypothesis {H.shape} shapes differ")
    valid = np.isfinite(d)
    with np.errstate(divide="ignore"):
        h = 1.0 / H
    b = np.where(valid & (d < h), 1.0, 0.0)
    return SoftMask(values=b, valid=valid.astype(np.float64))


def decision_from_costs(score_front: np.ndarray, score_behind: np.ndarray,
                        sharpness: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Sigmoid decision from matching scores at the two probes (higher = better)."""
    return expit(sharpness * (np.asarray(score_front, dtype=np.float64)
                              - np.asarray(score_behind, dtype=np.float64)))


def to_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=-1)
    return img


def _warped_zncc(ref_gray: np.ndarray, src_gray: np.ndarray, ref_cam: Camera,
                 src_cam: Camera, hyp_values: np.ndarray, window: int):
    """Windowed ZNCC between the reference and the source warped at H.

    Returns (zncc, ref_variance, defined) where ``defined`` is False at
    pixels whose hypothesis projects outside the source view.
    """
    from .geometry import bilinear_sample

    xs, ys = pixel_grid(ref_cam.width, ref_cam.height)
    sx, sy, ok = project_points(ref_cam, src_cam, xs, ys, hyp_values)
    defined = ok & src_cam.contains(np.where(ok, sx, 0.0), np.where(ok, sy, 0.0))
    warped = bilinear_sample(src_gray, np.where(defined, sx, 0.0), np.where(defined, sy, 0.0))

    def box(a):
        return uniform_filter(a, size=window, mode="nearest")

    mu_r = box(ref_gray)
    mu_w = box(warped)
    var_r = np.maximum(box(ref_gray * ref_gray) - mu_r * mu_r, 0.0)
    var_w = np.maximum(box(warped * warped) - mu_w * mu_w, 0.0)
    cov = box(ref_gray * warped) - mu_r * mu_w
    zncc = cov / np.maximum(np.sqrt(var_r * var_w), 1e-12)
    return np.clip(zncc, -1.0, 1.0), var_r, defined


def photoconsistency_oracle(ref_image: np.ndarray, src_image: np.ndarray,
                            ref_cam: Camera, src_cam: Camera,
                            hyp: HypothesisMap,
                            window: int = DEFAULT_ZNCC_WINDOW,
                            probe_factor: float = DEFAULT_PROBE_FACTOR,
                            sharpness: float = DEFAULT_SHARPNESS) -> SoftMask:
    """Classical decision: compare warped ZNCC at probes one half-step out.

    The probes sit at H +/- probe_factor * |step| (clamped to the interval),
    where the step is the engine's current one, so discrimination sharpens as
    the search narrows.  Textureless reference windows and pixels that leave
    the source image are uninformative and answer 0.5 (validity stays 1).
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {window}")
    if not (0.0 < probe_factor <= 1.0):
        raise ValueError(f"probe factor must be in (0, 1], got {probe_factor}")
    ref_gray = to_gray(ref_image)
    src_gray = to_gray(src_image)
    if ref_gray.shape != hyp.values.shape:
        raise ValueError(f"image {ref_gray.shape} and hypothesis {hyp.values.shape} differ")
    half = probe_factor * abs(step_size(hyp.t, hyp.interval.R))
    h_front = hyp.interval.clamp(hyp.values + half)   # larger inverse depth = nearer
    h_behind = hyp.interval.clamp(hyp.values - half)
    z_front, var_r, def_f = _warped_zncc(ref_gray, src_gray, ref_cam, src_cam, h_front, window)
    z_behind, _, def_b = _warped_zncc(ref_gray, src_gray, ref_cam, src_cam, h_behind, window)
    b = decision_from_costs(z_front, z_behind, sharpness)
    uninformative = (var_r < TEXTURELESS_VARIANCE) | ~def_f | ~def_b
    b = np.where(uninformative, 0.5, b)
    return SoftMask(values=b, valid=np.ones_like(b))


class GroundTruthOracle:
    """Decision oracle backed by the reference view's analytic depth."""

    def decide(self, ref_view, src_view, hyp: HypothesisMap) -> SoftMask:
        if ref_view.gt_depth is None:
            raise ValueError("ground-truth oracle requires reference depth")
        return ground_truth_oracle(ref_view.gt_depth, hyp.values)


class ZnccOracle:
    """Classical photoconsistency oracle; see :func:`photoconsistency_oracle`."""

    def __init__(self, window: int = DEFAULT_ZNCC_WINDOW,
                 probe_factor: float = DEFAULT_PROBE_FACTOR,
                 sharpness: float = DEFAULT_SHARPNESS):
        self.window = window
        self.probe_factor = probe_factor
        self.sharpness = sharpness

    def decide(self, ref_view, src_view, hyp: HypothesisMap) -> SoftMask:
        return photoconsistency_oracle(ref_view.image, src_view.image,
                                       ref_view.camera, src_view.camera, hyp,
                                       window=self.window,
                                       probe_factor=self.probe_factor,
                                       sharpness=self.sharpness)


class ConstantOracle:
    """Fixed-answer oracle (0.5 = never move); for plumbing and fixpoint tests."""

    def __init__(self, value: float = 0.5):
        self.value = float(value)

    def decide(self, ref_view, src_view, hyp: HypothesisMap) -> SoftMask:
        b = np.full(hyp.values.shape, self.value)
        return SoftMask(values=b, valid=np.ones_like(b))


class NeuralOracle:
    """Multi-level network decision; weights validated against the graph."""

    def __init__(self, store: neural.WeightStore, kernel_size: int = 5,
                 in_channels: int = 3):
        neural.validate_store(store, neural.manifest(in_channels))
        self.store = store
        self.kernel_size = kernel_size
        self._feature_cache: dict[int, list] = {}

    def _features(self, view) -> list:
        key = id(view)
        feats = self._feature_cache.get(key)
        if feats is None:
            feats = neural.run_fpn(self.store, neural.image_to_tensor(view.image))
            self._feature_cache[key] = feats
        return feats

    def decide(self, ref_view, src_view, hyp: HypothesisMap) -> SoftMask:
        masks, center_valid = neural.run_multilevel_dnet(
            self.store, ref_view.image, src_view.image,
            ref_view.camera, src_view.camera, hyp.values,
            k=self.kernel_size,
            feats_ref=self._features(ref_view),
            feats_src=self._features(src_view),
        )
        full = np.asarray(masks[2], dtype=np.float64)
        return SoftMask(values=full, valid=center_valid.astype(np.float64),
                        levels=[np.asarray(m, dtype=np.float64) for m in masks])
