"""Epipolar kernel sampling: place k^2 taps on the epipolar line and gather.

For each reference pixel p with hypothesis H(p), the kernel taps sit at

    c_i = project(p, H(p)) + (i - (k^2 - 1)/2) * unit_step(p, H(p))

with the row-major kernel index i in {0 .. k^2-1}, so offsets are symmetric
integer multiples of the unit epipolar step and the center tap is the
projection itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, bilinear_sample, epipolar_step_points, pixel_grid, project_points


@dataclass(frozen=True)
class EpipolarKernel:
    """Row-major kernel-index to line-offset mapping for an odd k."""

    k: int

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.k}")

    @property
    def offsets(self) -> np.ndarray:
        n = self.k * self.k
        return np.arange(n, dtype=np.float64) - (n - 1) / 2.0

    @property
    def center_index(self) -> int:
        return (self.k * self.k - 1) // 2


@dataclass
class SampleGrid:
    """Per-reference-pixel epipolar sample locations in a source image.

    ``xs``/``ys``/``valid`` have shape (k^2, M, N).  A tap is valid when the
    projection succeeded and the tap falls inside the source image domain.
    ``degenerate`` marks pixels where the epipolar tangent was degenerate and
    the axis-aligned fallback direction was used.
    """

    xs: np.ndarray
    ys: np.ndarray
    valid: np.ndarray
    k: int
    src_width: int
    src_height: int
    degenerate: np.ndarray

    @property
    def center_index(self) -> int:
        return (self.k * self.k - 1) // 2

    @property
    def center_valid(self) -> np.ndarray:
        return self.valid[self.center_index]


def build_sample_grid(ref_cam: Camera, src_cam: Camera, hyp_values: np.ndarray,
                      k: int = 5) -> SampleGrid:
    """Sample locations for every reference pixel at its hypothesis value.

    ``hyp_values`` is an (M, N) inverse-depth map on the reference grid; M, N
    need not equal the reference camera size (callers pass downscaled maps
    with correspondingly scaled cameras).
    """
    kernel = EpipolarKernel(k)
    hyp = np.asarray(hyp_values, dtype=np.float64)
    if hyp.ndim != 2:
        raise ValueError(f"hypothesis map must be 2D, got shape {hyp.shape}")
    xs, ys = pixel_grid(hyp.shape[1], hyp.shape[0])
    px, py, pvalid = project_points(ref_cam, src_cam, xs, ys, hyp)
    sx, sy, degen = epipolar_step_points(ref_cam, src_cam, xs, ys, hyp)
    off = kernel.offsets[:, None, None]
    cx = px[None] + off * sx[None]
    cy = py[None] + off * sy[None]
    inside = (
        (cx >= 0) & (cx <= src_cam.width - 1) &
        (cy >= 0) & (cy <= src_cam.height - 1)
    )
    valid = pvalid[None] & inside & np.isfinite(cx) & np.isfinite(cy)
    return SampleGrid(xs=cx, ys=cy, valid=valid, k=k,
                      src_width=src_cam.width, src_height=src_cam.height,
                      degenerate=degen)


def gather(feature_map: np.ndarray, grid: SampleGrid) -> np.ndarray:
    """Bilinear-gather a source map at every grid tap.

    ``feature_map`` is (H, W) or (C, H, W) with H, W equal to the grid's
    source dimensions.  Invalid taps contribute exactly 0 (their validity
    weight lives in ``grid.valid``), which keeps gather linear in the map.

    Returns (k^2, M, N) for a 2D map, (C, k^2, M, N) for a 3D map.
    """
    m = np.asarray(feature_map)
    if m.ndim == 2:
        h, w = m.shape
    elif m.ndim == 3:
        h, w = m.shape[1:]
    else:
        raise ValueError(f"expected (H, W) or (C, H, W) map, got shape {m.shape}")
    if (h, w) != (grid.src_height, grid.src_width):
        raise ValueError(
            f"feature map {h}x{w} does not match grid source {grid.src_height}x{grid.src_width}"
        )
    x = np.where(grid.valid, grid.xs, 0.0)
    y = np.where(grid.valid, grid.ys, 0.0)
    if m.ndim == 2:
        vals = bilinear_sample(m, x, y)
        return np.where(grid.valid, vals, 0.0)
    hwc = np.moveaxis(m, 0, -1)
    vals = bilinear_sample(hwc, x, y)
    vals = np.where(grid.valid[..., None], vals, 0.0)
    return np.moveaxis(vals, -1, 0).astype(m.dtype, copy=False)
