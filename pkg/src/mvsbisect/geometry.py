"""Pinhole cameras, inverse-depth intervals, projection and sampling primitives.

Conventions fixed across the package:

* Pixel coordinates are continuous, x rightward and y downward, with the
  origin at the CENTER of the top-left pixel, so integer coordinates address
  pixel centers and the valid domain of a WxH image is [0, W-1] x [0, H-1].
* Depth is the camera-frame z coordinate (not distance along the ray); a
  point is in front of a camera when z > 0.
* Inverse depth: with d_min < d_max the bounds D_min = 1/d_min and
  D_max = 1/d_max satisfy D_min > D_max, so the signed half-width
  R = (D_max - D_min)/2 is NEGATIVE.  The search-engine update formulas rely
  on this sign convention; it is deliberate, not a bug (see README).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-9
STEP_PROBE_EPS = 1e-4
DEGENERATE_STEP_NORM = 1e-12


class GeometryError(ValueError):
    """Raised for invalid camera or interval construction."""


@dataclass(frozen=True)
class PixelCoord:
    """A continuous pixel location with a validity flag."""

    x: float
    y: float
    valid: bool = True


@dataclass(frozen=True)
class InverseDepthInterval:
    """Signed inverse-depth search interval.

    ``R`` and ``midpoint`` are stored such that ``midpoint - R == D_min`` and
    ``midpoint + R == D_max`` hold exactly in floating point.
    """

    D_min: float
    D_max: float
    R: float
    midpoint: float

    @property
    def lo(self) -> float:
        """Smaller inverse-depth bound (farthest surface)."""
        return min(self.D_min, self.D_max)

    @property
    def hi(self) -> float:
        """Larger inverse-depth bound (nearest surface)."""
        return max(self.D_min, self.D_max)

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lo, self.hi)

    def contains(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return (v >= self.lo) & (v <= self.hi)


def make_interval(d_min: float, d_max: float) -> InverseDepthInterval:
    """Build the inverse-depth interval for a metric depth range.

    Raises:
        GeometryError: if the depths are non-positive, non-finite, or
            ``d_min > d_max``.
    """
    if not (np.isfinite(d_min) and np.isfinite(d_max)):
        raise GeometryError(f"depth range must be finite, got ({d_min}, {d_max})")
    if d_min <= 0 or d_max <= 0:
        raise GeometryError(f"depth range must be positive, got ({d_min}, {d_max})")
    if d_min > d_max:
        raise GeometryError(f"d_min must not exceed d_max, got ({d_min}, {d_max})")
    near = 1.0 / d_min
    far = 1.0 / d_max
    r = (far - near) / 2.0
    mid = (far + near) / 2.0
    # Re-derive the bounds from (midpoint, R) so midpoint -/+ R recovers them
    # bit-exactly, which downstream containment checks depend on.
    return InverseDepthInterval(D_min=mid - r, D_max=mid + r, R=r, midpoint=mid)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics ``K`` and world-to-camera pose ``Rt``.

    ``K`` is 3x3 upper triangular with positive focal lengths; ``Rt`` is the
    3x4 rigid transform ``[R | t]`` mapping world points into the camera
    frame, with ``R`` orthonormal.
    """

    K: np.ndarray
    Rt: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        Rt = np.asarray(self.Rt, dtype=np.float64).reshape(3, 4)
        K.setflags(write=False)
        Rt.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Rt", Rt)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(Rt))):
            raise GeometryError("camera parameters must be finite")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("focal lengths must be positive")
        if abs(K[1, 0]) > 0 or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0:
            raise GeometryError("K must be upper triangular")
        R = Rt[:, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=ROTATION_TOL):
            raise GeometryError("rotation part of Rt is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image dimensions must be positive")

    @property
    def R(self) -> np.ndarray:
        return self.Rt[:, :3]

    @property
    def t(self) -> np.ndarray:
        return self.Rt[:, 3]

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def contains(self, x, y) -> np.ndarray:
        """True where (x, y) lies inside the image domain."""
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= 0) & (x <= self.width - 1) & (y >= 0) & (y <= self.height - 1)


def scale_camera(cam: Camera, scale: float) -> Camera:
    """Camera for the same scene rendered at ``scale`` times the resolution.

    Uses the half-pixel-aware mapping x_s = (x + 0.5) * scale - 0.5 so that
    pixel centers remain aligned with bilinear resampling of image content.
    """
    w = max(1, int(round(cam.width * scale)))
    h = max(1, int(round(cam.height * scale)))
    K = cam.K.copy()
    K[0, 0] *= scale
    K[1, 1] *= scale
    K[0, 1] *= scale
    K[0, 2] = (K[0, 2] + 0.5) * scale - 0.5
    K[1, 2] = (K[1, 2] + 0.5) * scale - 0.5
    return Camera(K=K, Rt=cam.Rt, width=w, height=h)


def relative_motion(ref_cam: Camera, src_cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Rigid motion mapping reference-camera coordinates into the source camera."""
    R_rel = src_cam.R @ ref_cam.R.T
    t_rel = src_cam.t - R_rel @ ref_cam.t
    return R_rel, t_rel


def pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense (x, y) coordinate arrays of shape (height, width)."""
    xs, ys = np.meshgrid(
        np.arange(width, dtype=np.float64),
        np.arange(height, dtype=np.float64),
        indexing="xy",
    )
    return xs, ys


def project_points(ref_cam: Camera, src_cam: Camera, x, y, inv_depth):
    """Project reference pixels at inverse depth ``inv_depth`` into the source view.

    All of ``x``, ``y``, ``inv_depth`` broadcast together.  Returns
    ``(xs, ys, valid)`` where ``valid`` is False (and the coordinates are NaN)
    for points behind the source camera or numerically non-finite.
    """
    x, y, H = np.broadcast_arrays(
        np.asarray(x, dtype=np.float64),
        np.asarray(y, dtype=np.float64),
        np.asarray(inv_depth, dtype=np.float64),
    )
    R_rel, t_rel = relative_motion(ref_cam, src_cam)
    A = src_cam.K @ R_rel @ ref_cam.K_inv
    b = src_cam.K @ t_rel
    # Homogeneous source coords of the point at depth 1/H along the ref ray,
    # scaled by H: finite even in the H -> 0 (infinite depth) limit.
    mx = A[0, 0] * x + A[0, 1] * y + A[0, 2] + H * b[0]
    my = A[1, 0] * x + A[1, 1] * y + A[1, 2] + H * b[1]
    mz = A[2, 0] * x + A[2, 1] * y + A[2, 2] + H * b[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = mx / mz
        ys = my / mz
    valid = (mz > 0) & np.isfinite(xs) & np.isfinite(ys)
    xs = np.where(valid, xs, np.nan)
    ys = np.where(valid, ys, np.nan)
    return xs, ys, valid


def project(ref_cam: Camera, src_cam: Camera, p: PixelCoord, inv_depth: float) -> PixelCoord:
    """Scalar wrapper around :func:`project_points`."""
    xs, ys, valid = project_points(ref_cam, src_cam, p.x, p.y, inv_depth)
    return PixelCoord(x=float(xs), y=float(ys), valid=bool(valid))


def back_project_points(cam: Camera, x, y, depth) -> np.ndarray:
    """World-frame points on the rays through (x, y) at camera-z ``depth``.

    Returns an array of shape ``broadcast(x, y, depth).shape + (3,)``.
    """
    x, y, d = np.broadcast_arrays(
        np.asarray(x, dtype=np.float64),
        np.asarray(y, dtype=np.float64),
        np.asarray(depth, dtype=np.float64),
    )
    Ki = cam.K_inv
    # Ray direction with unit camera-z, so multiplying by d gives z = d.
    rx = Ki[0, 0] * x + Ki[0, 1] * y + Ki[0, 2]
    ry = Ki[1, 1] * y + Ki[1, 2]
    cam_pts = np.stack([rx * d, ry * d, d], axis=-1)
    return (cam_pts - cam.t) @ cam.R


def back_project(cam: Camera, p: PixelCoord, depth: float) -> np.ndarray:
    return back_project_points(cam, p.x, p.y, depth)


def project_world_points(cam: Camera, world_points: np.ndarray):
    """Project world points into a camera; returns (xs, ys, depth, valid)."""
    pts = np.asarray(world_points, dtype=np.float64)
    cam_pts = pts @ cam.R.T + cam.t
    z = cam_pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = cam.K[0, 0] * cam_pts[..., 0] / z + cam.K[0, 1] * cam_pts[..., 1] / z + cam.K[0, 2]
        ys = cam.K[1, 1] * cam_pts[..., 1] / z + cam.K[1, 2]
    valid = (z > 0) & np.isfinite(xs) & np.isfinite(ys)
    return xs, ys, z, valid


def epipolar_step_points(ref_cam: Camera, src_cam: Camera, x, y, inv_depth,
                         eps: float = STEP_PROBE_EPS):
    """Unit pixel-space tangent of the epipolar curve at ``inv_depth``.

    Computed by symmetric differencing of the projection at H * (1 +/- eps)
    and normalizing; oriented toward increasing inverse depth.  Where the
    tangent is degenerate (norm below ``DEGENERATE_STEP_NORM``, e.g. at the
    epipole under pure forward motion) the fallback direction (1, 0) is
    substituted and flagged.

    Returns ``(sx, sy, degenerate)``.
    """
    H = np.asarray(inv_depth, dtype=np.float64)
    xp, yp, vp = project_points(ref_cam, src_cam, x, y, H * (1.0 + eps))
    xm, ym, vm = project_points(ref_cam, src_cam, x, y, H * (1.0 - eps))
    dx = xp - xm
    dy = yp - ym
    norm = np.hypot(dx, dy)
    ok = vp & vm & np.isfinite(norm) & (norm > DEGENERATE_STEP_NORM)
    degenerate = ~ok
    safe = np.where(ok, norm, 1.0)
    sx = np.where(ok, dx / safe, 1.0)
    sy = np.where(ok, dy / safe, 0.0)
    return sx, sy, degenerate


def epipolar_unit_step(ref_cam: Camera, src_cam: Camera, p: PixelCoord,
                       inv_depth: float) -> tuple[np.ndarray, bool]:
    """Scalar wrapper around :func:`epipolar_step_points`."""
    sx, sy, degen = epipolar_step_points(ref_cam, src_cam, p.x, p.y, inv_depth)
    return np.array([float(sx), float(sy)]), bool(degen)


def bilinear_sample(map_: np.ndarray, x, y) -> np.ndarray:
    """Bilinear interpolation of a (H, W) or (H, W, C) field at (x, y).

    Out-of-bounds coordinates clamp to the border (no zero padding, which
    would masquerade as dark image content).  NaN coordinates yield NaN.
    """
    m = np.asarray(map_)
    if m.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) map, got shape {m.shape}")
    h, w = m.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x0 = np.clip(x0, 0, w - 2) if w > 1 else np.zeros_like(x0)
    y0 = np.clip(y0, 0, h - 2) if h > 1 else np.zeros_like(y0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if m.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = m[y0, x0]
    v01 = m[y0, x1]
    v10 = m[y1, x0]
    v11 = m[y1, x1]
    # Product form: exact at fx/fy in {0, 1}, unlike the incremental form.
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bot * fy
    nan_mask = ~(np.isfinite(x) & np.isfinite(y))
    if np.any(nan_mask):
        if m.ndim == 3:
            out = np.where(nan_mask[..., None], np.nan, out)
        else:
            out = np.where(nan_mask, np.nan, out)
    return out
