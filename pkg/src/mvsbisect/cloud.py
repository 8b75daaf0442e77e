"""Depth-map fusion into a point cloud with geometric-consistency filtering.

A pixel of view ``a`` is fused when at least ``S_g`` other views agree with
it geometrically: its back-projection must land in view ``b`` at a pixel
whose own depth round-trips back into ``a`` within ``g`` pixels and within 1%
relative depth.  Consistent support pixels are consumed (marked used) so the
same surface observation is never emitted twice; views are visited in index
order and pixels row-major, which fixes the output deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (Camera, back_project_points, bilinear_sample, pixel_grid,
                       project_world_points)

DEPTH_AGREEMENT_REL = 0.01


@dataclass(frozen=True)
class FusionParams:
    """Consistency requirements: S_g supporting views within g pixels."""

    consistent_views: int = 3   # S_g
    max_reproj_error: float = 0.5   # g, pixels

    def __post_init__(self):
        if self.consistent_views < 1:
            raise ValueError("number of consistent views must be >= 1")
        if self.max_reproj_error <= 0:
            raise ValueError("reprojection threshold must be positive")


@dataclass
class PointCloud:
    positions: np.ndarray                      # (N, 3) float64
    colors: np.ndarray = field(default=None)   # (N, 3) uint8

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.zeros((len(self.positions), 3), dtype=np.uint8)
        else:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.colors) != len(self.positions):
            raise ValueError("positions and colors differ in length")
        if self.positions.size and not np.all(np.isfinite(self.positions)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.positions)


def _consistency_fields(depth_a: np.ndarray, cam_a: Camera, depth_b: np.ndarray,
                        cam_b: Camera, g: float):
    """Vectorized pairwise consistency of every pixel of view a against view b.

    Returns (consistent (H,W) bool, support world points (H,W,3),
    support pixel coords qx, qy (H,W) int).
    """
    h, w = depth_a.shape
    xs, ys = pixel_grid(w, h)
    valid_a = np.isfinite(depth_a)
    da = np.where(valid_a, depth_a, 1.0)
    pts = back_project_points(cam_a, xs, ys, da)
    bx, by, bz, ok = project_world_points(cam_b, pts)
    # Epsilon-tolerant bounds: an exact round trip may land at -1e-15.
    eps = 1e-6
    inside = (ok & (bx >= -eps) & (bx <= cam_b.width - 1 + eps)
              & (by >= -eps) & (by <= cam_b.height - 1 + eps))
    sx = np.clip(np.where(inside, bx, 0.0), 0.0, cam_b.width - 1)
    sy = np.clip(np.where(inside, by, 0.0), 0.0, cam_b.height - 1)
    db = bilinear_sample(depth_b, sx, sy)
    db_ok = np.isfinite(db) & (db > 0)
    db_safe = np.where(db_ok, db, 1.0)
    # Round trip: the support pixel's own surface point, back into view a.
    pts_b = back_project_points(cam_b, sx, sy, db_safe)
    ax, ay, az, ok_a = project_world_points(cam_a, pts_b)
    reproj = np.hypot(ax - xs, ay - ys)
    depth_rel = np.abs(az - da) / da
    consistent = (valid_a & inside & db_ok & ok_a
                  & (reproj <= g) & (depth_rel < DEPTH_AGREEMENT_REL))
    qx = np.clip(np.round(sx).astype(np.int64), 0, cam_b.width - 1)
    qy = np.clip(np.round(sy).astype(np.int64), 0, cam_b.height - 1)
    return consistent, pts_b, qx, qy


def consistency_check(depth_a: np.ndarray, cam_a: Camera, depth_b: np.ndarray,
                      cam_b: Camera, x: int, y: int, g: float) -> bool:
    """Single-pixel forward-backward consistency of view a against view b."""
    consistent, _, _, _ = _consistency_fields(depth_a, cam_a, depth_b, cam_b, g)
    return bool(consistent[y, x])


def fuse_cloud(depths: list[np.ndarray], cameras: list[Camera],
               images: list[np.ndarray] | None, params: FusionParams) -> PointCloud:
    """Fuse per-view depth maps into one consistency-filtered point cloud.

    Emitted positions average the reference back-projection with all
    consistent supports' own surface points; colors come from the emitting
    view.  Fewer than S_g + 1 views yields an empty cloud.
    """
    n_views = len(depths)
    if n_views != len(cameras):
        raise ValueError("depths and cameras differ in length")
    used = [np.zeros(d.shape, dtype=bool) for d in depths]
    out_pts = []
    out_cols = []
    for a in range(n_views):
        h, w = depths[a].shape
        xs, ys = pixel_grid(w, h)
        valid_a = np.isfinite(depths[a])
        count = np.zeros((h, w), dtype=np.int64)
        sup_sum = np.zeros((h, w, 3))
        partners = []
        for b in range(n_views):
            if b == a:
                continue
            consistent, pts_b, qx, qy = _consistency_fields(
                depths[a], cameras[a], depths[b], cameras[b], params.max_reproj_error)
            count += consistent
            sup_sum += np.where(consistent[..., None], pts_b, 0.0)
            partners.append((b, consistent, qx, qy))
        emit = valid_a & ~used[a] & (count >= params.consistent_views)
        if np.any(emit):
            own = back_project_points(cameras[a], xs, ys,
                                      np.where(valid_a, depths[a], 1.0))
            avg = (own + sup_sum) / (count[..., None] + 1)
            out_pts.append(avg[emit])
            if images is not None:
                img = np.asarray(images[a])
                if img.ndim == 2:
                    img = img[..., None].repeat(3, axis=-1)
                cols = np.clip(np.round(img[..., :3] * 255.0), 0, 255).astype(np.uint8)
                out_cols.append(cols[emit])
            else:
                out_cols.append(np.zeros((int(emit.sum()), 3), dtype=np.uint8))
            used[a] |= emit
            for b, consistent, qx, qy in partners:
                claim = emit & consistent
                used[b][qy[claim], qx[claim]] = True
    if not out_pts:
        return PointCloud(positions=np.zeros((0, 3)), colors=np.zeros((0, 3), dtype=np.uint8))
    return PointCloud(positions=np.concatenate(out_pts),
                      colors=np.concatenate(out_cols))


def write_ply(cloud: PointCloud, path) -> None:
    """Binary little-endian PLY with float32 xyz and uchar rgb."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    rec = np.zeros(len(cloud), dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
    rec["xyz"] = cloud.positions.astype("<f4")
    rec["rgb"] = cloud.colors
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> PointCloud:
    """Read the subset of PLY written by :func:`write_ply`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path} is not a PLY file")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in header[1]:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    n = None
    props = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("element ") and n is not None:
            raise ValueError(f"{path}: unsupported extra element {line!r}")
        elif line.startswith("property"):
            props.append(tuple(line.split()[1:]))
    if n is None:
        raise ValueError(f"{path}: missing vertex element")
    expected = [("float", "x"), ("float", "y"), ("float", "z"),
                ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")]
    if props != expected:
        raise ValueError(f"{path}: unsupported property layout {props}")
    body = blob[end + len(b"end_header\n"):]
    rec = np.frombuffer(body, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)], count=n)
    if len(rec) != n:
        raise ValueError(f"{path}: truncated vertex data")
    return PointCloud(positions=rec["xyz"].astype(np.float64),
                      colors=rec["rgb"].copy())
