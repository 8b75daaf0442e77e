"""Deterministic ray-cast scene generation with analytic ground-truth depth.

Scenes are built from textured planes (infinite or finite rectangles) and
spheres, rendered with pure albedo (no shading) so photoconsistency between
views holds exactly up to interpolation.  All procedural textures hash an
integer lattice with a SplitMix64-style finalizer, so renders are bitwise
reproducible for a given spec and seed on any platform.

Images are quantized to 8-bit at render time; the in-memory bundle therefore
matches a PPM write/read round trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decision import SoftMask
from .geometry import Camera, back_project_points, pixel_grid, project_world_points

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over uint64 arrays (wrapping arithmetic)."""
    z = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return z ^ (z >> np.uint64(31))


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash mapped to [0, 1)."""
    a = ix.astype(np.int64).view(np.uint64)
    b = iy.astype(np.int64).view(np.uint64)
    h = _splitmix64(a ^ (b * np.uint64(0x9E3779B97F4A7C15)) ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(u: np.ndarray, v: np.ndarray, seed: int, scale: float,
                octaves: int = 3) -> np.ndarray:
    """Multi-octave value noise in [0, 1]; ``scale`` is the base cell size."""
    total = np.zeros(np.broadcast(u, v).shape, dtype=np.float64)
    amp = 1.0
    norm = 0.0
    freq = 1.0 / scale
    for o in range(octaves):
        x = np.asarray(u, dtype=np.float64) * freq
        y = np.asarray(v, dtype=np.float64) * freq
        ix = np.floor(x)
        iy = np.floor(y)
        fx = _smoothstep(x - ix)
        fy = _smoothstep(y - iy)
        s = seed + 0x51D * o
        v00 = _hash01(ix, iy, s)
        v01 = _hash01(ix + 1, iy, s)
        v10 = _hash01(ix, iy + 1, s)
        v11 = _hash01(ix + 1, iy + 1, s)
        top = v00 + (v01 - v00) * fx
        bot = v10 + (v11 - v10) * fx
        total += amp * (top + (bot - top) * fy)
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return total / norm


@dataclass(frozen=True)
class CheckerTexture:
    scale: float = 0.1
    low: float = 0.2
    high: float = 0.85

    def sample(self, u, v):
        pu = np.floor(np.asarray(u) / self.scale).astype(np.int64)
        pv = np.floor(np.asarray(v) / self.scale).astype(np.int64)
        return np.where((pu + pv) % 2 == 0, self.low, self.high)


@dataclass(frozen=True)
class NoiseTexture:
    seed: int = 1
    scale: float = 0.1
    octaves: int = 3
    low: float = 0.1
    high: float = 0.95

    def sample(self, u, v):
        n = value_noise(u, v, self.seed, self.scale, self.octaves)
        return self.low + (self.high - self.low) * n


@dataclass(frozen=True)
class FlatTexture:
    value: float = 0.5

    def sample(self, u, v):
        return np.full(np.broadcast(np.asarray(u), np.asarray(v)).shape, self.value)


def _texture_from_dict(d: dict):
    kind = d.get("kind", "noise")
    if kind == "noise":
        return NoiseTexture(seed=int(d.get("seed", 1)), scale=float(d.get("scale", 0.1)),
                            octaves=int(d.get("octaves", 3)),
                            low=float(d.get("low", 0.1)), high=float(d.get("high", 0.95)))
    if kind == "checker":
        return CheckerTexture(scale=float(d.get("scale", 0.1)),
                              low=float(d.get("low", 0.2)), high=float(d.get("high", 0.85)))
    if kind == "flat":
        return FlatTexture(value=float(d.get("value", 0.5)))
    raise ValueError(f"unknown texture kind {kind!r}")


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane (u, v) axes for textures and rect extents.

    For a fronto-parallel plane (normal along -z or +z) the u axis aligns
    with world +x and v with world -y, so rect half-extents read as
    (x half-width, y half-width).
    """
    n = normal / np.linalg.norm(normal)
    a = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(n, a)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


@dataclass(frozen=True)
class PlanePrimitive:
    """Textured plane; finite rectangle when half_extent is given."""

    point: np.ndarray
    normal: np.ndarray
    texture: object
    half_extent: tuple[float, float] | None = None

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        p0 = np.asarray(self.point, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - origin) @ n) / denom
        hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & np.isfinite(t)
        q = origin + t[..., None] * dirs - p0
        u_ax, v_ax = _plane_basis(n)
        tu = q @ u_ax
        tv = q @ v_ax
        if self.half_extent is not None:
            hu, hv = self.half_extent
            hit &= (np.abs(tu) <= hu) & (np.abs(tv) <= hv)
        albedo = self.texture.sample(tu, tv)
        return t, hit, albedo

    def check_camera(self, center: np.ndarray) -> None:
        pass


@dataclass(frozen=True)
class SpherePrimitive:
    center: np.ndarray
    radius: float
    texture: object

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        c = np.asarray(self.center, dtype=np.float64)
        oc = origin - c
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        c0 = float(oc @ oc) - self.radius ** 2
        disc = b * b - 4.0 * a * c0
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = (-b - sq) / (2.0 * a)
        t2 = (-b + sq) / (2.0 * a)
        t = np.where(t1 > 1e-9, t1, t2)
        hit = ok & (t > 1e-9)
        rel = (origin + t[..., None] * dirs - c) / self.radius
        theta = np.arccos(np.clip(rel[..., 1], -1.0, 1.0))
        phi = np.arctan2(rel[..., 2], rel[..., 0])
        albedo = self.texture.sample(phi * self.radius, theta * self.radius)
        return t, hit, albedo

    def check_camera(self, center: np.ndarray) -> None:
        if np.linalg.norm(center - np.asarray(self.center)) <= self.radius:
            raise ValueError("camera center lies inside a sphere primitive")


def _primitive_from_dict(d: dict):
    kind = d.get("kind")
    tex = _texture_from_dict(d.get("texture", {}))
    if kind == "plane":
        return PlanePrimitive(point=np.asarray(d["point"], dtype=np.float64),
                              normal=np.asarray(d["normal"], dtype=np.float64),
                              texture=tex)
    if kind == "rect":
        he = d["half_extent"]
        return PlanePrimitive(point=np.asarray(d["point"], dtype=np.float64),
                              normal=np.asarray(d["normal"], dtype=np.float64),
                              texture=tex, half_extent=(float(he[0]), float(he[1])))
    if kind == "sphere":
        return SpherePrimitive(center=np.asarray(d["center"], dtype=np.float64),
                               radius=float(d["radius"]), texture=tex)
    raise ValueError(f"unknown primitive kind {kind!r}")


@dataclass(frozen=True)
class RigSpec:
    """Evenly spaced cameras along an axis, all aimed at a common target."""

    count: int = 5
    baseline: float = 0.1
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (1.0, 0.0, 0.0)
    look_at: tuple = (0.0, 0.0, 2.0)
    up: tuple = (0.0, -1.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    focal: float
    rig: RigSpec
    objects: tuple
    seed: int = 0
    ref_index: int = 0

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        try:
            rig_d = d.get("rig", {})
            rig = RigSpec(
                count=int(rig_d.get("count", 5)),
                baseline=float(rig_d.get("baseline", 0.1)),
                center=tuple(rig_d.get("center", (0.0, 0.0, 0.0))),
                axis=tuple(rig_d.get("axis", (1.0, 0.0, 0.0))),
                look_at=tuple(rig_d.get("look_at", (0.0, 0.0, 2.0))),
                up=tuple(rig_d.get("up", (0.0, -1.0, 0.0))),
            )
            objects = tuple(_primitive_from_dict(o) for o in d["objects"])
            return SceneSpec(
                width=int(d["width"]), height=int(d["height"]),
                focal=float(d["focal"]), rig=rig, objects=objects,
                seed=int(d.get("seed", 0)),
                ref_index=int(d.get("ref_index", 0)),
            )
        except (KeyError, TypeError, IndexError) as e:
            raise ValueError(f"malformed scene spec: {e}") from e


@dataclass
class View:
    """One rendered view: 8-bit-quantized albedo image plus analytic depth."""

    image: np.ndarray           # (H, W, 3) float32 in [0, 1]
    camera: Camera
    gt_depth: np.ndarray | None = None  # (H, W) float64, NaN where no surface

    @property
    def gt_valid(self) -> np.ndarray:
        if self.gt_depth is None:
            return np.zeros(self.image.shape[:2], dtype=bool)
        return np.isfinite(self.gt_depth)


@dataclass
class SceneBundle:
    views: list
    ref_index: int = 0
    source_indices: list = field(default_factory=list)

    def __post_init__(self):
        if not self.source_indices:
            self.source_indices = [i for i in range(len(self.views)) if i != self.ref_index]

    @property
    def ref(self) -> View:
        return self.views[self.ref_index]

    @property
    def sources(self) -> list:
        return [self.views[i] for i in self.source_indices]

    def with_reference(self, ref_index: int, source_indices: list | None = None) -> "SceneBundle":
        return SceneBundle(views=self.views, ref_index=ref_index,
                           source_indices=list(source_indices) if source_indices else [])


def look_at_camera(center, look_at, up, focal: float, width: int, height: int) -> Camera:
    """World-to-camera pose aiming at a target; ``up`` maps to image up."""
    c = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(look_at, dtype=np.float64) - c
    nf = np.linalg.norm(fwd)
    if nf < 1e-12:
        raise ValueError("camera center coincides with look-at target")
    fwd = fwd / nf
    down = -np.asarray(up, dtype=np.float64)
    down = down - (down @ fwd) * fwd
    nd = np.linalg.norm(down)
    if nd < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    down = down / nd
    right = np.cross(down, fwd)
    R = np.stack([right, down, fwd])
    t = -R @ c
    K = np.array([
        [focal, 0.0, (width - 1) / 2.0],
        [0.0, focal, (height - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])
    return Camera(K=K, Rt=np.hstack([R, t[:, None]]), width=width, height=height)


def rig_cameras(spec: SceneSpec) -> list[Camera]:
    rig = spec.rig
    axis = np.asarray(rig.axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    center = np.asarray(rig.center, dtype=np.float64)
    cams = []
    for i in range(rig.count):
        off = (i - (rig.count - 1) / 2.0) * rig.baseline
        cams.append(look_at_camera(center + off * axis, rig.look_at, rig.up,
                                   spec.focal, spec.width, spec.height))
    return cams


def render_view(spec: SceneSpec, camera: Camera) -> View:
    """Ray-cast one view: nearest-hit depth and pure-albedo shading."""
    origin = camera.center()
    for prim in spec.objects:
        prim.check_camera(origin)
    xs, ys = pixel_grid(camera.width, camera.height)
    Ki = camera.K_inv
    dx = Ki[0, 0] * xs + Ki[0, 1] * ys + Ki[0, 2]
    dy = Ki[1, 1] * ys + Ki[1, 2]
    dirs_cam = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    dirs = dirs_cam @ camera.R  # R^T applied to rows
    depth = np.full(xs.shape, np.inf)
    albedo = np.zeros(xs.shape)
    for prim in spec.objects:
        t, hit, alb = prim.intersect(origin, dirs)
        closer = hit & (t < depth)
        depth = np.where(closer, t, depth)
        albedo = np.where(closer, alb, albedo)
    valid = np.isfinite(depth)
    gt = np.where(valid, depth, np.nan)
    # Quantize to 8 bits so the in-memory image equals a PPM round trip.
    img8 = np.clip(np.round(albedo * 255.0), 0, 255).astype(np.uint8)
    img = (img8.astype(np.float32) / 255.0)[..., None].repeat(3, axis=-1)
    return View(image=img, camera=camera, gt_depth=gt)


def render(spec: SceneSpec) -> SceneBundle:
    """Render every rig camera; view ``spec.ref_index`` is the reference."""
    cams = rig_cameras(spec)
    if not (0 <= spec.ref_index < len(cams)):
        raise ValueError(f"ref_index {spec.ref_index} out of range for {len(cams)} cameras")
    views = [render_view(spec, cam) for cam in cams]
    return SceneBundle(views=views, ref_index=spec.ref_index)


def occlusion_mask(bundle: SceneBundle, source_index: int, rel_tol: float = 0.01) -> SoftMask:
    """Binary co-visibility of reference pixels in the given source view.

    A reference pixel is co-visible (value 1) when its ground-truth surface
    point, reprojected into the source, lands in bounds with a depth that
    agrees with the source's own ground truth within ``rel_tol`` relative.
    """
    ref = bundle.ref
    src = bundle.sources[source_index]
    if ref.gt_depth is None or src.gt_depth is None:
        raise ValueError("occlusion mask requires ground-truth depths")
    xs, ys = pixel_grid(ref.camera.width, ref.camera.height)
    pts = back_project_points(ref.camera, xs, ys, ref.gt_depth)
    sx, sy, sz, proj_ok = project_world_points(src.camera, pts)
    # Nearest-pixel lookup: bounds apply to the rounded coordinate.
    rx = np.round(np.where(proj_ok, sx, -1.0))
    ry = np.round(np.where(proj_ok, sy, -1.0))
    inside = proj_ok & src.camera.contains(rx, ry)
    qx = np.clip(rx.astype(np.int64), 0, src.camera.width - 1)
    qy = np.clip(ry.astype(np.int64), 0, src.camera.height - 1)
    d_src = src.gt_depth[qy, qx]
    agree = np.abs(sz - d_src) < rel_tol * d_src
    covis = inside & np.isfinite(d_src) & agree
    valid = ref.gt_valid
    return SoftMask(values=np.where(covis & valid, 1.0, 0.0), valid=valid.astype(np.float64))
