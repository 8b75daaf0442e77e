"""Minimal inference-only neural graph executor, numpy only.

Implements the three pieces the decision pipeline needs:

* a feature-pyramid extractor producing (32, 16, 8)-channel maps at quarter,
  half and full resolution (instance normalization, shared between reference
  and source images);
* the three-level decision network whose encoder convolves source features
  with a 5x5 kernel deformed onto the epipolar line (levels chained through
  their output feature maps, coarse to fine), ending in a sigmoid mask;
* the three-level weight network operating on the mask's binary entropy and
  emitting an unbounded confidence logit per pixel.

Tensors are plain float32 numpy arrays in channel-major (C, H, W) layout.
Layer tables below are the single source of truth: the weight manifest, the
executors and the validators all walk the same definitions.  Where a declared
channel count disagrees with forward shape propagation, the propagated value
wins and the discrepancy is logged, never silently guessed.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import bilinear_sample, scale_camera
from .sampler import SampleGrid, build_sample_grid, gather

logger = logging.getLogger(__name__)

FPN_CHANNELS = (32, 16, 8)   # level 0 = quarter res, 2 = full res
LEVEL_SCALES = (0.25, 0.5, 1.0)
LEAKY_SLOPE = 0.01
INSTANCE_NORM_EPS = 1e-5
WEIGHT_MAGIC = b"IBWT"
WEIGHT_VERSION = 1


class WeightError(ValueError):
    """Weight file or weight store does not match the expected graph."""


class ShapeError(ValueError):
    """A tensor's shape disagrees with the layer that consumes it."""


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, LEAKY_SLOPE * x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "lrelu":
        y = leaky_relu(x)
    elif activation == "sigmoid":
        y = sigmoid(x)
    elif activation == "identity":
        y = x
    else:
        raise ValueError(f"unknown activation {activation!r}")
    if __debug__ and not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite activation in neural executor")
    return y


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, activation: str = "identity") -> np.ndarray:
    """Cross-correlation with zero padding (k-1)/2; stride 1 or 2."""
    if x.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) input and (O,C,k,k) weights, "
                         f"got {x.shape} and {weights.shape}")
    c_out, c_in, k, k2 = weights.shape
    if k != k2:
        raise ShapeError(f"conv2d kernel must be square, got {weights.shape}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d input has {x.shape[0]} channels, weights expect {c_in}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    y = np.tensordot(weights, win, axes=([1, 2, 3], [0, 3, 4])).astype(np.float32)
    if bias is not None:
        y = y + bias[:, None, None]
    return apply_activation(y, activation)


def transposed_conv2d(x: np.ndarray, weights: np.ndarray,
                      bias: np.ndarray | None = None, stride: int = 2,
                      activation: str = "identity") -> np.ndarray:
    """Stride-2 transposed convolution with k=4; output dims exactly doubled.

    Weight layout is (C_in, C_out, k, k).
    """
    if x.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects (C,H,W) and (Ci,Co,k,k), "
                         f"got {x.shape} and {weights.shape}")
    c_in, c_out, k, k2 = weights.shape
    if k != k2:
        raise ShapeError(f"transposed kernel must be square, got {weights.shape}")
    if x.shape[0] != c_in:
        raise ShapeError(f"transposed_conv2d input has {x.shape[0]} channels, expects {c_in}")
    if (k - stride) % 2 != 0:
        raise ValueError(f"unsupported k={k}, stride={stride} combination")
    h, w = x.shape[1:]
    full = np.zeros((c_out, stride * (h - 1) + k, stride * (w - 1) + k), dtype=np.float32)
    for ky in range(k):
        for kx in range(k):
            contrib = np.tensordot(weights[:, :, ky, kx], x, axes=([0], [0]))
            full[:, ky:ky + stride * (h - 1) + 1:stride,
                 kx:kx + stride * (w - 1) + 1:stride] += contrib.astype(np.float32)
    p = (k - stride) // 2
    y = full[:, p:p + stride * h, p:p + stride * w]
    if bias is not None:
        y = y + bias[:, None, None]
    return apply_activation(y, activation)


def instance_norm(x: np.ndarray, gamma: np.ndarray | None = None,
                  beta: np.ndarray | None = None,
                  eps: float = INSTANCE_NORM_EPS) -> np.ndarray:
    """Per-channel spatial normalization, optional learned affine."""
    if x.ndim != 3:
        raise ShapeError(f"instance_norm expects (C,H,W), got {x.shape}")
    mean = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    y = (x - mean) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma[:, None, None]
    if beta is not None:
        y = y + beta[:, None, None]
    return y.astype(np.float32)


def deformable_epipolar_conv(src_features: np.ndarray, grid: SampleGrid,
                             weights: np.ndarray, bias: np.ndarray | None = None,
                             activation: str = "lrelu") -> np.ndarray:
    """Convolve source features at the grid's k^2 epipolar taps per pixel.

    The row-major kernel tap (ky, kx) is applied at line offset
    ky*k + kx - (k^2-1)/2; invalid taps contribute zero.
    """
    c_out, c_in, k, k2 = weights.shape
    if k != k2 or k != grid.k:
        raise ShapeError(f"kernel {weights.shape} does not match grid k={grid.k}")
    if src_features.ndim != 3 or src_features.shape[0] != c_in:
        raise ShapeError(f"deformable conv input {src_features.shape} expects {c_in} channels")
    vals = gather(src_features, grid)                      # (C, k^2, M, N)
    w_flat = weights.reshape(c_out, c_in * k * k)
    v_flat = vals.reshape(c_in * k * k, vals.shape[2], vals.shape[3])
    y = np.tensordot(w_flat, v_flat, axes=([1], [0])).astype(np.float32)
    if bias is not None:
        y = y + bias[:, None, None]
    return apply_activation(y, activation)


def resize_bilinear(x: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling of (C, H, W) or (H, W), align-corners-false."""
    squeeze = x.ndim == 2
    t = x[None] if squeeze else x
    if t.ndim != 3:
        raise ShapeError(f"resize expects (C,H,W) or (H,W), got {x.shape}")
    c, h, w = t.shape
    oh, ow = out_hw
    sx = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    sy = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    gx, gy = np.meshgrid(sx, sy, indexing="xy")
    hwc = np.moveaxis(t, 0, -1)
    out = bilinear_sample(hwc, gx, gy)
    out = np.moveaxis(out, -1, 0).astype(t.dtype, copy=False)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# graph definitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerDef:
    name: str
    kind: str                    # conv | dconv | tconv | inorm
    c_in: int
    c_out: int
    k: int = 3
    stride: int = 1
    bias: bool = True
    activation: str = "lrelu"
    declared_c_in: int | None = None  # as printed in the architecture notes when it disagrees

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == "inorm":
            return [(self.name + ".g", (self.c_in,)), (self.name + ".b", (self.c_in,))]
        if self.kind == "tconv":
            shapes = [(self.name + ".w", (self.c_in, self.c_out, self.k, self.k))]
        else:
            shapes = [(self.name + ".w", (self.c_out, self.c_in, self.k, self.k))]
        if self.bias:
            shapes.append((self.name + ".b", (self.c_out,)))
        return shapes


def fpn_layers(in_channels: int = 3) -> list[LayerDef]:
    layers: list[LayerDef] = []

    def cbr(name, cin, cout, k=3, s=1):
        layers.append(LayerDef(name, "conv", cin, cout, k=k, stride=s))
        layers.append(LayerDef(name + ".norm", "inorm", cout, cout))

    cbr("fpn.conv0", in_channels, 8)
    cbr("fpn.conv1", 8, 8)
    cbr("fpn.conv2", 8, 16, k=5, s=2)
    cbr("fpn.conv3", 16, 16)
    cbr("fpn.conv4", 16, 16)
    cbr("fpn.conv5", 16, 32, k=5, s=2)
    cbr("fpn.conv6", 32, 32)
    cbr("fpn.conv7", 32, 32)
    layers.append(LayerDef("fpn.out0", "conv", 32, 32, k=1, bias=False, activation="identity"))
    layers.append(LayerDef("fpn.inner1", "conv", 16, 32, k=1, activation="identity"))
    layers.append(LayerDef("fpn.out1", "conv", 32, 16, k=3, bias=False, activation="identity"))
    layers.append(LayerDef("fpn.inner2", "conv", 8, 32, k=1, activation="identity"))
    layers.append(LayerDef("fpn.out2", "conv", 32, 8, k=3, bias=False, activation="identity"))
    return layers


def dnet_layers(level: int) -> list[LayerDef]:
    f = FPN_CHANNELS[level]
    p = f"dnet{level}."
    layers = [
        LayerDef(p + "conv1", "conv", f, f),
        LayerDef(p + "dconv1", "dconv", f, f, k=5),
        LayerDef(p + "conv2", "conv", 2 * f, 2 * f),
        LayerDef(p + "sc1", "conv", 2 * f, 2 * f, stride=2),
        LayerDef(p + "conv3", "conv", f, f),
        LayerDef(p + "dconv2", "dconv", f, f, k=5),
        LayerDef(p + "conv4", "conv", 2 * f, 2 * f),
    ]
    if level == 0:
        layers.append(LayerDef(p + "conv5", "conv", 4 * f, 4 * f))
    else:
        fo_prev = 4 * FPN_CHANNELS[level - 1]
        layers.append(LayerDef(p + "convpr", "conv", 4 * f + fo_prev, 4 * f))
        layers.append(LayerDef(p + "conv5", "conv", 4 * f, 4 * f))
    layers += [
        LayerDef(p + "sc2", "conv", 4 * f, 4 * f, stride=2),
        LayerDef(p + "conv6", "conv", f, f),
        LayerDef(p + "dconv3", "dconv", f, f, k=5),
        LayerDef(p + "conv7", "conv", 2 * f, 2 * f),
        LayerDef(p + "conv8", "conv", 6 * f, 6 * f),
        LayerDef(p + "conv9", "conv", 6 * f, 6 * f),
        LayerDef(p + "conv10", "conv", 6 * f, 6 * f),
        LayerDef(p + "uconv1", "tconv", 6 * f, 6 * f, k=4, stride=2, bias=False),
        LayerDef(p + "conv11", "conv", 10 * f, 4 * f),
        LayerDef(p + "conv12", "conv", 4 * f, 4 * f),
        LayerDef(p + "uconv2", "tconv", 4 * f, 4 * f, k=4, stride=2, bias=False),
        LayerDef(p + "fo", "conv", 6 * f, 4 * f),
        LayerDef(p + "mask", "conv", 4 * f, 1, bias=False, activation="sigmoid"),
    ]
    return layers


def wnet_layers(level: int) -> list[LayerDef]:
    f = FPN_CHANNELS[level]
    p = f"wnet{level}."
    layers: list[LayerDef] = []
    if level == 0:
        layers.append(LayerDef(p + "conv1", "conv", 1, 2 * f))
    else:
        fo_prev = FPN_CHANNELS[level - 1] // 2
        layers.append(LayerDef(p + "conv0", "conv", 1, f))
        layers.append(LayerDef(p + "convpr", "conv", fo_prev, f))
        layers.append(LayerDef(p + "conv1", "conv", 2 * f, 2 * f))
    layers += [
        LayerDef(p + "conv2", "conv", 2 * f, 2 * f),
        LayerDef(p + "conv3", "conv", 2 * f, f),
        # Declared input width 2F disagrees with the propagated width F
        # (the preceding layer outputs F channels); propagation wins.
        LayerDef(p + "fo", "conv", f, f // 2, declared_c_in=2 * f),
        LayerDef(p + "logit", "conv", f // 2, 1, bias=False, activation="identity"),
    ]
    return layers


def all_layers(in_channels: int = 3) -> list[LayerDef]:
    layers = fpn_layers(in_channels)
    for level in range(3):
        layers += dnet_layers(level)
        layers += wnet_layers(level)
    return layers


_reported_discrepancies: set = set()


def manifest(in_channels: int = 3) -> list[tuple[str, tuple[int, ...]]]:
    """Expected (name, shape) pairs for a complete weight store."""
    entries: list[tuple[str, tuple[int, ...]]] = []
    for ld in all_layers(in_channels):
        if (ld.declared_c_in is not None and ld.declared_c_in != ld.c_in
                and ld.name not in _reported_discrepancies):
            _reported_discrepancies.add(ld.name)
            logger.warning("%s: declared input channels %d disagree with propagated %d; "
                           "using propagated", ld.name, ld.declared_c_in, ld.c_in)
        entries.extend(ld.param_shapes())
    return entries


def parameter_count(entries: list[tuple[str, tuple[int, ...]]]) -> int:
    return int(sum(int(np.prod(s)) for _, s in entries))


# ---------------------------------------------------------------------------
# weight store and file format
# ---------------------------------------------------------------------------

@dataclass
class WeightStore:
    """Named float32 tensors, immutable after construction."""

    tensors: dict

    def __post_init__(self):
        fixed = {}
        for name, arr in self.tensors.items():
            a = np.ascontiguousarray(arr, dtype=np.float32)
            a.setflags(write=False)
            fixed[name] = a
        self.tensors = fixed

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise WeightError(f"missing weight tensor {name!r}") from None


def validate_store(store: WeightStore, entries: list[tuple[str, tuple[int, ...]]]) -> None:
    """Check the store holds exactly the manifest, with matching shapes."""
    expected = dict(entries)
    for name, shape in expected.items():
        if name not in store.tensors:
            raise WeightError(f"missing weight tensor {name!r} (expected shape {shape})")
        got = store.tensors[name].shape
        if tuple(got) != tuple(shape):
            raise WeightError(f"tensor {name!r} has shape {got}, expected {shape}")
    for name in store.tensors:
        if name not in expected:
            raise WeightError(f"unexpected weight tensor {name!r}")


def save_weights(store: WeightStore, path) -> None:
    """Serialize: magic, version u32, count u32, then per tensor the
    name (u32 length + UTF-8), rank u32, dims u32 each, float32 LE data.
    Tensors are written in sorted-name order for reproducible bytes."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, len(store.tensors)))
        for name in sorted(store.tensors):
            arr = store.tensors[name]
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_weights(path, entries: list[tuple[str, tuple[int, ...]]] | None = None) -> WeightStore:
    """Parse a weight file; optionally validate against a manifest."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise WeightError(f"truncated weight file {path}")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4) != WEIGHT_MAGIC:
        raise WeightError(f"{path} is not a weight file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != WEIGHT_VERSION:
        raise WeightError(f"unsupported weight file version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack("<" + "I" * rank, take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        if name in tensors:
            raise WeightError(f"duplicate tensor {name!r} in {path}")
        tensors[name] = data.copy()
    if off != len(blob):
        raise WeightError(f"trailing bytes in weight file {path}")
    store = WeightStore(tensors)
    if entries is not None:
        validate_store(store, entries)
    return store


def random_weights(entries: list[tuple[str, tuple[int, ...]]], seed: int = 0) -> WeightStore:
    """Deterministic He-style random store matching a manifest (for tests)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in entries:
        if len(shape) == 4:
            # tconv stores (C_in, C_out, k, k); fan-in is C_in * k * k either way.
            c_in = shape[0] if ".uconv" in name else shape[1]
            fan_in = c_in * shape[2] * shape[3]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)
        elif name.endswith(".g"):
            tensors[name] = (1.0 + 0.05 * rng.normal(size=shape)).astype(np.float32)
        else:
            tensors[name] = (0.02 * rng.normal(size=shape)).astype(np.float32)
    return WeightStore(tensors)


# ---------------------------------------------------------------------------
# graph execution
# ---------------------------------------------------------------------------

class _Net:
    """Executes layers from a store, checking shapes against the defs."""

    def __init__(self, store: WeightStore, layers: list[LayerDef]):
        self.store = store
        self.defs = {ld.name: ld for ld in layers}

    def _def(self, name: str) -> LayerDef:
        return self.defs[name]

    def conv(self, name: str, x: np.ndarray) -> np.ndarray:
        ld = self._def(name)
        if x.shape[0] != ld.c_in:
            raise ShapeError(f"{name}: got {x.shape[0]} input channels, expected {ld.c_in}")
        b = self.store.get(name + ".b") if ld.bias else None
        return conv2d(x, self.store.get(name + ".w"), b, stride=ld.stride,
                      activation=ld.activation)

    def dconv(self, name: str, x: np.ndarray, grid: SampleGrid) -> np.ndarray:
        ld = self._def(name)
        if x.shape[0] != ld.c_in:
            raise ShapeError(f"{name}: got {x.shape[0]} input channels, expected {ld.c_in}")
        b = self.store.get(name + ".b") if ld.bias else None
        return deformable_epipolar_conv(x, grid, self.store.get(name + ".w"), b,
                                        activation=ld.activation)

    def tconv(self, name: str, x: np.ndarray) -> np.ndarray:
        ld = self._def(name)
        if x.shape[0] != ld.c_in:
            raise ShapeError(f"{name}: got {x.shape[0]} input channels, expected {ld.c_in}")
        b = self.store.get(name + ".b") if ld.bias else None
        return transposed_conv2d(x, self.store.get(name + ".w"), b, stride=ld.stride,
                                 activation=ld.activation)

    def cbr(self, name: str, x: np.ndarray) -> np.ndarray:
        ld = self._def(name)
        if x.shape[0] != ld.c_in:
            raise ShapeError(f"{name}: got {x.shape[0]} input channels, expected {ld.c_in}")
        b = self.store.get(name + ".b") if ld.bias else None
        y = conv2d(x, self.store.get(name + ".w"), b, stride=ld.stride, activation="identity")
        y = instance_norm(y, self.store.get(name + ".norm.g"), self.store.get(name + ".norm.b"))
        return apply_activation(y, ld.activation)


def image_to_tensor(image: np.ndarray) -> np.ndarray:
    """(H, W) or (H, W, C) image to float32 (3, H, W)."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None].repeat(3, axis=-1)
    if img.shape[-1] == 1:
        img = img.repeat(3, axis=-1)
    return np.moveaxis(img, -1, 0)


def run_fpn(store: WeightStore, image: np.ndarray) -> list[np.ndarray]:
    """Feature maps at quarter, half, full resolution with (32, 16, 8) channels."""
    if image.ndim != 3:
        raise ShapeError(f"run_fpn expects a (C, H, W) tensor, got {image.shape}")
    h, w = image.shape[1:]
    if h % 4 or w % 4:
        raise ShapeError(f"image dims must be divisible by 4, got {h}x{w}")
    net = _Net(store, fpn_layers(image.shape[0]))
    x1 = net.cbr("fpn.conv1", net.cbr("fpn.conv0", image))
    x4 = net.cbr("fpn.conv4", net.cbr("fpn.conv3", net.cbr("fpn.conv2", x1)))
    x7 = net.cbr("fpn.conv7", net.cbr("fpn.conv6", net.cbr("fpn.conv5", x4)))
    quarter = net.conv("fpn.out0", x7)
    mid = resize_bilinear(x7, x4.shape[1:]) + net.conv("fpn.inner1", x4)
    half = net.conv("fpn.out1", mid)
    mid = resize_bilinear(mid, x1.shape[1:]) + net.conv("fpn.inner2", x1)
    full = net.conv("fpn.out2", mid)
    return [quarter, half, full]


def run_dnet_level(store: WeightStore, level: int, feat_ref: np.ndarray,
                   feat_src: np.ndarray, grids, fo_prev: np.ndarray | None):
    """One decision-network level; returns (mask (H, W), features (4F, H, W)).

    ``grids`` holds sample grids at the level's own resolution and at its
    internal half and quarter scales.  For level > 0 the previous (coarser)
    level's output features must be supplied; they enter at the half scale,
    which equals the previous level's resolution.
    """
    net = _Net(store, dnet_layers(level))
    p = f"dnet{level}."
    grid_full, grid_half, grid_quarter = grids
    h, w = feat_ref.shape[1:]
    if (h % 4) or (w % 4):
        raise ShapeError(f"dnet level {level}: feature dims {h}x{w} not divisible by 4")
    if feat_src.shape != feat_ref.shape:
        raise ShapeError(f"dnet level {level}: reference {feat_ref.shape} vs "
                         f"source {feat_src.shape} feature shapes differ")

    c2 = net.conv(p + "conv2",
                  np.concatenate([net.conv(p + "conv1", feat_ref),
                                  net.dconv(p + "dconv1", feat_src, grid_full)], axis=0))
    sc1 = net.conv(p + "sc1", c2)

    ref_half = resize_bilinear(feat_ref, (h // 2, w // 2))
    src_half = resize_bilinear(feat_src, (h // 2, w // 2))
    c4 = net.conv(p + "conv4",
                  np.concatenate([net.conv(p + "conv3", ref_half),
                                  net.dconv(p + "dconv2", src_half, grid_half)], axis=0))
    if level == 0:
        if fo_prev is not None:
            raise ShapeError("dnet level 0 takes no carried-over features")
        c5 = net.conv(p + "conv5", np.concatenate([sc1, c4], axis=0))
    else:
        if fo_prev is None:
            raise ShapeError(f"dnet level {level} requires features from level {level - 1}")
        c5 = net.conv(p + "conv5",
                      net.conv(p + "convpr", np.concatenate([fo_prev, sc1, c4], axis=0)))
    sc2 = net.conv(p + "sc2", c5)

    ref_quarter = resize_bilinear(feat_ref, (h // 4, w // 4))
    src_quarter = resize_bilinear(feat_src, (h // 4, w // 4))
    c7 = net.conv(p + "conv7",
                  np.concatenate([net.conv(p + "conv6", ref_quarter),
                                  net.dconv(p + "dconv3", src_quarter, grid_quarter)], axis=0))
    c8 = net.conv(p + "conv8", np.concatenate([sc2, c7], axis=0))
    c10 = net.conv(p + "conv10", net.conv(p + "conv9", c8))
    u1 = net.tconv(p + "uconv1", c10)
    c12 = net.conv(p + "conv12", net.conv(p + "conv11", np.concatenate([c5, u1], axis=0)))
    u2 = net.tconv(p + "uconv2", c12)
    fo = net.conv(p + "fo", np.concatenate([c2, u2], axis=0))
    mask = net.conv(p + "mask", fo)
    return mask[0], fo


def run_wnet_level(store: WeightStore, level: int, entropy_map: np.ndarray,
                   fo_prev: np.ndarray | None):
    """One weight-network level; returns (logit map (H, W), features (F/2, H, W))."""
    net = _Net(store, wnet_layers(level))
    p = f"wnet{level}."
    e = entropy_map.astype(np.float32)
    if e.ndim == 2:
        e = e[None]
    if e.shape[0] != 1:
        raise ShapeError(f"wnet level {level}: entropy map must be single channel")
    if level == 0:
        if fo_prev is not None:
            raise ShapeError("wnet level 0 takes no carried-over features")
        x = net.conv(p + "conv1", e)
    else:
        if fo_prev is None:
            raise ShapeError(f"wnet level {level} requires features from level {level - 1}")
        c0 = net.conv(p + "conv0", e)
        up = resize_bilinear(fo_prev, e.shape[1:])
        pr = net.conv(p + "convpr", up)
        x = net.conv(p + "conv1", np.concatenate([c0, pr], axis=0))
    c3 = net.conv(p + "conv3", net.conv(p + "conv2", x))
    fo = net.conv(p + "fo", c3)
    logit = net.conv(p + "logit", fo)
    return logit[0], fo


def build_level_grids(ref_cam, src_cam, hyp_values: np.ndarray,
                      level_scale: float, k: int = 5):
    """Grids at a level's resolution plus its internal half and quarter scales."""
    grids = []
    for inner in (1.0, 0.5, 0.25):
        s = level_scale * inner
        cam_r = scale_camera(ref_cam, s)
        cam_s = scale_camera(src_cam, s)
        hyp = resize_bilinear(hyp_values.astype(np.float64), (cam_r.height, cam_r.width))
        grids.append(build_sample_grid(cam_r, cam_s, hyp, k=k))
    return tuple(grids)


def run_multilevel_dnet(store: WeightStore, ref_image: np.ndarray, src_image: np.ndarray,
                        ref_cam, src_cam, hyp_values: np.ndarray, k: int = 5,
                        feats_ref: list | None = None, feats_src: list | None = None):
    """Full decision pipeline at quarter/half/full; returns (masks, center_valid).

    ``masks`` is [quarter, half, full]; ``center_valid`` is the full-resolution
    epipolar-projection validity (pixels whose hypothesis projects inside the
    source image).
    """
    h, w = hyp_values.shape
    if h % 16 or w % 16:
        raise ShapeError(f"multilevel decision network needs dims divisible by 16, got {h}x{w}")
    if feats_ref is None:
        feats_ref = run_fpn(store, image_to_tensor(ref_image))
    if feats_src is None:
        feats_src = run_fpn(store, image_to_tensor(src_image))
    masks = []
    fo = None
    center_valid = None
    for level in range(3):
        grids = build_level_grids(ref_cam, src_cam, hyp_values, LEVEL_SCALES[level], k=k)
        mask, fo = run_dnet_level(store, level, feats_ref[level], feats_src[level],
                                  grids, fo)
        masks.append(mask)
        if level == 2:
            center_valid = grids[0].center_valid
    return masks, center_valid


def run_multilevel_wnet(store: WeightStore, entropy_maps: list[np.ndarray]) -> list[np.ndarray]:
    """Weight-network logits per level from per-level mask entropies."""
    if len(entropy_maps) != 3:
        raise ShapeError("weight network expects three entropy maps (quarter, half, full)")
    logits = []
    fo = None
    for level in range(3):
        logit, fo = run_wnet_level(store, level, np.asarray(entropy_maps[level]), fo)
        logits.append(logit)
    return logits


class NeuralWeightOracle:
    """Fusion weights exp(-w) from the weight network's full-resolution logit.

    Consumes the decision mask pyramid when available; otherwise the pyramid
    is rebuilt by bilinear downscaling of the full-resolution mask.
    """

    def __init__(self, store: WeightStore, in_channels: int = 3):
        validate_store(store, manifest(in_channels))
        self.store = store

    def weigh(self, mask) -> np.ndarray:
        from .fusion import entropy, weight_from_logit

        levels = mask.levels
        if levels is None:
            full = np.asarray(mask.values, dtype=np.float64)
            h, w = full.shape
            levels = [resize_bilinear(full, (h // 4, w // 4)),
                      resize_bilinear(full, (h // 2, w // 2)), full]
        logits = run_multilevel_wnet(self.store, [entropy(lv) for lv in levels])
        return weight_from_logit(logits[2])
