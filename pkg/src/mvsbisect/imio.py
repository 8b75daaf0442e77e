"""File formats: PFM depth maps, PPM/PGM images, raw depth, camera text.

Raw depth format: magic ``IBDM``, u32 width, u32 height, then float32
little-endian values row-major with NaN marking invalid pixels.

Camera text format: one camera per whitespace-separated block of
9 intrinsics (row-major 3x3), 12 extrinsics (row-major 3x4 world-to-camera),
then width and height.  See the README for a worked example.
"""

from __future__ import annotations

import struct

import numpy as np

from .geometry import Camera

RAW_DEPTH_MAGIC = b"IBDM"


def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale PFM, little-endian (scale -1.0), rows bottom-to-top."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a 2D map, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ValueError(f"{path} is not a PFM file")
        channels = 3 if magic == b"PF" else 1
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(fh.read(4 * count), dtype=dtype)
        if data.size != count:
            raise ValueError(f"{path}: truncated PFM data")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 PPM from a float image in [0, 1] (gray or RGB)."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[..., None].repeat(3, axis=-1)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"PPM writer expects (H, W[, 3]) image, got {img.shape}")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 PGM from a float grayscale image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM writer expects (H, W) image, got {img.shape}")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pnm_header(fh):
    def token():
        tok = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError("truncated PNM header")
            if ch.isspace():
                if tok:
                    return tok
                continue
            if ch == b"#":
                fh.readline()
                continue
            tok += ch

    magic = token()
    w = int(token())
    h = int(token())
    maxval = int(token())
    return magic, w, h, maxval


def read_image(path) -> np.ndarray:
    """Read P5/P6 PNM into a float32 image in [0, 1]; RGB keeps 3 channels."""
    with open(path, "rb") as fh:
        magic, w, h, maxval = _read_pnm_header(fh)
        if magic == b"P6":
            data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
            if data.size != w * h * 3:
                raise ValueError(f"{path}: truncated PPM data")
            return (data.reshape(h, w, 3).astype(np.float32) / maxval)
        if magic == b"P5":
            data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
            if data.size != w * h:
                raise ValueError(f"{path}: truncated PGM data")
            return data.reshape(h, w).astype(np.float32) / maxval
    raise ValueError(f"{path}: unsupported PNM magic {magic!r}")


def write_raw_depth(path, depth: np.ndarray) -> None:
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"raw depth writer expects a 2D map, got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(RAW_DEPTH_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(arr.astype("<f4").tobytes())


def read_raw_depth(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != RAW_DEPTH_MAGIC:
            raise ValueError(f"{path} is not a raw depth file")
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
        if data.size != w * h:
            raise ValueError(f"{path}: truncated raw depth data")
    return data.reshape(h, w).astype(np.float32)


def write_cameras_text(path, cameras: list[Camera]) -> None:
    lines = []
    for cam in cameras:
        k = " ".join(repr(float(v)) for v in cam.K.ravel())
        rt = " ".join(repr(float(v)) for v in cam.Rt.ravel())
        lines.append(f"{k}\n{rt}\n{cam.width} {cam.height}\n")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def read_cameras_text(path) -> list[Camera]:
    with open(path) as fh:
        tokens = fh.read().split()
    block = 9 + 12 + 2
    if len(tokens) % block != 0:
        raise ValueError(f"{path}: camera file length {len(tokens)} is not a multiple of {block}")
    cams = []
    for i in range(0, len(tokens), block):
        vals = tokens[i:i + block]
        K = np.array([float(v) for v in vals[:9]]).reshape(3, 3)
        Rt = np.array([float(v) for v in vals[9:21]]).reshape(3, 4)
        w, h = int(vals[21]), int(vals[22])
        cams.append(Camera(K=K, Rt=Rt, width=w, height=h))
    return cams
