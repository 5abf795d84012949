"""File I/O for depth and normal maps.

PFM is the lossless interchange format (``Pf`` one channel, ``PF`` three
channels, rows stored bottom-to-top, endianness from the sign of the scale
line). 16-bit PNG depth carries a JSON sidecar ``{"scale": s, "offset": o}``
next to the image (same stem, ``.json`` suffix); height = offset + scale * raw.
"""
from __future__ import annotations

import json
import os
import tempfile
from io import BytesIO
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .grid import DepthMap, EncodedNormalMap, GridError, NormalMap, decode_normals, viz_normals

PathLike = Union[str, os.PathLike]

PNG16_MAX = 65535


class FormatError(ValueError):
    """A file could not be parsed; ``offset`` is the byte position of the fault."""

    def __init__(self, path, offset: int, msg: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {msg}")


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_of(path: PathLike, fmt: Optional[str]) -> str:
    if fmt is not None:
        if fmt not in ("pfm", "png16"):
            raise ValueError(f"unknown depth format {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return "pfm"
    if suffix == ".png":
        return "png16"
    raise ValueError(f"cannot infer format from {path!r}")


# --------------------------------------------------------------------------
# PFM

def _read_token_line(buf: bytes, pos: int, path) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError(path, pos, "truncated header")
    try:
        line = buf[pos:end].decode("ascii").strip()
    except UnicodeDecodeError:
        raise FormatError(path, pos, "non-ASCII header") from None
    return line, end + 1


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a PFM file into a float32 array, (H, W) or (H, W, 3), top row first."""
    buf = Path(path).read_bytes()
    ident, pos = _read_token_line(buf, 0, path)
    if ident == "Pf":
        channels = 1
    elif ident == "PF":
        channels = 3
    else:
        raise FormatError(path, 0, f"bad identifier {ident!r}")

    dims_at = pos
    dims, pos = _read_token_line(buf, pos, path)
    parts = dims.split()
    if len(parts) != 2:
        raise FormatError(path, dims_at, f"bad dimension line {dims!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError:
        raise FormatError(path, dims_at, f"bad dimension line {dims!r}") from None
    if width < 2 or height < 2:
        raise FormatError(path, dims_at, f"dimensions {width}x{height} below 2x2")

    scale_at = pos
    scale_line, pos = _read_token_line(buf, pos, path)
    try:
        scale = float(scale_line)
    except ValueError:
        raise FormatError(path, scale_at, f"bad scale line {scale_line!r}") from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(path, scale_at, f"bad scale {scale_line!r}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")

    count = width * height * channels
    need = count * 4
    if len(buf) - pos < need:
        raise FormatError(path, len(buf), f"payload truncated: need {need} bytes after offset {pos}")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    bad = ~np.isfinite(data)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise FormatError(path, pos + 4 * first, "non-finite sample")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    """Write float data as little-endian PFM. Values are stored as float32."""
    a = np.asarray(data)
    if a.ndim == 2:
        ident = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        ident = b"PF"
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3), got {a.shape}")
    with np.errstate(over="ignore"):
        f32 = a.astype("<f4")
    if not np.all(np.isfinite(f32)):
        raise ValueError("values are non-finite or overflow float32")
    h, w = a.shape[:2]
    header = b"%s\n%d %d\n-1.0\n" % (ident, w, h)
    atomic_write_bytes(path, header + np.ascontiguousarray(np.flipud(f32)).tobytes())


# --------------------------------------------------------------------------
# 16-bit PNG

def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def read_png16(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            raw = np.array(im)
    except FileNotFoundError:
        raise
    except Exception as exc:
        size = os.path.getsize(path) if os.path.exists(path) else 0
        raise FormatError(path, size, f"unreadable PNG ({exc})") from None
    if raw.ndim != 2:
        raise FormatError(path, 0, f"expected single-channel PNG, got shape {raw.shape}")
    if raw.shape[0] < 2 or raw.shape[1] < 2:
        raise FormatError(path, 0, f"dimensions {raw.shape[1]}x{raw.shape[0]} below 2x2")
    return raw.astype(np.int64)


def write_png16(path: PathLike, raw: np.ndarray) -> None:
    buf = BytesIO()
    Image.fromarray(np.asarray(raw, dtype=np.uint16)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def _read_sidecar(path: PathLike) -> tuple[float, float]:
    side = sidecar_path(path)
    if not side.exists():
        return 1.0, 0.0
    try:
        meta = json.loads(side.read_text())
        return float(meta.get("scale", 1.0)), float(meta.get("offset", 0.0))
    except (ValueError, TypeError, AttributeError) as exc:
        raise FormatError(side, 0, f"bad sidecar ({exc})") from None


# --------------------------------------------------------------------------
# depth

def load_depth(path: PathLike, fmt: Optional[str] = None) -> DepthMap:
    fmt = _format_of(path, fmt)
    if fmt == "pfm":
        data = read_pfm(path)
        if data.ndim != 2:
            raise FormatError(path, 0, "expected single-channel (Pf) PFM for depth")
        return DepthMap(data.astype(np.float64))
    raw = read_png16(path)
    scale, offset = _read_sidecar(path)
    return DepthMap(offset + scale * raw.astype(np.float64))


def save_depth(depth: DepthMap, path: PathLike, fmt: Optional[str] = None) -> None:
    """Write a depth map. Masks are not persisted; invalid pixels are written as 0."""
    fmt = _format_of(path, fmt)
    values = np.where(depth.valid, depth.values, 0.0)
    if fmt == "pfm":
        write_pfm(path, values)
        return
    lo = float(values[depth.valid].min()) if depth.valid.any() else 0.0
    thick = depth.thickness
    scale = thick / PNG16_MAX if thick > 0 else 1.0
    raw = np.clip(np.floor((values - lo) / scale + 0.5), 0, PNG16_MAX)
    raw[~depth.valid] = 0
    write_png16(path, raw)
    atomic_write_bytes(sidecar_path(path), json.dumps({"scale": scale, "offset": lo}).encode())


# --------------------------------------------------------------------------
# normals

def load_normals(path: PathLike) -> NormalMap:
    """Load normals from a 3-channel PFM (raw vectors) or an 8/16-bit RGB PNG
    (encoded channels). Vectors are renormalized."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        data = read_pfm(path).astype(np.float64)
        if data.ndim != 3:
            raise FormatError(path, 0, "expected 3-channel (PF) PFM for normals")
        length = np.linalg.norm(data, axis=2)
        if np.any(length == 0):
            r, c = np.argwhere(length == 0)[0]
            raise FormatError(path, 0, f"zero-length normal at ({r},{c})")
        data /= length[..., None]
        data[..., 2] = np.maximum(data[..., 2], 1e-4)
        data /= np.linalg.norm(data, axis=2, keepdims=True)
        try:
            return NormalMap(data)
        except GridError as exc:
            raise FormatError(path, 0, str(exc)) from None
    elif suffix == ".png":
        try:
            with Image.open(path) as im:
                im.load()
                mode = im.mode
                arr = np.array(im)
        except Exception as exc:
            size = os.path.getsize(path) if os.path.exists(path) else 0
            raise FormatError(path, size, f"unreadable PNG ({exc})") from None
        if arr.ndim != 3 or arr.shape[2] < 3:
            raise FormatError(path, 0, f"expected RGB PNG for normals, got mode {mode}")
        peak = 65535.0 if arr.dtype == np.uint16 else 255.0
        enc = arr[..., :3].astype(np.float64) / peak
    else:
        raise ValueError(f"cannot infer normal format from {path!r}")
    try:
        return decode_normals(EncodedNormalMap(enc))
    except GridError as exc:
        raise FormatError(path, 0, str(exc)) from None


def save_normals(n: NormalMap, path: PathLike) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, n.vectors)
    elif suffix == ".png":
        save_png8(path, viz_normals(n))
    else:
        raise ValueError(f"cannot infer normal format from {path!r}")


def save_png8(path: PathLike, img: np.ndarray) -> None:
    """Write an 8-bit grayscale (H, W) or RGB (H, W, 3) PNG."""
    buf = BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


__all__ = [
    "FormatError",
    "load_depth",
    "save_depth",
    "load_normals",
    "save_normals",
    "read_pfm",
    "write_pfm",
    "read_png16",
    "write_png16",
    "save_png8",
    "sidecar_path",
]
