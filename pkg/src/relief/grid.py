"""Dense 2-D containers for relief geometry.

Frame convention used everywhere in the package: x runs along columns
(left to right), y runs along rows (top to bottom), z points toward the
viewer. Gradients are ``p = dz/dx`` and ``q = dz/dy`` in pixel units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6


class GridError(ValueError):
    """A container was built from data violating its invariants."""


class DegeneratePixelError(GridError):
    """Decoding produced zero-length vectors."""

    def __init__(self, coords):
        self.coords = [tuple(int(v) for v in c) for c in coords]
        shown = ", ".join(f"({r},{c})" for r, c in self.coords[:10])
        more = "" if len(self.coords) <= 10 else f" and {len(self.coords) - 10} more"
        super().__init__(f"degenerate pixels at (row,col): {shown}{more}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _check_shape(h: int, w: int) -> None:
    if h < 2 or w < 2:
        raise GridError(f"grid must be at least 2x2, got {h}x{w}")


def check_same_shape(*grids) -> None:
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise GridError(f"dimension mismatch: {sorted(shapes)}")


@dataclass(frozen=True)
class DepthMap:
    """Height field in pixel units, optionally with a validity mask."""

    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise GridError(f"depth values must be 2-D, got shape {v.shape}")
        _check_shape(*v.shape)
        object.__setattr__(self, "values", _frozen(v))
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool, copy=True)
            if m.shape != v.shape:
                raise GridError(f"mask shape {m.shape} != values shape {v.shape}")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)
        if not np.all(np.isfinite(self.values[self.valid])):
            raise GridError("depth map has non-finite values at valid pixels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask

    @property
    def thickness(self) -> float:
        v = self.values[self.valid]
        if v.size == 0:
            return 0.0
        return float(v.max() - v.min())

    def with_values(self, values: np.ndarray) -> "DepthMap":
        return DepthMap(values, self.mask)


@dataclass(frozen=True)
class NormalMap:
    """Unit normals, shape (H, W, 3), z component strictly positive."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 3 or v.shape[2] != 3:
            raise GridError(f"normal map must be (H, W, 3), got {v.shape}")
        _check_shape(v.shape[0], v.shape[1])
        v = _frozen(v)
        if not np.all(np.isfinite(v)):
            raise GridError("normal map has non-finite components")
        norms = np.linalg.norm(v, axis=2)
        bad = np.abs(norms - 1.0) > UNIT_TOL
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise GridError(f"normal at ({r},{c}) has norm {norms[r, c]!r}")
        if not np.all(v[..., 2] > 0):
            r, c = np.argwhere(v[..., 2] <= 0)[0]
            raise GridError(f"normal at ({r},{c}) is not viewer-facing (z <= 0)")
        object.__setattr__(self, "vectors", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @classmethod
    def flat(cls, height: int, width: int) -> "NormalMap":
        v = np.zeros((height, width, 3))
        v[..., 2] = 1.0
        return cls(v)


@dataclass(frozen=True)
class EncodedNormalMap:
    """Normals stored as channel triples in [0, 1]."""

    channels: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.channels)
        if c.ndim != 3 or c.shape[2] != 3:
            raise GridError(f"encoded normals must be (H, W, 3), got {c.shape}")
        _check_shape(c.shape[0], c.shape[1])
        c = _frozen(c)
        if not (np.all(c >= 0.0) and np.all(c <= 1.0)):
            raise GridError("encoded channels must lie in [0, 1]")
        object.__setattr__(self, "channels", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[:2]


@dataclass(frozen=True)
class GradientField:
    """Per-pixel slopes ``(p, q)`` stacked on the last axis, shape (H, W, 2)."""

    vectors: np.ndarray
    floor_hits: int = field(default=0, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 3 or v.shape[2] != 2:
            raise GridError(f"gradient field must be (H, W, 2), got {v.shape}")
        _check_shape(v.shape[0], v.shape[1])
        v = _frozen(v)
        if not np.all(np.isfinite(v)):
            raise GridError("gradient field has non-finite components")
        object.__setattr__(self, "vectors", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def p(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def q(self) -> np.ndarray:
        return self.vectors[..., 1]


def encode_normals(n: NormalMap) -> EncodedNormalMap:
    """Map unit normals to channel space with ``c = (v + 1) / 2``."""
    return EncodedNormalMap((n.vectors + 1.0) / 2.0)


def decode_normals(e: EncodedNormalMap, z_min: float = 1e-4) -> NormalMap:
    v = 2.0 * e.channels - 1.0
    zero = ~np.any(v != 0.0, axis=2)
    if zero.any():
        raise DegeneratePixelError(np.argwhere(zero))
    v[..., 2] = np.maximum(v[..., 2], z_min)
    v /= np.linalg.norm(v, axis=2, keepdims=True)
    return NormalMap(v)


def normalize_to_255(values: np.ndarray, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Affine map of ``[min, max]`` over valid pixels onto ``[0, 255]`` (float).

    A constant input maps to zeros.
    """
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    lo = values[valid].min()
    hi = values[valid].max()
    out = np.zeros(values.shape)
    if hi > lo:
        out[valid] = (values[valid] - lo) / (hi - lo) * 255.0
    return out


def viz_depth(depth: DepthMap) -> tuple[np.ndarray, bool]:
    """8-bit grayscale rendering of a depth map.

    Returns ``(image, degenerate)``; a constant map gives an all-zero image
    and ``degenerate=True``. Invalid pixels are drawn as 0.
    """
    if depth.thickness <= 0:
        log.warning("constant depth map; visualization is all zeros")
        return np.zeros(depth.shape, dtype=np.uint8), True
    scaled = normalize_to_255(depth.values, depth.valid)
    # round half away from zero; values are non-negative here
    img = np.floor(scaled + 0.5)
    img[~depth.valid] = 0
    return np.clip(img, 0, 255).astype(np.uint8), False


def viz_normals(n: NormalMap) -> np.ndarray:
    """8-bit RGB rendering of encoded normals."""
    c = encode_normals(n).channels * 255.0
    return np.clip(np.floor(c + 0.5), 0, 255).astype(np.uint8)
