"""Depth/normal fusion for pseudo-label generation.

Steps: scale relative depth so its normals agree with a detailed normal map,
compress steep slopes in the scaled-depth normals, then blend the detail
normals in channel space with the soft-light style rule in :func:`soft_fuse`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .differential import depth_to_normal, gradient_to_normal, normal_to_gradient
from .grid import (
    DepthMap,
    EncodedNormalMap,
    GradientField,
    NormalMap,
    check_same_shape,
    decode_normals,
    encode_normals,
)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class NormalTransformParams:
    tau: float = 4.0
    k: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.k >= 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class FusionConfig:
    tau: float = 4.0
    k: float = 2.0
    scale_min: float = 0.01
    scale_max: float = 100.0
    scheme: str = "central"

    def __post_init__(self):
        NormalTransformParams(self.tau, self.k)
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError(
                f"scale range must satisfy 0 < scale_min <= scale_max, got "
                f"[{self.scale_min}, {self.scale_max}]")

    @property
    def transform(self) -> NormalTransformParams:
        return NormalTransformParams(self.tau, self.k)


@dataclass(frozen=True)
class ScaleSearchResult:
    scale: float
    objective: float
    evaluations: int
    degenerate: bool = field(default=False)


def mean_angle_deg(a: np.ndarray, b: np.ndarray, valid: np.ndarray) -> float:
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return float(np.degrees(np.arctan2(cross, dot))[valid].mean())


def global_scale(rel_depth: DepthMap, target: NormalMap, s_min: float = 0.01,
                 s_max: float = 100.0, rtol: float = 1e-3, grid_points: int = 25,
                 scheme: str = "central") -> ScaleSearchResult:
    """Find the multiplier ``s`` whose depth normals best match ``target``.

    The objective is the mean angular error in degrees over valid pixels.
    A coarse log-spaced scan picks the bracket, then golden-section search in
    ``log s`` narrows it until its relative width is below ``rtol``. The
    result is never worse than either end of the search range.
    """
    if not s_min <= s_max:
        raise ValueError(f"inverted scale range [{s_min}, {s_max}]")
    if s_min <= 0:
        raise ValueError(f"scale range must be positive, got s_min={s_min}")
    check_same_shape(rel_depth, target)
    valid = rel_depth.valid
    tgt = target.vectors
    evals = 0

    def objective(log_s: float) -> float:
        nonlocal evals
        evals += 1
        n = depth_to_normal(rel_depth.with_values(math.exp(log_s) * rel_depth.values), scheme)
        return mean_angle_deg(n.vectors, tgt, valid)

    lo, hi = math.log(s_min), math.log(s_max)
    if rel_depth.thickness <= 0:
        return ScaleSearchResult(s_min, objective(lo), evals, degenerate=True)
    if hi == lo:
        return ScaleSearchResult(s_min, objective(lo), evals)

    xs = np.linspace(lo, hi, max(grid_points, 3))
    fs = [objective(x) for x in xs]
    best = int(np.argmin(fs))
    a = xs[max(best - 1, 0)]
    b = xs[min(best + 1, len(xs) - 1)]

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = objective(c), objective(d)
    while (b - a) > math.log1p(rtol):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = objective(d)

    candidates = [(fc, c), (fd, d), (fs[0], xs[0]), (fs[-1], xs[-1]), (fs[best], xs[best])]
    f_best, x_best = min(candidates, key=lambda t: t[0])
    scale = min(max(math.exp(x_best), s_min), s_max)
    return ScaleSearchResult(scale, f_best, evals)


def attenuate_magnitude(m: np.ndarray, tau: float, k: float) -> np.ndarray:
    """``m / (1 + (m/tau)^k)^(1/k)``: increasing in ``m``, below ``min(m, tau)``,
    close to identity for ``m << tau``."""
    return m / (1.0 + (m / tau) ** k) ** (1.0 / k)


def transform_normals(n: NormalMap, params: NormalTransformParams = NormalTransformParams()
                      ) -> NormalMap:
    """Compress steep slopes toward ``tau`` while keeping each slope's direction."""
    g = normal_to_gradient(n).vectors
    m = np.linalg.norm(g, axis=-1, keepdims=True)
    ratio = np.divide(attenuate_magnitude(m, params.tau, params.k), m,
                      out=np.ones_like(m), where=m > 0)
    return gradient_to_normal(GradientField(g * ratio))


def soft_fuse(n1: EncodedNormalMap, n2: EncodedNormalMap) -> EncodedNormalMap:
    """Channelwise blend of ``n2``'s detail into base ``n1``.

    ``n2 <= 0.5`` darkens ``n1`` toward ``n1**2``; ``n2 > 0.5`` lightens it
    toward ``sqrt(n1)``; ``n2 == 0.5`` leaves ``n1`` unchanged.
    """
    check_same_shape(n1, n2)
    a = n1.channels
    b = n2.channels
    low = a - (1.0 - 2.0 * b) * a * (1.0 - a)
    high = a + (2.0 * b - 1.0) * (np.sqrt(a) - a)
    out = np.where(b <= 0.5, low, high)
    return EncodedNormalMap(np.clip(out, 0.0, 1.0))


def fuse_pipeline(rel_depth: DepthMap, detail_normal: NormalMap,
                  cfg: FusionConfig = FusionConfig()) -> tuple[NormalMap, ScaleSearchResult]:
    """Scale, transform and blend; returns the fused normals and the scale search."""
    check_same_shape(rel_depth, detail_normal)
    found = global_scale(rel_depth, detail_normal, cfg.scale_min, cfg.scale_max,
                         scheme=cfg.scheme)
    scaled = rel_depth.with_values(found.scale * rel_depth.values)
    base = transform_normals(depth_to_normal(scaled, cfg.scheme), cfg.transform)
    fused = soft_fuse(encode_normals(base), encode_normals(detail_normal))
    return decode_normals(fused), found
