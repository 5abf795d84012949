"""Finite-difference conversions between depth, gradients and normals."""
from __future__ import annotations

import logging

import numpy as np

from .grid import DepthMap, GradientField, NormalMap

log = logging.getLogger(__name__)

SCHEMES = ("central", "forward")


def _diff_central(z: np.ndarray, axis: int) -> np.ndarray:
    # np.gradient: (z[k+1] - z[k-1]) / 2 inside, one-sided first order at the borders
    return np.gradient(z, axis=axis)


def _diff_forward(z: np.ndarray, axis: int) -> np.ndarray:
    d = np.diff(z, axis=axis)
    last = d.take([-1], axis=axis)
    return np.concatenate([d, last], axis=axis)


def depth_to_gradient(z: DepthMap, scheme: str = "central") -> GradientField:
    """Slopes ``(dz/dx, dz/dy)`` of a depth map.

    ``forward`` uses ``z[i, j+1] - z[i, j]`` and repeats the last difference
    in the final column (likewise for rows). It is the discretization the
    integration solver uses, so forward gradients integrate back exactly.
    """
    if scheme == "central":
        diff = _diff_central
    elif scheme == "forward":
        diff = _diff_forward
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    v = z.values
    return GradientField(np.stack([diff(v, 1), diff(v, 0)], axis=-1))


def gradient_to_normal(g: GradientField) -> NormalMap:
    p, q = g.p, g.q
    length = np.sqrt(p * p + q * q + 1.0)
    return NormalMap(np.stack([-p / length, -q / length, 1.0 / length], axis=-1))


def normal_to_gradient(n: NormalMap, z_floor: float = 1e-3) -> GradientField:
    """Invert :func:`gradient_to_normal`, clamping ``n_z`` at ``z_floor``.

    The number of clamped pixels is stored in ``floor_hits``.
    """
    nz = n.vectors[..., 2]
    clamped = nz < z_floor
    hits = int(clamped.sum())
    if hits:
        log.debug("%d grazing normals clamped at n_z=%g", hits, z_floor)
    denom = np.maximum(nz, z_floor)
    g = np.stack([-n.vectors[..., 0] / denom, -n.vectors[..., 1] / denom], axis=-1)
    return GradientField(g, floor_hits=hits)


def depth_to_normal(z: DepthMap, scheme: str = "central") -> NormalMap:
    return gradient_to_normal(depth_to_gradient(z, scheme))
