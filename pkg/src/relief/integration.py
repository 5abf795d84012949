"""Depth recovery from gradient fields.

The discrete objective is

    E(z) = sum_e w_e (z[b(e)] - z[a(e)] - g_e)^2 + mu * sum_i (z_i - d_i)^2

over forward-difference edges ``e = (a, b)``: horizontal edges from
``(i, j)`` to ``(i, j+1)`` carry target ``p[i, j]`` and vertical edges from
``(i, j)`` to ``(i+1, j)`` carry ``q[i, j]``. There are no edges leaving the
grid (homogeneous Neumann boundary). The minimizer solves
``(D^T W D + mu I) z = D^T W g + mu d``, which is solved matrix-free by
Jacobi-preconditioned conjugate gradients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .differential import normal_to_gradient
from .grid import DepthMap, GradientField, GridError, NormalMap, check_same_shape

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    mu: float = 0.02
    max_cg_iters: Optional[int] = None  # None: 10 * sqrt(N)
    cg_tolerance: float = 1e-8
    outer_iters: int = 3
    edge_sigma: float = 1.0

    def __post_init__(self):
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be a finite non-negative number, got {self.mu}")
        if not 0 < self.cg_tolerance < 1:
            raise ValueError(f"cg_tolerance must lie in (0, 1), got {self.cg_tolerance}")
        if self.max_cg_iters is not None and self.max_cg_iters < 1:
            raise ValueError(f"max_cg_iters must be >= 1, got {self.max_cg_iters}")
        if self.outer_iters < 1:
            raise ValueError(f"outer_iters must be >= 1, got {self.outer_iters}")
        if not self.edge_sigma > 0:
            raise ValueError(f"edge_sigma must be positive, got {self.edge_sigma}")

    def iteration_cap(self, n_pixels: int) -> int:
        if self.max_cg_iters is not None:
            return self.max_cg_iters
        return max(1, int(math.ceil(10 * math.sqrt(n_pixels))))


@dataclass(frozen=True)
class SolveReport:
    final_relative_residual: float
    cg_iterations_used: int
    energy: float
    converged: bool = True


@dataclass(frozen=True)
class EdgeWeights:
    """Weights on horizontal ``(H, W-1)`` and vertical ``(H-1, W)`` edges."""

    wx: np.ndarray
    wy: np.ndarray

    @classmethod
    def uniform(cls, valid: np.ndarray) -> "EdgeWeights":
        wx = (valid[:, 1:] & valid[:, :-1]).astype(np.float64)
        wy = (valid[1:, :] & valid[:-1, :]).astype(np.float64)
        return cls(wx, wy)


# --------------------------------------------------------------------------
# operator pieces

def _grad(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return z[:, 1:] - z[:, :-1], z[1:, :] - z[:-1, :]


def _grad_adjoint(ex: np.ndarray, ey: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    out[:, 1:] += ex
    out[:, :-1] -= ex
    out[1:, :] += ey
    out[:-1, :] -= ey
    return out


def _edge_targets(g: GradientField) -> tuple[np.ndarray, np.ndarray]:
    return g.p[:, :-1], g.q[:-1, :]


def edge_residuals(z: np.ndarray, g: GradientField) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge ``|D z - g|`` on horizontal and vertical edges."""
    dx, dy = _grad(z)
    tx, ty = _edge_targets(g)
    return np.abs(dx - tx), np.abs(dy - ty)


def energy(z: np.ndarray, g: GradientField, d: DepthMap, mu: float,
           weights: Optional[EdgeWeights] = None) -> float:
    """Value of the discrete objective at ``z``."""
    if weights is None:
        weights = EdgeWeights.uniform(d.valid)
    rx, ry = edge_residuals(z, g)
    fit = np.sum(weights.wx * rx**2) + np.sum(weights.wy * ry**2)
    valid = d.valid
    fidelity = np.sum((z[valid] - d.values[valid]) ** 2)
    return float(fit + mu * fidelity)


def _components(weights: EdgeWeights, active: np.ndarray) -> tuple[int, np.ndarray]:
    h, w = active.shape
    idx = np.arange(h * w).reshape(h, w)
    hx = weights.wx > 0
    hy = weights.wy > 0
    rows = np.concatenate([idx[:, :-1][hx], idx[:-1, :][hy]])
    cols = np.concatenate([idx[:, 1:][hx], idx[1:, :][hy]])
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(h * w, h * w))
    return connected_components(graph, directed=False)


def solve_weighted(g: GradientField, d: DepthMap, cfg: SolverConfig,
                   weights: Optional[EdgeWeights] = None) -> tuple[DepthMap, SolveReport]:
    """Minimize the weighted objective for fixed edge weights.

    Invalid pixels are decoupled (all their edges get weight 0) and returned
    unchanged from ``d``. With ``mu == 0`` the solution is determined up to
    one constant per connected set of pixels; each set is shifted so its mean
    equals the mean of ``d`` over it.
    """
    check_same_shape(g, d)
    if not np.all(np.isfinite(g.vectors)):
        raise GridError("gradient field has non-finite values")
    shape = d.shape
    valid = d.valid
    mu = cfg.mu
    if weights is None:
        weights = EdgeWeights.uniform(valid)
    else:
        base = EdgeWeights.uniform(valid)
        weights = EdgeWeights(weights.wx * base.wx, weights.wy * base.wy)
    wx, wy = weights.wx, weights.wy
    dvals = np.where(valid, d.values, 0.0)

    diag = np.zeros(shape)
    diag[:, 1:] += wx
    diag[:, :-1] += wx
    diag[1:, :] += wy
    diag[:-1, :] += wy
    # pixels solved for; the rest are pinned to d
    free = valid & ((diag > 0) | (mu > 0))
    screen = np.where(free, mu, 1.0)
    diag = diag + screen

    def apply(z):
        dx, dy = _grad(z)
        return _grad_adjoint(wx * dx, wy * dy, shape) + screen * z

    tx, ty = _edge_targets(g)
    b = _grad_adjoint(wx * tx, wy * ty, shape) + np.where(free, mu * dvals, dvals)
    pinned = ~free
    if mu > 0:
        x = dvals.copy()
    else:
        x = np.where(pinned, dvals, 0.0)

    b_norm = float(np.linalg.norm(b))
    cap = cfg.iteration_cap(int(free.sum()))
    r = b - apply(x)
    if b_norm == 0.0:
        x = np.zeros(shape)
        r = np.zeros(shape)
        denom = 1.0
    else:
        denom = b_norm
    inv_diag = 1.0 / diag
    it = 0
    rel = float(np.linalg.norm(r)) / denom
    if rel > cfg.cg_tolerance:
        zr = inv_diag * r
        p = zr.copy()
        rz = float(np.vdot(r, zr))
        while it < cap:
            ap = apply(p)
            pap = float(np.vdot(p, ap))
            if pap <= 0.0:
                break
            alpha = rz / pap
            x += alpha * p
            r -= alpha * ap
            it += 1
            rel = float(np.linalg.norm(r)) / denom
            if rel <= cfg.cg_tolerance:
                break
            zr = inv_diag * r
            rz_new = float(np.vdot(r, zr))
            p = zr + (rz_new / rz) * p
            rz = rz_new
        # recompute from scratch; the recurrence drifts
        rel = float(np.linalg.norm(b - apply(x))) / denom

    if mu == 0:
        x = _anchor_means(x, dvals, weights, free)
    converged = rel <= cfg.cg_tolerance
    if not converged:
        log.warning("CG stopped after %d iterations at relative residual %.3e", it, rel)
    z = DepthMap(np.where(valid, x, d.values), d.mask)
    report = SolveReport(
        final_relative_residual=rel,
        cg_iterations_used=it,
        energy=energy(z.values, g, d, mu, weights),
        converged=converged,
    )
    return z, report


def _anchor_means(x, dvals, weights, free):
    n, labels = _components(weights, free)
    labels = labels.reshape(x.shape)
    out = x.copy()
    sel = free.ravel()
    lab = labels.ravel()[sel]
    counts = np.bincount(lab, minlength=n)
    shift = (np.bincount(lab, dvals.ravel()[sel], minlength=n)
             - np.bincount(lab, x.ravel()[sel], minlength=n))
    shift = np.divide(shift, counts, out=np.zeros(n), where=counts > 0)
    out[free] += shift[labels[free]]
    return out


def screened_poisson(g: GradientField, d: DepthMap,
                     cfg: Optional[SolverConfig] = None) -> tuple[DepthMap, SolveReport]:
    """Depth whose forward differences best match ``g`` while staying near ``d``."""
    return solve_weighted(g, d, cfg or SolverConfig())


def edge_weights_from_residual(z: np.ndarray, g: GradientField, sigma: float) -> EdgeWeights:
    rx, ry = edge_residuals(z, g)
    return EdgeWeights(np.exp(-((rx / sigma) ** 2)), np.exp(-((ry / sigma) ** 2)))


def integration_rounds(n: NormalMap, d_init: DepthMap,
                       cfg: Optional[SolverConfig] = None
                       ) -> Iterator[tuple[DepthMap, SolveReport]]:
    """Yield the depth and report after each outer round.

    Round 1 uses uniform edge weights. Each later round weights every edge by
    ``exp(-(r / edge_sigma)^2)`` where ``r`` is that edge's residual after the
    previous round, so edges that cannot be reconciled with the depth prior
    (occlusion walls) stop dragging their neighbours.
    """
    cfg = cfg or SolverConfig()
    check_same_shape(n, d_init)
    g = normal_to_gradient(n)
    weights = None
    for _ in range(cfg.outer_iters):
        z, report = solve_weighted(g, d_init, cfg, weights)
        yield z, report
        weights = edge_weights_from_residual(z.values, g, cfg.edge_sigma)


def integrate_normals(n: NormalMap, d_init: DepthMap,
                      cfg: Optional[SolverConfig] = None) -> tuple[DepthMap, SolveReport]:
    result = None
    for result in integration_rounds(n, d_init, cfg):
        pass
    return result


def refine_depth_label(rough: DepthMap, detail_normal: NormalMap, mu: float = 0.02,
                       cfg: Optional[SolverConfig] = None) -> DepthMap:
    """Inject normal-map detail into a rough depth label (single screened solve)."""
    check_same_shape(rough, detail_normal)
    cfg = replace(cfg or SolverConfig(), mu=mu)
    z, _ = screened_poisson(normal_to_gradient(detail_normal), rough, cfg)
    return z
