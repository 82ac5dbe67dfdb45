"""Reduced optimality system for the diffusion-coefficient problem.

The state equation is -div(Gu grad y) = f with homogeneous Dirichlet
conditions, where G is the local five-point averaging of the coefficient.
The multiplier is p = -G*(grad y . grad w), the control u = H_gamma(p),
and the reduced system couples state and adjoint through the coefficient
Gu:

    A(Gu) w + y - z = 0,      A(Gu) y - f = 0

on interior nodes, with boundary rows holding y = w = 0.  The pointwise
product of gradients is taken in the edge-difference form that is the
exact transpose of the divergence operator, so the Newton matrix below
is the exact derivative of this residual (away from band endpoints) and
symmetric.  Its coefficient blocks

    A(v1, d, v3) = div( G((chi/gamma) G*(grad v1 . grad d)) grad v3 )

are assembled as -W(v3)^T K W(v1) with W the gradient-pairing matrix and
K = G diag(chi/gamma) G*.
"""

import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field

from .grid import (
    GridMismatch,
    ScalarField,
    Smoothing,
    SparseOperator,
    diffusion_stiffness_full,
    gradient_pairing,
    gradient_pairing_matrix,
    interior_mask,
)
from .penalty import (
    ConfigError,
    apply_prox_field,
    inactive_indicator_field,
    transition_bands,
    validate_config,
)


@dataclass(frozen=True)
class DiffusionProblem:
    """Source f, target z, admissible values, and smoothing closure."""

    grid: object
    f: object
    z: object
    cfg: object
    smoothing_mode: str = "renormalized"

    def __post_init__(self):
        if self.f.grid.n != self.grid.n or self.z.grid.n != self.grid.n:
            raise GridMismatch("problem data must share one grid")
        validate_config(self.cfg)
        # ellipticity floor: the smallest material value bounds Gu from below
        if self.cfg.values[0] <= 0.0:
            raise ConfigError("diffusion requires a positive first value")

    def smoothing(self):
        return Smoothing(self.grid, self.smoothing_mode, self.cfg.values[0])


def _check(prob, it):
    if it.y.grid.n != prob.grid.n:
        raise GridMismatch("iterate grid does not match problem grid")


def _control_values(prob, it):
    # multiplier p = -G*(grad y . grad w), control, indicator, coefficient Gu
    bands = transition_bands(prob.cfg, it.gamma)
    sm = prob.smoothing()
    q = gradient_pairing(it.y, it.w)
    p = ScalarField(prob.grid, -(sm.matrix.T @ q.data))
    u = apply_prox_field(prob.cfg, bands, p)
    chi = inactive_indicator_field(prob.cfg, bands, p)
    a = sm.apply(u)
    return p, u, chi, a


def residual(prob, it):
    """Residual pair (r1, r2); boundary rows hold the iterate values."""
    _check(prob, it)
    _, _, _, a = _control_values(prob, it)
    mask = interior_mask(prob.grid)
    stiff = diffusion_stiffness_full(a)
    y, w = it.y.data, it.w.data
    ym = np.where(mask, y, 0.0)
    wm = np.where(mask, w, 0.0)
    r1 = np.where(mask, stiff @ wm + ym - prob.z.data, w)
    r2 = np.where(mask, stiff @ ym - prob.f.data, y)
    return ScalarField(prob.grid, r1), ScalarField(prob.grid, r2)


def _coupling(prob, it, v1, v3):
    # -Z W(v3)^T K W(v1) Z with boundary rows and columns zeroed
    _, _, chi, _ = _control_values(prob, it)
    sm = prob.smoothing()
    k = (sm.matrix @ sp.diags(chi.data / it.gamma)) @ sm.matrix.T
    w1 = gradient_pairing_matrix(v1)
    w3 = w1 if v3 is v1 else gradient_pairing_matrix(v3)
    z = sp.diags(interior_mask(prob.grid).astype(float))
    return -(z @ (w3.T @ (k @ w1)) @ z)


def trilinear_A(prob, it, v1, v3):
    """Coefficient-coupling operator A(v1, ., v3) at the iterate, acting on
    perturbations vanishing on the boundary."""
    _check(prob, it)
    mat = _coupling(prob, it, v1, v3).tocsr()
    return SparseOperator(mat, symmetric=(v1 is v3))


def newton_system(prob, it):
    """Exact derivative of the residual with respect to (y, w)."""
    _check(prob, it)
    _, _, chi, a = _control_values(prob, it)
    grid = prob.grid
    sm = prob.smoothing()
    k = (sm.matrix @ sp.diags(chi.data / it.gamma)) @ sm.matrix.T
    wy = gradient_pairing_matrix(it.y)
    ww = gradient_pairing_matrix(it.w)
    mask = interior_mask(grid)
    z = sp.diags(mask.astype(float))
    ubnd = sp.diags(1.0 - mask.astype(float))
    stiff = z @ diffusion_stiffness_full(a) @ z
    j11 = z - z @ (ww.T @ (k @ ww)) @ z
    j12 = stiff - z @ (ww.T @ (k @ wy)) @ z + ubnd
    j22 = -(z @ (wy.T @ (k @ wy)) @ z)
    mat = sp.bmat([[j11, j12], [j12.T, j22]], format="csr")
    return SparseOperator(mat, symmetric=True)


def recover_control(prob, it):
    """Control u = H_gamma(p), smoothed coefficient Gu, and multiplier p."""
    _check(prob, it)
    p, u, _, a = _control_values(prob, it)
    return u, a, p


def residual_norm(r1, r2):
    """Euclidean norm of the stacked residual."""
    return float(np.sqrt(np.dot(r1.data, r1.data) + np.dot(r2.data, r2.data)))
