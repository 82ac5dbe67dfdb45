"""Reduced optimality system for the potential-coefficient problem.

The state equation is -lap y + u y = f with natural boundary conditions.
The control never appears as an unknown: at each node the multiplier
p = -y*w determines u = H_gamma(p) through the regularized selection,
which leaves a coupled pair of Helmholtz-type equations in the state y
and the adjoint w,

    -lap w + H_gamma(-y w) w + y - z = 0,
    -lap y + H_gamma(-y w) y - f     = 0.

All rows are scaled by the trapezoid quadrature weights (1 interior, 1/2
edge, 1/4 corner) so that the assembled Newton matrix is symmetric to
the last bit; interior rows agree with the plain collocation equations.
The Newton matrix is the exact derivative of this discrete residual
wherever -y*w avoids the transition-band endpoints; at an endpoint the
closed-band derivative convention of the penalty module is used.
"""

import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass

from .grid import (
    GridMismatch,
    ScalarField,
    SparseOperator,
    neumann_laplacian,
    solve_neumann_helmholtz,
    sparse_solve,
    trapezoid_weights,
)
from .penalty import (
    apply_prox_field,
    inactive_indicator_field,
    transition_bands,
    validate_config,
)


@dataclass(frozen=True)
class PotentialProblem:
    """Source f, target z, and admissible values for one model instance."""

    grid: object
    f: object
    z: object
    cfg: object

    def __post_init__(self):
        if self.f.grid.n != self.grid.n or self.z.grid.n != self.grid.n:
            raise GridMismatch("problem data must share one grid")
        validate_config(self.cfg)


@dataclass
class NewtonIterate:
    """State y, adjoint w, and the current regularization level."""

    y: object
    w: object
    gamma: float

    def __post_init__(self):
        if self.y.grid.n != self.w.grid.n:
            raise GridMismatch("state and adjoint live on different grids")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive, got %g" % self.gamma)

    def copy(self):
        return NewtonIterate(self.y.copy(), self.w.copy(), self.gamma)


def _check(prob, it):
    if it.y.grid.n != prob.grid.n:
        raise GridMismatch("iterate grid does not match problem grid")


def _control_values(prob, it):
    # multiplier, regularized control, and transition indicator at the iterate
    bands = transition_bands(prob.cfg, it.gamma)
    p = ScalarField(prob.grid, -(it.y.data * it.w.data))
    u = apply_prox_field(prob.cfg, bands, p)
    chi = inactive_indicator_field(prob.cfg, bands, p)
    return p, u, chi


def residual(prob, it):
    """Row-weighted residual pair (r1, r2) of the reduced system."""
    _check(prob, it)
    _, u, _ = _control_values(prob, it)
    lap = neumann_laplacian(prob.grid)
    m = trapezoid_weights(prob.grid)
    y, w = it.y.data, it.w.data
    r1 = lap @ w + m * (u.data * w + y - prob.z.data)
    r2 = lap @ y + m * (u.data * y - prob.f.data)
    return ScalarField(prob.grid, r1), ScalarField(prob.grid, r2)


def residual_norm(r1, r2):
    """Euclidean norm of the stacked residual."""
    return float(np.sqrt(np.dot(r1.data, r1.data) + np.dot(r2.data, r2.data)))


def newton_system(prob, it):
    """Exact derivative of the residual with respect to (y, w).

    Blocks [[diag(1 - chi w^2/g), B], [B, diag(-chi y^2/g)]] with
    B = -lap + diag(H - chi y w / g), all row-weighted; the same sparse
    off-diagonal object is used twice, so symmetry is exact."""
    _check(prob, it)
    _, u, chi = _control_values(prob, it)
    lap = neumann_laplacian(prob.grid)
    m = trapezoid_weights(prob.grid)
    y, w = it.y.data, it.w.data
    scale = chi.data / it.gamma
    b = lap + sp.diags(m * (u.data - scale * y * w))
    j11 = sp.diags(m * (1.0 - scale * w * w))
    j22 = sp.diags(-m * scale * y * y)
    mat = sp.bmat([[j11, b], [b, j22]], format="csr")
    return SparseOperator(mat, symmetric=True)


def recover_control(prob, it):
    """Control u = H_gamma(p) and multiplier p = -y*w at the iterate."""
    _check(prob, it)
    p, u, _ = _control_values(prob, it)
    return u, p


def tracking_gradient_check(prob, u, n_directions=10, eps=1e-5, seed=0):
    """Worst relative gap between the adjoint gradient of the tracking
    objective at fixed control u and central differences along random
    directions; diagnostic used by the derivative tests."""
    grid = prob.grid
    m = trapezoid_weights(grid)
    h2 = grid.h ** 2

    def objective(uf):
        y = solve_neumann_helmholtz(uf, prob.f)
        d = y.data - prob.z.data
        return 0.5 * h2 * np.dot(m * d, d), y

    f0, y0 = objective(u)
    from .grid import assemble_neumann_helmholtz

    a = assemble_neumann_helmholtz(u)
    w = sparse_solve(a.matrix, -m * (y0.data - prob.z.data))
    gradient = h2 * m * y0.data * w

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_directions):
        v = rng.standard_normal(grid.size)
        v /= np.linalg.norm(v)
        expected = np.dot(gradient, v)
        fp, _ = objective(ScalarField(grid, u.data + eps * v))
        fm, _ = objective(ScalarField(grid, u.data - eps * v))
        fd = (fp - fm) / (2.0 * eps)
        scale = max(abs(expected), abs(fd))
        if scale <= 1e-9 * max(1.0, abs(f0)):
            continue
        worst = max(worst, abs(expected - fd) / scale)
    return worst
