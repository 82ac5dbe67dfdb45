"""Uniform finite-difference infrastructure on the square [-1,1]^2.

Provides nodal scalar fields, discrete L2 norms, centered gradients, the
two elliptic operators used by the solvers (a Helmholtz-type operator with
natural boundary conditions and a divergence-form operator with homogeneous
Dirichlet conditions), a five-point smoothing operator with exact discrete
adjoint, and sparse direct solves.

The natural-boundary operator is assembled in row-weighted form: mirror
ghost-point rows are scaled with trapezoid quadrature weights (1 interior,
1/2 edge, 1/4 corner), which makes the matrix exactly symmetric while
keeping the same solution set as the plain ghost-point equations.
"""

import functools
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from dataclasses import dataclass, field


log = logging.getLogger(__name__)


class GridMismatch(ValueError):
    """Fields live on different grids."""


class NonPositiveCoefficient(ValueError):
    """Elliptic coefficient must be positive nodewise."""


class SingularSystem(RuntimeError):
    """Direct factorization detected rank deficiency."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform n-by-n nodal grid on [-1,1]^2, row-major node order."""

    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs n >= 3 nodes per axis")

    @property
    def h(self):
        return 2.0 / (self.n - 1)

    @property
    def size(self):
        return self.n * self.n

    def axis(self):
        return np.linspace(-1.0, 1.0, self.n)

    def coords(self):
        """Flat coordinate arrays (x1, x2); x1 varies fastest (columns)."""
        xs = self.axis()
        x1, x2 = np.meshgrid(xs, xs)
        return x1.ravel(), x2.ravel()


@dataclass
class ScalarField:
    """Nodal values on a Grid2D, stored flat in row-major order."""

    grid: Grid2D
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != self.grid.size:
            raise ValueError("field data size does not match grid")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.coords()
        return cls(grid, np.asarray(fn(x1, x2), dtype=float))

    def copy(self):
        return ScalarField(self.grid, self.data.copy())

    def as_matrix(self):
        return self.data.reshape(self.grid.n, self.grid.n)


@dataclass
class SparseOperator:
    """Sparse linear map on nodal vectors; symmetry is verified when claimed."""

    matrix: sp.spmatrix
    symmetric: bool = False

    def __post_init__(self):
        self.matrix = self.matrix.tocsr()
        if self.symmetric:
            d = self.matrix - self.matrix.T
            scale = max(1.0, abs(self.matrix).max())
            if d.nnz and abs(d).max() > 1e-12 * scale:
                raise ValueError("operator claimed symmetric but is not")

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, v):
        return self.matrix @ v


def _require_same_grid(*fields):
    n0 = fields[0].grid.n
    for f in fields[1:]:
        if f.grid.n != n0:
            raise GridMismatch("fields on different grids")


def l2_norm(f):
    """Discrete L2 norm with uniform nodal weight h^2."""
    return f.grid.h * float(np.sqrt(np.dot(f.data, f.data)))


def l2_inner(f, g):
    """Discrete L2 inner product with uniform nodal weight h^2."""
    _require_same_grid(f, g)
    return f.grid.h ** 2 * float(np.dot(f.data, g.data))


def gradient_centered(f):
    """Nodal gradient: centered interior, one-sided second order at edges."""
    h = f.grid.h
    m = f.as_matrix()
    d1 = np.gradient(m, h, axis=1, edge_order=2)
    d2 = np.gradient(m, h, axis=0, edge_order=2)
    return (ScalarField(f.grid, d1.ravel()), ScalarField(f.grid, d2.ravel()))


@functools.lru_cache(maxsize=8)
def _neumann_parts(n):
    # 1-D mirror ghost-point Laplacian, row-scaled to its symmetric form
    h = 2.0 / (n - 1)
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="csr") / h ** 2
    d = np.ones(n)
    d[0] = d[-1] = 0.5
    lap2 = sp.kron(lap, sp.diags(d)) + sp.kron(sp.diags(d), lap)
    weights = np.outer(d, d).ravel()
    return lap2.tocsr(), weights


def trapezoid_weights(grid):
    """Quadrature row weights: 1 interior, 1/2 edge, 1/4 corner."""
    return _neumann_parts(grid.n)[1].copy()


def neumann_laplacian(grid):
    """Row-weighted mirror-closure Laplacian; exactly symmetric, PSD."""
    return _neumann_parts(grid.n)[0]


def assemble_neumann_helmholtz(u):
    """Operator of -lap y + u y with natural boundary, in row-weighted form."""
    if np.min(u.data) <= 0.0:
        raise NonPositiveCoefficient("potential coefficient must be positive")
    lap2, weights = _neumann_parts(u.grid.n)
    mat = lap2 + sp.diags(weights * u.data)
    return SparseOperator(mat, symmetric=True)


def solve_neumann_helmholtz(u, f):
    """Solve -lap y + u y = f with natural boundary conditions."""
    _require_same_grid(u, f)
    op = assemble_neumann_helmholtz(u)
    b = trapezoid_weights(u.grid) * f.data
    return ScalarField(u.grid, sparse_solve(op, b))


@functools.lru_cache(maxsize=8)
def _edge_parts(n):
    # signed and unsigned incidence of the grid graph; horizontal edges first
    idx = np.arange(n * n).reshape(n, n)
    heads = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    tails = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    ne = heads.size
    rows = np.repeat(np.arange(ne), 2)
    cols = np.stack([heads, tails], axis=1).ravel()
    svals = np.tile([1.0, -1.0], ne)
    uvals = np.tile([0.5, 0.5], ne)
    signed = sp.csr_matrix((svals, (rows, cols)), shape=(ne, n * n))
    half = sp.csr_matrix((uvals, (rows, cols)), shape=(ne, n * n))
    return signed, half


@functools.lru_cache(maxsize=8)
def _interior_index(n):
    mask = np.zeros((n, n), dtype=bool)
    mask[1:-1, 1:-1] = True
    flat = mask.ravel()
    return flat, np.flatnonzero(flat)


def interior_mask(grid):
    """Boolean flat mask of interior nodes."""
    return _interior_index(grid.n)[0].copy()


def diffusion_stiffness_full(a):
    """Stiffness of -div(a grad y) over all nodes, no boundary elimination;
    rows at boundary nodes carry the one-sided stencil."""
    if np.min(a.data) <= 0.0:
        raise NonPositiveCoefficient("diffusion coefficient must be positive")
    signed, half = _edge_parts(a.grid.n)
    faces = half @ a.data
    return (signed.T @ sp.diags(faces) @ signed) / a.grid.h ** 2


def assemble_dirichlet_diffusion(a):
    """Operator of -div(a grad y), arithmetic face averages, boundary nodes
    eliminated; returns the interior block, symmetric positive definite."""
    full = diffusion_stiffness_full(a)
    _, iidx = _interior_index(a.grid.n)
    mat = full[iidx][:, iidx]
    return SparseOperator(mat, symmetric=True)


def solve_dirichlet_diffusion(a, f):
    """Solve -div(a grad y) = f with homogeneous Dirichlet conditions."""
    _require_same_grid(a, f)
    op = assemble_dirichlet_diffusion(a)
    flat, iidx = _interior_index(a.grid.n)
    x = sparse_solve(op, f.data[iidx])
    out = np.zeros(a.grid.size)
    out[iidx] = x
    return ScalarField(a.grid, out)


def gradient_pairing(y, w):
    """Nodal approximation of grad y . grad w by half-sums of edge-difference
    products; the exact transpose pairing of the divergence-form operator:
    <A(a) v, z> = <a, gradient_pairing(v, z)> for v, z vanishing on the
    boundary."""
    _require_same_grid(y, w)
    n = y.grid.n
    h = y.grid.h
    signed, half = _edge_parts(n)
    prod = (signed @ y.data) * (signed @ w.data)
    return ScalarField(y.grid, (half.T @ prod) / h ** 2)


def gradient_pairing_matrix(v):
    """Matrix of d -> gradient_pairing(d, v)."""
    n = v.grid.n
    h = v.grid.h
    signed, half = _edge_parts(n)
    return (half.T @ sp.diags(signed @ v.data) @ signed) / h ** 2


@functools.lru_cache(maxsize=8)
def _neighbor_parts(n):
    eye = sp.identity(n, format="csr")
    up = sp.diags(np.ones(n - 1), 1, format="csr")
    dn = sp.diags(np.ones(n - 1), -1, format="csr")
    adjacency = (sp.kron(eye, up) + sp.kron(eye, dn)
                 + sp.kron(up, eye) + sp.kron(dn, eye)).tocsr()
    counts = 1.0 + np.asarray(adjacency.sum(axis=1)).ravel()
    return adjacency, counts


@functools.lru_cache(maxsize=8)
def _smoothing_renormalized(n):
    adjacency, counts = _neighbor_parts(n)
    g = sp.diags(1.0 / counts) @ (sp.identity(n * n) + adjacency)
    g = g.tolil()
    # nudge the center weight so every row sums to one exactly
    for _ in range(3):
        gap = 1.0 - np.asarray(g.tocsr().sum(axis=1)).ravel()
        if not np.any(gap):
            break
        g.setdiag(g.diagonal() + gap)
    return g.tocsr()


@functools.lru_cache(maxsize=8)
def _smoothing_extend(n):
    adjacency, counts = _neighbor_parts(n)
    g = (sp.identity(n * n) + adjacency) / 5.0
    ghosts = 5.0 - counts
    return g.tocsr(), ghosts / 5.0


@dataclass
class Smoothing:
    """Five-point local averaging of a coefficient field.

    mode "renormalized" averages over the in-domain stencil subset with
    weights renormalized to sum one; mode "extend" pads the stencil outside
    the domain with the constant floor_value, making the map affine."""

    grid: Grid2D
    mode: str = "renormalized"
    floor_value: float = 0.0
    matrix: sp.spmatrix = field(init=False)
    offset: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.grid.n
        if self.mode == "renormalized":
            self.matrix = _smoothing_renormalized(n)
            self.offset = np.zeros(n * n)
        elif self.mode == "extend":
            mat, ghost_frac = _smoothing_extend(n)
            self.matrix = mat
            self.offset = ghost_frac * self.floor_value
        else:
            raise ValueError("unknown smoothing mode %r" % self.mode)

    def apply(self, u):
        if u.grid.n != self.grid.n:
            raise GridMismatch("field grid does not match smoothing grid")
        return ScalarField(self.grid, self.matrix @ u.data + self.offset)

    def adjoint(self, v):
        """Adjoint of the linear part (exact matrix transpose)."""
        if v.grid.n != self.grid.n:
            raise GridMismatch("field grid does not match smoothing grid")
        return ScalarField(self.grid, self.matrix.T @ v.data)


def smoothing_apply(u, mode="renormalized", floor_value=0.0):
    """Apply the five-point averaging operator."""
    return Smoothing(u.grid, mode, floor_value).apply(u)


def smoothing_adjoint(v, mode="renormalized", floor_value=0.0):
    """Apply the exact transpose of the averaging operator's linear part."""
    return Smoothing(v.grid, mode, floor_value).adjoint(v)


def sparse_solve(a, b):
    """Sparse direct solve with iterative refinement; deterministic."""
    mat = a.matrix if isinstance(a, SparseOperator) else sp.csr_matrix(a)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("system matrix must be square")
    b = np.asarray(b, dtype=float).ravel()
    if b.size != mat.shape[0]:
        raise ValueError("right-hand side length mismatch")
    try:
        lu = spla.splu(mat.tocsc())
    except RuntimeError as err:
        raise SingularSystem(str(err)) from err
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("factorization produced non-finite solution")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    for _ in range(2):
        r = b - mat @ x
        if np.linalg.norm(r) <= 1e-10 * nb:
            break
        x = x + lu.solve(r)
    res = np.linalg.norm(b - mat @ x) / nb
    if res > 1e-10:
        log.warning("direct solve residual %.3e above 1e-10", res)
    return x
