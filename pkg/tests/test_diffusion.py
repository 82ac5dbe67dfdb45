"""Tests for the diffusion-coefficient reduced system."""

import numpy as np
import pytest
from fd_oracles import (
    diffusion_direction,
    jacobian_fd_error,
    random_diffusion_iterate,
)

import multibang.diffusion as D
from multibang.grid import (
    Grid2D,
    GridMismatch,
    ScalarField,
    diffusion_stiffness_full,
    interior_mask,
    solve_dirichlet_diffusion,
    sparse_solve,
)
from multibang.diffusion import (
    DiffusionProblem,
    newton_system,
    recover_control,
    residual,
    residual_norm,
    trilinear_A,
)
from multibang.penalty import ConfigError, MultibangConfig
from multibang.potential import NewtonIterate


def make_problem(n=9, values=(1.0, 2.0), alpha=1.0, seed=0):
    grid = Grid2D(n)
    rng = np.random.default_rng(seed)
    f = ScalarField(grid, rng.uniform(0.5, 1.5, grid.size))
    z = ScalarField(grid, rng.uniform(-1.0, 1.0, grid.size))
    return DiffusionProblem(grid, f, z, MultibangConfig(values, alpha))


def zero_iterate(prob, gamma):
    return NewtonIterate(ScalarField.zeros(prob.grid),
                         ScalarField.zeros(prob.grid), gamma)


def test_problem_requires_positive_floor():
    g = Grid2D(9)
    zero = ScalarField.zeros(g)
    with pytest.raises(ConfigError):
        DiffusionProblem(g, zero, zero, MultibangConfig((-1.0, 2.0), 1.0))


def test_residual_at_zero_iterate():
    prob = make_problem()
    r1, r2 = residual(prob, zero_iterate(prob, 0.5))
    mask = interior_mask(prob.grid)
    assert np.array_equal(r1.data[mask], -prob.z.data[mask])
    assert np.array_equal(r2.data[mask], -prob.f.data[mask])
    assert np.all(r1.data[~mask] == 0.0)
    assert np.all(r2.data[~mask] == 0.0)
    u, gu, p = recover_control(prob, zero_iterate(prob, 0.5))
    assert np.all(u.data == 1.0)
    assert np.all(gu.data == 1.0)
    assert np.all(p.data == 0.0)


def test_residual_zero_at_constructed_fixed_point():
    # with a tiny target, the multiplier stays in the first singleton
    # region, so u = u_1 solves the prox composition and the state and
    # adjoint solves give a zero residual
    prob = make_problem()
    scale = 1e-8
    z_small = ScalarField(prob.grid, scale * prob.z.data)
    f_small = ScalarField(prob.grid, scale * prob.f.data)
    prob2 = DiffusionProblem(prob.grid, f_small, z_small, prob.cfg)
    a = ScalarField(prob.grid, np.ones(prob.grid.size))
    y = solve_dirichlet_diffusion(a, f_small)
    w = solve_dirichlet_diffusion(
        a, ScalarField(prob.grid, z_small.data - y.data))
    it = NewtonIterate(y, w, 0.5)
    r1, r2 = residual(prob2, it)
    assert residual_norm(r1, r2) < 1e-14


def test_trilinear_zero_when_active_everywhere():
    prob = make_problem()
    it = zero_iterate(prob, 0.5)
    v = ScalarField(prob.grid, np.arange(prob.grid.size, dtype=float))
    op = trilinear_A(prob, it, v, v)
    assert op.matrix.nnz == 0 or abs(op.matrix).max() == 0.0


def test_trilinear_zero_for_constant_first_argument():
    prob = make_problem(n=11)
    rng = np.random.default_rng(2)
    it = random_diffusion_iterate(prob, 0.5, rng, amplitude=0.2)
    const = ScalarField(prob.grid, np.full(prob.grid.size, 3.7))
    other = ScalarField(prob.grid, rng.standard_normal(prob.grid.size))
    op = trilinear_A(prob, it, const, other)
    assert abs(op.matrix).max() == 0.0


def test_trilinear_adjoint_pairing_identity():
    prob = make_problem(n=11)
    rng = np.random.default_rng(3)
    it = random_diffusion_iterate(prob, 0.5, rng, amplitude=0.2)
    mask = interior_mask(prob.grid)
    dy = np.where(mask, rng.standard_normal(prob.grid.size), 0.0)
    dw = np.where(mask, rng.standard_normal(prob.grid.size), 0.0)
    lhs = np.dot(trilinear_A(prob, it, it.y, it.w).matrix @ dy, dw)
    rhs = np.dot(trilinear_A(prob, it, it.w, it.y).matrix @ dw, dy)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert lhs != 0.0


def test_newton_system_zero_adjoint_blocks():
    prob = make_problem()
    rng = np.random.default_rng(4)
    y = ScalarField(prob.grid, rng.standard_normal(prob.grid.size))
    it = NewtonIterate(y, ScalarField.zeros(prob.grid), 0.5)
    mat = newton_system(prob, it).matrix.toarray()
    n2 = prob.grid.size
    mask = interior_mask(prob.grid).astype(float)
    assert np.array_equal(mat[:n2, :n2], np.diag(mask))
    assert np.array_equal(mat[n2:, n2:], np.zeros((n2, n2)))
    ones = ScalarField(prob.grid, np.ones(prob.grid.size))
    z = np.diag(mask)
    stiff = z @ diffusion_stiffness_full(ones).toarray() @ z + np.diag(1 - mask)
    assert np.max(np.abs(mat[:n2, n2:] - stiff)) < 1e-13
    assert np.max(np.abs(mat[n2:, :n2] - stiff)) < 1e-13


def test_newton_system_symmetric():
    prob = make_problem(n=11)
    rng = np.random.default_rng(5)
    it = random_diffusion_iterate(prob, 0.5, rng, amplitude=0.2)
    mat = newton_system(prob, it).matrix
    scale = abs(mat).max()
    assert abs(mat - mat.T).max() <= 1e-12 * scale


@pytest.mark.parametrize("values,gamma", [((1.0, 2.0), 0.5),
                                          ((1.5, 1.75, 2.0, 2.25, 2.5), 0.25)])
def test_jacobian_matches_finite_differences(values, gamma):
    alpha = 1.0
    prob = make_problem(n=11, values=values, alpha=alpha)
    rng = np.random.default_rng(6)
    for _ in range(3):
        it = random_diffusion_iterate(prob, gamma, rng, amplitude=0.2)
        v = diffusion_direction(prob, it, rng, eps=1e-6)
        assert jacobian_fd_error(D, prob, it, v, eps=1e-6) <= 1e-5


def test_degenerate_system_reproduces_decoupled_solves():
    # with the multiplier in a singleton region everywhere, one Newton
    # step from any iterate lands on the exact state and adjoint solves
    prob = make_problem(n=11)
    rng = np.random.default_rng(7)
    mask = interior_mask(prob.grid)
    amp = 1e-4
    y = ScalarField(prob.grid,
                    np.where(mask, rng.uniform(-1, 1, prob.grid.size), 0.0) * amp)
    w = ScalarField(prob.grid,
                    np.where(mask, rng.uniform(-1, 1, prob.grid.size), 0.0) * amp)
    it = NewtonIterate(y, w, 0.5)
    r1, r2 = residual(prob, it)
    mat = newton_system(prob, it).matrix
    delta = sparse_solve(mat, -np.concatenate([r1.data, r2.data]))
    n2 = prob.grid.size
    y_new = y.data + delta[:n2]
    w_new = w.data + delta[n2:]
    ones = ScalarField(prob.grid, np.ones(prob.grid.size))
    y_direct = solve_dirichlet_diffusion(ones, prob.f)
    w_direct = solve_dirichlet_diffusion(
        ones, ScalarField(prob.grid, prob.z.data - y_direct.data))
    assert np.max(np.abs(y_new - y_direct.data)) < 1e-10
    assert np.max(np.abs(w_new - w_direct.data)) < 1e-10


def test_recovered_coefficient_in_bounds():
    prob = make_problem(n=11, values=(1.0, 1.5, 2.0, 2.5))
    rng = np.random.default_rng(8)
    it = random_diffusion_iterate(prob, 0.3, rng, amplitude=0.25)
    u, gu, p = recover_control(prob, it)
    assert np.all((u.data >= 1.0) & (u.data <= 2.5))
    assert np.all((gu.data >= 1.0) & (gu.data <= 2.5))


def test_grid_mismatch_rejected():
    prob = make_problem()
    other = Grid2D(11)
    it = NewtonIterate(ScalarField.zeros(other), ScalarField.zeros(other), 0.5)
    with pytest.raises(GridMismatch):
        residual(prob, it)
