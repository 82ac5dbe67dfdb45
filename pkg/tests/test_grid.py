"""Tests for grid fields, discrete operators, and serialization."""

import numpy as np
import pytest
import scipy.sparse as sp

from multibang.fieldio import field_from_csv, field_to_csv, field_to_pgm
from multibang.grid import (
    Grid2D,
    GridMismatch,
    NonPositiveCoefficient,
    ScalarField,
    SingularSystem,
    Smoothing,
    assemble_dirichlet_diffusion,
    assemble_neumann_helmholtz,
    gradient_centered,
    gradient_pairing,
    gradient_pairing_matrix,
    interior_mask,
    l2_inner,
    l2_norm,
    neumann_laplacian,
    smoothing_adjoint,
    smoothing_apply,
    solve_dirichlet_diffusion,
    solve_neumann_helmholtz,
    sparse_solve,
    trapezoid_weights,
)


# ----------------------------------------------------------------- basics


def test_grid_geometry():
    g = Grid2D(5)
    assert g.h == pytest.approx(0.5)
    assert g.size == 25
    x1, x2 = g.coords()
    assert x1.data[0] == -1.0 and x1.data[4] == 1.0
    assert x2.data[0] == -1.0 and x2.data[20] == 1.0
    # x1 varies along a row, x2 from row to row
    assert x1.data[1] == -0.5
    assert x2.data[5] == -0.5


def test_norms_on_constant_field():
    g = Grid2D(33)
    one = ScalarField(g, np.ones(g.size))
    # plain node-count norm: h * sqrt(n^2)
    assert l2_norm(one) == pytest.approx(g.h * 33.0)
    assert l2_inner(one, one) == pytest.approx(g.h ** 2 * 33.0 ** 2)


def test_inner_rejects_mismatched_grids():
    a = ScalarField.zeros(Grid2D(5))
    b = ScalarField.zeros(Grid2D(7))
    with pytest.raises(GridMismatch):
        l2_inner(a, b)


def test_gradient_exact_on_affine_fields():
    g = Grid2D(17)
    f = ScalarField.from_function(g, lambda x1, x2: 2.0 * x1 - 3.0 * x2 + 1.0)
    d1, d2 = gradient_centered(f)
    assert np.max(np.abs(d1.data - 2.0)) < 1e-12
    assert np.max(np.abs(d2.data + 3.0)) < 1e-12


def test_gradient_second_order():
    errs = []
    for n in (17, 33, 65):
        g = Grid2D(n)
        f = ScalarField.from_function(g, lambda x1, x2: np.sin(np.pi * x1) * np.cos(np.pi * x2))
        d1, _ = gradient_centered(f)
        exact = ScalarField.from_function(
            g, lambda x1, x2: np.pi * np.cos(np.pi * x1) * np.cos(np.pi * x2))
        errs.append(np.max(np.abs(d1.data - exact.data)))
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


# ---------------------------------------------------- natural-boundary op


def test_neumann_constant_state_exact():
    g = Grid2D(21)
    u = ScalarField(g, np.ones(g.size))
    f = ScalarField(g, np.ones(g.size))
    y = solve_neumann_helmholtz(u, f)
    assert np.max(np.abs(y.data - 1.0)) < 1e-12


def test_neumann_operator_symmetric_and_positive():
    g = Grid2D(15)
    rng = np.random.default_rng(0)
    u = ScalarField(g, rng.uniform(0.5, 2.0, size=g.size))
    op = assemble_neumann_helmholtz(u)
    m = op.matrix
    assert abs(m - m.T).max() == 0.0
    for _ in range(5):
        v = rng.standard_normal(g.size)
        assert v @ (m @ v) > 0.0


def test_neumann_rejects_nonpositive_potential():
    g = Grid2D(9)
    u = ScalarField(g, np.zeros(g.size))
    with pytest.raises(NonPositiveCoefficient):
        assemble_neumann_helmholtz(u)


def test_neumann_manufactured_convergence():
    # y = cos(pi x1) cos(pi x2) has zero normal derivative on the square
    errs = []
    for n in (17, 33, 65):
        g = Grid2D(n)
        exact = ScalarField.from_function(
            g, lambda x1, x2: np.cos(np.pi * x1) * np.cos(np.pi * x2))
        u = ScalarField(g, np.ones(g.size))
        f = ScalarField(g, (2.0 * np.pi ** 2 + 1.0) * exact.data)
        y = solve_neumann_helmholtz(u, f)
        errs.append(l2_norm(ScalarField(g, y.data - exact.data)))
    assert 3.6 < errs[0] / errs[1] < 4.4
    assert 3.6 < errs[1] / errs[2] < 4.4


def test_trapezoid_weights_sum_to_domain_area():
    g = Grid2D(33)
    w = trapezoid_weights(g)
    assert g.h ** 2 * np.sum(w) == pytest.approx(4.0, rel=1e-12)


def test_neumann_laplacian_annihilates_constants():
    g = Grid2D(11)
    lap = neumann_laplacian(g)
    assert np.max(np.abs(lap @ np.ones(g.size))) < 1e-12


# --------------------------------------------------------- diffusion ops


def test_dirichlet_biquadratic_exact():
    # (1-x1^2)(1-x2^2) is reproduced exactly by the five-point scheme
    for n in (9, 17, 33):
        g = Grid2D(n)
        exact = ScalarField.from_function(g, lambda x1, x2: (1 - x1 ** 2) * (1 - x2 ** 2))
        a = ScalarField(g, np.ones(g.size))
        f = ScalarField.from_function(g, lambda x1, x2: 2.0 * (2.0 - x1 ** 2 - x2 ** 2))
        y = solve_dirichlet_diffusion(a, f)
        assert np.max(np.abs(y.data - exact.data)) < 1e-10


def test_dirichlet_manufactured_convergence():
    errs = []
    for n in (17, 33, 65):
        g = Grid2D(n)
        exact = ScalarField.from_function(
            g, lambda x1, x2: np.sin(np.pi * x1) * np.sin(np.pi * x2))
        a = ScalarField(g, np.ones(g.size))
        f = ScalarField(g, 2.0 * np.pi ** 2 * exact.data)
        y = solve_dirichlet_diffusion(a, f)
        errs.append(l2_norm(ScalarField(g, y.data - exact.data)))
    assert 3.6 < errs[0] / errs[1] < 4.4
    assert 3.6 < errs[1] / errs[2] < 4.4


def test_dirichlet_variable_coefficient_convergence():
    # a = 2 + x1 x2, y = sin(pi x1) sin(pi x2):
    # f = -div(a grad y) = 2 pi^2 a y - a_x1 y_x1 - a_x2 y_x2
    def ex(x1, x2):
        return np.sin(np.pi * x1) * np.sin(np.pi * x2)

    def rhs(x1, x2):
        a = 2.0 + x1 * x2
        yx1 = np.pi * np.cos(np.pi * x1) * np.sin(np.pi * x2)
        yx2 = np.pi * np.sin(np.pi * x1) * np.cos(np.pi * x2)
        return 2.0 * np.pi ** 2 * a * ex(x1, x2) - x2 * yx1 - x1 * yx2

    errs = []
    for n in (17, 33, 65):
        g = Grid2D(n)
        a = ScalarField.from_function(g, lambda x1, x2: 2.0 + x1 * x2)
        y = solve_dirichlet_diffusion(a, ScalarField.from_function(g, rhs))
        exact = ScalarField.from_function(g, ex)
        errs.append(l2_norm(ScalarField(g, y.data - exact.data)))
    assert 3.4 < errs[0] / errs[1] < 4.6
    assert 3.4 < errs[1] / errs[2] < 4.6


def test_dirichlet_operator_linear_in_coefficient():
    g = Grid2D(13)
    rng = np.random.default_rng(2)
    a = ScalarField(g, rng.uniform(1.0, 3.0, size=g.size))
    m1 = assemble_dirichlet_diffusion(a).matrix
    m2 = assemble_dirichlet_diffusion(ScalarField(g, 2.0 * a.data)).matrix
    assert abs(m2 - 2.0 * m1).max() == 0.0
    assert abs(m1 - m1.T).max() == 0.0
    v = rng.standard_normal(m1.shape[0])
    assert v @ (m1 @ v) > 0.0


def test_gradient_pairing_transposes_the_diffusion_form():
    # h^2 <pair(y, w), a> equals the energy <A(a) y, w> on interior data
    g = Grid2D(11)
    rng = np.random.default_rng(4)
    a = ScalarField(g, rng.uniform(0.5, 2.0, size=g.size))
    mask = interior_mask(g)
    y = ScalarField.zeros(g)
    w = ScalarField.zeros(g)
    y.data[mask] = rng.standard_normal(int(np.sum(mask)))
    w.data[mask] = rng.standard_normal(int(np.sum(mask)))
    lhs = (assemble_dirichlet_diffusion(a).matrix @ y.data[mask]) @ w.data[mask]
    rhs = a.data @ gradient_pairing(y, w).data
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_gradient_pairing_matrix_consistent_with_pairing():
    g = Grid2D(9)
    rng = np.random.default_rng(6)
    y = ScalarField(g, rng.standard_normal(g.size))
    w = ScalarField(g, rng.standard_normal(g.size))
    m = gradient_pairing_matrix(y)
    assert np.max(np.abs(m @ w.data - gradient_pairing(y, w).data)) < 1e-13


def test_gradient_pairing_constant_argument_vanishes():
    g = Grid2D(9)
    rng = np.random.default_rng(8)
    c = ScalarField(g, np.full(g.size, 3.7))
    w = ScalarField(g, rng.standard_normal(g.size))
    assert np.max(np.abs(gradient_pairing(c, w).data)) == 0.0


# -------------------------------------------------------------- smoothing


def test_smoothing_preserves_constants_exactly():
    g = Grid2D(12)
    sm = Smoothing(g)
    u = ScalarField(g, np.full(g.size, 2.5))
    out = sm.apply(u)
    assert np.max(np.abs(out.data - 2.5)) == 0.0


def test_smoothing_rows_sum_exactly_to_one():
    for n in (5, 8, 13):
        sm = Smoothing(Grid2D(n))
        sums = np.asarray(sm.matrix.sum(axis=1)).ravel()
        assert np.all(sums == 1.0)


def test_smoothing_spreads_a_spike():
    g = Grid2D(7)
    sm = Smoothing(g)
    u = ScalarField.zeros(g)
    center = 3 * 7 + 3
    u.data[center] = 5.0
    out = sm.apply(u)
    assert out.data[center] == pytest.approx(1.0)
    assert out.data[center - 1] == pytest.approx(1.0)
    assert out.data[center + 7] == pytest.approx(1.0)
    assert out.data[center - 8] == 0.0


def test_smoothing_adjoint_identity():
    g = Grid2D(10)
    sm = Smoothing(g)
    rng = np.random.default_rng(10)
    u = ScalarField(g, rng.standard_normal(g.size))
    v = ScalarField(g, rng.standard_normal(g.size))
    lhs = np.dot(sm.apply(u).data, v.data)
    rhs = np.dot(u.data, sm.adjoint(v).data)
    assert lhs == pytest.approx(rhs, rel=1e-13)
    lhs2 = l2_inner(smoothing_apply(u), v)
    rhs2 = l2_inner(u, smoothing_adjoint(v))
    assert lhs2 == pytest.approx(rhs2, rel=1e-13)


def test_smoothing_extend_mode_matches_hand_loop():
    g = Grid2D(6)
    sm = Smoothing(g, mode="extend", floor_value=1.5)
    rng = np.random.default_rng(12)
    u = ScalarField(g, rng.uniform(1.0, 3.0, size=g.size))
    mat = u.as_matrix()
    want = np.empty_like(mat)
    n = g.n
    for i in range(n):
        for j in range(n):
            acc = mat[i, j]
            cnt = 1
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < n and 0 <= jj < n:
                    acc += mat[ii, jj]
                else:
                    acc += 1.5
                cnt += 1
            want[i, j] = acc / 5.0
    got = sm.apply(u).as_matrix()
    assert np.max(np.abs(got - want)) < 1e-14


def test_smoothing_extend_adjoint_uses_linear_part_only():
    g = Grid2D(6)
    sm = Smoothing(g, mode="extend", floor_value=1.5)
    rng = np.random.default_rng(14)
    u = ScalarField(g, rng.standard_normal(g.size))
    v = ScalarField(g, rng.standard_normal(g.size))
    lin = sm.matrix @ u.data
    assert np.dot(lin, v.data) == pytest.approx(np.dot(u.data, sm.adjoint(v).data), rel=1e-12)


# ------------------------------------------------------------ direct solve


def test_sparse_solve_identity():
    m = sp.eye(10, format="csr")
    b = np.arange(10.0)
    assert np.max(np.abs(sparse_solve(m, b) - b)) == 0.0


def test_sparse_solve_rejects_singular():
    m = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SingularSystem):
        sparse_solve(m, np.array([1.0, 1.0]))


def test_sparse_solve_deterministic():
    rng = np.random.default_rng(16)
    m = sp.random(60, 60, density=0.2, random_state=1) + sp.eye(60) * 10.0
    b = rng.standard_normal(60)
    x1 = sparse_solve(m.tocsr(), b)
    x2 = sparse_solve(m.tocsr(), b)
    assert np.array_equal(x1, x2)


# ---------------------------------------------------------------- fieldio


def test_csv_round_trip_bitwise(tmp_path):
    g = Grid2D(9)
    rng = np.random.default_rng(18)
    f = ScalarField(g, rng.standard_normal(g.size))
    path = tmp_path / "field.csv"
    field_to_csv(f, path)
    back = field_from_csv(path)
    assert back.grid.n == 9
    assert np.array_equal(back.data, f.data)


def test_csv_output_deterministic(tmp_path):
    g = Grid2D(7)
    f = ScalarField.from_function(g, lambda x1, x2: x1 * x2)
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    field_to_csv(f, p1)
    field_to_csv(f, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_pgm_writes_valid_header_and_is_deterministic(tmp_path):
    g = Grid2D(7)
    f = ScalarField.from_function(g, lambda x1, x2: x1 + 2.0 * x2)
    p1 = tmp_path / "a.pgm"
    p2 = tmp_path / "b.pgm"
    field_to_pgm(f, p1)
    field_to_pgm(f, p2)
    raw = p1.read_bytes()
    assert raw.startswith(b"P5")
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "a.pgm.txt").exists()
