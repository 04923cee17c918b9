import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from monge_hjb.controls import QUARTER_PI, ControlPair, Mode, OptimizerResult, Region, classify_arrays
from monge_hjb.discretization import (
    GridFunction,
    assemble_row,
    assemble_system,
    second_diffs,
    verify_m_matrix,
    wide_diffs,
)
from monge_hjb.grid import Domain, make_grid

SQUARE = Domain.square(-1.0, 1.0)


def sampled(grid, fn):
    X, Y = grid.mesh()
    return GridFunction(grid, fn(X, Y), fn)


def test_second_diffs_of_x_squared():
    grid = make_grid(SQUARE, 7)
    u = sampled(grid, lambda x, y: x * x)
    for i, j in ((1, 1), (4, 4), (7, 3)):
        s = second_diffs(u, i, j)
        assert (s.dxx, s.dyy, s.dxy1, s.dxy2) == pytest.approx((2.0, 0.0, 0.0, 0.0), abs=1e-12)


def test_second_diffs_of_xy():
    grid = make_grid(SQUARE, 7)
    u = sampled(grid, lambda x, y: x * y)
    s = second_diffs(u, 2, 5)
    assert (s.dxx, s.dyy, s.dxy1, s.dxy2) == pytest.approx((0.0, 0.0, 1.0, 1.0), abs=1e-12)


def test_cross_difference_is_second_order():
    # u = x^2 y^2 around (1, 1): u_xy = 4, error ratio under halving close to 4
    errors = []
    for h in (0.1, 0.05, 0.025):
        domain = Domain(1.0 - 2 * h, 1.0 + 2 * h, 1.0 - 2 * h, 1.0 + 2 * h)
        grid = make_grid(domain, 3)
        s = second_diffs(sampled(grid, lambda x, y: x * x * y * y), 2, 2)
        errors.append(abs(s.dxy1 - 4.0))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.05)


def test_wide_diffs_axis_aligned_on_quadratic():
    # h = 1/16 on [0, 1]: sqrt(h) = 4h, so theta = 0 arms end on grid nodes
    grid = make_grid(Domain.square(0.0, 1.0), 15)
    u = sampled(grid, lambda x, y: x * x + 3 * y * y)
    dzz, dww, geo = wide_diffs(u, 8, 8, 0.0)
    assert dzz == pytest.approx(2.0, abs=1e-10)
    assert dww == pytest.approx(6.0, abs=1e-10)
    assert not any(arm.truncated for arm in geo.arms)
    assert all(arm.length == pytest.approx(0.25) for arm in geo.arms)


def test_wide_diffs_rotated_quadratic_along_axis():
    theta = 0.3
    ez = (math.cos(theta), -math.sin(theta))
    grid = make_grid(Domain.square(0.0, 1.0), 63)
    q = lambda x, y: 1.5 * ((x - 0.5) * ez[0] + (y - 0.5) * ez[1]) ** 2
    dzz, dww, _ = wide_diffs(sampled(grid, q), 32, 32, theta)
    # bilinear interpolation of a quadratic is off by O(h^2); divided by h it is O(h)
    assert dzz == pytest.approx(3.0, abs=0.1)
    assert abs(dww) < 0.1


def test_wide_diffs_truncated_arm_exact_on_quadratic():
    grid = make_grid(Domain.square(0.0, 1.0), 15)
    u = sampled(grid, lambda x, y: x * x)
    dzz, _, geo = wide_diffs(u, 15, 8, 0.0)
    assert geo.arms[0].truncated
    assert geo.arms[0].length == pytest.approx(1 / 16)
    assert geo.arms[0].endpoint == pytest.approx((1.0, 0.5))
    assert dzz == pytest.approx(2.0, abs=1e-10)


def _row(grid, i, j, mode, a, theta):
    region = {Mode.SEVEN_POINT_1: Region.G1, Mode.SEVEN_POINT_2: Region.G2, Mode.WIDE: Region.G3}[mode]
    return assemble_row(grid, i, j, OptimizerResult(ControlPair(a, theta), 0.0, region), lambda x, y: 0 * x)


def test_laplacian_row():
    grid = make_grid(SQUARE, 5)
    row = _row(grid, 3, 3, Mode.SEVEN_POINT_1, 0.5, 0.0)
    h2 = grid.h**2
    assert row.diagonal == pytest.approx(2 / h2)
    entries = dict(row.off_diagonal)
    for i, j in ((2, 3), (4, 3), (3, 2), (3, 4)):
        assert entries[grid.index(i, j)] == pytest.approx(-0.5 / h2)
    assert all(abs(v) < 1e-12 for k, v in entries.items() if k not in {grid.index(i, j) for i, j in ((2, 3), (4, 3), (3, 2), (3, 4))})


def test_corner_row_keeps_three_unknowns():
    grid = make_grid(SQUARE, 5)
    # G1 control with a12 > 0 uses the NE/SW diagonal; at (1, n) both are outside the grid
    row = _row(grid, 1, 5, Mode.SEVEN_POINT_1, 0.3, 0.2)
    nonzero = [k for k, v in row.off_diagonal if abs(v) > 0]
    # the centre plus its east and south neighbours
    assert sorted(nonzero) == sorted([grid.index(2, 5), grid.index(1, 4)])
    assert row.nnz == 3


def test_wide_row_sums_to_zero_inside():
    grid = make_grid(Domain.square(0.0, 1.0), 63)
    a = 0.3
    row = _row(grid, 32, 32, Mode.WIDE, a, 0.37)
    assert row.diagonal == pytest.approx(2 / grid.h)
    assert row.diagonal + sum(v for _, v in row.off_diagonal) == pytest.approx(0.0, abs=1e-8)
    assert all(v <= 0 for _, v in row.off_diagonal)


def test_n2_all_b0_is_scaled_laplacian():
    grid = make_grid(SQUARE, 2)
    sys_ = assemble_system(
        grid, lambda x, y: 0 * x, np.zeros(4), np.full(4, 0.5), np.zeros(4), np.full(4, Mode.SEVEN_POINT_1)
    )
    h2 = grid.h**2
    expected = np.array([[2, -0.5, -0.5, 0], [-0.5, 2, 0, -0.5], [-0.5, 0, 2, -0.5], [0, -0.5, -0.5, 2]]) / h2
    np.testing.assert_allclose(sys_.matrix.toarray(), expected, atol=1e-12)


def test_rhs_carries_boundary_and_source():
    grid = make_grid(SQUARE, 3)
    g = lambda x, y: x * x + y * y
    f = np.full(grid.size, 4.0)
    sys_ = assemble_system(grid, g, f, np.full(9, 0.5), np.zeros(9), np.full(9, Mode.SEVEN_POINT_1))
    X, Y = grid.mesh()
    exact = (X * X + Y * Y).ravel()
    # for u = x^2 + y^2 the a = 1/2 operator gives -2 + 2 sqrt(f / 4) = 0
    np.testing.assert_allclose(sys_.residual(exact), 0.0, atol=1e-12)


def _laplacian(n):
    T = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(n, n))
    return sp.kronsum(T, T).tocsr()


def test_m_matrix_laplacian():
    report = verify_m_matrix(_laplacian(3))
    assert report.ok
    assert report.l_matrix and report.weak_diag_dom and report.connectivity
    assert report.strictly_dominant_rows == 8


def test_m_matrix_detects_positive_off_diagonal():
    A = _laplacian(3).tolil()
    A[0, 4] = 0.1
    assert not verify_m_matrix(A.tocsr()).l_matrix


def test_m_matrix_detects_disconnected_block():
    A = sp.block_diag([_laplacian(2), sp.csr_matrix([[2.0, -2.0], [-2.0, 2.0]])]).tocsr()
    report = verify_m_matrix(A)
    assert report.l_matrix and report.weak_diag_dom
    assert not report.connectivity


modes = st.sampled_from([Mode.SEVEN_POINT_1, Mode.SEVEN_POINT_2, Mode.WIDE])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-QUARTER_PI, QUARTER_PI, exclude_max=True), modes), min_size=16, max_size=16))
def test_any_admissible_controls_give_m_matrix(controls):
    # a narrow mode is only admissible for controls of its own region; others fall back to wide
    grid = make_grid(Domain.square(0.0, 1.0), 4)
    a = np.array([c[0] for c in controls])
    theta = np.array([c[1] for c in controls])
    mode = np.array([c[2] for c in controls], dtype=np.int8)
    region = classify_arrays(a, theta)
    narrow_ok = np.isin(region, [Region.B0, Region.G1, Region.B13]) & (mode == Mode.SEVEN_POINT_1)
    narrow_ok |= np.isin(region, [Region.B0, Region.G2, Region.B23]) & (mode == Mode.SEVEN_POINT_2)
    mode = np.where(narrow_ok | (mode == Mode.WIDE), mode, Mode.WIDE).astype(np.int8)
    sys_ = assemble_system(grid, lambda x, y: x + y, np.ones(16), a, theta, mode)
    assert verify_m_matrix(sys_).ok
