import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swerom.exceptions import InvalidSizeError
from swerom.grid_ops import (
    GridSpec,
    build_circulant_diff,
    build_diff_ops,
    discretize_field,
    paper_initial_condition,
)


def test_circulant_s3_by_hand():
    expected = np.array([[0, 1, -1], [-1, 0, 1], [1, -1, 0]], dtype=float)
    np.testing.assert_array_equal(build_circulant_diff(3).toarray(), expected)


def test_circulant_skew_and_kernel():
    D = build_circulant_diff(4)
    assert abs(D + D.T).max() == 0
    np.testing.assert_array_equal(build_circulant_diff(5) @ np.ones(5), 0.0)


@pytest.mark.parametrize("s", [0, 1, 2])
def test_circulant_too_small(s):
    with pytest.raises(InvalidSizeError):
        build_circulant_diff(s)


def test_circulant_sorted_csr():
    D = build_circulant_diff(7)
    assert D.format == "csr" and D.has_sorted_indices


def test_grid_rejects_small():
    with pytest.raises(InvalidSizeError):
        GridSpec(2, 5)


def test_grid_spacing():
    g = GridSpec(4, 5, 0.0, 2.0, -1.0, 1.5)
    assert g.dx == 0.5 and g.dy == 0.5 and g.N == 20


def test_dx_constant_kernel_3x3():
    ops = build_diff_ops(GridSpec(3, 3))
    np.testing.assert_array_equal(ops.Dx @ np.ones(9), 0.0)
    np.testing.assert_array_equal(ops.Dy @ np.ones(9), 0.0)


def test_dy_stencil_pattern_3x4():
    g = GridSpec(3, 4)
    Dy = build_diff_ops(g).Dy
    assert np.all(np.diff(Dy.indptr) == 2)
    np.testing.assert_allclose(np.sort(np.unique(Dy.data)), [-1 / (2 * g.dy), 1 / (2 * g.dy)])


def test_kronecker_layout_y_fastest():
    # index i*ny + j: a field depending on x only is annihilated by Dy
    g = GridSpec(5, 4)
    ops = build_diff_ops(g)
    X, Y = g.mesh()
    np.testing.assert_allclose(ops.Dy @ np.sin(2 * np.pi * X), 0.0, atol=1e-14)
    np.testing.assert_allclose(ops.Dx @ np.sin(2 * np.pi * Y), 0.0, atol=1e-14)


def _dx_error(n):
    g = GridSpec(n, n)
    ops = build_diff_ops(g)
    X, _ = g.mesh()
    return np.max(np.abs(ops.Dx @ np.sin(2 * np.pi * X) - 2 * np.pi * np.cos(2 * np.pi * X)))


def test_second_order_ratio():
    ratio = _dx_error(64) / _dx_error(128)
    assert 3.5 <= ratio <= 4.5


def test_discretize_zero():
    np.testing.assert_array_equal(discretize_field(GridSpec(3, 4), lambda x, y: 0.0), np.zeros(12))


def test_discretize_nodes_by_hand():
    # nodes (0,0),(0,1/3),(0,2/3),(1/3,0),... right/top boundary omitted
    g = GridSpec(3, 3)
    vals = discretize_field(g, lambda x, y: x + 10 * y)
    expected = [i / 3 + 10 * j / 3 for i in range(3) for j in range(3)]
    np.testing.assert_allclose(vals, expected, rtol=0, atol=1e-15)


def test_paper_ic_peak():
    g = GridSpec(4, 4)
    h = paper_initial_condition(g)[2 * g.N :]
    # node (0.5, 0.5) is i=2, j=2
    assert h[2 * 4 + 2] == 1.5


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(3, 9), ny=st.integers(3, 9), seed=st.integers(0, 2**31))
def test_skew_and_sbp(nx, ny, seed):
    ops = build_diff_ops(GridSpec(nx, ny))
    for D in (ops.Dx, ops.Dy):
        assert abs(D + D.T).max() == 0
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, ops.N))
        assert abs(a @ (D @ b) + (D @ a) @ b) <= 1e-13 * np.linalg.norm(a) * np.linalg.norm(b)
