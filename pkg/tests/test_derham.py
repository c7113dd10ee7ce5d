import numpy as np
import pytest
from scipy.integrate import quad
from scipy.interpolate import BSpline

from vlpic.bsplines import basis_at, wrap_position
from vlpic.derham import (
    axis_average_tensor_2d,
    build_complex_1d,
    build_complex_2d,
    deposit_1star_2d,
    deposit_2form_2d,
    eval_0form,
    eval_0form_derivative,
    eval_1form,
    eval_0form_2d,
    eval_1star_2d,
    eval_2form_2d,
    l2_project_0form,
    l2_project_0form_2d,
    line_averaged_apply,
    line_averaged_apply_2d,
    line_integral_1form,
)
from vlpic.errors import ConfigurationError, UnsupportedOrderError


def reference_basis(j, degree, dx, cells, length):
    """Independent periodic basis evaluation built on scipy's BSpline."""
    t = np.arange(j, j + degree + 2) * dx
    elem = BSpline.basis_element(t, extrapolate=False)

    def f(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        tot = np.zeros_like(x)
        for s in (-1.0, 0.0, 1.0):
            xi = x + s * length
            m = (xi >= t[0]) & (xi < t[-1])
            if m.any():
                tot[m] += elem(xi[m])
        return tot

    return f


def dense_0form_values(cx, x):
    s = cx.space
    idx, vals = basis_at(np.atleast_1d(x), s.degree, s.dx, s.cells, s.length)
    out = np.zeros((idx.shape[0], s.cells))
    np.add.at(out, (np.arange(idx.shape[0])[:, None], idx), vals)
    return out


# ---------------------------------------------------------------------------
# structure of the 1D complex


def test_derivative_matrix_entries():
    cx = build_complex_1d(4, 1, 4.0)
    expected = np.zeros((4, 4))
    for j in range(4):
        expected[j, j] = 1.0
        expected[(j + 1) % 4, j] = -1.0
    assert np.array_equal(cx.G, expected)


def test_derivative_annihilates_constants():
    cx = build_complex_1d(16, 3, 2 * np.pi)
    assert np.max(np.abs(cx.G @ np.ones(16))) == 0.0


def test_mass_row_sums():
    cx = build_complex_1d(8, 3, 2 * np.pi)
    dx = cx.space.dx
    assert np.max(np.abs(cx.M0.sum(axis=1) - dx)) < 1e-13
    assert np.max(np.abs(cx.M1.sum(axis=1) - dx)) < 1e-13
    assert np.max(np.abs(cx.b0 - dx)) < 1e-14


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_mass_against_reference_quadrature(degree):
    cells, length = 7, 1.9
    cx = build_complex_1d(cells, degree, length)
    dx = length / cells
    for mat, deg in ((cx.M0, degree), (cx.M1, degree - 1)):
        fi = reference_basis(0, deg, dx, cells, length)
        for j in range(cells):
            fj = reference_basis(j, deg, dx, cells, length)
            val, _ = quad(
                lambda x: fi(x)[0] * fj(x)[0],
                0.0,
                length,
                points=np.arange(cells + 1) * dx,
                limit=200,
            )
            assert abs(mat[0, j] - val) < 1e-12


def test_mass_matches_oversampled_quadrature():
    from vlpic.derham import _mass_matrix

    cx = build_complex_1d(12, 3, 2 * np.pi)
    m0_fine = _mass_matrix(cx.space, 3, 4 * (3 + 1))
    m1_fine = _mass_matrix(cx.space, 2, 4 * (3 + 1))
    assert np.max(np.abs(cx.M0 - m0_fine)) < 1e-13
    assert np.max(np.abs(cx.M1 - m1_fine)) < 1e-13


def test_spd_check_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        build_complex_1d(0, 3, 1.0)
    with pytest.raises(ConfigurationError):
        build_complex_1d(8, 0, 1.0)
    with pytest.raises(ConfigurationError):
        build_complex_1d(4, 4, 1.0)
    with pytest.raises(ConfigurationError):
        build_complex_1d(8, 3, -1.0)


# ---------------------------------------------------------------------------
# evaluation


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_basis_matches_scipy(degree):
    cells, length = 9, 2 * np.pi
    cx = build_complex_1d(cells, degree, length)
    rng = np.random.default_rng(5)
    x = rng.uniform(0, length, 40)
    for j in (0, 3, cells - 1):
        c = np.zeros(cells)
        c[j] = 1.0
        ref = reference_basis(j, degree, cx.space.dx, cells, length)(x)
        assert np.max(np.abs(eval_0form(cx, c, x) - ref)) < 1e-12


def test_partition_of_unity():
    cx = build_complex_1d(17, 3, 5.0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-10, 10, 100)
    assert np.max(np.abs(eval_0form(cx, np.ones(17), x) - 1.0)) < 1e-13
    assert np.max(np.abs(eval_1form(cx, np.ones(17), x) - 1.0)) < 1e-13


def test_periodicity_of_evaluation():
    cx = build_complex_1d(11, 3, 3.0)
    rng = np.random.default_rng(1)
    c = rng.normal(size=11)
    x = rng.uniform(0, 3.0, 50)
    assert np.max(np.abs(eval_0form(cx, c, x) - eval_0form(cx, c, x + 3.0))) < 1e-12
    assert np.max(np.abs(eval_0form(cx, c, x) - eval_0form(cx, c, x - 3.0))) < 1e-12


def test_derivative_consistent_with_complex():
    cx = build_complex_1d(24, 3, 2 * np.pi)
    rng = np.random.default_rng(2)
    c = rng.normal(size=24)
    x = rng.uniform(0, 2 * np.pi, 64)
    direct = eval_0form_derivative(cx, c, x)
    via_g = eval_1form(cx, cx.G @ c, x)
    assert np.max(np.abs(direct - via_g)) < 1e-12
    # second derivative against a central difference of the first
    h = 1e-6
    fd = (eval_0form_derivative(cx, c, x + h) - eval_0form_derivative(cx, c, x - h)) / (2 * h)
    d2 = eval_0form_derivative(cx, c, x, order=2)
    assert np.max(np.abs(d2 - fd)) < 1e-4
    assert np.max(np.abs(eval_0form_derivative(cx, np.ones(24), x))) < 1e-13


def test_second_derivative_needs_degree_two():
    cx = build_complex_1d(8, 1, 1.0)
    with pytest.raises(UnsupportedOrderError):
        eval_0form_derivative(cx, np.ones(8), 0.3, order=2)


# ---------------------------------------------------------------------------
# projection


def test_projection_reproduces_constants():
    cx = build_complex_1d(16, 3, 2 * np.pi)
    assert np.max(np.abs(l2_project_0form(cx, lambda x: np.zeros_like(x)))) == 0.0
    c = l2_project_0form(cx, lambda x: 5.0 * np.ones_like(x))
    assert np.max(np.abs(c - 5.0)) < 1e-12


def test_projection_accuracy_cosine():
    k = 1.0 / np.sqrt(2.0)
    length = 2 * np.pi / k
    cx = build_complex_1d(128, 3, length)
    c = l2_project_0form(cx, lambda x: np.cos(k * x))
    x = np.linspace(0, length, 1000, endpoint=False)
    err = np.max(np.abs(eval_0form(cx, c, x) - np.cos(k * x)))
    assert err < 1e-8
    small = build_complex_1d(64, 3, 2 * np.pi)
    cs = l2_project_0form(small, lambda x: np.cos(x))
    assert abs(eval_0form(small, cs, 0.0) - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# line integrals


def test_line_integral_degenerate_is_pointwise():
    cx = build_complex_1d(16, 3, 2 * np.pi)
    x0 = 1.2345
    v = line_integral_1form(cx, x0, x0)
    for i in range(16):
        e = np.zeros(16)
        e[i] = 1.0
        assert abs(v[i] - eval_1form(cx, e, x0)) < 1e-14


def test_line_integral_against_adaptive_quadrature():
    cells, degree, length = 8, 3, 2 * np.pi
    cx = build_complex_1d(cells, degree, length)
    dx = cx.space.dx
    x0, x1 = 0.9, 0.9 + 3.4 * dx  # crosses three knots
    v = line_integral_1form(cx, x0, x1)
    knots = np.arange(int(np.floor(x0 / dx)), int(np.ceil(x1 / dx)) + 1) * dx
    for j in range(cells):
        ref_f = reference_basis(j, degree - 1, dx, cells, length)
        val, _ = quad(lambda x: ref_f(x)[0], x0, x1, points=knots, limit=200)
        assert abs(v[j] - val / (x1 - x0)) < 1e-12


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_line_integral_fundamental_theorem(degree):
    cells, length = 13, 4.7
    cx = build_complex_1d(cells, degree, length)
    rng = np.random.default_rng(7)
    x0 = rng.uniform(-length, 2 * length, 200)
    x1 = x0 + rng.uniform(-0.9, 0.9, 200) * length / 3
    _, dep = line_averaged_apply(cx, x0, x1, pweights=(x1 - x0))
    lhs = cx.G.T @ dep
    d0 = dense_0form_values(cx, wrap_position(x1, length))
    d1 = dense_0form_values(cx, wrap_position(x0, length))
    rhs = (d0 - d1).sum(axis=0)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_line_averaged_contraction_matches_dense():
    cx = build_complex_1d(10, 3, 2 * np.pi)
    rng = np.random.default_rng(9)
    c = rng.normal(size=10)
    x0 = rng.uniform(0, 2 * np.pi, 5)
    x1 = x0 + rng.uniform(-1, 1, 5)
    contact, _ = line_averaged_apply(cx, x0, x1, cvec=c)
    for a in range(5):
        v = line_integral_1form(cx, x0[a], x1[a])
        assert abs(contact[a] - v @ c) < 1e-13


# ---------------------------------------------------------------------------
# 2D complex


def test_2d_curl_of_gradient_vanishes():
    cx = build_complex_2d((4, 4), (2, 2), (1.0, 1.0))
    assert np.max(np.abs(cx.C @ cx.G)) < 1e-14
    dx1, dx2 = cx.ax1.dx, cx.ax2.dx
    assert np.max(np.abs(cx.M2.sum(axis=1) - dx1 * dx2)) < 1e-13
    assert np.max(np.abs(cx.G @ np.ones(cx.n0))) == 0.0
    assert np.max(np.abs(cx.Gstar @ np.ones(cx.n0))) == 0.0
    assert np.max(np.abs(cx.b0 - dx1 * dx2)) < 1e-14


def test_2d_mass_against_direct_assembly():
    cx = build_complex_2d((4, 5), (2, 3), (1.0, 2.0))
    from numpy.polynomial.legendre import leggauss

    n1, n2 = 6, 7
    g1, w1 = leggauss(n1)
    g2, w2 = leggauss(n2)
    m0 = np.zeros((cx.n0, cx.n0))
    for c1 in range(4):
        for c2 in range(5):
            xg = (c1 + 0.5 * (g1 + 1.0)) * cx.ax1.dx
            yg = (c2 + 0.5 * (g2 + 1.0)) * cx.ax2.dx
            xx, yy = np.meshgrid(xg, yg, indexing="ij")
            ww = np.outer(0.5 * w1 * cx.ax1.dx, 0.5 * w2 * cx.ax2.dx)
            vals = np.zeros((cx.n0, n1 * n2))
            for j in range(cx.n0):
                e = np.zeros(cx.n0)
                e[j] = 1.0
                vals[j] = eval_0form_2d(cx, e, xx.ravel(), yy.ravel())
            m0 += (vals * ww.ravel()[None, :]) @ vals.T
    assert np.max(np.abs(m0 - cx.M0)) < 1e-12


def test_2d_separable_evaluation():
    cx = build_complex_2d((6, 8), (3, 2), (2 * np.pi, 4.0))
    a1 = build_complex_1d(6, 3, 2 * np.pi)
    a2 = build_complex_1d(8, 2, 4.0)
    rng = np.random.default_rng(3)
    c1 = rng.normal(size=6)
    c2 = rng.normal(size=8)
    x = rng.uniform(0, 2 * np.pi, 30)
    y = rng.uniform(0, 4.0, 30)
    v2d = eval_0form_2d(cx, np.outer(c1, c2).ravel(), x, y)
    v1d = eval_0form(a1, c1, x) * eval_0form(a2, c2, y)
    assert np.max(np.abs(v2d - v1d)) < 1e-12
    w2d = eval_2form_2d(cx, np.outer(c1, c2).ravel(), x, y)
    w1d = eval_1form(a1, c1, x) * eval_1form(a2, c2, y)
    assert np.max(np.abs(w2d - w1d)) < 1e-12


def test_2d_projection_constant():
    cx = build_complex_2d((5, 6), (2, 3), (1.0, 1.5))
    c = l2_project_0form_2d(cx, lambda x, y: 3.0 + 0.0 * x * y)
    assert np.max(np.abs(c - 3.0)) < 1e-12


def test_2d_line_integral_fundamental_theorem():
    cx = build_complex_2d((6, 7), (3, 2), (3.0, 2.0))
    rng = np.random.default_rng(11)
    n = 100
    x0 = rng.uniform(-3, 6, n)
    y0 = rng.uniform(-2, 4, n)
    x1 = x0 + rng.uniform(-1.2, 1.2, n)
    y1 = y0 + rng.uniform(-0.8, 0.8, n)
    y1[:5] = y0[:5]  # axis-degenerate segments stay supported
    _, _, dep = line_averaged_apply_2d(cx, x0, y0, x1, y1, pw1=(x1 - x0), pw2=(y1 - y0))
    lhs = cx.G.T @ dep
    rhs = np.zeros(cx.n0)
    for j in range(cx.n0):
        e = np.zeros(cx.n0)
        e[j] = 1.0
        rhs[j] = np.sum(eval_0form_2d(cx, e, x1, y1) - eval_0form_2d(cx, e, x0, y0))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_2d_axis_average_equals_partial_quotient():
    cx = build_complex_2d((6, 7), (3, 3), (3.0, 2.0))
    s1, s2 = cx.ax1, cx.ax2
    rng = np.random.default_rng(21)
    c = rng.normal(size=cx.n0)
    n = 60
    a = rng.uniform(-3, 6, n)
    b = a + np.concatenate([rng.uniform(-1.5, 1.5, n - 20), rng.uniform(-1e-7, 1e-7, 20)])
    fixed = rng.uniform(-2, 4, n)

    d1 = (cx.grid(c) - np.roll(cx.grid(c), 1, axis=0)) / s1.dx
    (avg,) = axis_average_tensor_2d(cx, 0, a, b, fixed, [(d1, s1.degree - 1, s2.degree)])
    lhs = eval_0form_2d(cx, c, b, fixed) - eval_0form_2d(cx, c, a, fixed)
    assert np.max(np.abs(lhs - avg * (b - a))) < 1e-12

    d2 = (cx.grid(c) - np.roll(cx.grid(c), 1, axis=1)) / s2.dx
    (avg2,) = axis_average_tensor_2d(cx, 1, a[:30] * 0.5, b[:30] * 0.5, fixed[:30],
                                     [(d2, s1.degree, s2.degree - 1)])
    lhs2 = (eval_0form_2d(cx, c, fixed[:30], b[:30] * 0.5)
            - eval_0form_2d(cx, c, fixed[:30], a[:30] * 0.5))
    assert np.max(np.abs(lhs2 - avg2 * (b[:30] - a[:30]) * 0.5)) < 1e-12


def test_2d_axis_average_degenerate_is_pointwise():
    cx = build_complex_2d((6, 6), (3, 3), (3.0, 3.0))
    s1, s2 = cx.ax1, cx.ax2
    rng = np.random.default_rng(22)
    c = rng.normal(size=cx.n0)
    d1 = (cx.grid(c) - np.roll(cx.grid(c), 1, axis=0)) / s1.dx
    x = np.array([1.234])
    y = np.array([0.77])
    (avg,) = axis_average_tensor_2d(cx, 0, x, x, y, [(d1, s1.degree - 1, s2.degree)])
    h = 1e-6
    fd = (eval_0form_2d(cx, c, x + h, y) - eval_0form_2d(cx, c, x - h, y)) / (2 * h)
    assert abs(avg[0] - fd[0]) < 1e-7


def test_2d_axis_average_rejects_bad_degrees():
    cx = build_complex_2d((6, 6), (2, 2), (3.0, 3.0))
    g = np.zeros((6, 6))
    with pytest.raises(ConfigurationError):
        axis_average_tensor_2d(cx, 0, np.array([0.1]), np.array([0.2]),
                               np.array([0.3]), [(g, 3, 0)])


def test_2d_deposit_1star_is_adjoint_of_eval():
    cx = build_complex_2d((5, 7), (3, 2), (2.0, 3.0))
    rng = np.random.default_rng(23)
    u = rng.normal(size=cx.n1)
    n = 40
    x = rng.uniform(0, 2.0, n)
    y = rng.uniform(0, 3.0, n)
    w1 = rng.normal(size=n)
    w2 = rng.normal(size=n)
    v1, v2 = eval_1star_2d(cx, u, x, y)
    dep = deposit_1star_2d(cx, x, y, w1, w2)
    assert abs(u @ dep - np.sum(v1 * w1 + v2 * w2)) < 1e-12


def test_2d_deposit_2form_is_adjoint_of_eval():
    cx = build_complex_2d((5, 7), (3, 2), (2.0, 3.0))
    rng = np.random.default_rng(24)
    u = rng.normal(size=cx.n2)
    n = 40
    x = rng.uniform(0, 2.0, n)
    y = rng.uniform(0, 3.0, n)
    w = rng.normal(size=n)
    vals = eval_2form_2d(cx, u, x, y)
    dep = deposit_2form_2d(cx, x, y, w)
    assert abs(u @ dep - np.sum(vals * w)) < 1e-12
