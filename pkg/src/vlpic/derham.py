"""Discrete de Rham complexes of periodic B-splines.

The 1D complex pairs a degree-k space V0 (0-forms) with the degree-(k-1)
space V1 (1-forms) on the same uniform periodic knots.  Both have M = cells
degrees of freedom and the derivative acts as the M x M circulant matrix G
with +1/dx on the diagonal and -1/dx on the cyclic subdiagonal, so that
differentiation of a 0-form is exactly the coefficient map c -> G c.

The 2D complex is the tensor-product version

    V0 --grad--> V1 --curl--> V2

on degrees (k1, k2), together with the rotated-gradient space V1* used by
scalar wave fields.  Curl-of-gradient vanishes identically at the matrix
level, which downstream solvers rely on to keep the discrete Gauss law
invariant.

Mass matrices are assembled with per-cell Gauss-Legendre quadrature that is
exact for the spline products, and the line-integral helpers split particle
trajectories at knot crossings so that the fundamental theorem of calculus
holds to rounding for the averaged 1-form basis along a straight segment.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import cho_factor, cho_solve

from .bsplines import basis_at, basis_values, deposit, diff_coeffs, eval_spline, wrap_position
from .errors import ConfigurationError, UnsupportedOrderError

__all__ = [
    "SplineSpace1D",
    "DeRhamComplex1D",
    "DeRhamComplex2D",
    "build_complex_1d",
    "build_complex_2d",
    "eval_0form",
    "eval_1form",
    "eval_0form_derivative",
    "l2_project_0form",
    "l2_project_0form_2d",
    "line_integral_1form",
    "line_average_splines",
    "deposit_0form",
    "deposit_0form_2d",
    "deposit_1star_2d",
    "deposit_2form_2d",
    "axis_average_tensor_2d",
]

DEGENERACY_EPS = 1e-10


@dataclass(frozen=True)
class SplineSpace1D:
    """Uniform periodic spline space of one degree on one axis."""

    degree: int
    cells: int
    length: float

    @property
    def dx(self):
        return self.length / self.cells

    @property
    def n_dofs(self):
        return self.cells


def _check_space_args(cells, degree, length):
    if not isinstance(cells, (int, np.integer)) or cells <= 0:
        raise ConfigurationError(f"cells must be a positive integer, got {cells!r}")
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise ConfigurationError(f"degree must be an integer >= 1, got {degree!r}")
    if degree >= cells:
        raise ConfigurationError(
            f"degree {degree} needs more than {cells} cells for a periodic basis"
        )
    if not (length > 0.0) or not np.isfinite(length):
        raise ConfigurationError(f"length must be positive and finite, got {length!r}")


def _derivative_matrix(cells, dx):
    g = np.zeros((cells, cells))
    idx = np.arange(cells)
    g[idx, idx] = 1.0 / dx
    g[(idx + 1) % cells, idx] = -1.0 / dx
    return g


def _mass_matrix(space, degree, n_quad):
    """Mass matrix of the degree-`degree` family on `space`'s knots."""
    m = space.cells
    dx = space.dx
    nodes, wts = leggauss(n_quad)
    u = 0.5 * (nodes + 1.0)
    w = 0.5 * wts * dx
    b = basis_values(u, degree)  # identical in every cell
    cidx = (np.arange(m)[:, None] + np.arange(-degree, 1)[None, :]) % m
    out = np.zeros((m, m))
    for q in range(n_quad):
        block = w[q] * np.outer(b[q], b[q])
        np.add.at(out, (cidx[:, :, None], cidx[:, None, :]), block[None, :, :])
    return out


def _background_vector(space, degree, n_quad):
    """Integrals of each basis function over one period."""
    m = space.cells
    nodes, wts = leggauss(n_quad)
    u = 0.5 * (nodes + 1.0)
    w = 0.5 * wts * space.dx
    b = basis_values(u, degree)
    cidx = (np.arange(m)[:, None] + np.arange(-degree, 1)[None, :]) % m
    out = np.zeros(m)
    for q in range(n_quad):
        np.add.at(out, cidx, w[q] * b[q][None, :])
    return out


@dataclass
class DeRhamComplex1D:
    """1D periodic spline de Rham pair with assembled operators.

    Attributes
    ----------
    space : SplineSpace1D
        The 0-form space; 1-forms live one degree lower on the same knots.
    G : ndarray (M, M)
        Discrete derivative, mapping 0-form to 1-form coefficients.
    M0, M1 : ndarray (M, M)
        Mass matrices of V0 and V1.
    K : ndarray (M, M)
        Stiffness-like product G.T @ M1 @ G.
    b0 : ndarray (M,)
        Quadrature integrals of the 0-form basis (the neutralizing
        background of the Gauss law).
    """

    space: SplineSpace1D
    G: np.ndarray
    M0: np.ndarray
    M1: np.ndarray
    K: np.ndarray
    b0: np.ndarray
    _m0_cho: tuple = field(repr=False, default=None)
    _m1_cho: tuple = field(repr=False, default=None)
    _line_rule: tuple = field(repr=False, default=None)

    @property
    def n0(self):
        return self.space.cells

    @property
    def n1(self):
        return self.space.cells

    def solve_m0(self, rhs):
        return cho_solve(self._m0_cho, rhs)

    def solve_m1(self, rhs):
        return cho_solve(self._m1_cho, rhs)


def build_complex_1d(cells, degree, length):
    """Assemble the 1D complex on `cells` uniform cells of total `length`."""
    _check_space_args(cells, degree, length)
    space = SplineSpace1D(int(degree), int(cells), float(length))
    n_quad = degree + 1
    m0 = _mass_matrix(space, degree, n_quad)
    m1 = _mass_matrix(space, degree - 1, n_quad)
    g = _derivative_matrix(cells, space.dx)
    k = g.T @ m1 @ g
    b0 = _background_vector(space, degree, n_quad)
    cx = DeRhamComplex1D(space=space, G=g, M0=m0, M1=m1, K=k, b0=b0)
    cx._m0_cho = cho_factor(m0)
    cx._m1_cho = cho_factor(m1)
    nq_line = max(1, (degree - 1) // 2 + 1)
    nodes, wts = leggauss(nq_line)
    cx._line_rule = (0.5 * (nodes + 1.0), 0.5 * wts)
    return cx


# ---------------------------------------------------------------------------
# evaluation


def _space_of(obj):
    return obj.space if isinstance(obj, DeRhamComplex1D) else obj


def eval_0form(space, coeffs, x):
    """Evaluate a V0 field at positions x (scalar or array)."""
    s = _space_of(space)
    return eval_spline(coeffs, x, s.degree, s.dx, s.cells, s.length)


def eval_1form(space, coeffs, x):
    """Evaluate a V1 field at positions x (scalar or array)."""
    s = _space_of(space)
    return eval_spline(coeffs, x, s.degree - 1, s.dx, s.cells, s.length)


def eval_0form_derivative(space, coeffs, x, order=1):
    """Evaluate d^order/dx^order of a V0 field by degree lowering."""
    s = _space_of(space)
    if order not in (1, 2):
        raise UnsupportedOrderError(f"derivative order must be 1 or 2, got {order}")
    if s.degree < order:
        raise UnsupportedOrderError(
            f"degree-{s.degree} splines have no continuous order-{order} derivative"
        )
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = diff_coeffs(c, s.dx)
    return eval_spline(c, x, s.degree - order, s.dx, s.cells, s.length)


def _collocation(space, degree, n_quad):
    """Per-cell Gauss points over the period and the dense basis matrix."""
    m = space.cells
    nodes, wts = leggauss(n_quad)
    u = 0.5 * (nodes + 1.0)
    w = np.tile(0.5 * wts * space.dx, m)
    pts = ((np.arange(m)[:, None] + u[None, :]) * space.dx).ravel()
    idx, vals = basis_at(pts, degree, space.dx, m, space.length)
    bmat = np.zeros((pts.size, m))
    np.add.at(bmat, (np.arange(pts.size)[:, None], idx), vals)
    return pts, w, bmat


def l2_project_0form(cx, f):
    """L2-project a callable f(x) onto V0, returning coefficients."""
    s = cx.space
    pts, w, bmat = _collocation(s, s.degree, s.degree + 2)
    rhs = bmat.T @ (w * np.asarray(f(pts), dtype=float))
    return cx.solve_m0(rhs)


# ---------------------------------------------------------------------------
# line integrals along straight segments


def _sigma_crossings(x0, x1, dx, eps_abs, out_cols):
    """Sorted-ready crossing parameters of knot lines between x0 and x1.

    Returns an (n, out_cols) array of sigma values in [0, 1]; entries that do
    not correspond to a real crossing are set to 1 so they collapse to
    zero-length pieces after sorting.
    """
    n = x0.shape[0]
    if out_cols == 0:
        return np.empty((n, 0))
    dxx = x1 - x0
    still = np.abs(dxx) < eps_abs
    lo = np.minimum(x0, x1)
    hi = np.maximum(x0, x1)
    c0 = np.floor(lo / dx)
    ncross = np.where(still, 0, np.floor(hi / dx) - c0).astype(int)
    r = np.arange(out_cols)[None, :]
    knots = (c0[:, None] + 1.0 + r) * dx
    denom = np.where(still, 1.0, dxx)
    sig = (knots - x0[:, None]) / denom[:, None]
    sig = np.clip(sig, 0.0, 1.0)
    sig[r >= ncross[:, None]] = 1.0
    return sig


def _piece_quadrature(sig_parts, nodes, wts, degen):
    """Yield (sigma_points, weight_factors) for Gauss points of each piece.

    sig_parts is the concatenated crossing array including neither endpoint;
    degenerate rows collapse to a single unit-weight evaluation at sigma = 0.
    """
    n = sig_parts.shape[0]
    bounds = np.concatenate(
        [np.zeros((n, 1)), np.sort(sig_parts, axis=1), np.ones((n, 1))], axis=1
    )
    for p in range(bounds.shape[1] - 1):
        lo = bounds[:, p]
        plen = bounds[:, p + 1] - lo
        if degen is not None and degen.any():
            plen = np.where(degen, 1.0 if p == 0 else 0.0, plen)
            lo = np.where(degen, 0.0, lo)
        if not (plen > 0.0).any():
            continue
        for q in range(nodes.size):
            sg = lo + plen * nodes[q]
            if degen is not None and degen.any():
                sg = np.where(degen, 0.0, sg)
            yield sg, plen * wts[q]


def _line_average_1d(cx, x0, x1, eps_factor):
    """Gauss points and weights of the normalized path average in 1D."""
    s = cx.space
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    eps_abs = eps_factor * s.dx
    degen = np.abs(x1 - x0) < eps_abs
    kmax = 0
    if not degen.all():
        lo = np.minimum(x0, x1)
        hi = np.maximum(x0, x1)
        nc = np.where(degen, 0, np.floor(hi / s.dx) - np.floor(lo / s.dx)).astype(int)
        kmax = int(nc.max())
    sig = _sigma_crossings(x0, x1, s.dx, eps_abs, kmax)
    nodes, wts = cx._line_rule
    dxx = x1 - x0
    for sg, wf in _piece_quadrature(sig, nodes, wts, degen):
        yield x0 + sg * dxx, wf


def line_averaged_apply(cx, x0, x1, cvec=None, pweights=None, eps_factor=DEGENERACY_EPS):
    """Contract and deposit the path-averaged 1-form basis.

    For each segment a from x0[a] to x1[a], let v_a be the vector of path
    averages (1/(x1-x0)) * int Lambda^1_i dx (pointwise values for segments
    below the degeneracy threshold).  Returns

    - contact: array with contact[a] = v_a . cvec     (if cvec given);
      cvec may also be a sequence of vectors, contracted in one pass,
      in which case contact is the matching list of arrays
    - dep: vector sum_a pweights[a] * v_a             (if pweights given)

    both computed from one shared knot-split Gauss rule, exact for the
    piecewise-polynomial integrand.
    """
    s = cx.space
    n = np.asarray(x0).shape[0]
    multi = isinstance(cvec, (list, tuple))
    cvecs = [np.asarray(c, dtype=float) for c in (cvec if multi else [cvec])] \
        if cvec is not None else []
    contacts = [np.zeros(n) for _ in cvecs]
    dep = np.zeros(s.cells) if pweights is not None else None
    for xg, wf in _line_average_1d(cx, x0, x1, eps_factor):
        idx, vals = basis_at(xg, s.degree - 1, s.dx, s.cells, s.length)
        for out, c in zip(contacts, cvecs):
            out += wf * np.einsum("nr,nr->n", vals, c[idx])
        if pweights is not None:
            dep += deposit(idx, vals * (wf * pweights)[:, None], s.cells)
    if cvec is None:
        contact = None
    elif multi:
        contact = contacts
    else:
        contact = contacts[0]
    return contact, dep


def line_average_splines(cx, x0, x1, specs, eps_factor=DEGENERACY_EPS):
    """Path averages of several spline fields along straight segments.

    specs is a sequence of (coeffs, degree) pairs with degree at most
    V1 degree, so the shared Gauss rule stays exact.  Returns one array
    per spec with entry a equal to (1/(x1-x0)) * int f over segment a.

    Averaging the derivative field of a potential gives its difference
    quotient ((f(x1) - f(x0)) / (x1 - x0), by the fundamental theorem)
    without the catastrophic cancellation of the literal formula, which
    matters for near-stationary particles.
    """
    s = cx.space
    n = np.asarray(x0).shape[0]
    clean = []
    for coeffs, degree in specs:
        if not 0 <= degree <= s.degree - 1:
            raise ConfigurationError(
                f"line rule is exact only up to degree {s.degree - 1}, got {degree}"
            )
        clean.append((np.asarray(coeffs, dtype=float), int(degree)))
    outs = [np.zeros(n) for _ in clean]
    for xg, wf in _line_average_1d(cx, x0, x1, eps_factor):
        cache = {}
        for out, (coeffs, degree) in zip(outs, clean):
            if degree not in cache:
                cache[degree] = basis_at(xg, degree, s.dx, s.cells, s.length)
            idx, vals = cache[degree]
            out += wf * np.einsum("nr,nr->n", vals, coeffs[idx])
    return outs


def line_integral_1form(cx, x0, x1, eps_factor=DEGENERACY_EPS):
    """Path-averaged evaluation vector of all 1-form basis functions.

    Entry i is the exact line integral of Lambda^1_i along the straight
    segment from x0 to x1 divided by (x1 - x0); for |x1 - x0| below the
    degeneracy threshold it degrades to the pointwise values at x0.
    """
    _, v = line_averaged_apply(
        cx,
        np.asarray([float(x0)]),
        np.asarray([float(x1)]),
        cvec=None,
        pweights=np.ones(1),
        eps_factor=eps_factor,
    )
    return v


# ---------------------------------------------------------------------------
# 2D tensor-product complex


@dataclass
class DeRhamComplex2D:
    """Tensor-product complex V0 -> V1 -> V2 plus the rotated space V1*.

    Coefficient layout is row-major with the second axis fastest:
    a scalar dof (i1, i2) sits at flat index i1 * cells2 + i2, and V1 / V1*
    stack their first-component block before the second.  The second
    component of the V1* basis carries a minus sign, which the evaluation
    and deposition helpers apply internally.
    """

    ax1: SplineSpace1D
    ax2: SplineSpace1D
    G: np.ndarray
    C: np.ndarray
    Gstar: np.ndarray
    M0: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    M1star: np.ndarray
    K0: np.ndarray
    Kstar: np.ndarray
    b0: np.ndarray
    _m0_cho: tuple = field(repr=False, default=None)
    _m1_cho: tuple = field(repr=False, default=None)
    _m2_cho: tuple = field(repr=False, default=None)
    _line_rule: tuple = field(repr=False, default=None)

    @property
    def shape(self):
        return (self.ax1.cells, self.ax2.cells)

    @property
    def n0(self):
        return self.ax1.cells * self.ax2.cells

    @property
    def n1(self):
        return 2 * self.n0

    @property
    def n2(self):
        return self.n0

    def solve_m0(self, rhs):
        return cho_solve(self._m0_cho, rhs)

    def solve_m1(self, rhs):
        return cho_solve(self._m1_cho, rhs)

    def solve_m2(self, rhs):
        return cho_solve(self._m2_cho, rhs)

    def grid(self, coeffs):
        return np.asarray(coeffs).reshape(self.shape)


def build_complex_2d(cells, degrees, lengths):
    """Assemble the 2D complex from per-axis cell counts, degrees, lengths."""
    if len(cells) != 2 or len(degrees) != 2 or len(lengths) != 2:
        raise ConfigurationError("2D complex needs two cells, degrees and lengths")
    for c, d, ell in zip(cells, degrees, lengths):
        _check_space_args(c, d, ell)
    s1 = SplineSpace1D(int(degrees[0]), int(cells[0]), float(lengths[0]))
    s2 = SplineSpace1D(int(degrees[1]), int(cells[1]), float(lengths[1]))
    m1, m2 = s1.cells, s2.cells
    i1, i2 = np.eye(m1), np.eye(m2)
    g1 = _derivative_matrix(m1, s1.dx)
    g2 = _derivative_matrix(m2, s2.dx)

    m0_1 = _mass_matrix(s1, s1.degree, s1.degree + 1)
    m1_1 = _mass_matrix(s1, s1.degree - 1, s1.degree + 1)
    m0_2 = _mass_matrix(s2, s2.degree, s2.degree + 1)
    m1_2 = _mass_matrix(s2, s2.degree - 1, s2.degree + 1)

    gx = np.kron(g1, i2)
    gy = np.kron(i1, g2)
    grad = np.vstack([gx, gy])
    curl = np.hstack([-gy, gx])
    gstar = np.vstack([gy, gx])

    mass0 = np.kron(m0_1, m0_2)
    mass1 = np.block(
        [
            [np.kron(m1_1, m0_2), np.zeros((m1 * m2, m1 * m2))],
            [np.zeros((m1 * m2, m1 * m2)), np.kron(m0_1, m1_2)],
        ]
    )
    mass2 = np.kron(m1_1, m1_2)
    mass1star = np.block(
        [
            [np.kron(m0_1, m1_2), np.zeros((m1 * m2, m1 * m2))],
            [np.zeros((m1 * m2, m1 * m2)), np.kron(m1_1, m0_2)],
        ]
    )
    k0 = grad.T @ mass1 @ grad
    kstar = gstar.T @ mass1star @ gstar
    b0 = np.outer(
        _background_vector(s1, s1.degree, s1.degree + 1),
        _background_vector(s2, s2.degree, s2.degree + 1),
    ).ravel()

    cx = DeRhamComplex2D(
        ax1=s1,
        ax2=s2,
        G=grad,
        C=curl,
        Gstar=gstar,
        M0=mass0,
        M1=mass1,
        M2=mass2,
        M1star=mass1star,
        K0=k0,
        Kstar=kstar,
        b0=b0,
    )
    cx._m0_cho = cho_factor(mass0)
    cx._m1_cho = cho_factor(mass1)
    cx._m2_cho = cho_factor(mass2)
    cho_factor(mass1star)  # SPD check; solves against M1star are never needed
    nq = (s1.degree + s2.degree + 1) // 2 + 1
    nodes, wts = leggauss(nq)
    cx._line_rule = (0.5 * (nodes + 1.0), 0.5 * wts)
    return cx


def _tensor_eval(cgrid, x, y, d1, d2, s1, s2):
    """Evaluate a tensor-product spline with per-axis degrees d1, d2."""
    j1, b1 = basis_at(x, d1, s1.dx, s1.cells, s1.length)
    j2, b2 = basis_at(y, d2, s2.dx, s2.cells, s2.length)
    cc = cgrid[j1[:, :, None], j2[:, None, :]]
    return np.einsum("nr,nrs,ns->n", b1, cc, b2)


def _tensor_deposit(cgrid_shape, x, y, d1, d2, s1, s2, weights):
    """Deposit weights against the tensor basis; returns a flat dof vector."""
    j1, b1 = basis_at(x, d1, s1.dx, s1.cells, s1.length)
    j2, b2 = basis_at(y, d2, s2.dx, s2.cells, s2.length)
    flat = (j1[:, :, None] * cgrid_shape[1] + j2[:, None, :]).reshape(x.shape[0], -1)
    vals = (b1[:, :, None] * b2[:, None, :]).reshape(x.shape[0], -1)
    return deposit(flat, vals * weights[:, None], cgrid_shape[0] * cgrid_shape[1])


def _dgrid(cgrid, axis, dx):
    """Degree-lowering derivative of a coefficient grid along one axis."""
    return (cgrid - np.roll(cgrid, 1, axis=axis)) / dx


def deposit_0form(cx, x, weights):
    """Charge-style deposit: vector with entries sum_a weights[a] Lambda^0_i(x_a)."""
    s = _space_of(cx)
    idx, vals = basis_at(np.asarray(x, dtype=float), s.degree, s.dx, s.cells, s.length)
    return deposit(idx, vals * np.asarray(weights, dtype=float)[:, None], s.cells)


def deposit_0form_2d(cx, x, y, weights):
    """2D charge-style deposit onto the tensor V0 basis (flat dof vector)."""
    return _tensor_deposit(
        cx.shape,
        np.asarray(x, dtype=float),
        np.asarray(y, dtype=float),
        cx.ax1.degree,
        cx.ax2.degree,
        cx.ax1,
        cx.ax2,
        np.asarray(weights, dtype=float),
    )


def eval_0form_2d(cx, coeffs, x, y):
    c = cx.grid(coeffs)
    return _tensor_eval(c, x, y, cx.ax1.degree, cx.ax2.degree, cx.ax1, cx.ax2)


def eval_2form_2d(cx, coeffs, x, y):
    c = cx.grid(coeffs)
    return _tensor_eval(c, x, y, cx.ax1.degree - 1, cx.ax2.degree - 1, cx.ax1, cx.ax2)


def eval_1form_2d(cx, coeffs, x, y):
    """Evaluate a V1 field; returns the two component arrays."""
    n = cx.n0
    c = np.asarray(coeffs)
    cxg = c[:n].reshape(cx.shape)
    cyg = c[n:].reshape(cx.shape)
    vx = _tensor_eval(cxg, x, y, cx.ax1.degree - 1, cx.ax2.degree, cx.ax1, cx.ax2)
    vy = _tensor_eval(cyg, x, y, cx.ax1.degree, cx.ax2.degree - 1, cx.ax1, cx.ax2)
    return vx, vy


def eval_1star_2d(cx, coeffs, x, y):
    """Evaluate a V1* field (sign of the second block applied here)."""
    n = cx.n0
    c = np.asarray(coeffs)
    cag = c[:n].reshape(cx.shape)
    cbg = c[n:].reshape(cx.shape)
    vx = _tensor_eval(cag, x, y, cx.ax1.degree, cx.ax2.degree - 1, cx.ax1, cx.ax2)
    vy = -_tensor_eval(cbg, x, y, cx.ax1.degree - 1, cx.ax2.degree, cx.ax1, cx.ax2)
    return vx, vy


def deposit_1star_2d(cx, x, y, w1, w2):
    """Deposit component weights against the V1* basis (adjoint of eval).

    Returns d with u @ d = sum_a (u1(x_a, y_a) w1[a] + u2(x_a, y_a) w2[a])
    for every coefficient vector u, where (u1, u2) = eval_1star_2d(cx, u).
    The second-block sign of V1* lives here just as it does in the
    evaluator, so the pair stays adjoint.
    """
    s1, s2 = cx.ax1, cx.ax2
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.empty(cx.n1)
    out[: cx.n0] = _tensor_deposit(
        cx.shape, x, y, s1.degree, s2.degree - 1, s1, s2, np.asarray(w1, dtype=float)
    )
    out[cx.n0 :] = _tensor_deposit(
        cx.shape, x, y, s1.degree - 1, s2.degree, s1, s2, -np.asarray(w2, dtype=float)
    )
    return out


def deposit_2form_2d(cx, x, y, weights):
    """Deposit weights against the V2 basis (adjoint of eval_2form_2d)."""
    s1, s2 = cx.ax1, cx.ax2
    return _tensor_deposit(
        cx.shape,
        np.asarray(x, dtype=float),
        np.asarray(y, dtype=float),
        s1.degree - 1,
        s2.degree - 1,
        s1,
        s2,
        np.asarray(weights, dtype=float),
    )


def axis_average_tensor_2d(cx, axis, start, stop, fixed, specs, eps_factor=DEGENERACY_EPS):
    """Exact averages of tensor splines along axis-parallel segments.

    Segment a runs in coordinate `axis` from start[a] to stop[a] while the
    other coordinate stays at fixed[a].  specs is a sequence of
    (coeff_grid, degree1, degree2) tensors; the return value is the list of
    per-segment averages (1/(stop-start)) * int f dt, one array per spec.

    This serves the same purpose as line_average_splines in 1D: a partial
    difference quotient (f(..b..) - f(..a..)) / (b - a) equals the average
    of the corresponding partial derivative along the segment, and
    computing it this way avoids the catastrophic cancellation of the
    two-point form when b - a is tiny.  Segments shorter than the
    degeneracy threshold evaluate at `start`, the exact limit.
    """
    s1, s2 = cx.ax1, cx.ax2
    smove = s1 if axis == 0 else s2
    start = np.asarray(start, dtype=float)
    stop = np.asarray(stop, dtype=float)
    fixed = np.asarray(fixed, dtype=float)
    for _, d1, d2 in specs:
        if not (0 <= d1 <= s1.degree and 0 <= d2 <= s2.degree):
            raise ConfigurationError(
                f"tensor degrees ({d1}, {d2}) outside the complex "
                f"({s1.degree}, {s2.degree})"
            )
    eps_abs = eps_factor * smove.dx
    degen = np.abs(stop - start) < eps_abs
    kmax = 0
    if not degen.all():
        lo = np.minimum(start, stop)
        hi = np.maximum(start, stop)
        nc = np.where(
            degen, 0, np.floor(hi / smove.dx) - np.floor(lo / smove.dx)
        ).astype(int)
        kmax = int(nc.max())
    sig = _sigma_crossings(start, stop, smove.dx, eps_abs, kmax)
    nodes, wts = cx._line_rule
    span = stop - start
    outs = [np.zeros(start.shape[0]) for _ in specs]
    for sg, wf in _piece_quadrature(sig, nodes, wts, degen):
        t = start + sg * span
        xg, yg = (t, fixed) if axis == 0 else (fixed, t)
        bcache = {}
        for out, (grid, d1, d2) in zip(outs, specs):
            key1, key2 = ("x", d1), ("y", d2)
            if key1 not in bcache:
                bcache[key1] = basis_at(xg, d1, s1.dx, s1.cells, s1.length)
            if key2 not in bcache:
                bcache[key2] = basis_at(yg, d2, s2.dx, s2.cells, s2.length)
            j1, b1 = bcache[key1]
            j2, b2 = bcache[key2]
            cc = grid[j1[:, :, None], j2[:, None, :]]
            out += wf * np.einsum("nr,nrs,ns->n", b1, cc, b2)
    return outs


def l2_project_0form_2d(cx, f):
    """L2-project a callable f(x, y) onto the 2D V0 space."""
    s1, s2 = cx.ax1, cx.ax2
    p1, w1, b1 = _collocation(s1, s1.degree, s1.degree + 2)
    p2, w2, b2 = _collocation(s2, s2.degree, s2.degree + 2)
    fx = np.broadcast_to(
        np.asarray(f(p1[:, None], p2[None, :]), dtype=float), (p1.size, p2.size)
    )
    rhs = (b1 * w1[:, None]).T @ fx @ (b2 * w2[:, None])
    return cx.solve_m0(rhs.ravel())


def line_averaged_apply_2d(
    cx, x0, y0, x1, y1, e1vec=None, pw1=None, pw2=None, eps_factor=DEGENERACY_EPS
):
    """2D analogue of line_averaged_apply for both V1 component blocks.

    Splits each straight segment at the knot lines of both axes, applies the
    shared Gauss rule per piece, and returns the contraction of the averaged
    V1 basis with e1vec (per segment, per component) together with the
    deposition vector sum_a (pw1[a], pw2[a]) weighted by the averaged basis.
    """
    s1, s2 = cx.ax1, cx.ax2
    n = np.asarray(x0).shape[0]
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    eps1 = eps_factor * s1.dx
    eps2 = eps_factor * s2.dx
    still1 = np.abs(x1 - x0) < eps1
    still2 = np.abs(y1 - y0) < eps2
    degen = still1 & still2

    def ncols(x0a, x1a, dxa, stilla):
        if stilla.all():
            return 0
        lo = np.minimum(x0a, x1a)
        hi = np.maximum(x0a, x1a)
        nc = np.where(stilla, 0, np.floor(hi / dxa) - np.floor(lo / dxa)).astype(int)
        return int(nc.max())

    sig = np.concatenate(
        [
            _sigma_crossings(x0, x1, s1.dx, eps1, ncols(x0, x1, s1.dx, still1)),
            _sigma_crossings(y0, y1, s2.dx, eps2, ncols(y0, y1, s2.dx, still2)),
        ],
        axis=1,
    )
    nodes, wts = cx._line_rule
    dxx = x1 - x0
    dyy = y1 - y0

    f1 = np.zeros(n) if e1vec is not None else None
    f2 = np.zeros(n) if e1vec is not None else None
    dep = np.zeros(cx.n1) if pw1 is not None else None
    if e1vec is not None:
        ex = np.asarray(e1vec)[: cx.n0].reshape(cx.shape)
        ey = np.asarray(e1vec)[cx.n0 :].reshape(cx.shape)
    d1x, d2x = s1.degree - 1, s2.degree
    d1y, d2y = s1.degree, s2.degree - 1
    for sg, wf in _piece_quadrature(sig, nodes, wts, degen):
        xg = x0 + sg * dxx
        yg = y0 + sg * dyy
        if e1vec is not None:
            f1 += wf * _tensor_eval(ex, xg, yg, d1x, d2x, s1, s2)
            f2 += wf * _tensor_eval(ey, xg, yg, d1y, d2y, s1, s2)
        if pw1 is not None:
            dep[: cx.n0] += _tensor_deposit(cx.shape, xg, yg, d1x, d2x, s1, s2, wf * pw1)
            dep[cx.n0 :] += _tensor_deposit(cx.shape, xg, yg, d1y, d2y, s1, s2, wf * pw2)
    return f1, f2, dep
