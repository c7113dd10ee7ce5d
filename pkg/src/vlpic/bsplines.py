"""Periodic uniform B-splines on a 1D grid.

Everything here works on the cardinal basis N^k_j spanned over a uniform
periodic knot sequence x_j = j*dx with M = cells distinct knots per period.
N^k_j is supported on [x_j, x_{j+k+1}) and the family of translates forms a
partition of unity for every degree k >= 0.  Degree lowering realizes the
derivative:

    d/dx N^k_j = (N^{k-1}_j - N^{k-1}_{j+1}) / dx

which is the identity all discrete differential operators are built on.

The evaluation routines are vectorized over the evaluation points; particle
loops call them with arrays of positions.
"""

import numpy as np

__all__ = [
    "wrap_position",
    "basis_values",
    "basis_at",
    "eval_spline",
    "diff_coeffs",
    "deposit",
]


def wrap_position(x, length):
    """Wrap positions into the periodic interval [0, length).

    Every basis evaluation funnels through this helper so that a position
    and its periodic images produce bitwise identical basis values.
    """
    x = np.asarray(x, dtype=float)
    r = np.mod(x, length)
    # np.mod can return length itself for tiny negative inputs
    return np.where(r >= length, r - length, r)


def basis_values(u, degree):
    """Nonzero B-spline values at local cell coordinates.

    Parameters
    ----------
    u : ndarray (n,)
        Local coordinates in [0, 1) relative to a knot cell.
    degree : int
        Spline degree k >= 0.

    Returns
    -------
    ndarray (n, degree + 1)
        b[:, r] is the value of N^k_{c-k+r} at u for a point in cell c.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    b = np.zeros((n, degree + 1))
    b[:, 0] = 1.0
    # Cox-de Boor triangle; on integer knots the knot differences are the
    # loop index j, so the recurrence needs no knot arrays at all.
    for j in range(1, degree + 1):
        saved = np.zeros(n)
        for r in range(j):
            right = (r + 1) - u
            left = u + (j - r - 1)
            temp = b[:, r] / j
            b[:, r] = saved + right * temp
            saved = left * temp
        b[:, j] = saved
    return b


def basis_at(x, degree, dx, cells, length):
    """Active dof indices and basis values at given positions.

    Returns
    -------
    idx : ndarray (n, degree + 1) of int
        Periodic dof indices of the nonvanishing basis functions.
    vals : ndarray (n, degree + 1)
        Matching basis values.
    """
    xw = wrap_position(x, length)
    t = xw / dx
    cell = np.minimum(t.astype(int), cells - 1)
    u = t - cell
    vals = basis_values(u, degree)
    idx = (cell[:, None] + np.arange(-degree, 1)[None, :]) % cells
    return idx, vals


def eval_spline(coeffs, x, degree, dx, cells, length):
    """Evaluate sum_j coeffs[j] * N^degree_j at positions x."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    idx, vals = basis_at(xa, degree, dx, cells, length)
    out = np.einsum("nr,nr->n", vals, np.asarray(coeffs)[idx])
    return float(out[0]) if scalar else out


def diff_coeffs(coeffs, dx):
    """Coefficients of the derivative spline, one degree lower.

    For c in the degree-k space the derivative is the degree-(k-1) spline
    with coefficients (c_i - c_{i-1}) / dx on the same knots.
    """
    c = np.asarray(coeffs)
    return (c - np.roll(c, 1)) / dx


def deposit(idx, vals, n_dofs):
    """Accumulate basis-weighted contributions into a dof vector.

    idx and vals are shaped (n, nnz); the result is the length-n_dofs vector
    with vals summed at the flattened periodic indices.  Summation order is
    fixed by the input layout, so the result is reproducible.
    """
    return np.bincount(idx.ravel(), weights=vals.ravel(), minlength=n_dofs)
