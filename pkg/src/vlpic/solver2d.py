"""Energy-conserving time steppers for the 2D spin Vlasov-Maxwell model.

State variables are the in-plane electric field e_xy (V1), the
out-of-plane pair e_z, a_z (V0), the magnetic 2-form b_z (V2), and
markers with 2D positions and momenta.  The energy is

    H = sum_a w_a (gamma_a - 1)
      + 1/2 e_xy' M1 e_xy + 1/2 e_z' M0 e_z + 1/2 b_z' M2 b_z
      + 1/2 a_z' Kstar a_z
      + hbar * sum_a w_a s_a . B(x_a),      Kstar = Gstar' M1star Gstar,

with gamma_a = sqrt(1 + |p_a|^2 + A_z(x_a)^2) and the magnetic field
B = (dA_z/dy, -dA_z/dx, b_z).  The Poisson structure splits into four
parts:

  I   particle push (X, P) coupled to e_xy,
  II  rotation of momenta and spins by the frozen magnetic field,
  III out-of-plane pair (e_z, a_z),
  IV  in-plane Maxwell pair (e_xy, b_z).

I and III are discrete-gradient updates solved by fixed-point iteration,
II is exact, IV is linear.  Each substep conserves H up to the iteration
tolerance and I preserves the discrete Gauss law to rounding.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.linalg import cg

from .bsplines import wrap_position
from .derham import (
    axis_average_tensor_2d,
    deposit_0form_2d,
    deposit_1star_2d,
    deposit_2form_2d,
    eval_0form_2d,
    eval_1star_2d,
    eval_2form_2d,
    line_averaged_apply_2d,
)
from .errors import ConfigurationError, NonconvergenceError
from .parallel import map_chunks, pairwise_sum
from .rotation import rotate_momenta_2d, rotate_vectors
from .solver1d import INITIAL_POISSON_ATOL, SolverParams

__all__ = [
    "FieldState2D",
    "State2D",
    "SolverParams",
    "gamma_2d",
    "step_subsystem1_2d",
    "step_subsystem2_2d",
    "step_subsystem3_2d",
    "step_subsystem4_2d",
    "lie_trotter_step_2d",
    "strang_step_2d",
    "advance_2d",
    "solve_initial_poisson_2d",
]


@dataclass(frozen=True)
class FieldState2D:
    """Coefficient vectors of the four field unknowns.

    e_xy stacks its first V1 component block before the second; e_z and
    a_z live in V0, b_z in V2.
    """

    e_xy: np.ndarray
    e_z: np.ndarray
    b_z: np.ndarray
    a_z: np.ndarray


@dataclass(frozen=True)
class State2D:
    ensemble: object
    fields: FieldState2D
    complex: object
    hbar: float
    time: float = 0.0


def gamma_2d(psq, az):
    """Relativistic factor sqrt(1 + |p|^2 + A_z^2)."""
    return np.sqrt(1.0 + psq + az * az)


def _diff_grid(grid, axis, dx):
    """Derivative coefficients of a periodic tensor spline along one axis."""
    return (grid - np.roll(grid, 1, axis=axis)) / dx


def step_subsystem1_2d(state, params):
    """Advance positions, momenta and the in-plane field by dt.

    The position gradient is the staggered two-leg form: first the second
    coordinate moves at frozen x1, then the first coordinate at frozen
    new x2, so the energy increment telescopes exactly through the corner
    point.  Both partial quotients are computed as axis-parallel averages
    of derivative grids, stable for arbitrarily short legs.
    """
    ens = state.ensemble
    if ens.n_particles == 0 or params.dt == 0.0:
        return state
    cx = state.complex
    s1, s2 = cx.ax1, cx.ax2
    k1, k2 = s1.degree, s2.degree
    f = state.fields
    dt = params.dt
    hbar = state.hbar
    n = ens.n_particles

    xn = ens.X[:, 0]
    yn = ens.X[:, 1]
    pxn = ens.P[:, 0]
    pyn = ens.P[:, 1]
    w = ens.W
    exyn = f.e_xy

    az_grid = cx.grid(f.a_z)
    d1az = _diff_grid(az_grid, 0, s1.dx)
    d2az = _diff_grid(az_grid, 1, s2.dx)
    specs_h = [(d1az, k1 - 1, k2)]
    specs_v = [(d2az, k1, k2 - 1)]
    with_spin = hbar != 0.0
    if with_spin:
        if k1 < 2 or k2 < 2:
            raise ConfigurationError("spin coupling needs spline degree >= 2")
        d11az = _diff_grid(d1az, 0, s1.dx)
        d12az = _diff_grid(d1az, 1, s2.dx)
        d22az = _diff_grid(d2az, 1, s2.dx)
        bz_grid = cx.grid(f.b_z)
        d1bz = _diff_grid(bz_grid, 0, s1.dx)
        d2bz = _diff_grid(bz_grid, 1, s2.dx)
        specs_h += [
            (d12az, k1 - 1, k2 - 1),
            (d11az, k1 - 2, k2),
            (d1bz, k1 - 2, k2 - 1),
        ]
        specs_v += [
            (d22az, k1, k2 - 2),
            (d12az, k1 - 1, k2 - 1),
            (d2bz, k1 - 1, k2 - 2),
        ]
        s_x, s_y, s_z = ens.S[:, 0], ens.S[:, 1], ens.S[:, 2]

    psqn = pxn * pxn + pyn * pyn
    az0 = eval_0form_2d(cx, f.a_z, xn, yn)
    g0 = gamma_2d(psqn, az0)

    scale_x = max(1.0, float(np.max(np.abs(ens.X))))
    scale_p = max(1.0, float(np.max(np.abs(ens.P))))
    scale_e = max(1.0, float(np.max(np.abs(exyn))))

    x1, y1 = xn, yn
    px1, py1 = pxn, pyn
    e1 = exyn
    az1 = az0
    delta = np.inf
    for _ in range(params.max_iter):
        gden = gamma_2d(psqn, az1) + gamma_2d(px1 * px1 + py1 * py1, az1)
        vbx = (pxn + px1) / gden
        vby = (pyn + py1) / gden
        x_new = xn + dt * vbx
        y_new = yn + dt * vby
        ebar = 0.5 * (exyn + e1)

        def sweep(lo, hi):
            xs, ys = x_new[lo:hi], y_new[lo:hi]
            f1, f2, dep = line_averaged_apply_2d(
                cx,
                xn[lo:hi],
                yn[lo:hi],
                xs,
                ys,
                e1vec=ebar,
                pw1=w[lo:hi] * vbx[lo:hi],
                pw2=w[lo:hi] * vby[lo:hi],
                eps_factor=params.degeneracy_eps,
            )
            qh = axis_average_tensor_2d(
                cx, 0, xn[lo:hi], xs, ys, specs_h, eps_factor=params.degeneracy_eps
            )
            qv = axis_average_tensor_2d(
                cx, 1, yn[lo:hi], ys, xn[lo:hi], specs_v, eps_factor=params.degeneracy_eps
            )
            az2 = eval_0form_2d(cx, f.a_z, xs, ys)
            factor = (az2 + az0[lo:hi]) / (g0[lo:hi] + gamma_2d(psqn[lo:hi], az2))
            dgx1 = factor * qh[0]
            dgx2 = factor * qv[0]
            if with_spin:
                dgx1 = dgx1 + hbar * (
                    s_x[lo:hi] * qh[1] - s_y[lo:hi] * qh[2] + s_z[lo:hi] * qh[3]
                )
                dgx2 = dgx2 + hbar * (
                    s_x[lo:hi] * qv[1] - s_y[lo:hi] * qv[2] + s_z[lo:hi] * qv[3]
                )
            px2 = pxn[lo:hi] + dt * (f1 - dgx1)
            py2 = pyn[lo:hi] + dt * (f2 - dgx2)
            return px2, py2, dep, az2

        parts = map_chunks(sweep, n, params.workers)
        px_new = np.concatenate([part[0] for part in parts])
        py_new = np.concatenate([part[1] for part in parts])
        dep = pairwise_sum([part[2] for part in parts])
        az_new = np.concatenate([part[3] for part in parts])
        e_new = exyn - dt * cx.solve_m1(dep)

        delta = max(
            max(
                float(np.max(np.abs(x_new - x1))),
                float(np.max(np.abs(y_new - y1))),
            )
            / scale_x,
            max(
                float(np.max(np.abs(px_new - px1))),
                float(np.max(np.abs(py_new - py1))),
            )
            / scale_p,
            float(np.max(np.abs(e_new - e1))) / scale_e,
        )
        x1, y1 = x_new, y_new
        px1, py1 = px_new, py_new
        e1 = e_new
        az1 = az_new
        if delta < params.tol:
            break
    else:
        raise NonconvergenceError(
            f"particle push stalled at update norm {delta:.3e} "
            f"after {params.max_iter} iterations",
            residual=delta,
            iterations=params.max_iter,
        )

    x_wrapped = np.column_stack(
        [wrap_position(x1, s1.length), wrap_position(y1, s2.length)]
    )
    ens_new = replace(ens, X=x_wrapped, P=np.column_stack([px1, py1]))
    return replace(state, ensemble=ens_new, fields=replace(f, e_xy=e1))


def step_subsystem2_2d(state, params):
    """Rotate momenta and spins in the frozen magnetic field.

    gamma is constant along the flow (|p| and the position are), so the
    momentum rotation angle dt b_z / gamma is exact; spins precess about
    -B(x_a).  Both rotations conserve H term by term.
    """
    ens = state.ensemble
    if ens.n_particles == 0 or params.dt == 0.0:
        return state
    cx = state.complex
    f = state.fields
    x, y = ens.X[:, 0], ens.X[:, 1]
    px, py = ens.P[:, 0], ens.P[:, 1]

    az = eval_0form_2d(cx, f.a_z, x, y)
    bz = eval_2form_2d(cx, f.b_z, x, y)
    gamma = gamma_2d(px * px + py * py, az)
    theta = params.dt * bz / gamma
    px_new, py_new = rotate_momenta_2d(px, py, theta)

    bx, by = eval_1star_2d(cx, cx.Gstar @ f.a_z, x, y)
    axes = np.column_stack([-bx, -by, -bz])
    s_new = rotate_vectors(ens.S, axes, params.dt)

    ens_new = replace(ens, P=np.column_stack([px_new, py_new]), S=s_new)
    return replace(state, ensemble=ens_new)


def step_subsystem3_2d(state, params):
    """Advance the out-of-plane pair (e_z, a_z) by dt.

    Trapezoid rule in (e_z, a_z) with the secant of gamma in A_z^2 and
    the spin source frozen at level n; M0-preconditioned fixed point.
    """
    if params.dt == 0.0:
        return state
    cx = state.complex
    ens = state.ensemble
    f = state.fields
    dt = params.dt
    hbar = state.hbar
    n = ens.n_particles
    Ks = cx.Kstar
    quarter = 0.25 * dt * dt

    ezn = f.e_z
    azn = f.a_z

    rhs0 = cx.M0 @ ezn - quarter * (Ks @ ezn) + dt * (Ks @ azn)
    if hbar != 0.0 and n:
        x, y = ens.X[:, 0], ens.X[:, 1]
        zdep = deposit_1star_2d(cx, x, y, ens.W * ens.S[:, 0], ens.W * ens.S[:, 1])
        rhs0 = rhs0 + dt * hbar * (cx.Gstar.T @ zdep)

    if n:
        x, y = ens.X[:, 0], ens.X[:, 1]
        psq = ens.P[:, 0] ** 2 + ens.P[:, 1] ** 2
        az_p = eval_0form_2d(cx, azn, x, y)
        g_n = gamma_2d(psq, az_p)

    scale = max(1.0, float(np.max(np.abs(ezn))))
    ez1 = ezn
    delta = np.inf
    for _ in range(params.max_iter):
        if n:
            a1 = azn - 0.5 * dt * (ezn + ez1)
            az1p = eval_0form_2d(cx, a1, x, y)
            coeff = ens.W * (az_p + az1p) / (g_n + gamma_2d(psq, az1p))
            dep = deposit_0form_2d(cx, x, y, coeff)
            ez2 = cx.solve_m0(rhs0 - quarter * (Ks @ ez1) + dt * dep)
        else:
            ez2 = cx.solve_m0(rhs0 - quarter * (Ks @ ez1))
        delta = float(np.max(np.abs(ez2 - ez1))) / scale
        ez1 = ez2
        if delta < params.tol:
            break
    else:
        raise NonconvergenceError(
            f"out-of-plane field solve stalled at update norm {delta:.3e} "
            f"after {params.max_iter} iterations",
            residual=delta,
            iterations=params.max_iter,
        )

    f_new = replace(f, e_z=ez1, a_z=azn - 0.5 * dt * (ezn + ez1))
    return replace(state, fields=f_new)


def step_subsystem4_2d(state, params):
    """Advance the in-plane Maxwell pair (e_xy, b_z) by dt.

    Crank-Nicolson in (e_xy, b_z) with the spin magnetization frozen at
    level n; the linear system is solved by an M1-preconditioned fixed
    point exactly like the other substeps.
    """
    if params.dt == 0.0:
        return state
    cx = state.complex
    ens = state.ensemble
    f = state.fields
    dt = params.dt
    quarter = 0.25 * dt * dt

    exyn = f.e_xy
    bzn = f.b_z

    def curl_curl(e):
        return cx.C.T @ (cx.M2 @ (cx.C @ e))

    rhs = cx.M1 @ exyn - quarter * curl_curl(exyn) + dt * (cx.C.T @ (cx.M2 @ bzn))
    if state.hbar != 0.0 and ens.n_particles:
        bdep = deposit_2form_2d(
            cx, ens.X[:, 0], ens.X[:, 1], ens.W * ens.S[:, 2]
        )
        rhs = rhs + dt * state.hbar * (cx.C.T @ bdep)

    scale = max(1.0, float(np.max(np.abs(exyn))))
    e1 = exyn
    delta = np.inf
    for _ in range(params.max_iter):
        e2 = cx.solve_m1(rhs - quarter * curl_curl(e1))
        delta = float(np.max(np.abs(e2 - e1))) / scale
        e1 = e2
        if delta < params.tol:
            break
    else:
        raise NonconvergenceError(
            f"in-plane field solve stalled at update norm {delta:.3e} "
            f"after {params.max_iter} iterations",
            residual=delta,
            iterations=params.max_iter,
        )

    b_new = bzn - dt * (cx.C @ (0.5 * (exyn + e1)))
    return replace(state, fields=replace(f, e_xy=e1, b_z=b_new))


def lie_trotter_step_2d(state, params):
    """First-order splitting: subsystems I to IV in sequence over dt."""
    out = step_subsystem1_2d(state, params)
    out = step_subsystem2_2d(out, params)
    out = step_subsystem3_2d(out, params)
    out = step_subsystem4_2d(out, params)
    return replace(out, time=state.time + params.dt)


def strang_step_2d(state, params):
    """Symmetric splitting I-II-III-IV-III-II-I."""
    half = replace(params, dt=0.5 * params.dt)
    out = step_subsystem1_2d(state, half)
    out = step_subsystem2_2d(out, half)
    out = step_subsystem3_2d(out, half)
    out = step_subsystem4_2d(out, params)
    out = step_subsystem3_2d(out, half)
    out = step_subsystem2_2d(out, half)
    out = step_subsystem1_2d(out, half)
    return replace(out, time=state.time + params.dt)


def advance_2d(state, params):
    """One composite step according to params.splitting."""
    if params.splitting == "lie":
        return lie_trotter_step_2d(state, params)
    if params.splitting == "strang":
        return strang_step_2d(state, params)
    raise ConfigurationError(f"unknown splitting {params.splitting!r}")


def solve_initial_poisson_2d(state):
    """Replace e_xy by the solution of the discrete Poisson equation.

    Same construction as the 1D version: conjugate gradients on the V0
    stiffness matrix with the compatible right side, e_xy = -G phi, and
    a least-squares polish if the residual misses the documented level.
    """
    cx = state.complex
    ens = state.ensemble
    if ens.n_particles:
        rho = deposit_0form_2d(cx, ens.X[:, 0], ens.X[:, 1], ens.W)
    else:
        rho = np.zeros(cx.n0)
    b = cx.b0

    total = float(abs(np.sum(rho) - np.sum(b)))
    if total > 1e-10 * max(1.0, float(abs(np.sum(b)))):
        raise ConfigurationError(
            f"total marker charge differs from the neutralizing background "
            f"by {total:.3e}; the periodic Poisson problem is unsolvable"
        )

    rhs = rho - b
    atol = INITIAL_POISSON_ATOL * max(1.0, float(np.max(np.abs(rho))))
    phi, _ = cg(cx.K0, rhs, rtol=0.0, atol=atol, maxiter=20 * rhs.size)
    e_xy = -(cx.G @ phi)

    r = cx.G.T @ (cx.M1 @ e_xy) + rho - b
    if float(np.max(np.abs(r))) > 10.0 * atol:
        dphi, *_ = np.linalg.lstsq(cx.K0, r, rcond=None)
        e_xy = e_xy - cx.G @ dphi

    return replace(state, fields=replace(state.fields, e_xy=e_xy))
