"""Energy-conserving time steppers for the 1D spin Vlasov-Maxwell model.

The semi-discrete system is Hamiltonian with energy

    H = sum_a w_a (gamma_a - 1)
      + hbar * sum_a w_a (s_y dA_z/dx - s_z dA_y/dx)(x_a)
      + 1/2 e_x' M1 e_x + 1/2 e_y' M0 e_y + 1/2 e_z' M0 e_z
      + 1/2 a_y' K a_y + 1/2 a_z' K a_z,        K = G' M1 G,

with gamma_a = sqrt(1 + p_a^2 + |A_perp(x_a)|^2).  The Poisson structure
splits into three parts that are integrated in sequence:

  I   particle push (X, P) coupled to e_x,
  II  transverse fields (e_y, e_z, a_y, a_z),
  III spin precession.

Subsystems I and II use Gonzalez discrete gradients and are solved by
fixed-point iteration; III is an exact rotation.  Each substep conserves H
up to the iteration tolerance, and substep I preserves the discrete Gauss
law to rounding because particles deposit the exact line average of the
1-form basis along the segment they actually travel.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.linalg import cg

from .bsplines import basis_at, deposit, diff_coeffs, wrap_position
from .derham import DEGENERACY_EPS, deposit_0form, line_average_splines, line_averaged_apply
from .errors import ConfigurationError, NonconvergenceError
from .parallel import map_chunks, pairwise_sum
from .rotation import rotate_vectors

__all__ = [
    "FieldState1D",
    "SolverParams",
    "State1D",
    "gamma_1d",
    "dg_kinetic_p",
    "dg_kinetic_x",
    "step_subsystem1",
    "step_subsystem2",
    "step_subsystem3",
    "lie_trotter_step",
    "strang_step",
    "advance",
    "solve_initial_poisson",
]


@dataclass(frozen=True)
class FieldState1D:
    """Coefficient vectors of the five field unknowns.

    e_x lives in V1; e_y, e_z and the transverse potentials a_y, a_z in V0.
    All five have length cells.
    """

    e_x: np.ndarray
    e_y: np.ndarray
    e_z: np.ndarray
    a_y: np.ndarray
    a_z: np.ndarray


@dataclass(frozen=True)
class SolverParams:
    """Step size and fixed-point controls shared by all substeps."""

    dt: float
    tol: float = 1e-13
    max_iter: int = 100
    degeneracy_eps: float = DEGENERACY_EPS
    splitting: str = "lie"
    workers: int = 1


@dataclass(frozen=True)
class State1D:
    ensemble: object
    fields: FieldState1D
    complex: object
    hbar: float
    time: float = 0.0


def gamma_1d(p, aperp_sq):
    """Relativistic factor sqrt(1 + p^2 + |A_perp|^2)."""
    return np.sqrt(1.0 + p * p + aperp_sq)


def dg_kinetic_p(p_n, p_np1, aperp_sq):
    """Discrete gradient of gamma in p: the secant velocity.

    Exact identity (p1 + p0)(p1 - p0) = gamma1^2 - gamma0^2 at fixed
    |A_perp|^2 makes gamma(p1) - gamma(p0) = dg_kinetic_p * (p1 - p0).
    """
    return (p_n + p_np1) / (gamma_1d(p_n, aperp_sq) + gamma_1d(p_np1, aperp_sq))


def _eval_many(space, coeff_vectors, x, degree):
    """Evaluate several spline fields of one degree at shared points."""
    idx, vals = basis_at(x, degree, space.dx, space.cells, space.length)
    return [np.einsum("nr,nr->n", vals, np.asarray(c)[idx]) for c in coeff_vectors]


def _dg_x_values(p_n, s_y, s_z, hbar, ay_n, az_n, g_n, ay_new, az_new, q_ay, q_az, q_day, q_daz):
    """Combine point values and path-averaged derivatives into the x-gradient.

    q_ay, q_az are the path averages of dA_y/dx, dA_z/dx over each segment
    (equal to the difference quotients of the potentials); q_day, q_daz the
    same for the second derivatives, used only with spin coupling.
    """
    g_new = gamma_1d(p_n, ay_new * ay_new + az_new * az_new)
    out = ((ay_new + ay_n) * q_ay + (az_new + az_n) * q_az) / (g_n + g_new)
    if hbar != 0.0:
        out = out + hbar * (s_y * q_daz - s_z * q_day)
    return out


def dg_kinetic_x(cx, x_n, x_np1, p_n, fields_n, spin_n, hbar, degeneracy_eps=DEGENERACY_EPS):
    """Discrete x-gradient of the kinetic plus spin energy, per unit weight.

    Satisfies the telescoping identity

        gamma(p_n, x_np1) - gamma(p_n, x_n) + hbar * spin terms
            = dg_kinetic_x * (x_np1 - x_n)

    with both transverse potentials frozen at level n.  The difference
    quotients are evaluated as exact path averages of the derivative
    fields, which keeps them stable for arbitrarily short segments;
    segments below degeneracy_eps cells use the pointwise limit.
    """
    sp = cx.space
    x_n = np.asarray(x_n, dtype=float)
    x_np1 = np.asarray(x_np1, dtype=float)
    p_n = np.asarray(p_n, dtype=float)
    spin_n = np.asarray(spin_n, dtype=float)

    dayc = cx.G @ fields_n.a_y
    dazc = cx.G @ fields_n.a_z
    (q_ay, q_az), _ = line_averaged_apply(
        cx, x_n, x_np1, cvec=(dayc, dazc), eps_factor=degeneracy_eps
    )
    if hbar != 0.0:
        if sp.degree < 2:
            raise ConfigurationError("spin coupling needs spline degree >= 2")
        q_day, q_daz = line_average_splines(
            cx,
            x_n,
            x_np1,
            ((diff_coeffs(dayc, sp.dx), sp.degree - 2), (diff_coeffs(dazc, sp.dx), sp.degree - 2)),
            eps_factor=degeneracy_eps,
        )
    else:
        q_day = q_daz = None

    ay_n, az_n = _eval_many(sp, (fields_n.a_y, fields_n.a_z), x_n, sp.degree)
    ay_new, az_new = _eval_many(sp, (fields_n.a_y, fields_n.a_z), x_np1, sp.degree)
    g_n = gamma_1d(p_n, ay_n * ay_n + az_n * az_n)
    return _dg_x_values(
        p_n,
        spin_n[:, 1],
        spin_n[:, 2],
        hbar,
        ay_n,
        az_n,
        g_n,
        ay_new,
        az_new,
        q_ay,
        q_az,
        q_day,
        q_daz,
    )


def step_subsystem1(state, params):
    """Advance positions, momenta and the longitudinal field by dt.

    Implicit midpoint-like discrete-gradient update solved by Picard
    iteration.  The stored new position is exactly x_n + dt * vbar with
    the same vbar that weights the current deposit, which is what makes
    the discrete Gauss law exact independent of the tolerance.
    """
    ens = state.ensemble
    if ens.n_particles == 0 or params.dt == 0.0:
        return state
    cx = state.complex
    sp = cx.space
    f = state.fields
    dt = params.dt
    hbar = state.hbar
    n = ens.n_particles

    xn = ens.X
    pn = ens.P
    w = ens.W
    s_y = ens.S[:, 1]
    s_z = ens.S[:, 2]
    exn = f.e_x
    ayc = f.a_y
    azc = f.a_z

    dayc = cx.G @ ayc
    dazc = cx.G @ azc
    with_spin = hbar != 0.0
    if with_spin:
        if sp.degree < 2:
            raise ConfigurationError("spin coupling needs spline degree >= 2")
        d2ayc = diff_coeffs(dayc, sp.dx)
        d2azc = diff_coeffs(dazc, sp.dx)
        d2specs = ((d2ayc, sp.degree - 2), (d2azc, sp.degree - 2))

    ay0, az0 = _eval_many(sp, (ayc, azc), xn, sp.degree)
    g0 = gamma_1d(pn, ay0 * ay0 + az0 * az0)

    scale_x = max(1.0, float(np.max(np.abs(xn))))
    scale_p = max(1.0, float(np.max(np.abs(pn))))
    scale_e = max(1.0, float(np.max(np.abs(exn))))

    x1, p1, e1 = xn, pn, exn
    ay1, az1 = ay0, az0
    delta = np.inf
    for _ in range(params.max_iter):
        asq1 = ay1 * ay1 + az1 * az1
        vbar = dg_kinetic_p(pn, p1, asq1)
        x_new = xn + dt * vbar
        ebar = 0.5 * (exn + e1)

        def sweep(lo, hi):
            xs = x_new[lo:hi]
            (force, q_ay, q_az), dep = line_averaged_apply(
                cx,
                xn[lo:hi],
                xs,
                cvec=(ebar, dayc, dazc),
                pweights=w[lo:hi] * vbar[lo:hi],
                eps_factor=params.degeneracy_eps,
            )
            if with_spin:
                q_day, q_daz = line_average_splines(
                    cx, xn[lo:hi], xs, d2specs, eps_factor=params.degeneracy_eps
                )
            else:
                q_day = q_daz = None
            ay2, az2 = _eval_many(sp, (ayc, azc), xs, sp.degree)
            dgx = _dg_x_values(
                pn[lo:hi],
                s_y[lo:hi],
                s_z[lo:hi],
                hbar,
                ay0[lo:hi],
                az0[lo:hi],
                g0[lo:hi],
                ay2,
                az2,
                q_ay,
                q_az,
                q_day,
                q_daz,
            )
            p2 = pn[lo:hi] + dt * (force - dgx)
            return p2, dep, ay2, az2

        parts = map_chunks(sweep, n, params.workers)
        p_new = np.concatenate([part[0] for part in parts])
        dep = pairwise_sum([part[1] for part in parts])
        ay_new = np.concatenate([part[2] for part in parts])
        az_new = np.concatenate([part[3] for part in parts])
        e_new = exn - dt * cx.solve_m1(dep)

        delta = max(
            float(np.max(np.abs(x_new - x1))) / scale_x,
            float(np.max(np.abs(p_new - p1))) / scale_p,
            float(np.max(np.abs(e_new - e1))) / scale_e,
        )
        x1, p1, e1 = x_new, p_new, e_new
        ay1, az1 = ay_new, az_new
        if delta < params.tol:
            break
    else:
        raise NonconvergenceError(
            f"particle push stalled at update norm {delta:.3e} "
            f"after {params.max_iter} iterations",
            residual=delta,
            iterations=params.max_iter,
        )

    ens_new = replace(ens, X=wrap_position(x1, sp.length), P=p1)
    return replace(state, ensemble=ens_new, fields=replace(f, e_x=e1))


def step_subsystem2(state, params):
    """Advance the transverse fields by dt with X, P, S, e_x frozen.

    The trapezoid rule in (e, a) combined with the two-point secant of
    gamma in |A_perp|^2 keeps the energy exchange between particles and
    transverse fields exact.  The linear part is kept on the left of an
    M0-preconditioned fixed point.
    """
    if params.dt == 0.0:
        return state
    cx = state.complex
    sp = cx.space
    ens = state.ensemble
    f = state.fields
    dt = params.dt
    hbar = state.hbar
    n = ens.n_particles
    K = cx.K
    quarter = 0.25 * dt * dt

    eyn, ezn = f.e_y, f.e_z
    ayn, azn = f.a_y, f.a_z

    rhs_y = cx.M0 @ eyn - quarter * (K @ eyn) + dt * (K @ ayn)
    rhs_z = cx.M0 @ ezn - quarter * (K @ ezn) + dt * (K @ azn)
    if hbar != 0.0 and n:
        idx1, vals1 = basis_at(ens.X, sp.degree - 1, sp.dx, sp.cells, sp.length)
        dep_sz = deposit(idx1, vals1 * (ens.W * ens.S[:, 2])[:, None], sp.cells)
        dep_sy = deposit(idx1, vals1 * (ens.W * ens.S[:, 1])[:, None], sp.cells)
        rhs_y = rhs_y - dt * hbar * (cx.G.T @ dep_sz)
        rhs_z = rhs_z + dt * hbar * (cx.G.T @ dep_sy)

    if n:
        idx0, vals0 = basis_at(ens.X, sp.degree, sp.dx, sp.cells, sp.length)
        ay_p = np.einsum("nr,nr->n", vals0, ayn[idx0])
        az_p = np.einsum("nr,nr->n", vals0, azn[idx0])
        g_n = gamma_1d(ens.P, ay_p * ay_p + az_p * az_p)

    scale_y = max(1.0, float(np.max(np.abs(eyn))))
    scale_z = max(1.0, float(np.max(np.abs(ezn))))

    ey1, ez1 = eyn, ezn
    delta = np.inf
    for _ in range(params.max_iter):
        if n:
            ay1 = ayn - 0.5 * dt * (eyn + ey1)
            az1 = azn - 0.5 * dt * (ezn + ez1)

            def sweep(lo, hi):
                v = vals0[lo:hi]
                i = idx0[lo:hi]
                ay1p = np.einsum("nr,nr->n", v, ay1[i])
                az1p = np.einsum("nr,nr->n", v, az1[i])
                denom = g_n[lo:hi] + gamma_1d(ens.P[lo:hi], ay1p * ay1p + az1p * az1p)
                cy = ens.W[lo:hi] * (ay_p[lo:hi] + ay1p) / denom
                cz = ens.W[lo:hi] * (az_p[lo:hi] + az1p) / denom
                return (
                    deposit(i, v * cy[:, None], sp.cells),
                    deposit(i, v * cz[:, None], sp.cells),
                )

            parts = map_chunks(sweep, n, params.workers)
            part_y = pairwise_sum([part[0] for part in parts])
            part_z = pairwise_sum([part[1] for part in parts])
            ey2 = cx.solve_m0(rhs_y - quarter * (K @ ey1) + dt * part_y)
            ez2 = cx.solve_m0(rhs_z - quarter * (K @ ez1) + dt * part_z)
        else:
            ey2 = cx.solve_m0(rhs_y - quarter * (K @ ey1))
            ez2 = cx.solve_m0(rhs_z - quarter * (K @ ez1))

        delta = max(
            float(np.max(np.abs(ey2 - ey1))) / scale_y,
            float(np.max(np.abs(ez2 - ez1))) / scale_z,
        )
        ey1, ez1 = ey2, ez2
        if delta < params.tol:
            break
    else:
        raise NonconvergenceError(
            f"transverse field solve stalled at update norm {delta:.3e} "
            f"after {params.max_iter} iterations",
            residual=delta,
            iterations=params.max_iter,
        )

    f_new = replace(
        f,
        e_y=ey1,
        e_z=ez1,
        a_y=ayn - 0.5 * dt * (eyn + ey1),
        a_z=azn - 0.5 * dt * (ezn + ez1),
    )
    return replace(state, fields=f_new)


def step_subsystem3(state, params):
    """Rotate each spin about r = (0, dA_z/dx, -dA_y/dx) at its position.

    Exact solution of the precession equation; |s| and the spin energy
    are invariant because the rotation axis is the gradient direction.
    """
    ens = state.ensemble
    if ens.n_particles == 0 or params.dt == 0.0:
        return state
    cx = state.complex
    sp = cx.space
    dayc = cx.G @ state.fields.a_y
    dazc = cx.G @ state.fields.a_z
    yv, zv = _eval_many(sp, (dayc, dazc), ens.X, sp.degree - 1)
    axes = np.column_stack([np.zeros_like(yv), zv, -yv])
    s_new = rotate_vectors(ens.S, axes, params.dt)
    return replace(state, ensemble=replace(ens, S=s_new))


def lie_trotter_step(state, params):
    """First-order splitting: I then II then III, each over the full dt."""
    out = step_subsystem1(state, params)
    out = step_subsystem2(out, params)
    out = step_subsystem3(out, params)
    return replace(out, time=state.time + params.dt)


def strang_step(state, params):
    """Symmetric second-order splitting I-II-III-II-I."""
    half = replace(params, dt=0.5 * params.dt)
    out = step_subsystem1(state, half)
    out = step_subsystem2(out, half)
    out = step_subsystem3(out, params)
    out = step_subsystem2(out, half)
    out = step_subsystem1(out, half)
    return replace(out, time=state.time + params.dt)


def advance(state, params):
    """One composite step according to params.splitting."""
    if params.splitting == "lie":
        return lie_trotter_step(state, params)
    if params.splitting == "strang":
        return strang_step(state, params)
    raise ConfigurationError(f"unknown splitting {params.splitting!r}")


INITIAL_POISSON_ATOL = 1e-14


def solve_initial_poisson(state):
    """Replace e_x by the solution of the discrete Poisson equation.

    Solves G' M1 G phi = rho - b by conjugate gradients (the constant
    null space is harmless for the compatible right side) and sets
    e_x = -G phi.  The solve is run to the fixed absolute tolerance
    INITIAL_POISSON_ATOL, the same order as the step tolerances, so the
    initial Gauss-law residual sits at the level the steppers maintain;
    later steps can only preserve what holds at t = 0.
    """
    cx = state.complex
    sp = cx.space
    ens = state.ensemble
    if ens.n_particles:
        rho = deposit_0form(cx, ens.X, ens.W)
    else:
        rho = np.zeros(sp.cells)
    b = cx.b0

    total = float(abs(np.sum(rho) - np.sum(b)))
    if total > 1e-10 * max(1.0, float(abs(np.sum(b)))):
        raise ConfigurationError(
            f"total marker charge differs from the neutralizing background "
            f"by {total:.3e}; the periodic Poisson problem is unsolvable"
        )

    rhs = rho - b
    atol = INITIAL_POISSON_ATOL * max(1.0, float(np.max(np.abs(rho))))
    phi, _ = cg(cx.K, rhs, rtol=0.0, atol=atol, maxiter=20 * rhs.size)
    e_x = -(cx.G @ phi)

    # safety net: fall back to a direct least-squares polish if the
    # conjugate-gradient result misses the documented level
    r = cx.G.T @ (cx.M1 @ e_x) + rho - b
    if float(np.max(np.abs(r))) > 10.0 * atol:
        dphi, *_ = np.linalg.lstsq(cx.K, r, rcond=None)
        e_x = e_x - cx.G @ dphi

    return replace(state, fields=replace(state.fields, e_x=e_x))
