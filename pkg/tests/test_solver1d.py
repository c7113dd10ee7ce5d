import numpy as np
import pytest
from dataclasses import replace
from scipy.integrate import solve_ivp

from vlpic.bsplines import basis_at
from vlpic.derham import (
    build_complex_1d,
    eval_0form,
    eval_0form_derivative,
    eval_1form,
    l2_project_0form,
    line_averaged_apply,
)
from vlpic.diagnostics import hamiltonian_1d, poisson_residual_1d
from vlpic.errors import ConfigurationError, NonconvergenceError
from vlpic.particles import ParticleEnsemble, init_spin_delta, sample_maxwellian_1d
from vlpic.solver1d import (
    FieldState1D,
    SolverParams,
    State1D,
    advance,
    dg_kinetic_p,
    dg_kinetic_x,
    gamma_1d,
    lie_trotter_step,
    solve_initial_poisson,
    step_subsystem1,
    step_subsystem2,
    step_subsystem3,
    strang_step,
)

K0 = 2.0 ** -0.5
LENGTH = 2.0 * np.pi / K0
E0 = np.sqrt(3.0)


def circular_fields(cx, amp=E0, k=K0):
    return FieldState1D(
        e_x=np.zeros(cx.n1),
        e_y=l2_project_0form(cx, lambda x: amp * np.cos(k * x)),
        e_z=l2_project_0form(cx, lambda x: amp * np.sin(k * x)),
        a_y=l2_project_0form(cx, lambda x: -amp * np.sin(k * x)),
        a_z=l2_project_0form(cx, lambda x: amp * np.cos(k * x)),
    )


def make_state(cells=32, degree=3, n=400, hbar=0.1, seed=3, spin=(0.0, 0.0, 1.0)):
    cx = build_complex_1d(cells, degree, LENGTH)
    ens = sample_maxwellian_1d(n, 3.0 / 511.0, LENGTH, seed=seed)
    ens = init_spin_delta(ens, spin)
    state = State1D(
        ensemble=ens, fields=circular_fields(cx), complex=cx, hbar=hbar, time=0.0
    )
    return solve_initial_poisson(state)


def spin_energy(state):
    cx = state.complex
    ens = state.ensemble
    day = eval_1form(cx, cx.G @ state.fields.a_y, ens.X)
    daz = eval_1form(cx, cx.G @ state.fields.a_z, ens.X)
    return state.hbar * float(
        np.sum(ens.W * (ens.S[:, 1] * daz - ens.S[:, 2] * day))
    )


# --- discrete gradient identities ----------------------------------------


def test_dg_kinetic_p_secant_identity():
    rng = np.random.default_rng(11)
    p0 = rng.normal(0.0, 1.5, 4000)
    p1 = p0 + rng.normal(0.0, 0.5, 4000)
    asq = rng.uniform(0.0, 9.0, 4000)
    lhs = gamma_1d(p1, asq) - gamma_1d(p0, asq)
    rhs = dg_kinetic_p(p0, p1, asq) * (p1 - p0)
    assert np.max(np.abs(lhs - rhs)) < 1e-14 * np.maximum(1.0, np.abs(lhs)).max()


def test_dg_kinetic_x_telescopes_kinetic_plus_spin():
    cx = build_complex_1d(24, 3, LENGTH)
    f = circular_fields(cx)
    rng = np.random.default_rng(7)
    n = 500
    x0 = rng.uniform(0.0, LENGTH, n)
    # mix of long, short, and nearly-stationary segments
    dxs = np.concatenate(
        [
            rng.uniform(-1.5, 1.5, n - 200),
            rng.uniform(-1e-6, 1e-6, 100),
            rng.uniform(-1e-11, 1e-11, 100),
        ]
    )
    x1 = x0 + dxs
    p = rng.normal(0.0, 0.4, n)
    spins = rng.normal(0.0, 1.0, (n, 3))
    hbar = 0.07

    dgx = dg_kinetic_x(cx, x0, x1, p, f, spins, hbar)

    def energy(xq):
        ay = eval_0form(cx, f.a_y, xq)
        az = eval_0form(cx, f.a_z, xq)
        day = eval_1form(cx, cx.G @ f.a_y, xq)
        daz = eval_1form(cx, cx.G @ f.a_z, xq)
        return gamma_1d(p, ay * ay + az * az) + hbar * (
            spins[:, 1] * daz - spins[:, 2] * day
        )

    lhs = energy(x1) - energy(x0)
    rhs = dgx * (x1 - x0)
    scale = np.maximum(1.0, np.abs(lhs))
    assert np.max(np.abs(lhs - rhs) / scale) < 1e-13


def test_dg_kinetic_x_pointwise_limit():
    # an exactly stationary particle must feel the local analytic force
    cx = build_complex_1d(48, 3, LENGTH)
    f = circular_fields(cx)
    x = np.array([2.31])
    p = np.array([0.2])
    spins = np.array([[0.0, 0.3, -0.5]])
    hbar = 0.05
    dgx = dg_kinetic_x(cx, x, x, p, f, spins, hbar)
    ay = eval_0form(cx, f.a_y, x)
    az = eval_0form(cx, f.a_z, x)
    day = eval_1form(cx, cx.G @ f.a_y, x)
    daz = eval_1form(cx, cx.G @ f.a_z, x)
    d2ay = eval_0form_derivative(cx, f.a_y, x, order=2)
    d2az = eval_0form_derivative(cx, f.a_z, x, order=2)
    expected = (ay * day + az * daz) / gamma_1d(p, ay * ay + az * az) + hbar * (
        spins[:, 1] * d2az - spins[:, 2] * d2ay
    )
    assert abs(dgx[0] - expected[0]) < 1e-12


def test_dg_kinetic_x_rejects_spin_on_linear_splines():
    cx = build_complex_1d(24, 1, LENGTH)
    f = FieldState1D(*(np.zeros(24) for _ in range(5)))
    with pytest.raises(ConfigurationError):
        dg_kinetic_x(
            cx, np.array([1.0]), np.array([1.5]), np.array([0.1]), f,
            np.array([[0.0, 0.0, 1.0]]), 0.1,
        )


# --- subsystem I ----------------------------------------------------------


def test_subsystem1_converges_to_ode_oracle():
    cells = 16
    cx = build_complex_1d(cells, 3, LENGTH)
    rng = np.random.default_rng(5)
    fields = FieldState1D(
        e_x=0.1 * rng.normal(size=cells),
        e_y=np.zeros(cells),
        e_z=np.zeros(cells),
        a_y=l2_project_0form(cx, lambda x: 0.3 * np.cos(K0 * x)),
        a_z=l2_project_0form(cx, lambda x: 0.2 * np.sin(K0 * x) + 0.1 * np.cos(2 * K0 * x)),
    )
    w = 0.7
    hbar = 0.05
    spin = np.array([[0.2, -0.4, 0.8]])
    ens = ParticleEnsemble(
        X=np.array([1.3]), P=np.array([0.9]), S=spin, W=np.array([w])
    )
    state = State1D(ensemble=ens, fields=fields, complex=cx, hbar=hbar)

    def lam1_row(x):
        s = cx.space
        idx, vals = basis_at(np.atleast_1d(x), s.degree - 1, s.dx, s.cells, s.length)
        row = np.zeros(cells)
        np.add.at(row, idx[0], vals[0])
        return row

    def rhs(_t, u):
        x, p, e = u[0], u[1], u[2:]
        xq = np.array([x])
        ay = eval_0form(cx, fields.a_y, xq)[0]
        az = eval_0form(cx, fields.a_z, xq)[0]
        day = eval_1form(cx, cx.G @ fields.a_y, xq)[0]
        daz = eval_1form(cx, cx.G @ fields.a_z, xq)[0]
        d2ay = eval_0form_derivative(cx, fields.a_y, xq, order=2)[0]
        d2az = eval_0form_derivative(cx, fields.a_z, xq, order=2)[0]
        g = np.sqrt(1.0 + p * p + ay * ay + az * az)
        v = p / g
        ex_val = eval_1form(cx, e, xq)[0]
        dp = (
            ex_val
            - (ay * day + az * daz) / g
            - hbar * (spin[0, 1] * d2az - spin[0, 2] * d2ay)
        )
        de = -cx.solve_m1(lam1_row(x) * (w * v))
        return np.concatenate([[v, dp], de])

    t_end = 0.5
    u0 = np.concatenate([[1.3, 0.9], fields.e_x])
    ref = solve_ivp(
        rhs, (0.0, t_end), u0, method="DOP853", rtol=1e-12, atol=1e-13
    ).y[:, -1]

    def run(dt):
        s = state
        for _ in range(round(t_end / dt)):
            s = step_subsystem1(s, SolverParams(dt=dt, tol=1e-14))
        return np.concatenate([s.ensemble.X, s.ensemble.P, s.fields.e_x])

    # The staggered discrete gradient trades formal symmetry for exact energy
    # balance, so on its own this map is first order.  What matters here is
    # that it converges to the right continuous dynamics.
    dts = np.array([0.05, 0.025, 0.0125])
    errs = np.array([np.max(np.abs(run(dt) - ref)) for dt in dts])
    assert errs[-1] < 4e-5
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope > 0.7, f"no convergence toward the oracle, slope {slope:.2f}"


def test_subsystem1_audit_energy_poisson_frozen_blocks():
    state = make_state(n=400, hbar=0.1)
    params = SolverParams(dt=0.02, tol=1e-13)
    h0 = hamiltonian_1d(state)
    _, r0 = poisson_residual_1d(state)
    out = step_subsystem1(state, params)

    h1 = hamiltonian_1d(out)
    n = state.ensemble.n_particles
    assert abs(h1 - h0) <= 10 * n * params.tol * max(1.0, abs(h0))
    _, r1 = poisson_residual_1d(out)
    assert abs(r1 - r0) <= 10 * params.tol
    # untouched blocks are shared, not copied
    assert out.fields.e_y is state.fields.e_y
    assert out.fields.e_z is state.fields.e_z
    assert out.fields.a_y is state.fields.a_y
    assert out.fields.a_z is state.fields.a_z
    assert out.ensemble.S is state.ensemble.S
    assert out.ensemble.W is state.ensemble.W
    assert out.time == state.time


def test_subsystem1_satisfies_its_defining_equations():
    state = make_state(n=120, hbar=0.08, seed=9)
    params = SolverParams(dt=0.02, tol=1e-14)
    out = step_subsystem1(state, params)
    cx = state.complex
    xn, pn = state.ensemble.X, state.ensemble.P
    # reconstruct the unwrapped arrival point from the stored step
    x1 = out.ensemble.X
    dxs = (x1 - xn + 0.5 * LENGTH) % LENGTH - 0.5 * LENGTH
    x1u = xn + dxs
    p1 = out.ensemble.P

    ay1 = eval_0form(cx, state.fields.a_y, x1u)
    az1 = eval_0form(cx, state.fields.a_z, x1u)
    vbar = dg_kinetic_p(pn, p1, ay1 * ay1 + az1 * az1)
    assert np.max(np.abs(x1u - xn - params.dt * vbar)) < 5e-13

    ebar = 0.5 * (state.fields.e_x + out.fields.e_x)
    force, dep = line_averaged_apply(
        cx, xn, x1u, cvec=ebar, pweights=state.ensemble.W * vbar
    )
    dgx = dg_kinetic_x(
        cx, xn, x1u, pn, state.fields, state.ensemble.S, state.hbar
    )
    assert np.max(np.abs(p1 - pn - params.dt * (force - dgx))) < 5e-13
    lhs = cx.M1 @ (out.fields.e_x - state.fields.e_x)
    assert np.max(np.abs(lhs + params.dt * dep)) < 5e-13


def test_subsystem1_nonconvergence_carries_residual():
    state = make_state(n=50)
    with pytest.raises(NonconvergenceError) as err:
        step_subsystem1(state, SolverParams(dt=0.02, tol=1e-13, max_iter=1))
    assert err.value.iterations == 1
    assert err.value.residual > 1e-13


# --- subsystem II ---------------------------------------------------------


def test_subsystem2_field_only_matches_direct_solve():
    cells = 24
    cx = build_complex_1d(cells, 3, LENGTH)
    rng = np.random.default_rng(2)
    f = FieldState1D(
        e_x=np.zeros(cells),
        e_y=rng.normal(size=cells),
        e_z=rng.normal(size=cells),
        a_y=rng.normal(size=cells),
        a_z=rng.normal(size=cells),
    )
    ens = ParticleEnsemble(
        X=np.empty(0), P=np.empty(0), S=np.empty((0, 3)), W=np.empty(0)
    )
    state = State1D(ensemble=ens, fields=f, complex=cx, hbar=0.0)
    dt = 0.02
    out = step_subsystem2(state, SolverParams(dt=dt, tol=1e-15))

    lhs = cx.M0 + 0.25 * dt * dt * cx.K
    rhs = (cx.M0 - 0.25 * dt * dt * cx.K) @ f.e_y + dt * (cx.K @ f.a_y)
    ey_direct = np.linalg.solve(lhs, rhs)
    assert np.max(np.abs(out.fields.e_y - ey_direct)) < 1e-12
    np.testing.assert_allclose(
        out.fields.a_y, f.a_y - 0.5 * dt * (f.e_y + out.fields.e_y), rtol=0, atol=1e-15
    )
    # frozen blocks
    assert out.fields.e_x is f.e_x
    assert out.ensemble is ens


def test_subsystem2_field_only_conserves_wave_energy():
    cells = 24
    cx = build_complex_1d(cells, 3, LENGTH)
    f = FieldState1D(
        e_x=np.zeros(cells),
        e_y=l2_project_0form(cx, lambda x: 1.1 * np.cos(K0 * x)),
        e_z=np.zeros(cells),
        a_y=l2_project_0form(cx, lambda x: 0.4 * np.sin(K0 * x)),
        a_z=np.zeros(cells),
    )
    ens = ParticleEnsemble(
        X=np.empty(0), P=np.empty(0), S=np.empty((0, 3)), W=np.empty(0)
    )
    state = State1D(ensemble=ens, fields=f, complex=cx, hbar=0.0)
    h0 = hamiltonian_1d(state)
    params = SolverParams(dt=0.02, tol=1e-14)
    s = state
    for _ in range(1000):
        s = step_subsystem2(s, params)
    assert abs(hamiltonian_1d(s) - h0) <= 1e-13 * max(1.0, abs(h0))


def test_subsystem2_with_particles_conserves_and_freezes():
    state = make_state(n=300, hbar=0.1, seed=4)
    params = SolverParams(dt=0.02, tol=1e-13)
    h0 = hamiltonian_1d(state)
    out = step_subsystem2(state, params)
    h1 = hamiltonian_1d(out)
    n = state.ensemble.n_particles
    assert abs(h1 - h0) <= 10 * n * params.tol * max(1.0, abs(h0))
    assert out.ensemble is state.ensemble
    assert out.fields.e_x is state.fields.e_x
    # transverse potentials actually move
    assert np.max(np.abs(out.fields.a_y - state.fields.a_y)) > 1e-5


def test_subsystem2_solves_its_assembled_equation():
    state = make_state(n=150, hbar=0.06, seed=12)
    dt = 0.02
    out = step_subsystem2(state, SolverParams(dt=dt, tol=1e-14))
    cx = state.complex
    sp = cx.space
    ens = state.ensemble
    f0, f1 = state.fields, out.fields

    idx0, vals0 = basis_at(ens.X, sp.degree, sp.dx, sp.cells, sp.length)
    ay0 = np.einsum("nr,nr->n", vals0, f0.a_y[idx0])
    az0 = np.einsum("nr,nr->n", vals0, f0.a_z[idx0])
    ay1 = np.einsum("nr,nr->n", vals0, f1.a_y[idx0])
    az1 = np.einsum("nr,nr->n", vals0, f1.a_z[idx0])
    g0 = gamma_1d(ens.P, ay0 * ay0 + az0 * az0)
    g1 = gamma_1d(ens.P, ay1 * ay1 + az1 * az1)
    coeff = ens.W * (ay0 + ay1) / (g0 + g1)
    part_y = np.zeros(sp.cells)
    np.add.at(part_y, idx0, vals0 * coeff[:, None])

    idx1, vals1 = basis_at(ens.X, sp.degree - 1, sp.dx, sp.cells, sp.length)
    dep_sz = np.zeros(sp.cells)
    np.add.at(dep_sz, idx1, vals1 * (ens.W * ens.S[:, 2])[:, None])

    abar = 0.5 * (f0.a_y + f1.a_y)
    res = (
        cx.M0 @ (f1.e_y - f0.e_y)
        - dt * (part_y + cx.K @ abar - state.hbar * (cx.G.T @ dep_sz))
    )
    assert np.max(np.abs(res)) < 1e-12


# --- subsystem III --------------------------------------------------------


def test_subsystem3_preserves_norms_and_energy():
    state = make_state(n=500, hbar=0.1, seed=6)
    # tilt spins so the rotation is visible
    rng = np.random.default_rng(8)
    s_tilt = rng.normal(size=(500, 3))
    s_tilt /= np.linalg.norm(s_tilt, axis=1)[:, None]
    state = replace(state, ensemble=replace(state.ensemble, S=s_tilt))
    params = SolverParams(dt=0.05)
    h0 = hamiltonian_1d(state)
    out = step_subsystem3(state, params)
    assert np.max(np.abs(np.linalg.norm(out.ensemble.S, axis=1) - 1.0)) < 1e-14
    assert abs(hamiltonian_1d(out) - h0) <= 1e-13 * max(1.0, abs(h0))
    assert np.max(np.abs(out.ensemble.S - state.ensemble.S)) > 1e-4
    assert out.fields is state.fields
    assert out.ensemble.X is state.ensemble.X


def test_subsystem3_zeeman_term_invariant_and_reversible():
    state = make_state(n=200, hbar=0.1, seed=13)
    rng = np.random.default_rng(14)
    s_tilt = rng.normal(size=(200, 3))
    s_tilt /= np.linalg.norm(s_tilt, axis=1)[:, None]
    state = replace(state, ensemble=replace(state.ensemble, S=s_tilt))
    z0 = spin_energy(state)
    fwd = step_subsystem3(state, SolverParams(dt=0.1))
    assert abs(spin_energy(fwd) - z0) < 1e-13 * max(1.0, abs(z0))
    back = step_subsystem3(fwd, SolverParams(dt=-0.1))
    assert np.max(np.abs(back.ensemble.S - state.ensemble.S)) < 1e-14


# --- compositions ---------------------------------------------------------


def test_lie_trotter_conserves_over_many_steps():
    state = make_state(n=400, hbar=0.1)
    params = SolverParams(dt=0.02, tol=1e-13)
    h0 = hamiltonian_1d(state)
    _, r0 = poisson_residual_1d(state)
    s = state
    for _ in range(100):
        s = lie_trotter_step(s, params)
    assert abs(s.time - 2.0) < 1e-12
    assert abs(hamiltonian_1d(s) - h0) / abs(h0) < 1e-11
    _, r1 = poisson_residual_1d(s)
    assert r1 < max(10 * r0, 1e-13)
    assert np.max(np.abs(np.linalg.norm(s.ensemble.S, axis=1) - 1.0)) < 1e-13


def test_strang_is_second_order_lie_first_order():
    state = make_state(cells=16, n=60, hbar=0.05, seed=21)
    t_end = 0.4

    def run(stepper, dt):
        s = state
        p = SolverParams(dt=dt, tol=1e-14)
        for _ in range(round(t_end / dt)):
            s = stepper(s, p)
        return s

    def dist(a, b):
        return max(
            np.max(np.abs(a.ensemble.X - b.ensemble.X)),
            np.max(np.abs(a.ensemble.P - b.ensemble.P)),
            np.max(np.abs(a.fields.e_y - b.fields.e_y)),
            np.max(np.abs(a.ensemble.S - b.ensemble.S)),
        )

    ref = run(strang_step, 0.00125)
    orders = {}
    for name, stepper in (("lie", lie_trotter_step), ("strang", strang_step)):
        e1 = dist(run(stepper, 0.04), ref)
        e2 = dist(run(stepper, 0.02), ref)
        orders[name] = np.log2(e1 / e2)
    assert 0.8 < orders["lie"] < 1.35, orders
    assert 1.6 < orders["strang"] < 2.4, orders


def test_advance_dispatches_on_splitting():
    state = make_state(cells=16, n=40, seed=30)
    lie = advance(state, SolverParams(dt=0.02, splitting="lie"))
    assert abs(lie.time - 0.02) < 1e-15
    strang = advance(state, SolverParams(dt=0.02, splitting="strang"))
    assert abs(strang.time - 0.02) < 1e-15
    with pytest.raises(ConfigurationError):
        advance(state, SolverParams(dt=0.02, splitting="verlet"))


def test_zero_dt_and_empty_ensemble_are_identities():
    state = make_state(cells=16, n=40, seed=31)
    for stepper in (step_subsystem1, step_subsystem2, step_subsystem3):
        assert stepper(state, SolverParams(dt=0.0)) is state
    empty = ParticleEnsemble(
        X=np.empty(0), P=np.empty(0), S=np.empty((0, 3)), W=np.empty(0)
    )
    fstate = replace(state, ensemble=empty)
    assert step_subsystem1(fstate, SolverParams(dt=0.02)) is fstate
    assert step_subsystem3(fstate, SolverParams(dt=0.02)) is fstate


def test_worker_count_does_not_change_bits():
    # two chunks of work plus a remainder
    state = make_state(n=5000, hbar=0.1, seed=17)
    one = lie_trotter_step(state, SolverParams(dt=0.02, workers=1))
    three = lie_trotter_step(state, SolverParams(dt=0.02, workers=3))
    assert np.array_equal(one.ensemble.X, three.ensemble.X)
    assert np.array_equal(one.ensemble.P, three.ensemble.P)
    assert np.array_equal(one.ensemble.S, three.ensemble.S)
    for name in ("e_x", "e_y", "e_z", "a_y", "a_z"):
        assert np.array_equal(getattr(one.fields, name), getattr(three.fields, name))


# --- initial Poisson solve ------------------------------------------------


def test_solve_initial_poisson_residual_level():
    state = make_state(n=1000, seed=0)
    _, rn = poisson_residual_1d(state)
    assert rn <= 1e-13
    # residual components always sum to zero
    r, _ = poisson_residual_1d(state)
    assert abs(np.sum(r)) < 1e-13


def test_solve_initial_poisson_rejects_charge_mismatch():
    cx = build_complex_1d(16, 3, LENGTH)
    ens = sample_maxwellian_1d(100, 3.0 / 511.0, LENGTH, seed=1)
    bad = replace(ens, W=ens.W * 0.5)
    f = FieldState1D(*(np.zeros(16) for _ in range(5)))
    state = State1D(ensemble=bad, fields=f, complex=cx, hbar=0.0)
    with pytest.raises(ConfigurationError):
        solve_initial_poisson(state)
