"""Monitored quantities: energies, Gauss-law residuals, mode amplitudes.

Everything here is a pure function of a state snapshot.  The conservation
claims of the steppers are statements about these numbers, so the
definitions below are the reference ones; in particular the Hamiltonians
are evaluated with the same basis contractions the steppers use.
"""

from dataclasses import dataclass, field

import numpy as np

from .derham import (
    deposit_0form,
    deposit_0form_2d,
    eval_0form,
    eval_0form_2d,
    eval_1form,
    eval_1star_2d,
    eval_2form_2d,
)
from .errors import ConfigurationError

__all__ = [
    "DiagnosticsRecord",
    "hamiltonian_1d",
    "hamiltonian_2d",
    "poisson_residual_1d",
    "poisson_residual_2d",
    "fourier_mode_amplitude",
    "relative_energy_error",
    "spin_moments",
]


@dataclass
class DiagnosticsRecord:
    """One row of the run diagnostics.

    mode_amp maps (field name, mode index) to the reported amplitude;
    spin_moments is the weighted spin sum (S_x, S_y, S_z).
    """

    step: int
    time: float
    H: float
    rel_energy_err: float
    poisson_res_inf: float
    mode_amp: dict = field(default_factory=dict)
    spin_moments: tuple = (0.0, 0.0, 0.0)


def relative_energy_error(h, h0):
    """|H - H0| / |H0|, or the absolute error when H0 is numerically zero."""
    if abs(h0) < 1e-14:
        return abs(h - h0)
    return abs(h - h0) / abs(h0)


def _kinetic_1d(state):
    ens = state.ensemble
    if ens.n_particles == 0:
        return 0.0
    cx = state.complex
    ay = eval_0form(cx, state.fields.a_y, ens.X)
    az = eval_0form(cx, state.fields.a_z, ens.X)
    gamma = np.sqrt(1.0 + ens.P * ens.P + ay * ay + az * az)
    return float(np.sum(ens.W * (gamma - 1.0)))


def _zeeman_1d(state):
    ens = state.ensemble
    if state.hbar == 0.0 or ens.n_particles == 0:
        return 0.0
    cx = state.complex
    day = eval_1form(cx, cx.G @ state.fields.a_y, ens.X)
    daz = eval_1form(cx, cx.G @ state.fields.a_z, ens.X)
    return state.hbar * float(np.sum(ens.W * (ens.S[:, 1] * daz - ens.S[:, 2] * day)))


def hamiltonian_1d(state):
    """Total discrete energy of a 1D state."""
    cx = state.complex
    f = state.fields
    quad = 0.5 * (
        f.e_x @ (cx.M1 @ f.e_x)
        + f.e_y @ (cx.M0 @ f.e_y)
        + f.e_z @ (cx.M0 @ f.e_z)
        + f.a_y @ (cx.K @ f.a_y)
        + f.a_z @ (cx.K @ f.a_z)
    )
    return _kinetic_1d(state) + _zeeman_1d(state) + float(quad)


def hamiltonian_2d(state):
    """Total discrete energy of a 2D state.

    The scalar potential a_z contributes its rotated-gradient energy
    through Kstar, and the spin couples to the in-plane gradient field
    (through V1*) and to the out-of-plane magnetic 2-form.
    """
    cx = state.complex
    f = state.fields
    ens = state.ensemble
    quad = 0.5 * (
        f.e_xy @ (cx.M1 @ f.e_xy)
        + f.e_z @ (cx.M0 @ f.e_z)
        + f.b_z @ (cx.M2 @ f.b_z)
        + f.a_z @ (cx.Kstar @ f.a_z)
    )
    total = float(quad)
    if ens.n_particles:
        x, y = ens.X[:, 0], ens.X[:, 1]
        az = eval_0form_2d(cx, f.a_z, x, y)
        psq = ens.P[:, 0] ** 2 + ens.P[:, 1] ** 2
        gamma = np.sqrt(1.0 + psq + az * az)
        total += float(np.sum(ens.W * (gamma - 1.0)))
        if state.hbar != 0.0:
            gx, gy = eval_1star_2d(cx, cx.Gstar @ f.a_z, x, y)
            bz = eval_2form_2d(cx, f.b_z, x, y)
            zeeman = np.sum(
                ens.W * (gx * ens.S[:, 0] + gy * ens.S[:, 1] + bz * ens.S[:, 2])
            )
            total += state.hbar * float(zeeman)
    return total


def poisson_residual_1d(state):
    """Discrete Gauss-law residual r and its inf-norm.

    r = G' M1 e_x + rho - b with rho the particle deposit on V0 and b the
    neutralizing background.  The steppers keep r frozen to rounding, so
    its norm measures accumulated drift from the initial solve.
    """
    cx = state.complex
    ens = state.ensemble
    if ens.n_particles:
        rho = deposit_0form(cx, ens.X, ens.W)
    else:
        rho = np.zeros(cx.n0)
    r = cx.G.T @ (cx.M1 @ state.fields.e_x) + rho - cx.b0
    return r, float(np.max(np.abs(r)))


def poisson_residual_2d(state):
    """2D Gauss-law residual on V0 and its inf-norm."""
    cx = state.complex
    ens = state.ensemble
    if ens.n_particles:
        rho = deposit_0form_2d(cx, ens.X[:, 0], ens.X[:, 1], ens.W)
    else:
        rho = np.zeros(cx.n0)
    r = cx.G.T @ (cx.M1 @ state.fields.e_xy) + rho - cx.b0
    return r, float(np.max(np.abs(r)))


def fourier_mode_amplitude(cx, coeffs, form_degree, mode):
    """Amplitude of one spatial Fourier mode of a 1D spline field.

    The field is sampled at the M grid points and transformed; mode 0
    reports |mean|, modes m >= 1 report (2/M)|c_m| so a pure cosine of
    amplitude A at mode m reports A.
    """
    s = cx.space
    m_max = s.cells // 2
    if not (0 <= mode <= m_max):
        raise ConfigurationError(
            f"mode {mode} out of range 0..{m_max} for {s.cells} cells"
        )
    grid = s.dx * np.arange(s.cells)
    if form_degree == 0:
        vals = eval_0form(cx, coeffs, grid)
    elif form_degree == 1:
        vals = eval_1form(cx, coeffs, grid)
    else:
        raise ConfigurationError(f"form degree must be 0 or 1, got {form_degree}")
    spectrum = np.fft.rfft(vals)
    if mode == 0:
        return float(np.abs(spectrum[0])) / s.cells
    return 2.0 * float(np.abs(spectrum[mode])) / s.cells


def spin_moments(ensemble):
    """Weighted spin sums (S_x, S_y, S_z)."""
    if ensemble.n_particles == 0:
        return np.zeros(3)
    return ensemble.S.T @ ensemble.W
