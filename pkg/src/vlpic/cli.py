"""Batch front-end: config parsing, run loop, CSV diagnostics, checkpoints.

A run is described by a small sectioned ``key = value`` text file.  Keys
live in fixed sections; ``model`` is the only top-level key.  Unknown
sections or keys are rejected with the offending line number, as are
values that fail their range checks.  Every optional key has a default,
so the empty string is a valid 1D configuration.

  (top level)   model            1d | 2d                      default 1d
  [grid]        cells            cells per axis               default 32
                degree           V0 spline degree per axis    default 3
  [domain]      k0               fundamental wavenumber(s);   default 1/sqrt(2)
                                 the axis length is 2*pi/k0
                lengths          explicit axis lengths (give either k0 or
                                 lengths, not both)
  [time]        dt               step size                    default 0.02
                t_end            final time                   default 10.0
                splitting        lie | strang                 default lie
                retry_halving    redo a failed step as two    default false
                                 half steps before erroring
  [particles]   np               particle count (>= 1)        default 1000
                temperature      thermal spread               default 3/511
                seed             RNG seed                     default 0
                spin_direction   initial spin axis, 3 reals   default 0 0 1
  [physics]     hbar             spin coupling strength       default 0.0
                e0               transverse field amplitude   default sqrt(3)
                k                init-mode wavenumber         default 1/sqrt(2)
  [solver]      tol              fixed-point tolerance        default 1e-13
                max_iter         fixed-point iteration cap    default 100
                degeneracy_eps   short-segment cutoff         default 1e-10
  [output]      directory        output directory (the --out
                                 flag overrides it)
                csv_stride       rows every N steps           default 1
                checkpoint_stride  checkpoints every N steps, 0 disables
                modes            Fourier modes to record      default 2

Scalar grid keys broadcast to both axes of a 2D run.  The initial fields
are E_y = e0*cos(kx), E_z = e0*sin(kx), A_y = -e0*sin(kx), A_z =
e0*cos(kx) projected onto V0 (in 2D the same profile along the first
axis, with A_y, E_y dropped and b_z = 0), and the longitudinal field
comes from the initial Poisson solve rather than being forced to zero,
so the Gauss law holds from step 0.

The diagnostics CSV carries one row per stride plus the initial and
final steps, header ``step,time,H,rel_energy_err,poisson_res_inf,<mode
columns>,Sx,Sy,Sz``, floats serialized with repr so a single-worker run
is bitwise reproducible.  Checkpoints are little-endian binary (magic
``VLPIC1``), store every coefficient and particle array verbatim, and
round-trip bitwise; resuming needs the original config file, which stays
the authority for everything a checkpoint does not store.

Exit codes: 0 success, 2 configuration error, 3 solver nonconvergence,
4 I/O error.  Failures print one JSON object on stderr.
"""

import argparse
import json
import math
import struct
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .derham import (
    DEGENERACY_EPS,
    build_complex_1d,
    build_complex_2d,
    eval_0form_2d,
    eval_1form_2d,
    l2_project_0form,
    l2_project_0form_2d,
)
from .diagnostics import (
    fourier_mode_amplitude,
    hamiltonian_1d,
    hamiltonian_2d,
    poisson_residual_1d,
    poisson_residual_2d,
    relative_energy_error,
    spin_moments,
)
from .errors import ConfigurationError, NonconvergenceError
from .particles import ParticleEnsemble, init_spin_delta, sample_maxwellian_1d, sample_maxwellian_2d
from .solver1d import FieldState1D, SolverParams, State1D, advance, solve_initial_poisson
from .solver2d import (
    FieldState2D,
    State2D,
    advance_2d,
    solve_initial_poisson_2d,
)

__all__ = [
    "SimConfig",
    "parse_config",
    "setup_run",
    "run",
    "write_checkpoint",
    "read_checkpoint",
    "main",
]

CHECKPOINT_MAGIC = b"VLPIC1"
CHECKPOINT_VERSION = 1

_SECTIONS = {
    "grid": {"cells", "degree"},
    "domain": {"k0", "lengths"},
    "time": {"dt", "t_end", "splitting", "retry_halving"},
    "particles": {"np", "temperature", "seed", "spin_direction"},
    "physics": {"hbar", "e0", "k"},
    "solver": {"tol", "max_iter", "degeneracy_eps"},
    "output": {"directory", "csv_stride", "checkpoint_stride", "modes"},
}


@dataclass(frozen=True)
class SimConfig:
    """A fully resolved run description.

    Per-axis quantities (cells, degree, lengths) are tuples whose length
    matches the model dimension; spin_direction is unit length.
    """

    model: str
    cells: tuple
    degree: tuple
    lengths: tuple
    dt: float
    t_end: float
    splitting: str
    retry_halving: bool
    n_particles: int
    temperature: float
    seed: int
    spin_direction: tuple
    hbar: float
    e0: float
    k: float
    tol: float
    max_iter: int
    degeneracy_eps: float
    directory: str
    csv_stride: int
    checkpoint_stride: int
    modes: tuple


def _as_bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _as_choice(options):
    def conv(text):
        low = text.lower()
        if low not in options:
            raise ValueError(f"expected one of {sorted(options)}, got {text!r}")
        return low

    return conv


def _split(text):
    return text.replace(",", " ").split()


def _as_ints(text):
    return tuple(int(tok) for tok in _split(text))


def _as_floats(text):
    return tuple(float(tok) for tok in _split(text))


def parse_config(text):
    """Parse and validate sectioned key = value text into a SimConfig."""
    entries = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError(f"line {lineno}: unterminated section header")
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigurationError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"line {lineno}: expected key = value, got {line!r}"
            )
        key, _, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if section == "" and key != "model":
            raise ConfigurationError(
                f"line {lineno}: key {key!r} must appear inside a section"
            )
        if section and key not in _SECTIONS[section]:
            raise ConfigurationError(f"line {lineno}: unknown key {section}.{key}")
        if not value:
            raise ConfigurationError(f"line {lineno}: empty value for {key}")
        if (section, key) in entries:
            raise ConfigurationError(f"line {lineno}: duplicate key {key}")
        entries[(section, key)] = (lineno, value)

    def take(section, key, conv, default):
        if (section, key) not in entries:
            return default, None
        lineno, raw = entries.pop((section, key))
        try:
            return conv(raw), lineno
        except ValueError as exc:
            name = f"{section}.{key}" if section else key
            raise ConfigurationError(f"line {lineno}: {name}: {exc}") from None

    def constrain(ok, section, key, lineno, what):
        if not ok:
            name = f"{section}.{key}" if section else key
            at = f"line {lineno}: " if lineno else ""
            raise ConfigurationError(f"{at}{name}: {what}")

    model, _ = take("", "model", _as_choice({"1d", "2d"}), "1d")
    naxes = 1 if model == "1d" else 2

    def per_axis(section, key, conv, default, kind):
        vals, lineno = take(section, key, conv, default)
        if len(vals) == 1:
            vals = vals * naxes
        constrain(len(vals) == naxes, section, key, lineno,
                  f"expected {naxes} {kind} value(s), got {len(vals)}")
        return vals, lineno

    cells, ln = per_axis("grid", "cells", _as_ints, (32,), "integer")
    constrain(all(c >= 4 for c in cells), "grid", "cells", ln, "needs at least 4 cells")
    degree, ln = per_axis("grid", "degree", _as_ints, (3,), "integer")
    constrain(all(1 <= d < c for d, c in zip(degree, cells)), "grid", "degree", ln,
              "degree must be >= 1 and smaller than the cell count")

    k0, k0_line = per_axis("domain", "k0", _as_floats, (2.0 ** -0.5,), "real")
    lengths, len_line = take("domain", "lengths", _as_floats, None)
    if lengths is not None:
        constrain(k0_line is None, "domain", "lengths", len_line,
                  "give either k0 or lengths, not both")
        if len(lengths) == 1:
            lengths = lengths * naxes
        constrain(len(lengths) == naxes, "domain", "lengths", len_line,
                  f"expected {naxes} real value(s), got {len(lengths)}")
        constrain(all(l > 0 for l in lengths), "domain", "lengths", len_line,
                  "must be positive")
    else:
        constrain(all(v > 0 for v in k0), "domain", "k0", k0_line, "must be positive")
        lengths = tuple(2.0 * math.pi / v for v in k0)

    dt, ln = take("time", "dt", float, 0.02)
    constrain(dt > 0, "time", "dt", ln, "must be positive")
    t_end, ln = take("time", "t_end", float, 10.0)
    constrain(t_end >= 0, "time", "t_end", ln, "must be nonnegative")
    splitting, _ = take("time", "splitting", _as_choice({"lie", "strang"}), "lie")
    retry, _ = take("time", "retry_halving", _as_bool, False)

    n_particles, ln = take("particles", "np", int, 1000)
    constrain(n_particles >= 1, "particles", "np", ln, "needs at least one particle")
    temperature, ln = take("particles", "temperature", float, 3.0 / 511.0)
    constrain(temperature >= 0, "particles", "temperature", ln, "must be nonnegative")
    seed, ln = take("particles", "seed", int, 0)
    constrain(seed >= 0, "particles", "seed", ln, "must be nonnegative")
    spin, ln = take("particles", "spin_direction", _as_floats, (0.0, 0.0, 1.0))
    constrain(len(spin) == 3, "particles", "spin_direction", ln, "needs 3 components")
    norm = math.sqrt(sum(v * v for v in spin))
    constrain(norm > 0, "particles", "spin_direction", ln, "must be nonzero")
    spin = tuple(v / norm for v in spin)

    hbar, ln = take("physics", "hbar", float, 0.0)
    constrain(hbar >= 0, "physics", "hbar", ln, "must be nonnegative")
    e0, ln = take("physics", "e0", float, math.sqrt(3.0))
    constrain(e0 >= 0, "physics", "e0", ln, "must be nonnegative")
    k, ln = take("physics", "k", float, 2.0 ** -0.5)
    constrain(k > 0, "physics", "k", ln, "must be positive")

    tol, ln = take("solver", "tol", float, 1e-13)
    constrain(tol > 0, "solver", "tol", ln, "must be positive")
    max_iter, ln = take("solver", "max_iter", int, 100)
    constrain(max_iter >= 1, "solver", "max_iter", ln, "must be at least 1")
    deg_eps, ln = take("solver", "degeneracy_eps", float, DEGENERACY_EPS)
    constrain(deg_eps > 0, "solver", "degeneracy_eps", ln, "must be positive")

    directory, _ = take("output", "directory", str, "")
    csv_stride, ln = take("output", "csv_stride", int, 1)
    constrain(csv_stride >= 1, "output", "csv_stride", ln, "must be at least 1")
    ck_stride, ln = take("output", "checkpoint_stride", int, 0)
    constrain(ck_stride >= 0, "output", "checkpoint_stride", ln, "must be nonnegative")
    modes, ln = take("output", "modes", _as_ints, (2,))
    m_max = cells[0] // 2
    constrain(all(0 <= m <= m_max for m in modes), "output", "modes", ln,
              f"modes must lie in 0..{m_max} for {cells[0]} cells")

    return SimConfig(
        model=model,
        cells=cells,
        degree=degree,
        lengths=lengths,
        dt=dt,
        t_end=t_end,
        splitting=splitting,
        retry_halving=retry,
        n_particles=n_particles,
        temperature=temperature,
        seed=seed,
        spin_direction=spin,
        hbar=hbar,
        e0=e0,
        k=k,
        tol=tol,
        max_iter=max_iter,
        degeneracy_eps=deg_eps,
        directory=directory,
        csv_stride=csv_stride,
        checkpoint_stride=ck_stride,
        modes=modes,
    )


def setup_run(config):
    """Build the initial state a config describes (1D or 2D)."""
    e0, k = config.e0, config.k
    if config.model == "1d":
        cx = build_complex_1d(config.cells[0], config.degree[0], config.lengths[0])
        ens = sample_maxwellian_1d(
            config.n_particles, config.temperature, config.lengths[0], seed=config.seed
        )
        if config.hbar > 0:
            ens = init_spin_delta(ens, config.spin_direction)
        fields = FieldState1D(
            e_x=np.zeros(cx.n1),
            e_y=l2_project_0form(cx, lambda x: e0 * np.cos(k * x)),
            e_z=l2_project_0form(cx, lambda x: e0 * np.sin(k * x)),
            a_y=l2_project_0form(cx, lambda x: -e0 * np.sin(k * x)),
            a_z=l2_project_0form(cx, lambda x: e0 * np.cos(k * x)),
        )
        state = State1D(ensemble=ens, fields=fields, complex=cx, hbar=config.hbar)
        return solve_initial_poisson(state)

    cx = build_complex_2d(config.cells, config.degree, config.lengths)
    ens = sample_maxwellian_2d(
        config.n_particles,
        config.temperature,
        config.lengths[0],
        config.lengths[1],
        seed=config.seed,
    )
    if config.hbar > 0:
        ens = init_spin_delta(ens, config.spin_direction)
    fields = FieldState2D(
        e_xy=np.zeros(cx.n1),
        e_z=l2_project_0form_2d(cx, lambda x, y: e0 * np.sin(k * x) + 0.0 * y),
        b_z=np.zeros(cx.n2),
        a_z=l2_project_0form_2d(cx, lambda x, y: e0 * np.cos(k * x) + 0.0 * y),
    )
    state = State2D(ensemble=ens, fields=fields, complex=cx, hbar=config.hbar)
    return solve_initial_poisson_2d(state)


# --- checkpoints -----------------------------------------------------------


def _state_arrays(state):
    f = state.fields
    if isinstance(state, State1D):
        return [f.e_x, f.e_y, f.e_z, f.a_y, f.a_z]
    return [f.e_xy, f.e_z, f.b_z, f.a_z]


def write_checkpoint(path, state, step, h0):
    """Serialize a state bitwise; the config is not stored and must be
    kept alongside for resume."""
    cx = state.complex
    ens = state.ensemble
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    if isinstance(state, State1D):
        buf += struct.pack(
            "<IIII", 1, ens.n_particles, cx.space.cells, cx.space.degree
        )
    else:
        buf += struct.pack(
            "<IIIIII",
            2,
            ens.n_particles,
            cx.ax1.cells,
            cx.ax2.cells,
            cx.ax1.degree,
            cx.ax2.degree,
        )
    for arr in _state_arrays(state):
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    for arr in (ens.X, ens.P, ens.S, ens.W):
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    buf += struct.pack("<ddd", state.time, float(step), h0)
    Path(path).write_bytes(bytes(buf))


def read_checkpoint(path, config):
    """Rebuild (state, step, h0) from a checkpoint written for this config.

    Counts stored in the file are cross-checked against the config; the
    config supplies everything else (lengths, hbar, solver settings).
    """
    raw = Path(path).read_bytes()
    if raw[:6] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 6)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    (model_tag,) = struct.unpack_from("<I", raw, 10)
    model = {1: "1d", 2: "2d"}.get(model_tag)
    if model != config.model:
        raise ConfigurationError(
            f"{path}: checkpoint is a {model} run, config says {config.model}"
        )
    if model == "1d":
        n_p, c1, d1 = struct.unpack_from("<III", raw, 14)
        stored = ((c1,), (d1,))
        off = 26
    else:
        n_p, c1, c2, d1, d2 = struct.unpack_from("<IIIII", raw, 14)
        stored = ((c1, c2), (d1, d2))
        off = 34
    if stored != (config.cells, config.degree) or n_p != config.n_particles:
        raise ConfigurationError(
            f"{path}: checkpoint counts {stored + (n_p,)} do not match the config"
        )
    if model == "1d":
        cx = build_complex_1d(config.cells[0], config.degree[0], config.lengths[0])
        n_field = cx.n1 + 4 * cx.n0
        n_part = 6 * n_p
    else:
        cx = build_complex_2d(config.cells, config.degree, config.lengths)
        n_field = cx.n1 + 2 * cx.n0 + cx.n2
        n_part = 8 * n_p
    expected = off + 8 * (n_field + n_part) + 24
    if len(raw) != expected:
        raise ConfigurationError(
            f"{path}: expected {expected} bytes, found {len(raw)}; file damaged"
        )

    def grab(*shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        return arr.reshape(shape)

    if model == "1d":
        fields = FieldState1D(
            e_x=grab(cx.n1), e_y=grab(cx.n0), e_z=grab(cx.n0),
            a_y=grab(cx.n0), a_z=grab(cx.n0),
        )
        ens = ParticleEnsemble(X=grab(n_p), P=grab(n_p), S=grab(n_p, 3), W=grab(n_p))
        make = State1D
    else:
        fields = FieldState2D(
            e_xy=grab(cx.n1), e_z=grab(cx.n0), b_z=grab(cx.n2), a_z=grab(cx.n0),
        )
        ens = ParticleEnsemble(
            X=grab(n_p, 2), P=grab(n_p, 2), S=grab(n_p, 3), W=grab(n_p)
        )
        make = State2D
    time, fstep, h0 = struct.unpack_from("<ddd", raw, off)
    state = make(
        ensemble=ens, fields=fields, complex=cx, hbar=config.hbar, time=time
    )
    return state, int(fstep), h0


# --- the run loop ----------------------------------------------------------


def _mode_amplitude_2d(cx, fields, which, mode):
    # Axis-1 spectrum of the axis-2 average, so a field uniform along the
    # second axis reports the same numbers as the 1D diagnostic.
    c1, c2 = cx.ax1.cells, cx.ax2.cells
    xx = np.repeat(cx.ax1.dx * np.arange(c1), c2)
    yy = np.tile(cx.ax2.dx * np.arange(c2), c1)
    if which == "e_x":
        vals = eval_1form_2d(cx, fields.e_xy, xx, yy)[0]
    else:
        vals = eval_0form_2d(cx, fields.e_z, xx, yy)
    profile = vals.reshape(c1, c2).mean(axis=1)
    spectrum = np.fft.rfft(profile)
    if mode == 0:
        return float(np.abs(spectrum[0])) / c1
    return 2.0 * float(np.abs(spectrum[mode])) / c1


def _mode_fields(config):
    return ("e_x", "e_y") if config.model == "1d" else ("e_x", "e_z")


def _csv_header(config):
    cols = ["step", "time", "H", "rel_energy_err", "poisson_res_inf"]
    for name in _mode_fields(config):
        cols += [f"{name}_m{m}" for m in config.modes]
    return ",".join(cols + ["Sx", "Sy", "Sz"])


def _csv_row(config, state, step, h0):
    if config.model == "1d":
        h = hamiltonian_1d(state)
        _, rinf = poisson_residual_1d(state)
        amps = [
            fourier_mode_amplitude(state.complex, state.fields.e_x, 1, m)
            for m in config.modes
        ] + [
            fourier_mode_amplitude(state.complex, state.fields.e_y, 0, m)
            for m in config.modes
        ]
    else:
        h = hamiltonian_2d(state)
        _, rinf = poisson_residual_2d(state)
        amps = [
            _mode_amplitude_2d(state.complex, state.fields, which, m)
            for which in ("e_x", "e_z")
            for m in config.modes
        ]
    sx, sy, sz = (float(v) for v in spin_moments(state.ensemble))
    vals = [float(state.time), h, relative_energy_error(h, h0), rinf]
    vals += amps + [sx, sy, sz]
    return ",".join([str(step)] + [repr(float(v)) for v in vals])


def _advance_once(state, params, config):
    step = advance if config.model == "1d" else advance_2d
    try:
        return step(state, params)
    except NonconvergenceError:
        if not config.retry_halving:
            raise
        half = replace(params, dt=0.5 * params.dt)
        return step(step(state, half), half)


def _echo_header(config, n_steps):
    lines = [f"model = {config.model}"]
    for name in (
        "cells", "degree", "lengths", "dt", "t_end", "splitting",
        "n_particles", "temperature", "seed", "hbar", "e0", "k", "tol",
    ):
        lines.append(f"{name} = {getattr(config, name)}")
    lines.append(f"steps = {n_steps}")
    return "\n".join(lines)


def run(config, out_dir=None, workers=1, resume=None, quiet=False):
    """Execute a run end to end; returns 0 on success.

    Writes diagnostics.csv, checkpoint_<step>.bin per checkpoint stride,
    and final.bin into the output directory.  With resume, rows continue
    in the same CSV from the checkpointed step, so an interrupted run
    whose break fell on the csv stride reproduces an uninterrupted one
    bitwise.
    """
    target = out_dir if out_dir else config.directory
    if not target:
        raise ConfigurationError("no output directory: pass --out or set output.directory")
    if workers < 1:
        raise ConfigurationError("workers must be at least 1")
    out = Path(target)
    out.mkdir(parents=True, exist_ok=True)

    n_steps = int(round(config.t_end / config.dt))
    params = SolverParams(
        dt=config.dt,
        tol=config.tol,
        max_iter=config.max_iter,
        degeneracy_eps=config.degeneracy_eps,
        splitting=config.splitting,
        workers=workers,
    )
    if resume is not None:
        state, step0, h0 = read_checkpoint(resume, config)
        if step0 > n_steps:
            raise ConfigurationError(
                f"checkpoint step {step0} is past t_end ({n_steps} steps)"
            )
    else:
        state = setup_run(config)
        step0 = 0
        h0 = hamiltonian_1d(state) if config.model == "1d" else hamiltonian_2d(state)

    if not quiet:
        print(_echo_header(config, n_steps))

    csv_path = out / "diagnostics.csv"
    mode = "a" if resume is not None else "w"
    with open(csv_path, mode, newline="\n") as fh:
        if resume is None:
            fh.write(_csv_header(config) + "\n")
            fh.write(_csv_row(config, state, 0, h0) + "\n")
        for step in range(step0 + 1, n_steps + 1):
            state = _advance_once(state, params, config)
            if step % config.csv_stride == 0 or step == n_steps:
                fh.write(_csv_row(config, state, step, h0) + "\n")
            if config.checkpoint_stride and step % config.checkpoint_stride == 0:
                write_checkpoint(out / f"checkpoint_{step}.bin", state, step, h0)
    write_checkpoint(out / "final.bin", state, n_steps, h0)
    return 0


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="simulate", description="Run one configured simulation."
    )
    parser.add_argument("--config", required=True, help="config file path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--resume", default=None, help="checkpoint to continue from")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        return _fail(4, "io", str(exc))
    try:
        config = parse_config(text)
    except ConfigurationError as exc:
        return _fail(2, "config", str(exc))
    try:
        return run(
            config,
            out_dir=args.out,
            workers=args.workers,
            resume=args.resume,
            quiet=args.quiet,
        )
    except ConfigurationError as exc:
        return _fail(2, "config", str(exc))
    except NonconvergenceError as exc:
        return _fail(3, "nonconvergence", str(exc))
    except OSError as exc:
        return _fail(4, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
