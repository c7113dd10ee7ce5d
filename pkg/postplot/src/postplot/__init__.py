"""Render diagnostic figure panels from a simulation CSV.

The input is the diagnostics.csv a run writes: columns step, time, H,
rel_energy_err, poisson_res_inf, one amplitude column per recorded
Fourier mode (e_x_m2 and so on), then Sx, Sy, Sz.  Four panels come
out of it:

  energy.png     relative energy error against time, log scale
  residual.png   Gauss-law residual against time, log scale
  growth.png     mode-2 field amplitudes on a log scale, with a
                 least-squares growth-rate line over the fit window
  spin.png       weighted spin sums S_y and S_z against time

A zero would break a log axis, so the log panels clamp their data at a
floor of 1e-17; a perfectly conserved run shows as a flat line there.
The growth rate is fitted to the e_x_m2 column, log-linear least
squares over the window; the companion curve is e_y_m2 when present
and e_z_m2 otherwise.  The tool never computes reference rates, it
only reports the fitted number.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "PANELS",
    "PlotSpec",
    "RenderResult",
    "SchemaError",
    "load_diagnostics",
    "fit_growth_rate",
    "render",
    "main",
]

LOG_FLOOR = 1e-17
PANELS = ("energy", "residual", "growth", "spin")


class SchemaError(Exception):
    """The CSV lacks a column a requested panel needs."""


@dataclass(frozen=True)
class PlotSpec:
    csv: Path
    out_dir: Path
    panels: tuple = PANELS
    log_energy: bool = True
    log_residual: bool = True
    fit_window: tuple = None

    def __post_init__(self):
        unknown = sorted(set(self.panels) - set(PANELS))
        if unknown:
            raise ValueError(f"unknown panels: {unknown}")


@dataclass
class RenderResult:
    files: dict
    growth_rate: float = None


def load_diagnostics(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None or "time" not in data.dtype.names:
        raise SchemaError(f"{path}: not a diagnostics CSV (no header with a time column)")
    return np.atleast_1d(data)


def _column(data, name):
    if name not in data.dtype.names:
        raise SchemaError(f"missing column {name}")
    return np.asarray(data[name], dtype=float)


def fit_growth_rate(t, amp, window):
    """Least-squares slope and intercept of log(amp) over t in [a, b]."""
    a, b = window
    if not (t.min() <= a < b <= t.max()):
        raise ValueError(
            f"fit window [{a}, {b}] outside data range [{t.min()}, {t.max()}]"
        )
    sel = (t >= a) & (t <= b) & (amp > 0)
    if np.count_nonzero(sel) < 2:
        raise ValueError("fit window holds fewer than two positive samples")
    slope, intercept = np.polyfit(t[sel], np.log(amp[sel]), 1)
    return float(slope), float(intercept)


def _new_panel(title, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return fig, ax


def render(spec):
    """Write the requested panels as PNG files; returns paths and the
    fitted growth rate (None unless the growth panel was drawn)."""
    data = load_diagnostics(spec.csv)
    t = _column(data, "time")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    rate = None

    def save(fig, name):
        path = out / f"{name}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        files[name] = path

    if "energy" in spec.panels:
        err = np.abs(_column(data, "rel_energy_err"))
        fig, ax = _new_panel("relative energy error", "|H - H0| / |H0|")
        if spec.log_energy:
            ax.semilogy(t, np.maximum(err, LOG_FLOOR), lw=1.0)
            ax.set_ylim(bottom=LOG_FLOOR)
        else:
            ax.plot(t, err, lw=1.0)
        save(fig, "energy")

    if "residual" in spec.panels:
        res = np.abs(_column(data, "poisson_res_inf"))
        fig, ax = _new_panel("Gauss-law residual", "max |r|")
        if spec.log_residual:
            ax.semilogy(t, np.maximum(res, LOG_FLOOR), lw=1.0)
            ax.set_ylim(bottom=LOG_FLOOR)
        else:
            ax.plot(t, res, lw=1.0)
        save(fig, "residual")

    if "growth" in spec.panels:
        ex = _column(data, "e_x_m2")
        companion = next(
            (n for n in ("e_y_m2", "e_z_m2") if n in data.dtype.names), None
        )
        window = spec.fit_window if spec.fit_window else (float(t.min()), float(t.max()))
        rate, intercept = fit_growth_rate(t, ex, window)
        fig, ax = _new_panel("mode-2 amplitudes", "amplitude")
        ax.semilogy(t, np.maximum(ex, LOG_FLOOR), lw=1.0, label="E_x, mode 2")
        if companion:
            ax.semilogy(
                t,
                np.maximum(_column(data, companion), LOG_FLOOR),
                lw=1.0,
                label=f"E_{companion[2]}, mode 2",
            )
        tt = np.linspace(window[0], window[1], 64)
        ax.semilogy(
            tt, np.exp(intercept + rate * tt), "k--", lw=1.2,
            label=f"fit: {rate:.3f} / t",
        )
        ax.legend(loc="lower right", fontsize=9)
        save(fig, "growth")

    if "spin" in spec.panels:
        sy = _column(data, "Sy")
        sz = _column(data, "Sz")
        fig, ax = _new_panel("spin sums", "S")
        ax.plot(t, sy, lw=1.0, label="S_y")
        ax.plot(t, sz, lw=1.0, label="S_z")
        ax.legend(loc="upper right", fontsize=9)
        save(fig, "spin")

    return RenderResult(files=files, growth_rate=rate)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="postplot", description="Render diagnostic panels from a run CSV."
    )
    parser.add_argument("--csv", required=True, help="diagnostics CSV path")
    parser.add_argument("--out", required=True, help="output image directory")
    parser.add_argument(
        "--fit-window", nargs=2, type=float, metavar=("A", "B"),
        help="time window for the growth-rate fit (default: full range)",
    )
    args = parser.parse_args(argv)
    spec = PlotSpec(
        csv=Path(args.csv),
        out_dir=Path(args.out),
        fit_window=tuple(args.fit_window) if args.fit_window else None,
    )
    try:
        result = render(spec)
    except (OSError, SchemaError, ValueError) as exc:
        print(f"postplot: {exc}", file=sys.stderr)
        return 2
    line = f"wrote {len(result.files)} panels to {args.out}"
    if result.growth_rate is not None:
        line += f", growth rate {result.growth_rate:.4f} / t"
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
