"""Energy-conserving spline particle-in-cell solver for reduced
relativistic kinetic models, with optional particle spin.

The pieces: bsplines/derham build the periodic spline complexes,
particles holds the ensemble and its samplers, solver1d/solver2d are
the split time steppers, diagnostics defines the monitored quantities,
and cli is the batch front-end.
"""

__version__ = "0.1.0"
