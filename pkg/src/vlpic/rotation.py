"""Exact rotation maps used by the spin and momentum substeps.

Both the spin precession ds/dt = r x s and the in-plane momentum gyration
have closed-form solutions over a step; applying the Rodrigues formula (with
sinc-safe coefficients near zero angle) keeps the Euclidean norms invariant
to rounding, which is what the conservation audits check.
"""

import numpy as np

__all__ = ["rotate_vectors", "rotate_momenta_2d"]


def rotate_vectors(vecs, axes, dt):
    """Apply exp(dt * hat(r)) to each row of vecs, r = matching row of axes.

    hat(r) is the cross-product matrix, so rows evolve along
    dv/dt = r x v with the rotation vector frozen for the step.
    """
    v = np.asarray(vecs, dtype=float)
    r = np.asarray(axes, dtype=float)
    rnorm = np.linalg.norm(r, axis=1)
    theta = dt * rnorm
    # c1 = sin(theta)/|r|, c2 = 0.5*(sin(theta/2)/(|r|/2))^2, finite at |r|=0
    c1 = dt * np.sinc(theta / np.pi)
    half = dt * np.sinc(theta / (2.0 * np.pi))
    c2 = 0.5 * half * half
    rxv = np.cross(r, v)
    rxrxv = np.cross(r, rxv)
    return v + c1[:, None] * rxv + c2[:, None] * rxrxv


def rotate_momenta_2d(px, py, theta):
    """Clockwise in-plane rotation by theta: solves dpx/dt ~ +py, dpy/dt ~ -px."""
    c, s = np.cos(theta), np.sin(theta)
    return c * px + s * py, -s * px + c * py
