"""Particle discretization: sampling, weights, spin initialization.

The distribution function is represented by a fixed set of markers with
positions X, momenta P, spins S and constant weights W.  Sampling uses a
quiet start: positions are stratified over the domain with one uniform
jitter per stratum, momenta come from the inverse Gaussian CDF, and all
random numbers are drawn from a counter-based generator so that the a-th
particle is a pure function of (seed, a).
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

__all__ = [
    "ParticleEnsemble",
    "sample_maxwellian_1d",
    "sample_maxwellian_2d",
    "init_spin_delta",
]


@dataclass(frozen=True)
class ParticleEnsemble:
    """Markers of the kinetic distribution.

    X : (Np,) or (Np, 2) positions, wrapped into the periodic domain
    P : momenta, same shape as X
    S : (Np, 3) spins; zero until init_spin_delta is called
    W : (Np,) positive weights, constant for the whole run
    """

    X: np.ndarray
    P: np.ndarray
    S: np.ndarray
    W: np.ndarray

    @property
    def n_particles(self):
        return self.W.shape[0]

    @property
    def dim(self):
        return 1 if self.X.ndim == 1 else self.X.shape[1]


def _uniform_open(seed, shape):
    """Deterministic uniforms in the open interval (0, 1).

    Philox is counter based: the stream position of every draw is fixed by
    the flat index alone, so the particle-index keying asked of the sampler
    holds by construction.  The odd-integer ladder keeps 0 and 1 out of the
    range, which the inverse CDF needs.
    """
    gen = np.random.Generator(np.random.Philox(key=seed))
    ints = gen.integers(0, 2**53, size=shape, dtype=np.int64)
    return (2.0 * ints + 1.0) / 2.0**54


def sample_maxwellian_1d(n_particles, temperature, length, seed):
    """Quiet-start ensemble for a 1D Maxwellian of variance `temperature`."""
    if n_particles < 1:
        raise ConfigurationError(f"need at least one particle, got {n_particles}")
    if not temperature > 0.0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    u = _uniform_open(seed, (n_particles, 2))
    strata = (np.arange(n_particles) + u[:, 0]) * (length / n_particles)
    p = np.sqrt(temperature) * ndtri(u[:, 1])
    w = np.full(n_particles, length / n_particles)
    return ParticleEnsemble(X=strata, P=p, S=np.zeros((n_particles, 3)), W=w)


def sample_maxwellian_2d(n_particles, temperature, length1, length2, seed):
    """2D quiet start: jittered lattice positions, independent momenta."""
    if n_particles < 1:
        raise ConfigurationError(f"need at least one particle, got {n_particles}")
    if not temperature > 0.0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    u = _uniform_open(seed, (n_particles, 4))
    n2 = int(np.ceil(np.sqrt(n_particles)))
    n1 = int(np.ceil(n_particles / n2))
    a = np.arange(n_particles)
    i1, i2 = a // n2, a % n2
    x = np.empty((n_particles, 2))
    x[:, 0] = (i1 + u[:, 0]) * (length1 / n1)
    x[:, 1] = (i2 + u[:, 1]) * (length2 / n2)
    p = np.sqrt(temperature) * ndtri(u[:, 2:4])
    w = np.full(n_particles, length1 * length2 / n_particles)
    return ParticleEnsemble(X=x, P=p, S=np.zeros((n_particles, 3)), W=w)


def init_spin_delta(ensemble, direction):
    """Point all spins along one unit vector (delta distribution in s)."""
    d = np.asarray(direction, dtype=float)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ConfigurationError(f"spin direction must be a unit 3-vector, got {direction}")
    s = np.tile(d, (ensemble.n_particles, 1))
    return replace(ensemble, S=s)
