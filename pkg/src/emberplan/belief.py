"""Spatio-temporal Gaussian-process belief over the fire intensity field.

The belief is a zero-mean GP with a Matern 3/2 kernel over a scaled space-time
distance: observations carry (position, step) coordinates, so fresh
measurements dominate nearby queries while stale ones fade over the temporal
length scale.  Posterior summaries are always evaluated on a square lattice at
the asked-for step; the lattice trace is the uncertainty number the planners
optimize, and the lattice mean is what metrics compare against ground truth.

Factorizations are cached per belief instance; updates rebuild the Cholesky
factor from scratch, which is cheap at the episode sizes this toolkit sees
(tens to a couple hundred observations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .firesim import GroundTruthField, intensity_at

SQRT3 = np.sqrt(3.0)
JITTER = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """Fixed hyperparameters; no optimization happens anywhere."""

    signal_variance: float = 1.0
    length_scale_space: float = 0.2
    length_scale_time: float = 10.0
    noise_variance: float = 1e-4

    def __post_init__(self):
        if self.signal_variance <= 0 or self.length_scale_space <= 0 \
                or self.length_scale_time <= 0:
            raise ValueError(f"kernel scales must be positive, got {self}")
        if self.noise_variance < 0:
            raise ValueError(f"noise variance must be non-negative, got {self.noise_variance}")


DEFAULT_KERNEL = KernelParams()


@dataclass(frozen=True)
class Observation:
    """One point measurement of the normalized intensity field."""

    position: tuple
    time: float
    value: float

    def __post_init__(self):
        x, y = self.position
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"observation position ({x}, {y}) outside the unit square")
        if self.time < 0:
            raise ValueError(f"observation time must be non-negative, got {self.time}")
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"observation value must lie in [0, 1], got {self.value}")

    def coords(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.time])


def kernel(a: np.ndarray, b: np.ndarray,
           params: KernelParams = DEFAULT_KERNEL) -> np.ndarray:
    """Matern 3/2 kernel over scaled space-time distance.

    `a` and `b` are (n, 3) arrays of (x, y, t) coordinates; the distance is
    sqrt(|dxy|^2 / ls^2 + dt^2 / lt^2).
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d = a[:, None, :] - b[None, :, :]
    r2 = (d[..., 0] ** 2 + d[..., 1] ** 2) / params.length_scale_space ** 2 \
        + (d[..., 2] ** 2) / params.length_scale_time ** 2
    r = np.sqrt(np.maximum(r2, 0.0))
    return params.signal_variance * (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r)


def lattice_points(resolution: int, t: float) -> np.ndarray:
    """The (resolution^2, 3) query lattice at step ``t``, x-major to match fields."""
    if resolution < 2:
        raise ValueError(f"lattice resolution must be at least 2, got {resolution}")
    coords = np.linspace(0.0, 1.0, resolution)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    out = np.column_stack([xx.ravel(), yy.ravel(), np.full(resolution * resolution, t)])
    return out


class BeliefState:
    """Immutable GP posterior over the field given a set of observations."""

    def __init__(self, params: KernelParams = DEFAULT_KERNEL, resolution: int = 30,
                 observations: tuple = ()):
        if resolution < 2:
            raise ValueError(f"belief lattice resolution must be at least 2, got {resolution}")
        self.params = params
        self.resolution = resolution
        self.observations = tuple(observations)
        n = len(self.observations)
        self._X = np.array([o.coords() for o in self.observations]).reshape(n, 3)
        self._y = np.array([o.value for o in self.observations])
        if n:
            gram = kernel(self._X, self._X, params)
            self._L = self._factor(gram)
            self._alpha = cho_solve((self._L, True), self._y)
        else:
            self._L = np.zeros((0, 0))
            self._alpha = np.zeros(0)

    def _factor(self, gram: np.ndarray) -> np.ndarray:
        noise = self.params.noise_variance
        system = gram + noise * np.eye(len(gram))
        try:
            return cholesky(system, lower=True)
        except np.linalg.LinAlgError:
            pass
        if noise == 0.0:
            try:
                return cholesky(gram + JITTER * np.eye(len(gram)), lower=True)
            except np.linalg.LinAlgError:
                pass
        raise RuntimeError(
            "observation Gram matrix is singular; add observation noise or a "
            "diagonal jitter to make the solve well posed")

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def with_observations(self, new: list) -> "BeliefState":
        return BeliefState(self.params, self.resolution, self.observations + tuple(new))


def make_belief(params: KernelParams = DEFAULT_KERNEL, resolution: int = 30) -> BeliefState:
    return BeliefState(params, resolution)


def update_belief(belief: BeliefState, obs: Observation) -> BeliefState:
    """Fold one observation into the belief (returns a new belief)."""
    return belief.with_observations([obs])


def posterior(belief: BeliefState, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and full covariance matrix at (x, y, t) queries.

    The covariance is symmetrized as (P + P^T) / 2 before being returned.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[-1] != 3:
        raise ValueError(f"queries must be (m, 3) space-time points, got {q.shape}")
    prior = kernel(q, q, belief.params)
    if belief.n_observations == 0:
        return np.zeros(len(q)), prior
    ks = kernel(belief._X, q, belief.params)
    mean = ks.T @ belief._alpha
    v = solve_triangular(belief._L, ks, lower=True)
    cov = prior - v.T @ v
    return mean, 0.5 * (cov + cov.T)


def posterior_marginals(belief: BeliefState,
                        queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and per-point variance (no cross terms; clipped at 0)."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[-1] != 3:
        raise ValueError(f"queries must be (m, 3) space-time points, got {q.shape}")
    if belief.n_observations == 0:
        return np.zeros(len(q)), np.full(len(q), belief.params.signal_variance)
    ks = kernel(belief._X, q, belief.params)
    mean = ks.T @ belief._alpha
    v = solve_triangular(belief._L, ks, lower=True)
    var = belief.params.signal_variance - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def covariance_trace(belief: BeliefState, t: float) -> float:
    """Trace of the posterior covariance over the belief lattice at step ``t``."""
    _, var = posterior_marginals(belief, lattice_points(belief.resolution, t))
    return float(var.sum())


def belief_grid(belief: BeliefState, resolution: int, t: float) -> np.ndarray:
    """Mean and variance images (2, R, R) on the lattice at step ``t``."""
    mean, var = posterior_marginals(belief, lattice_points(resolution, t))
    return np.stack([mean.reshape(resolution, resolution),
                     var.reshape(resolution, resolution)])


def rmse(belief: BeliefState, fld: GroundTruthField, t: float) -> float:
    """Root-mean-square error of the lattice posterior mean vs the true frame."""
    if fld.resolution != belief.resolution:
        raise ValueError(
            f"field resolution {fld.resolution} does not match belief lattice "
            f"resolution {belief.resolution}")
    if t != int(t) or not (0 <= t < fld.horizon):
        raise ValueError(f"step {t} outside the field horizon [0, {fld.horizon})")
    mean, _ = posterior_marginals(belief, lattice_points(belief.resolution, t))
    truth = fld.frames[int(t)].reshape(-1)
    return float(np.sqrt(np.mean((mean - truth) ** 2)))
