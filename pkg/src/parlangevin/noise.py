"""Driving noise for one outer step of the parallel samplers.

Both grid types are drawn once per outer step and then shared, unchanged,
by every Picard iteration of that step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from parlangevin.errors import InternalPrecisionError, InvalidParameterError, InvalidScheduleError

# below this value of gamma*u the closed forms lose digits to cancellation
_SERIES_CUTOFF = 0.5


def _shape(d: int, replicas: Optional[int]) -> Tuple[int, ...]:
    return (d,) if replicas is None else (replicas, d)


@dataclass(frozen=True)
class BrownianGrid:
    """Brownian path sampled on ``M`` substeps of length ``u = h/M``.

    ``increments[m] = W[m+1] - W[m]`` and ``values[m]`` is the prefix sum of
    the first ``m`` increments (``values[0] = 0``). Arrays have shape
    ``(M, *state_shape)`` and ``(M + 1, *state_shape)``.
    """

    substeps: int
    substep_length: float
    increments: np.ndarray
    values: np.ndarray

    @property
    def h(self) -> float:
        return self.substep_length * self.substeps

    @property
    def state_shape(self):
        return self.increments.shape[1:]

    @classmethod
    def from_increments(cls, increments, substep_length: float) -> "BrownianGrid":
        increments = np.asarray(increments, dtype=np.float64)
        values = np.zeros((increments.shape[0] + 1,) + increments.shape[1:])
        np.cumsum(increments, axis=0, out=values[1:])
        return cls(increments.shape[0], float(substep_length), increments, values)

    @classmethod
    def zeros(cls, M: int, h: float, d: int, replicas: Optional[int] = None) -> "BrownianGrid":
        """A noiseless grid, handy for deterministic checks."""
        _check_grid(M, h)
        return cls.from_increments(np.zeros((M,) + _shape(d, replicas)), h / M)


def _check_grid(M, h):
    if int(M) != M or M < 1:
        raise InvalidScheduleError(f"number of substeps must be a positive integer, got {M}")
    if not h > 0:
        raise InvalidScheduleError(f"step length must be positive, got {h}")


def sample_brownian_grid(M: int, h: float, d: int, rng_seed=None, replicas: Optional[int] = None) -> BrownianGrid:
    """Draw ``M`` iid ``N(0, (h/M) I)`` increments and prefix-sum them.

    ``rng_seed`` is anything ``numpy.random.default_rng`` accepts (an int, a
    ``SeedSequence`` or a ``Generator``).
    """
    _check_grid(M, h)
    rng = np.random.default_rng(rng_seed)
    u = h / M
    increments = rng.standard_normal((M,) + _shape(d, replicas)) * math.sqrt(u)
    return BrownianGrid.from_increments(increments, u)


def _one_minus_exp(a):
    """1 - exp(-a)."""
    return -math.expm1(-a)


def phi_x(a: float) -> float:
    """``a - (1 - exp(-a))``, evaluated without cancellation for small ``a``."""
    if a < _SERIES_CUTOFF:
        # sum_{k>=2} (-1)^k a^k / k!
        total, term, k = 0.0, -a, 1
        while True:
            k += 1
            term *= -a / k
            total += term
            if abs(term) < 1e-18 * abs(total):
                return total
    return a + math.expm1(-a)


def phi_xx(a: float) -> float:
    """``a - 2(1 - exp(-a)) + (1 - exp(-2a))/2``, cancellation-free for small ``a``."""
    if a < _SERIES_CUTOFF:
        # sum_{k>=3} (-1)^k (2 - 2^(k-1)) a^k / k!
        total, fact, k = 0.0, 2.0, 2
        apow = a * a
        while True:
            k += 1
            fact *= k
            apow *= a
            term = (-1) ** k * (2.0 - 2.0 ** (k - 1)) * apow / fact
            total += term
            if abs(term) < 1e-18 * abs(total):
                return total
    return a - 1.5 + 2.0 * math.exp(-a) - 0.5 * math.exp(-2.0 * a)


def ulmc_noise_covariance(gamma: float, u: float) -> np.ndarray:
    """Covariance of the (position, momentum) noise pair over one substep of length ``u``.

    Returns the 2x2 matrix ``[[S_xx, S_xp], [S_xp, S_pp]]`` for the kinetic
    Langevin system with friction ``gamma`` integrated exactly over ``u``.
    """
    if not (gamma > 0 and u > 0):
        raise InvalidParameterError(f"gamma and u must be positive, got gamma={gamma}, u={u}")
    a = gamma * u
    e1 = _one_minus_exp(a)
    s_pp = -math.expm1(-2.0 * a)
    s_xp = e1 * e1 / gamma
    s_xx = 2.0 * phi_xx(a) / gamma**2
    return np.array([[s_xx, s_xp], [s_xp, s_pp]])


def ulmc_noise_covariance_naive(gamma: float, u: float) -> np.ndarray:
    """Direct transcription of the closed forms; reference for the stable version."""
    em = math.exp(-gamma * u)
    em2 = math.exp(-2.0 * gamma * u)
    s_xx = (2.0 / gamma) * (u - (2.0 / gamma) * (1.0 - em) + (1.0 / (2.0 * gamma)) * (1.0 - em2))
    s_xp = (1.0 / gamma) * (1.0 - 2.0 * em + em2)
    s_pp = 1.0 - em2
    return np.array([[s_xx, s_xp], [s_xp, s_pp]])


def cholesky_2x2(sigma: np.ndarray) -> np.ndarray:
    """Closed-form lower Cholesky factor of a 2x2 covariance."""
    s_xx, s_xp, s_pp = sigma[0, 0], sigma[0, 1], sigma[1, 1]
    if not s_xx > 0:
        raise InternalPrecisionError(f"noise covariance is not positive definite (S_xx={s_xx})")
    l11 = math.sqrt(s_xx)
    l21 = s_xp / l11
    rem = s_pp - l21 * l21
    if rem < 0:
        raise InternalPrecisionError(f"noise covariance is numerically indefinite (residual {rem})")
    return np.array([[l11, 0.0], [l21, math.sqrt(rem)]])


@dataclass(frozen=True)
class UlmcNoiseGrid:
    """Correlated ``(xi_x, xi_p)`` pairs for ``M`` exponential-Euler substeps."""

    substeps: int
    gamma: float
    substep_length: float
    xi_x: np.ndarray
    xi_p: np.ndarray

    @property
    def h(self) -> float:
        return self.substep_length * self.substeps

    @classmethod
    def zeros(cls, M: int, gamma: float, h: float, d: int, replicas: Optional[int] = None) -> "UlmcNoiseGrid":
        _check_grid(M, h)
        z = np.zeros((M,) + _shape(d, replicas))
        return cls(M, float(gamma), h / M, z, z.copy())


def sample_ulmc_noise_grid(
    M: int, gamma: float, h: float, d: int, rng_seed=None, replicas: Optional[int] = None
) -> UlmcNoiseGrid:
    """Draw ``M`` independent noise pairs, each coordinate via the 2x2 Cholesky factor."""
    _check_grid(M, h)
    u = h / M
    chol = cholesky_2x2(ulmc_noise_covariance(gamma, u))
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((2, M) + _shape(d, replicas))
    xi_x = chol[0, 0] * z[0]
    xi_p = chol[1, 0] * z[0] + chol[1, 1] * z[1]
    return UlmcNoiseGrid(M, float(gamma), u, xi_x, xi_p)
