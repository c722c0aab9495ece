"""Parallel underdamped (kinetic) Langevin Monte Carlo with exponential Euler steps.

Within a substep of length ``u`` the score is frozen at the left endpoint and
the remaining linear SDE is integrated exactly::

    X' = X + c1 P - c2 s(X) + xi_x
    P' = exp(-gamma u) P - c1 s(X) + xi_p

with ``c1 = (1 - exp(-gamma u))/gamma`` and ``c2 = (u - c1)/gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from parlangevin.errors import InvalidInputError, InvalidParameterError, InvalidScheduleError, ScheduleViolationError
from parlangevin.lmc import GaussianInit, GridSchedule, _check_planner_inputs, _pool, _residual, check_schedule
from parlangevin.lmc import as_seed_sequence, default_init, draw_init
from parlangevin.noise import UlmcNoiseGrid, phi_x, sample_ulmc_noise_grid
from parlangevin.score import QueryLedger, ScoreOracle, TargetModel

DEFAULT_CONSTANTS = {"c_h": 0.1, "c_delta": 0.5, "c_M": 4.0, "c_K": 4.0, "c_N": 4.0}


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if np.shape(self.x) != np.shape(self.p):
            raise InvalidInputError("position and momentum must have the same shape")


@dataclass(frozen=True)
class UlmcSchedule(GridSchedule):
    gamma: float = 1.0
    constants: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        super().__post_init__()
        if not self.gamma > 0:
            raise InvalidScheduleError("friction gamma must be positive")

    def desk_scale(self, max_M: Optional[int] = None, max_N: Optional[int] = None) -> "UlmcSchedule":
        """Cap M and N; the ULMC depth rule does not depend on M, so K is kept."""
        return self.capped(max_M=max_M, max_N=max_N)

    def as_dict(self) -> dict:
        out = super().as_dict()
        out["gamma"] = self.gamma
        out["constants"] = dict(self.constants)
        return out


def plan_ulmc_params(alpha: float, beta: float, d: int, epsilon: float, constants: Optional[dict] = None) -> UlmcSchedule:
    """Schedule for parallel ULMC targeting total variation ``epsilon``.

    Only the orders of growth are fixed by the analysis; the leading
    constants ``c_h, c_delta, c_M, c_K, c_N`` are tunable defaults.
    """
    _check_planner_inputs(alpha, beta, d, epsilon)
    c = dict(DEFAULT_CONSTANTS)
    if constants:
        unknown = set(constants) - set(c)
        if unknown:
            raise InvalidParameterError(f"unknown planner constants: {sorted(unknown)}")
        c.update(constants)
    if any(v <= 0 for v in c.values()):
        raise InvalidParameterError("planner constants must be positive")
    kappa = beta / alpha
    h = c["c_h"] / math.sqrt(beta)
    gamma = math.sqrt(8.0 * beta)
    delta = c["c_delta"] * math.sqrt(alpha) * epsilon / math.sqrt(math.log(d + 2))
    log_kd = math.log(kappa * d / epsilon**2 + math.e)
    m_raw = c["c_M"] * math.sqrt(kappa * d) * log_kd / epsilon
    k_raw = c["c_K"] * log_kd
    n_raw = c["c_N"] * kappa * math.log(d / epsilon**2 + math.e) * math.log(d + 2)
    return UlmcSchedule(
        h=h,
        M=math.ceil(m_raw),
        K=math.ceil(k_raw),
        N=math.ceil(n_raw),
        delta=delta,
        epsilon=epsilon,
        planned=True,
        gamma=gamma,
        constants=c,
        formulas={
            "h": "c_h/sqrt(beta)",
            "gamma": "sqrt(8 beta)",
            "delta": "c_delta sqrt(alpha) eps/sqrt(ln(d+2))",
            "M": "ceil(c_M sqrt(kappa d) ln(kappa d/eps^2 + e)/eps)",
            "K": "ceil(c_K ln(kappa d/eps^2 + e))",
            "N": "ceil(c_N kappa ln(d/eps^2 + e) ln(d+2))",
            "M_raw": m_raw,
            "K_raw": k_raw,
            "N_raw": n_raw,
            "alpha": alpha,
            "beta": beta,
            "d": d,
        },
    )


@dataclass(frozen=True)
class StepCoefficients:
    decay: float  # exp(-gamma u)
    c1: float
    c2: float

    @classmethod
    def for_step(cls, gamma: float, u: float) -> "StepCoefficients":
        a = gamma * u
        return cls(decay=math.exp(-a), c1=-math.expm1(-a) / gamma, c2=phi_x(a) / gamma**2)


def exp_euler_step(x, p, s, coef: StepCoefficients, xi_x, xi_p):
    x_new = x + coef.c1 * p - coef.c2 * s + xi_x
    p_new = coef.decay * p - coef.c1 * s + xi_p
    return x_new, p_new


@dataclass
class PhaseTrajectory:
    x: np.ndarray
    p: np.ndarray


def _check_noise(noise: UlmcNoiseGrid, gamma, u, steps, shape):
    if (
        noise.substeps < steps
        or not math.isclose(noise.substep_length, u, rel_tol=1e-12)
        or not math.isclose(noise.gamma, gamma, rel_tol=1e-12)
    ):
        raise InvalidInputError("noise grid does not match (gamma, step, steps)")
    if noise.xi_x.shape[1:] != shape:
        raise InvalidInputError(f"noise shape {noise.xi_x.shape[1:]} does not match state {shape}")


def run_sequential_ulmc(
    start: PhasePoint,
    oracle: ScoreOracle,
    gamma: float,
    step: float,
    steps: int,
    noise: Optional[UlmcNoiseGrid] = None,
    rng_seed=None,
    ledger: Optional[QueryLedger] = None,
) -> PhaseTrajectory:
    """Sequential exponential-Euler ULMC from ``start`` with ``steps`` substeps of length ``step``."""
    if not (gamma > 0 and step > 0):
        raise InvalidParameterError("gamma and step must be positive")
    x = np.asarray(start.x, dtype=np.float64)
    p = np.asarray(start.p, dtype=np.float64)
    if noise is None:
        if x.ndim == 1:
            noise = sample_ulmc_noise_grid(steps, gamma, step * steps, x.shape[0], rng_seed)
        else:
            noise = sample_ulmc_noise_grid(steps, gamma, step * steps, x.shape[-1], rng_seed, replicas=x.shape[0])
    _check_noise(noise, gamma, step, steps, x.shape)
    coef = StepCoefficients.for_step(gamma, step)
    xs = np.empty((steps + 1,) + x.shape)
    ps = np.empty_like(xs)
    xs[0], ps[0] = x, p
    for n in range(steps):
        s = oracle(x[None], ledger=ledger)[0]
        x, p = exp_euler_step(x, p, s, coef, noise.xi_x[n], noise.xi_p[n])
        xs[n + 1], ps[n + 1] = x, p
    return PhaseTrajectory(xs, ps)


@dataclass
class UlmcPicardRun:
    x: np.ndarray
    p: np.ndarray
    residuals: np.ndarray


def picard_inner_ulmc(
    start: PhasePoint,
    oracle: ScoreOracle,
    h: float,
    M: int,
    K: int,
    gamma: float,
    noise: UlmcNoiseGrid,
    ledger: Optional[QueryLedger] = None,
    executor=None,
    workers: int = 1,
) -> UlmcPicardRun:
    """One outer ULMC step: ``K`` sweeps, each one batched score round plus an affine scan."""
    if K < 1:
        raise InvalidScheduleError("Picard depth K must be at least 1")
    x0 = np.asarray(start.x, dtype=np.float64)
    p0 = np.asarray(start.p, dtype=np.float64)
    if noise.substeps != M:
        raise InvalidInputError("noise grid does not have M substeps")
    _check_noise(noise, gamma, h / M, M, x0.shape)
    coef = StepCoefficients.for_step(gamma, h / M)
    xs = np.broadcast_to(x0, (M + 1,) + x0.shape).copy()
    ps = np.broadcast_to(p0, (M + 1,) + p0.shape).copy()
    residuals = np.empty(K)
    for k in range(K):
        scores = oracle(xs[:M], ledger=ledger, executor=executor, workers=workers)
        new_x = np.empty_like(xs)
        new_p = np.empty_like(ps)
        new_x[0], new_p[0] = x0, p0
        for m in range(M):
            new_x[m + 1], new_p[m + 1] = exp_euler_step(
                new_x[m], new_p[m], scores[m], coef, noise.xi_x[m], noise.xi_p[m]
            )
        residuals[k] = _residual(new_x, xs)
        xs, ps = new_x, new_p
    return UlmcPicardRun(x=xs, p=ps, residuals=residuals)


@dataclass
class UlmcResult:
    samples: np.ndarray
    momenta: np.ndarray
    ledger: QueryLedger
    residuals: np.ndarray
    schedule: UlmcSchedule


def run_parallel_ulmc(
    target: Optional[TargetModel],
    oracle: ScoreOracle,
    schedule: UlmcSchedule,
    n_samples: int = 1,
    rng_seed=None,
    init=None,
    acknowledge_override: bool = False,
    workers: int = 1,
) -> UlmcResult:
    """Parallel ULMC from ``N(x*, I/beta) x N(0, I)`` (or ``init`` for positions).

    Momenta are carried across outer steps and never refreshed; only the
    final positions are returned as samples.
    """
    if target is not None:
        check_schedule(schedule, target.beta, acknowledge_override, max_beta_h=None)
        if init is None:
            init = default_init(target)
    elif not acknowledge_override:
        raise ScheduleViolationError("no target to validate the schedule against; pass acknowledge_override=True")
    if init is None:
        raise InvalidInputError("an explicit init is required without a target")
    d = oracle.dimension
    seeds = as_seed_sequence(rng_seed).spawn(schedule.N + 1)
    rng = np.random.default_rng(seeds[0])
    x = draw_init(init, rng, n_samples, d)
    p = rng.standard_normal((n_samples, d))
    ledger = QueryLedger()
    residuals = np.empty((schedule.N, schedule.K))
    with _pool(workers) as pool:
        for n in range(schedule.N):
            noise = sample_ulmc_noise_grid(schedule.M, schedule.gamma, schedule.h, d, seeds[n + 1], replicas=n_samples)
            run = picard_inner_ulmc(
                PhasePoint(x, p), oracle, schedule.h, schedule.M, schedule.K, schedule.gamma, noise, ledger, pool, workers
            )
            x, p = run.x[-1], run.p[-1]
            residuals[n] = run.residuals
    oracle.ledger.merge(ledger)
    return UlmcResult(samples=x, momenta=p, ledger=ledger, residuals=residuals, schedule=schedule)


__all__ = [
    "GaussianInit",
    "PhasePoint",
    "PhaseTrajectory",
    "StepCoefficients",
    "UlmcResult",
    "UlmcSchedule",
    "exp_euler_step",
    "picard_inner_ulmc",
    "plan_ulmc_params",
    "run_parallel_ulmc",
    "run_sequential_ulmc",
]
