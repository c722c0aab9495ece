"""Parallel (Picard-iterated) Langevin Monte Carlo and its sequential reference."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from parlangevin import _kernels
from parlangevin.errors import (
    InvalidInputError,
    InvalidParameterError,
    InvalidScheduleError,
    ScheduleViolationError,
)
from parlangevin.noise import BrownianGrid, sample_brownian_grid
from parlangevin.score import QueryLedger, ScoreOracle, TargetModel

SQRT2 = math.sqrt(2.0)
DEFAULT_INIT = "use-default-init"
# replicas per cache-resident block in run_parallel_lmc
REPLICA_BLOCK = 256


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass(frozen=True)
class GridSchedule:
    """Step length ``h``, substeps ``M``, Picard depth ``K`` and outer steps ``N``.

    ``planned`` marks schedules produced by a planner; ``overrides`` lists the
    fields changed afterwards. ``formulas`` keeps the unrounded planner values
    for run manifests.
    """

    h: float
    M: int
    K: int
    N: int
    delta: float
    epsilon: float
    planned: bool = False
    overrides: tuple = ()
    formulas: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidScheduleError(f"h must be positive, got {self.h}")
        for name in ("M", "K", "N"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidScheduleError(f"{name} must be a positive integer, got {value}")

    @property
    def rounds(self) -> int:
        return self.N * self.K

    @property
    def evaluations(self) -> int:
        return self.N * self.K * self.M

    def with_overrides(self, **changes) -> "GridSchedule":
        """Copy with some fields replaced; the change is recorded in ``overrides``."""
        changes = {k: v for k, v in changes.items() if v is not None and getattr(self, k) != v}
        if not changes:
            return self
        names = tuple(sorted(set(self.overrides) | set(changes)))
        return replace(self, overrides=names, **changes)

    def capped(self, max_M: Optional[int] = None, max_N: Optional[int] = None, max_K: Optional[int] = None):
        """Shrink M, N and K to the given ceilings (desk-scale runs)."""
        return self.with_overrides(
            M=min(self.M, max_M) if max_M else None,
            N=min(self.N, max_N) if max_N else None,
            K=min(self.K, max_K) if max_K else None,
        )

    def desk_scale(self, max_M: Optional[int] = None, max_N: Optional[int] = None) -> "GridSchedule":
        """Cap M and N and re-derive K from the capped M with the planner rule ``ceil(3 ln M)``."""
        capped = self.capped(max_M=max_M, max_N=max_N)
        if capped.M == self.M:
            return capped
        return capped.with_overrides(K=max(1, math.ceil(3.0 * math.log(capped.M))))

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("h", "M", "K", "N", "delta", "epsilon", "planned")}
        out["overrides"] = list(self.overrides)
        out["formulas"] = dict(self.formulas)
        return out


def _check_planner_inputs(alpha, beta, d, epsilon):
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    if not beta >= alpha:
        raise InvalidParameterError(f"beta must be >= alpha, got beta={beta}, alpha={alpha}")
    if not 0 < epsilon < 1:
        raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if int(d) != d or d < 1:
        raise InvalidParameterError(f"dimension must be a positive integer, got {d}")


def plan_lmc_params(alpha: float, beta: float, d: int, epsilon: float, kl0=DEFAULT_INIT) -> GridSchedule:
    """Schedule guaranteeing KL(output || target) <= epsilon^2.

    With ``kl0`` left at its default the run is assumed to start from
    ``N(x*, I/beta)``, whose KL to the target is at most ``(d/2) log kappa``.
    Otherwise ``kl0`` is an upper bound on the initial KL divergence.
    """
    _check_planner_inputs(alpha, beta, d, epsilon)
    kappa = beta / alpha
    h = 1.0 / (10.0 * beta)
    delta = 2.0 * math.sqrt(alpha) * epsilon
    m_raw = 7.0 * max(kappa * d / epsilon**2, kappa**2)
    M = math.ceil(m_raw)
    k_raw = 3.0 * math.log(M)
    K = max(1, math.ceil(k_raw))
    if kl0 == DEFAULT_INIT:
        n_raw = 10.0 * kappa * math.log(max(d * math.log(kappa), math.e) / epsilon**2)
    else:
        if kl0 < 0:
            raise InvalidParameterError("kl0 must be nonnegative")
        # log argument <= 1 means the start is already accurate enough
        n_raw = math.log(max(2.0 * kl0 / epsilon**2, 1.0)) / (alpha * h)
    N = max(1, math.ceil(n_raw))
    return GridSchedule(
        h=h,
        M=M,
        K=K,
        N=N,
        delta=delta,
        epsilon=epsilon,
        planned=True,
        formulas={
            "h": "1/(10 beta)",
            "delta": "2 sqrt(alpha) eps",
            "M": "ceil(7 max(kappa d/eps^2, kappa^2))",
            "K": "ceil(3 ln M)",
            "N": "ceil(10 kappa ln(max(d ln kappa, e)/eps^2))"
            if kl0 == DEFAULT_INIT
            else "ceil(ln(2 kl0/eps^2)/(alpha h))",
            "M_raw": m_raw,
            "K_raw": k_raw,
            "N_raw": n_raw,
            "alpha": alpha,
            "beta": beta,
            "d": d,
            "kl0": kl0,
        },
    )


def check_schedule(schedule, beta: float, acknowledge_override: bool, max_beta_h: Optional[float] = 0.1) -> None:
    """Refuse unplanned, overridden or too-coarse schedules unless acknowledged."""
    problems = []
    if not schedule.planned:
        problems.append("schedule was not produced by a planner")
    if schedule.overrides:
        problems.append(f"planner values overridden: {', '.join(schedule.overrides)}")
    if max_beta_h is not None and beta * schedule.h > max_beta_h * (1 + 1e-12):
        problems.append(f"beta*h = {beta * schedule.h:.4g} exceeds {max_beta_h:g}")
    if problems and not acknowledge_override:
        raise ScheduleViolationError("; ".join(problems) + " (pass acknowledge_override=True to run anyway)")


@dataclass(frozen=True)
class GaussianInit:
    """Isotropic Gaussian starting law ``N(mean, var I)``."""

    mean: np.ndarray
    var: float

    def sample(self, rng, n_samples: int) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float64)
        return mean + math.sqrt(self.var) * rng.standard_normal((n_samples,) + mean.shape)


def default_init(target: TargetModel) -> GaussianInit:
    if target.minimizer is None:
        raise InvalidInputError("target has no known minimizer; pass an explicit init")
    return GaussianInit(np.asarray(target.minimizer, dtype=np.float64), 1.0 / target.beta)


def draw_init(init, rng, n_samples: int, d: int) -> np.ndarray:
    if isinstance(init, GaussianInit):
        x = init.sample(rng, n_samples)
    else:
        x = np.array(init, dtype=np.float64)
        if x.ndim == 1:
            x = np.broadcast_to(x, (n_samples, x.size)).copy()
    if x.shape != (n_samples, d):
        raise InvalidInputError(f"initial points must have shape {(n_samples, d)}, got {x.shape}")
    return x


@dataclass
class PicardRun:
    """Final Picard iterate on the M+1 grid points and the residual curve.

    ``residuals[k-1]`` is ``max_m mean_replicas |X^(k)_m - X^(k-1)_m|^2``.
    """

    grid: np.ndarray
    residuals: np.ndarray


def _residual(new, old):
    diff = new - old
    sq = np.sum(diff * diff, axis=-1)
    if sq.ndim > 1:
        sq = sq.reshape(sq.shape[0], -1).mean(axis=1)
    return float(sq.max())


def picard_inner_lmc(
    x_start,
    oracle: ScoreOracle,
    h: float,
    M: int,
    K: int,
    noise: BrownianGrid,
    ledger: Optional[QueryLedger] = None,
    executor=None,
    workers: int = 1,
    replica_block: Optional[int] = None,
) -> PicardRun:
    """One outer step of parallel LMC: ``K`` Picard sweeps over ``M`` substeps.

    Every sweep queries the oracle at grid points ``0..M-1`` in a single
    batch and rebuilds the path as
    ``X_m = x_start - (h/M) * sum_{m' < m} s(X_{m'}) + sqrt(2) W_m``.
    With ``x_start`` of shape ``(R, d)``, ``replica_block`` processes the
    replicas in cache-sized groups; the samples do not depend on it.
    """
    if K < 1:
        raise InvalidScheduleError("Picard depth K must be at least 1")
    if noise.substeps != M or not math.isclose(noise.substep_length, h / M, rel_tol=1e-12):
        raise InvalidInputError("noise grid does not match (h, M)")
    x_start = np.asarray(x_start, dtype=np.float64)
    if noise.state_shape != x_start.shape:
        raise InvalidInputError(f"noise shape {noise.state_shape} does not match state {x_start.shape}")
    u = h / M
    if x_start.ndim == 2 and replica_block is not None and 0 < replica_block < x_start.shape[0]:
        blocks = [slice(i, i + replica_block) for i in range(0, x_start.shape[0], replica_block)]
    else:
        blocks = [slice(None)]
    n_replicas = max(1, x_start.size // x_start.shape[-1])
    row_change = np.zeros((K, M + 1))
    grid = np.empty((M + 1,) + x_start.shape)
    for b, block in enumerate(blocks):
        # replicas never interact, so blocks run their sweeps one after another;
        # the rounds are shared and only counted once
        block_ledger = ledger if b == 0 else QueryLedger()
        xb = x_start[block] if x_start.ndim == 2 else x_start
        # x_start + sqrt(2) W_m does not change across sweeps
        base = xb + SQRT2 * (noise.values[:, block] if x_start.ndim == 2 else noise.values)
        gb = np.broadcast_to(xb, base.shape).copy()
        for k in range(K):
            scores = np.ascontiguousarray(oracle(gb[:M], ledger=block_ledger, executor=executor, workers=workers))
            _kernels.lmc_sweep_update(
                scores.reshape(M, -1), base.reshape(M + 1, -1), gb.reshape(M + 1, -1), u, n_replicas, row_change[k]
            )
        if x_start.ndim == 2:
            grid[:, block] = gb
        else:
            grid = gb
    residuals = row_change.max(axis=1)
    return PicardRun(grid=grid, residuals=residuals)


def run_sequential_lmc(
    x0,
    oracle: ScoreOracle,
    step: float,
    steps: int,
    noise: Optional[BrownianGrid] = None,
    rng_seed=None,
    ledger: Optional[QueryLedger] = None,
) -> np.ndarray:
    """Plain LMC, ``X_{n+1} = X_n - step * s(X_n) + sqrt(2) (B_{n+1} - B_n)``.

    Returns the trajectory of shape ``(steps + 1, *x0.shape)``. When a noise
    grid is given its increments drive the chain, which lets it share a path
    with the parallel sampler.
    """
    x = np.asarray(x0, dtype=np.float64)
    if step < 0 or steps < 0:
        raise InvalidParameterError("step and steps must be nonnegative")
    if noise is None:
        rng = np.random.default_rng(rng_seed)
        increments = rng.standard_normal((steps,) + x.shape) * math.sqrt(step)
    else:
        if noise.substeps < steps or not math.isclose(noise.substep_length, step, rel_tol=1e-12, abs_tol=0.0):
            raise InvalidInputError("noise grid does not match the step length or is too short")
        if noise.state_shape != x.shape:
            raise InvalidInputError(f"noise shape {noise.state_shape} does not match state {x.shape}")
        increments = noise.increments
    traj = np.empty((steps + 1,) + x.shape)
    traj[0] = x
    for n in range(steps):
        s = oracle(x[None], ledger=ledger)[0]
        x = x - step * s + SQRT2 * increments[n]
        traj[n + 1] = x
    return traj


@dataclass
class LmcResult:
    samples: np.ndarray
    ledger: QueryLedger
    residuals: np.ndarray
    schedule: GridSchedule


def _pool(workers):
    return ThreadPoolExecutor(max_workers=workers) if workers > 1 else nullcontext(None)


def run_parallel_lmc(
    target: Optional[TargetModel],
    oracle: ScoreOracle,
    schedule: GridSchedule,
    init: Union[GaussianInit, np.ndarray, None] = None,
    n_samples: int = 1,
    rng_seed=None,
    acknowledge_override: bool = False,
    workers: int = 1,
    replica_block: Optional[int] = REPLICA_BLOCK,
) -> LmcResult:
    """Run ``N`` outer steps of Picard-parallel LMC on ``n_samples`` independent chains.

    The default start is ``N(x*, I/beta)``. Chains share oracle rounds, so the
    returned ledger holds exactly ``N*K`` rounds and ``N*K*M`` evaluations.
    ``workers`` sets the thread-pool size for score batches; results do not
    depend on it. Oracles whose answer depends on the replica index (one
    field per chain) need ``replica_block=None``.
    """
    if target is not None:
        check_schedule(schedule, target.beta, acknowledge_override)
        if init is None:
            init = default_init(target)
    elif not acknowledge_override:
        raise ScheduleViolationError("no target to validate the schedule against; pass acknowledge_override=True")
    if init is None:
        raise InvalidInputError("an explicit init is required without a target")
    d = oracle.dimension
    seeds = as_seed_sequence(rng_seed).spawn(schedule.N + 1)
    x = draw_init(init, np.random.default_rng(seeds[0]), n_samples, d)
    ledger = QueryLedger()
    residuals = np.empty((schedule.N, schedule.K))
    with _pool(workers) as pool:
        for n in range(schedule.N):
            noise = sample_brownian_grid(schedule.M, schedule.h, d, seeds[n + 1], replicas=n_samples)
            run = picard_inner_lmc(
                x, oracle, schedule.h, schedule.M, schedule.K, noise, ledger, pool, workers, replica_block
            )
            x = run.grid[-1]
            residuals[n] = run.residuals
    oracle.ledger.merge(ledger)
    return LmcResult(samples=x, ledger=ledger, residuals=residuals, schedule=schedule)
