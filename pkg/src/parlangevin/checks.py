"""Deterministic property checks behind the ``verify`` run mode.

Each check returns :class:`Metric` rows; every row names the claim it
checks through a short descriptive anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, getcontext
from typing import Callable, List

import numpy as np
from scipy import integrate, stats

from parlangevin import diagnostics as dg
from parlangevin import discrete as ds
from parlangevin.lmc import GridSchedule, picard_inner_lmc, run_parallel_lmc, run_sequential_lmc
from parlangevin.noise import (
    sample_brownian_grid,
    sample_ulmc_noise_grid,
    ulmc_noise_covariance,
    ulmc_noise_covariance_naive,
)
from parlangevin.score import make_gaussian_mixture_target, make_gaussian_target
from parlangevin.ulmc import PhasePoint, StepCoefficients, exp_euler_step, picard_inner_ulmc, run_sequential_ulmc


@dataclass(frozen=True)
class Metric:
    module: str
    claim_anchor: str
    metric: str
    value: float
    threshold: str
    passed: bool

    def row(self) -> list:
        return [self.module, self.claim_anchor, self.metric, format_value(self.value), self.threshold, "true" if self.passed else "false"]


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".10g")


def at_most(module, anchor, metric, value, bound) -> Metric:
    return Metric(module, anchor, metric, float(value), f"<= {format_value(bound)}", bool(value <= bound))


def at_least(module, anchor, metric, value, bound) -> Metric:
    return Metric(module, anchor, metric, float(value), f">= {format_value(bound)}", bool(value >= bound))


def equals(module, anchor, metric, value, expected) -> Metric:
    return Metric(module, anchor, metric, value, f"== {format_value(expected)}", bool(value == expected))


def gaussian_2d():
    """The 2D Gaussian used throughout the checks (alpha = 1, beta = 4)."""
    return make_gaussian_target([0.0, 0.0], [1.0, 4.0])


def mixture_2d():
    return make_gaussian_mixture_target([[1.0, 0.0], [-0.5, 0.5]], radius=1.0, noise_scale=1.0)


def _fd_gradient(potential, x, step=1e-6):
    d = x.size
    plus = potential(x + step * np.eye(d))
    minus = potential(x - step * np.eye(d))
    return (plus - minus) / (2 * step)


# score -------------------------------------------------------------------


def check_gradient_consistency(seed=0) -> List[Metric]:
    rng = np.random.default_rng(seed)
    rows = []
    for name, target in (("gaussian", gaussian_2d()), ("mixture", mixture_2d())):
        worst = 0.0
        for x in rng.normal(scale=2.0, size=(100, target.dimension)):
            fd = _fd_gradient(target.potential, x)
            worst = max(worst, float(np.abs(fd - target.score(x[None])[0]).max()))
        rows.append(at_most("score", "score-gradient-consistency", f"fd_gap_{name}", worst, 1e-5))
    return rows


def check_ledger_exactness(seed=0) -> List[Metric]:
    rng = np.random.default_rng(seed)
    target = gaussian_2d()
    oracle = target.exact_oracle()
    sizes = rng.integers(1, 50, size=25)
    for b in sizes:
        oracle(rng.normal(size=(int(b), 2)))
    ok = oracle.ledger.rounds == len(sizes) and oracle.ledger.evaluations == int(sizes.sum())
    return [equals("score", "query-ledger-exactness", "ledger_exact", ok, True)]


def check_smoothness_witness(seed=0) -> List[Metric]:
    rng = np.random.default_rng(seed)
    target = gaussian_2d()
    x, y = rng.normal(size=(2, 200, 2)) * 3
    ratio = np.linalg.norm(target.score(x) - target.score(y), axis=1) / np.linalg.norm(x - y, axis=1)
    return [at_most("score", "score-smoothness-bound", "max_lipschitz_over_beta", float(ratio.max()) / target.beta, 1.0 + 1e-12)]


# noise -------------------------------------------------------------------


def check_covariance_stability() -> List[Metric]:
    worst_rel = 0.0
    for a in np.geomspace(0.1, 30.0, 40):
        for gamma in (0.5, 2.0, 8.0):
            u = a / gamma
            stable, naive = ulmc_noise_covariance(gamma, u), ulmc_noise_covariance_naive(gamma, u)
            worst_rel = max(worst_rel, float(np.max(np.abs(stable - naive) / np.abs(naive))))
    min_det, min_diag = np.inf, np.inf
    for a in np.geomspace(1e-12, 1.0, 60):
        sigma = ulmc_noise_covariance(1.0, a)
        min_diag = min(min_diag, float(sigma[0, 0] / a**3), float(sigma[1, 1] / a))
        # scale-free determinant: Sigma_xx Sigma_pp - Sigma_xp^2 relative to Sigma_xx Sigma_pp
        min_det = min(min_det, float(1.0 - sigma[0, 1] ** 2 / (sigma[0, 0] * sigma[1, 1])))
    return [
        at_most("noise", "ulmc-noise-covariance", "stable_vs_naive_rel_gap", worst_rel, 1e-10),
        at_least("noise", "ulmc-noise-covariance", "min_relative_determinant", min_det, 0.0),
        at_least("noise", "ulmc-noise-covariance", "min_scaled_diagonal", min_diag, 0.0),
    ]


def check_brownian_moments(seed=0, grids=20000) -> List[Metric]:
    M, h = 4, 1.0
    grid = sample_brownian_grid(M, h, 1, seed, replicas=grids)
    values = grid.values[:, :, 0]
    worst_mean, worst_var = 0.0, 0.0
    for m in range(1, M + 1):
        var = m * h / M
        se_mean = math.sqrt(var / grids)
        se_var = var * math.sqrt(2.0 / (grids - 1))
        worst_mean = max(worst_mean, abs(values[m].mean()) / se_mean)
        worst_var = max(worst_var, abs(values[m].var(ddof=1) - var) / se_var)
    return [
        at_most("noise", "brownian-grid-moments", "mean_in_standard_errors", worst_mean, 3.0),
        at_most("noise", "brownian-grid-moments", "variance_in_standard_errors", worst_var, 3.0),
    ]


# lmc ---------------------------------------------------------------------


def lmc_fixed_point_gap(seeds=64, M=16, h=0.025) -> float:
    target = gaussian_2d()
    oracle = target.exact_oracle()
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=2)
        noise = sample_brownian_grid(M, h, 2, rng)
        par = picard_inner_lmc(x0, oracle, h, M, M + 1, noise)
        seq = run_sequential_lmc(x0, oracle, h / M, M, noise=noise)
        worst = max(worst, float(np.abs(par.grid[-1] - seq[-1]).max()))
    return worst


def lmc_residual_ratio(seeds=32, M=16, K=12, h=0.025) -> float:
    target = gaussian_2d()
    oracle = target.exact_oracle()
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        x0 = rng.normal(size=2)
        noise = sample_brownian_grid(M, h, 2, rng)
        run = picard_inner_lmc(x0, oracle, h, M, K, noise)
        worst = max(worst, dg.residual_ratio_report(run.residuals, start=2).max_ratio)
    return worst


def _small_lmc_schedule():
    return GridSchedule(h=0.025, M=16, K=6, N=3, delta=0.0, epsilon=0.3)


def check_lmc() -> List[Metric]:
    target = gaussian_2d()
    schedule = _small_lmc_schedule()
    a = run_parallel_lmc(target, target.exact_oracle(), schedule, n_samples=64, rng_seed=7, acknowledge_override=True, workers=1)
    b = run_parallel_lmc(target, target.exact_oracle(), schedule, n_samples=64, rng_seed=7, acknowledge_override=True, workers=4)
    accounting = a.ledger.rounds == schedule.rounds and a.ledger.evaluations == schedule.evaluations
    return [
        at_most("lmc", "picard-fixed-point-equivalence", "max_endpoint_gap", lmc_fixed_point_gap(), 1e-12),
        at_most("lmc", "picard-residual-decay", "max_residual_ratio_after_2", lmc_residual_ratio(), 0.1),
        equals("lmc", "worker-count-determinism", "bit_identical_1_vs_4_workers", bool(np.array_equal(a.samples, b.samples)), True),
        equals("lmc", "adaptive-round-accounting", "rounds_and_evaluations_exact", accounting, True),
    ]


# ulmc --------------------------------------------------------------------


def ulmc_fixed_point_gap(seeds=64, M=16, h=0.025, gamma=math.sqrt(32.0)) -> float:
    target = gaussian_2d()
    oracle = target.exact_oracle()
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        start = PhasePoint(rng.normal(size=2), rng.normal(size=2))
        noise = sample_ulmc_noise_grid(M, gamma, h, 2, rng)
        par = picard_inner_ulmc(start, oracle, h, M, M + 1, gamma, noise)
        seq = run_sequential_ulmc(start, oracle, gamma, h / M, M, noise=noise)
        worst = max(worst, float(np.abs(par.x[-1] - seq.x[-1]).max()), float(np.abs(par.p[-1] - seq.p[-1]).max()))
    return worst


def affine_recursion_gap() -> float:
    """One noiseless, scoreless substep against 40-digit decimal arithmetic."""
    getcontext().prec = 40
    worst = 0.0
    for gamma, u in ((2.0, 0.5), (math.sqrt(32.0), 0.025 / 16), (0.3, 1e-6), (5.0, 3.0)):
        coef = StepCoefficients.for_step(gamma, u)
        x, p = np.array([0.7]), np.array([-1.3])
        x_new, p_new = exp_euler_step(x, p, np.zeros(1), coef, np.zeros(1), np.zeros(1))
        g, uu = Decimal(gamma), Decimal(u)
        decay = (-g * uu).exp()
        x_ref = Decimal(0.7) + (1 - decay) / g * Decimal(-1.3)
        p_ref = decay * Decimal(-1.3)
        worst = max(worst, abs(float(Decimal(float(x_new[0])) - x_ref)), abs(float(Decimal(float(p_new[0])) - p_ref)))
    return worst


def ulmc_residual_monotone(seeds=32) -> bool:
    target = gaussian_2d()
    oracle = target.exact_oracle()
    h, M, K, gamma = 0.1 / math.sqrt(target.beta), 16, 10, math.sqrt(8 * target.beta)
    for seed in range(seeds):
        rng = np.random.default_rng(2000 + seed)
        start = PhasePoint(rng.normal(size=2), rng.normal(size=2))
        noise = sample_ulmc_noise_grid(M, gamma, h, 2, rng)
        r = picard_inner_ulmc(start, oracle, h, M, K, gamma, noise).residuals
        tail = r[1:]
        live = tail[:-1] > dg.RESIDUAL_FLOOR
        if np.any(np.diff(tail)[live] > 0):
            return False
    return True


def ulmc_momentum_variance(replicas=2000, steps=3000, seed=3):
    target = gaussian_2d()
    oracle = target.exact_oracle()
    rng = np.random.default_rng(seed)
    start = PhasePoint(np.zeros((replicas, 2)), np.zeros((replicas, 2)))
    traj = run_sequential_ulmc(start, oracle, gamma=2.0, step=0.01, steps=steps, rng_seed=rng)
    return float(traj.p[-1].var(axis=0, ddof=1).max() - 1.0), float(traj.p[-1].var(axis=0, ddof=1).min() - 1.0)


def check_ulmc() -> List[Metric]:
    hi, lo = ulmc_momentum_variance()
    return [
        at_most("ulmc", "ulmc-fixed-point-equivalence", "max_endpoint_gap", ulmc_fixed_point_gap(), 1e-12),
        at_most("ulmc", "exponential-euler-affine-step", "max_gap_vs_40_digit_reference", affine_recursion_gap(), 1e-15),
        equals("ulmc", "ulmc-residual-monotone", "nonincreasing_after_2_all_seeds", ulmc_residual_monotone(), True),
        at_most("ulmc", "ulmc-stationary-momentum", "momentum_variance_minus_one_abs", max(abs(hi), abs(lo)), 0.1),
    ]


# discrete ----------------------------------------------------------------


def tilted_mean_identity_gap(cases=50, seed=0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 11))
        mu = ds.HypercubeDistribution.from_log_weights(rng.normal(scale=1.5, size=2**n))
        z = rng.normal(scale=2.0, size=n)
        formula = ds.tilted_mean_from_laplace(ds.make_enum_oracle(mu), z)
        worst = max(worst, float(np.abs(formula - mu.tilt(z).mean()).max()))
    return worst


def convolved_hessian_range(c=2.0, n=3, points=20, seed=0, step=1e-4):
    rng = np.random.default_rng(seed)
    oracle = ds.make_enum_oracle(ds.HypercubeDistribution.uniform(n))
    w = np.zeros(n)
    lo, hi = np.inf, -np.inf
    for y in rng.normal(scale=2.0, size=(points, n)):
        hess = dg.finite_difference_hessian(lambda pts: ds.convolved_score(oracle, w, c, pts), y, step)
        eig = np.linalg.eigvalsh(hess)
        lo, hi = min(lo, float(eig.min())), max(hi, float(eig.max()))
    return lo, hi


def check_discrete() -> List[Metric]:
    c = 2.0
    lo, hi = convolved_hessian_range(c)
    plan = ds.plan_localization(3, c, 0.1)
    state = ds.LocalizationState.start(4, c, 1, runs=2)
    signs_ok = bool(np.all(state.signs() == 1))
    return [
        at_most("discrete", "tilted-mean-identity", "max_gap_vs_enumeration", tilted_mean_identity_gap(), 1e-10),
        at_least("discrete", "convolved-potential-conditioning", "min_hessian_eig_minus_lower", lo - (1 / (2 * c) - 1e-3), 0.0),
        at_most("discrete", "convolved-potential-conditioning", "max_hessian_eig_minus_upper", hi - (1 / c + 1e-3), 0.0),
        at_most("discrete", "localization-coupling-budget", "T_eta_over_half_eps", plan.inner_budget / (plan.epsilon / 2), 1.0 + 1e-12),
        equals("discrete", "localization-sign-tiebreak", "sign_of_zero_is_plus", signs_ok, True),
    ]


# diagnostics -------------------------------------------------------------


def _exact_tv_1d(m1, s1, m2, s2):
    f = lambda x: abs(stats.norm.pdf(x, m1, s1) - stats.norm.pdf(x, m2, s2))
    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)
    value, _ = integrate.quad(f, lo, hi, limit=400, points=[m1, m2])
    return 0.5 * value


def check_diagnostics(seed=0) -> List[Metric]:
    rng = np.random.default_rng(seed)
    min_kl, max_self = np.inf, 0.0
    min_slack = np.inf
    for _ in range(20):
        d = int(rng.integers(1, 4))
        a = rng.normal(size=(d, d))
        fit1 = dg.GaussianFit(rng.normal(size=d), a @ a.T + 0.5 * np.eye(d))
        b = rng.normal(size=(d, d))
        fit2 = dg.GaussianFit(rng.normal(size=d), b @ b.T + 0.5 * np.eye(d))
        min_kl = min(min_kl, dg.gaussian_kl(fit1, fit2))
        max_self = max(max_self, abs(dg.gaussian_kl(fit1, fit1)))
    for _ in range(10):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.3, 2.0, size=2)
        kl = dg.gaussian_kl(dg.GaussianFit([m1], [[s1**2]]), dg.GaussianFit([m2], [[s2**2]]))
        min_slack = min(min_slack, dg.pinsker_tv_bound(kl) - _exact_tv_1d(m1, s1, m2, s2))
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    draws = rng.multivariate_normal([1.0, -2.0], cov, size=10**6)
    fit = dg.empirical_gaussian_fit(draws)
    return [
        at_least("diagnostics", "gaussian-kl-nonnegative", "min_kl_distinct_fits", min_kl, 0.0),
        at_most("diagnostics", "gaussian-kl-nonnegative", "max_abs_kl_identical_fits", max_self, 1e-10),
        at_least("diagnostics", "pinsker-ordering", "min_pinsker_minus_exact_tv", min_slack, 0.0),
        at_most("diagnostics", "empirical-fit-recovery", "max_mean_error", float(np.abs(fit.mean - [1.0, -2.0]).max()), 4e-3),
        at_most("diagnostics", "empirical-fit-recovery", "max_rel_cov_error", float(np.abs(fit.covariance / cov - 1).max()), 0.01),
    ]


SUITE: List[Callable[[], List[Metric]]] = [
    check_gradient_consistency,
    check_ledger_exactness,
    check_smoothness_witness,
    check_covariance_stability,
    check_brownian_moments,
    check_lmc,
    check_ulmc,
    check_discrete,
    check_diagnostics,
]


def run_suite() -> List[Metric]:
    rows: List[Metric] = []
    for check in SUITE:
        rows.extend(check())
    return rows
