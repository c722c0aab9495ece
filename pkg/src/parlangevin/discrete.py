"""Sampling on the hypercube {-1, +1}^n through a continuous sampler.

A measure ``mu`` on the cube is accessed only through its log-Laplace
transform ``L(w) = log sum_x mu(x) exp(<w, x>)``. Entries of ``w`` may be
``+inf`` or ``-inf``; such a coordinate restricts the sum to states with the
matching sign and drops out of the exponent.

The localization sampler keeps a field ``w`` (one per run), repeatedly draws
``x ~ tau_w mu * N(0, cI)`` with a parallel Langevin sampler driven by the
score built from ``L``, adds ``x / c`` to ``w`` and finally returns
``sign(w)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from parlangevin import _kernels
from parlangevin.errors import (
    ConfigurationError,
    InvalidInputError,
    InvalidParameterError,
    InvalidTargetError,
)
from parlangevin.lmc import GaussianInit, as_seed_sequence, plan_lmc_params, run_parallel_lmc
from parlangevin.score import QueryLedger, ScoreOracle, TargetModel
from parlangevin.ulmc import plan_ulmc_params, run_parallel_ulmc

TILT_CAP = 700.0
MAX_ENUM_N = 20


def hypercube_states(n: int) -> np.ndarray:
    """All of {-1, +1}^n as an int8 array, first coordinate most significant."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8)


def state_index(signs) -> np.ndarray:
    """Row index into :func:`hypercube_states` of each sign vector."""
    signs = np.asarray(signs)
    n = signs.shape[-1]
    bits = (signs > 0).astype(np.int64)
    return bits @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))


def parse_sign_string(text: str) -> np.ndarray:
    text = text.strip()
    if not text or any(ch not in "+-" for ch in text):
        raise InvalidInputError(f"sign string must consist of '+' and '-', got {text!r}")
    return np.array([1 if ch == "+" else -1 for ch in text], dtype=np.int8)


@dataclass(frozen=True)
class HypercubeDistribution:
    """Normalized measure on {-1, +1}^n stored as log-weights over :func:`hypercube_states`."""

    n: int
    log_weights: np.ndarray
    name: str = "table"

    def __post_init__(self):
        if self.n < 1 or self.n > MAX_ENUM_N:
            raise InvalidTargetError(f"enumerated distributions need 1 <= n <= {MAX_ENUM_N}, got {self.n}")
        lw = np.asarray(self.log_weights, dtype=np.float64)
        if lw.shape != (2**self.n,):
            raise InvalidTargetError(f"expected {2**self.n} log-weights, got shape {lw.shape}")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise InvalidTargetError("log-weights must be finite or -inf")
        total = logsumexp(lw)
        if not np.isfinite(total):
            raise InvalidTargetError("distribution has no mass")
        object.__setattr__(self, "log_weights", lw - total)

    @classmethod
    def from_log_weights(cls, log_weights, name: str = "table") -> "HypercubeDistribution":
        lw = np.asarray(log_weights, dtype=np.float64)
        n = int(round(math.log2(lw.size))) if lw.size > 0 else 0
        return cls(n=n, log_weights=lw, name=name)

    @classmethod
    def uniform(cls, n: int) -> "HypercubeDistribution":
        return cls(n=n, log_weights=np.zeros(2**n), name="uniform")

    @classmethod
    def product(cls, marginals) -> "HypercubeDistribution":
        """Independent coordinates with ``P(x_i = +1) = marginals[i]``."""
        p = np.asarray(marginals, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or np.any(p > 1):
            raise InvalidTargetError("marginals must be probabilities")
        states = hypercube_states(p.size)
        with np.errstate(divide="ignore"):
            lw = np.where(states > 0, np.log(p), np.log1p(-p)).sum(axis=1)
        return cls(n=p.size, log_weights=lw, name="product")

    @classmethod
    def pointmass(cls, signs) -> "HypercubeDistribution":
        if isinstance(signs, str):
            signs = parse_sign_string(signs)
        signs = np.asarray(signs)
        lw = np.full(2 ** signs.size, -np.inf)
        lw[state_index(signs)] = 0.0
        return cls(n=signs.size, log_weights=lw, name="pointmass")

    @classmethod
    def from_table(cls, path) -> "HypercubeDistribution":
        """Read ``signs logweight`` rows, e.g. ``+-+ -0.5``; absent atoms get zero mass."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InvalidInputError(f"{path}:{lineno}: expected 'signs logweight'")
            try:
                rows.append((parse_sign_string(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
        if not rows:
            raise InvalidInputError(f"{path}: no atoms")
        n = rows[0][0].size
        lw = np.full(2**n, -np.inf)
        for signs, value in rows:
            if signs.size != n:
                raise InvalidInputError(f"{path}: atoms of different lengths")
            idx = state_index(signs)
            if lw[idx] != -np.inf:
                raise InvalidInputError(f"{path}: duplicate atom {signs.tolist()}")
            lw[idx] = value
        return cls(n=n, log_weights=lw, name="table")

    @property
    def states(self) -> np.ndarray:
        return hypercube_states(self.n)

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def tilt(self, w) -> "HypercubeDistribution":
        w = _as_tilt(w, self.n)
        energies = np.empty(2**self.n)
        _kernels._energies(w, self.states, self.log_weights, energies)
        return HypercubeDistribution(n=self.n, log_weights=energies, name=f"tilted-{self.name}")

    def mean(self) -> np.ndarray:
        return self.probabilities @ self.states.astype(np.float64)

    def covariance(self) -> np.ndarray:
        x = self.states.astype(np.float64)
        p = self.probabilities
        m = p @ x
        return (x * p[:, None]).T @ x - np.outer(m, m)

    def sample(self, rng, size: int) -> np.ndarray:
        idx = rng.choice(2**self.n, size=size, p=self.probabilities)
        return self.states[idx]


def _as_tilt(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1:] != (n,):
        raise InvalidInputError(f"tilt vectors must have length {n}, got shape {w.shape}")
    if np.any(np.isnan(w)):
        raise InvalidInputError("tilt vectors may not contain NaN")
    return w + 0.0


def extended_tilt(w, cap: float = TILT_CAP) -> np.ndarray:
    """Treat finite entries with magnitude above ``cap`` as the matching infinity."""
    w = np.asarray(w, dtype=np.float64)
    return np.where(np.abs(w) > cap, np.copysign(np.inf, w), w)


def log_laplace_enum(mu: HypercubeDistribution, w) -> np.ndarray:
    """Exact extended log-Laplace transform by enumeration; ``-inf`` when no state is admissible."""
    w = _as_tilt(w, mu.n)
    flat = np.ascontiguousarray(w.reshape(-1, mu.n))
    out = np.empty(flat.shape[0])
    _kernels.enum_log_laplace(flat, mu.states, mu.log_weights, out)
    out = out.reshape(w.shape[:-1])
    return out[()] if out.ndim == 0 else out


class LaplaceOracle:
    """Returns ``L_hat(w)`` with ``|L_hat(w) - L_mu(w)| <= eps`` for extended tilts ``w``.

    ``query`` takes a batch ``(B, ..., n)`` and charges one round and ``B``
    evaluations to the ledger, following the same convention as score
    oracles. ``query_with_flips`` returns ``L(z)`` together with every
    ``L(z^{+j})`` (coordinate ``j`` set to ``+inf``) as one round of
    ``(n + 1) B`` evaluations.
    """

    eps: float = 0.0

    def __init__(self, n: int, eps: float = 0.0):
        if n < 1:
            raise InvalidParameterError("n must be positive")
        if eps < 0:
            raise InvalidParameterError("eps must be nonnegative")
        self.n = n
        self.eps = float(eps)
        self.ledger = QueryLedger()

    def _evaluate(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _evaluate_flips(self, z: np.ndarray):
        # generic path: stack the n flipped copies after the base rows
        flipped = np.repeat(z[..., None, :], self.n, axis=-2)
        idx = np.arange(self.n)
        flipped[..., idx, idx] = np.inf
        return self._evaluate(z), self._evaluate(flipped)

    def _check_batch(self, w) -> np.ndarray:
        w = _as_tilt(w, self.n)
        if w.ndim < 2:
            raise InvalidInputError(f"expected a batch of shape (B, ..., {self.n}), got {w.shape}")
        return w

    def query(self, w, record: bool = True) -> np.ndarray:
        w = self._check_batch(w)
        out = self._evaluate(w)
        if record:
            self.ledger.record(w.shape[0])
        return out

    def query_with_flips(self, z, record: bool = True):
        z = self._check_batch(z)
        base, flips = self._evaluate_flips(z)
        if record:
            self.ledger.record((self.n + 1) * z.shape[0])
        return base, flips


class EnumLaplaceOracle(LaplaceOracle):
    """Exact oracle backed by enumeration of ``mu``."""

    def __init__(self, mu: HypercubeDistribution):
        super().__init__(mu.n, 0.0)
        self.mu = mu
        self._states = mu.states
        self._log_w = mu.log_weights

    def _evaluate(self, w):
        flat = np.ascontiguousarray(w.reshape(-1, self.n))
        out = np.empty(flat.shape[0])
        _kernels.enum_log_laplace(flat, self._states, self._log_w, out)
        return out.reshape(w.shape[:-1])

    def _evaluate_flips(self, z):
        flat = np.ascontiguousarray(z.reshape(-1, self.n))
        base = np.empty(flat.shape[0])
        flips = np.empty_like(flat)
        _kernels.enum_log_laplace_flips(flat, self._states, self._log_w, base, flips)
        return base.reshape(z.shape[:-1]), flips.reshape(z.shape)


class ProductLaplaceOracle(LaplaceOracle):
    """Closed form for independent coordinates with ``P(x_i = +1) = p_i``."""

    def __init__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise InvalidParameterError("p must be a nonempty vector")
        if np.any(p <= 0) or np.any(p >= 1):
            raise InvalidParameterError("product oracle needs every p_i in (0, 1); use an enumeration oracle for atoms")
        super().__init__(p.size, 0.0)
        self.p = p
        self._log_p = np.log(p)
        self._log_q = np.log1p(-p)

    def _terms(self, w):
        with np.errstate(invalid="ignore"):
            terms = np.logaddexp(self._log_p + w, self._log_q - w)
        terms = np.where(w == np.inf, self._log_p, terms)
        return np.where(w == -np.inf, self._log_q, terms)

    def _evaluate(self, w):
        return self._terms(w).sum(axis=-1)

    def _evaluate_flips(self, z):
        terms = self._terms(z)
        base = terms.sum(axis=-1)
        return base, base[..., None] - terms + self._log_p


class ApproximateLaplaceOracle(LaplaceOracle):
    """Adds ``+eps`` or ``-eps`` to a base oracle, chosen by a seeded hash of the query."""

    def __init__(self, base: LaplaceOracle, eps: float, seed: int = 0):
        super().__init__(base.n, base.eps + eps)
        self.base = base
        self.added = float(eps)
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)

    def _signs(self, w):
        flat = np.ascontiguousarray(w.reshape(-1, self.n))
        out = np.empty(flat.shape[0])
        _kernels.hash_signs(flat.view(np.uint64), self.seed, out)
        return out.reshape(w.shape[:-1])

    def _evaluate(self, w):
        return self.base._evaluate(w) + self.added * self._signs(w)

    def _evaluate_flips(self, z):
        base, flips = self.base._evaluate_flips(z)
        flat = np.ascontiguousarray(z.reshape(-1, self.n))
        s0 = np.empty(flat.shape[0])
        sf = np.empty_like(flat)
        _kernels.hash_signs_flips(flat.view(np.uint64), self.seed, s0, sf)
        return base + self.added * s0.reshape(z.shape[:-1]), flips + self.added * sf.reshape(z.shape)


def make_enum_oracle(mu: HypercubeDistribution) -> EnumLaplaceOracle:
    return EnumLaplaceOracle(mu)


def make_product_oracle(p) -> ProductLaplaceOracle:
    return ProductLaplaceOracle(p)


def approximate_wrapper(oracle: LaplaceOracle, eps: float, seed: int = 0) -> LaplaceOracle:
    """An ``oracle.eps + eps`` accurate oracle; with ``eps == 0`` the base oracle itself."""
    if eps < 0:
        raise InvalidParameterError("eps must be nonnegative")
    if eps == 0:
        return oracle
    return ApproximateLaplaceOracle(oracle, eps, seed)


def tilted_mean_from_laplace(oracle: LaplaceOracle, z, record: bool = True, cap: float = TILT_CAP) -> np.ndarray:
    """Mean of ``tau_z mu`` from ``n + 1`` log-Laplace values per point, in one round.

    Coordinate ``j`` is ``2 exp(z_j + L(z^{+j}) - L(z)) - 1``. A coordinate
    with ``|z_j| > cap`` is queried as ``sign(z_j) * inf`` and has mean
    ``sign(z_j)``. Accepts ``(n,)`` or ``(B, ..., n)``.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("tilted means need finite z")
    big = np.abs(z) > cap
    ze = np.where(big, np.copysign(np.inf, z), z) if big.any() else z
    base, flips = oracle.query_with_flips(ze, record=record)
    if big.any():
        # capping can point a coordinate at a face without mass; those rows use z itself
        lost = base == -np.inf
        if lost.any():
            base[lost], flips[lost] = oracle.query_with_flips(z[lost], record=False)
            ze = ze.copy()
            ze[lost] = z[lost]
            big = big & ~lost[..., None]
    with np.errstate(invalid="ignore", over="ignore"):
        expo = np.where(big, 0.0, ze) + flips - base[..., None]
        mean = 2.0 * np.exp(expo) - 1.0
    mean = np.where(flips == -np.inf, -1.0, mean)
    mean = np.where(big, np.sign(z), mean)
    mean = np.clip(mean, -1.0, 1.0)
    return mean[0] if single else mean


def convolved_score(oracle: LaplaceOracle, w, c: float, y, record: bool = True) -> np.ndarray:
    """``grad V(y) = (y - mean(tau_{y/c + w} mu)) / c`` for ``V = -log(tau_w mu * N(0, cI))``."""
    if not c > 0:
        raise InvalidParameterError("c must be positive")
    y = np.asarray(y, dtype=np.float64)
    z = y / c + np.asarray(w, dtype=np.float64)
    return (y - tilted_mean_from_laplace(oracle, z, record=record)) / c


def convolved_potential(oracle: LaplaceOracle, w, c: float, y, record: bool = True) -> np.ndarray:
    """``V(y) = |y|^2/(2c) - L(y/c + w)`` up to an additive constant."""
    if not c > 0:
        raise InvalidParameterError("c must be positive")
    y = np.asarray(y, dtype=np.float64)
    z = y / c + np.asarray(w, dtype=np.float64)
    single = z.ndim == 1
    values = oracle.query(z[None] if single else z, record=record)
    values = values[0] if single else values
    return np.sum(y * y, axis=-1) / (2.0 * c) - values


def score_accuracy(eps: float, n: int, c: float) -> float:
    """Score error bound ``2 sqrt(n) (exp(2 eps) - 1) / c`` for an ``eps``-accurate oracle.

    Each coordinate of the tilted mean is ``2 exp(e) - 1`` with ``e`` off by at
    most ``2 eps``; the clamp to [-1, 1] can only shrink the error.
    """
    return 2.0 * math.sqrt(n) * math.expm1(2.0 * eps) / c


def convolved_target(oracle: LaplaceOracle, w, c: float, ledger: Optional[QueryLedger] = None):
    """Continuous target ``tau_w mu * N(0, cI)`` and its score oracle.

    ``w`` may hold one field per replica, shape ``(R, n)``; the oracle then
    expects batches of shape ``(B, R, n)``. Every score batch of ``B`` points
    charges one round and ``(n + 1) B`` evaluations to ``ledger``.
    """
    if not c > 0:
        raise InvalidParameterError("c must be positive")
    n = oracle.n
    w = np.asarray(w, dtype=np.float64)

    def score(y):
        return convolved_score(oracle, w, c, y, record=False)

    def potential(y):
        return convolved_potential(oracle, w, c, y, record=False)

    target = TargetModel(
        dimension=n,
        alpha=1.0 / (2.0 * c),
        beta=1.0 / c,
        minimizer=None,
        potential=potential,
        score=score,
        name="convolved-tilt",
    )
    score_oracle = ScoreOracle(
        fn=score,
        dimension=n,
        delta=score_accuracy(oracle.eps, n, c),
        linked_ledger=ledger,
        linked_calls=n + 1,
    )
    return target, score_oracle


@dataclass
class TiltCovarianceReport:
    bound: float
    max_eigenvalue: float
    worst_tilt: np.ndarray
    eigenvalues: list
    passed: bool


def verify_tilt_covariance_bound(mu: HypercubeDistribution, c: float, tilt_grid: Sequence) -> TiltCovarianceReport:
    """Largest covariance eigenvalue of ``tau_w mu`` over the given tilts, compared with ``c/2``."""
    if not c > 0:
        raise InvalidParameterError("c must be positive")
    eigs, worst, top = [], None, -np.inf
    for w in tilt_grid:
        lam = float(np.linalg.eigvalsh(mu.tilt(w).covariance()).max())
        eigs.append(lam)
        if lam > top:
            top, worst = lam, np.asarray(w, dtype=np.float64)
    bound = c / 2.0
    return TiltCovarianceReport(bound=bound, max_eigenvalue=top, worst_tilt=worst, eigenvalues=eigs, passed=top <= bound + 1e-12)


@dataclass
class LocalizationState:
    """Field ``w`` after ``i`` of ``T`` steps; ``w`` may carry one row per run."""

    w: np.ndarray
    c: float
    T: int
    i: int = 0

    @classmethod
    def start(cls, n: int, c: float, T: int, runs: Optional[int] = None) -> "LocalizationState":
        shape = (n,) if runs is None else (runs, n)
        return cls(w=np.zeros(shape), c=c, T=T)

    def update(self, x) -> None:
        if self.i >= self.T:
            raise InvalidInputError("localization already finished")
        self.w = self.w + np.asarray(x, dtype=np.float64) / self.c
        self.i += 1

    def signs(self) -> np.ndarray:
        # sign(0) is taken to be +1
        return np.where(self.w >= 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class LocalizationPlan:
    T: int
    eta: float
    epsilon: float
    c: float
    n: int

    @property
    def inner_budget(self) -> float:
        return self.T * self.eta


def plan_localization(n: int, c: float, epsilon: float, t_const: float = 4.0, eta_split: float = 0.5) -> LocalizationPlan:
    """``T = ceil(t_const c ln(n/eps + e))`` steps and inner accuracy ``eta = eta_split eps / T``."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    if not c > 0:
        raise InvalidParameterError("c must be positive")
    if not 0 < epsilon < 1:
        raise InvalidParameterError("epsilon must lie in (0, 1)")
    if not t_const > 0 or not 0 < eta_split <= 0.5:
        raise InvalidParameterError("need t_const > 0 and 0 < eta_split <= 1/2")
    T = math.ceil(t_const * c * math.log(n / epsilon + math.e))
    return LocalizationPlan(T=T, eta=eta_split * epsilon / T, epsilon=epsilon, c=c, n=n)


@dataclass(frozen=True)
class InnerSamplerConfig:
    """How each localization step draws from ``tau_w mu * N(0, cI)``.

    ``kind`` is ``"lmc"``, ``"ulmc"`` or ``"exact"``; the last draws by
    enumeration and is only available with an enumeration oracle. The
    planned schedule for inner accuracy ``eta`` is used unless ``max_M`` or
    ``max_N`` cap it, which must be acknowledged. A planned schedule above
    ``max_evaluations`` per step is refused.
    """

    kind: str = "lmc"
    max_M: Optional[int] = None
    max_N: Optional[int] = None
    acknowledge_override: bool = False
    max_evaluations: int = 10**6
    constants: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("lmc", "ulmc", "exact"):
            raise ConfigurationError(f"unknown inner sampler {self.kind!r}")


def inner_schedule(plan: LocalizationPlan, inner: InnerSamplerConfig):
    """Resolved inner schedule for one localization step (``None`` for the exact sampler)."""
    if inner.kind == "exact":
        return None
    alpha, beta = 1.0 / (2.0 * plan.c), 1.0 / plan.c
    if inner.kind == "lmc":
        # the start N(0, cI) has KL at most n/(2c) to the convolved target
        planned = plan_lmc_params(alpha, beta, plan.n, plan.eta, kl0=plan.n / (2.0 * plan.c))
    else:
        planned = plan_ulmc_params(alpha, beta, plan.n, plan.eta, inner.constants)
    schedule = planned.desk_scale(inner.max_M, inner.max_N)
    if schedule.overrides and not inner.acknowledge_override:
        raise ConfigurationError("inner schedule caps change the planned schedule; set acknowledge_override")
    if not schedule.overrides and schedule.evaluations > inner.max_evaluations:
        raise ConfigurationError(
            f"planned inner schedule needs {schedule.evaluations} evaluations per step "
            f"(limit {inner.max_evaluations}); set max_M/max_N caps"
        )
    return schedule


@dataclass
class LocalizationResult:
    samples: np.ndarray
    fields: np.ndarray
    plan: LocalizationPlan
    schedule: object
    score_ledger: QueryLedger
    laplace_ledger: QueryLedger
    residuals: list = field(default_factory=list)


# runs per block; blocks are independent and seeded separately
LOCALIZATION_BLOCK = 4096


def run_localization_sampler(
    oracle: LaplaceOracle,
    n: int,
    c: float,
    epsilon: float,
    inner: Optional[InnerSamplerConfig] = None,
    rng_seed=None,
    n_runs: int = 1,
    t_const: float = 4.0,
    eta_split: float = 0.5,
    workers: int = 1,
) -> LocalizationResult:
    """Draw ``n_runs`` independent samples from ``mu`` through stochastic localization.

    Runs are processed in blocks of :data:`LOCALIZATION_BLOCK`; within a block
    every run shares the inner sampler's oracle rounds. The returned ledgers
    count the rounds and per-run evaluations of one block, which are the
    same for every block.
    """
    if oracle.n != n:
        raise InvalidInputError(f"oracle dimension {oracle.n} does not match n={n}")
    if n_runs < 1:
        raise InvalidParameterError("n_runs must be positive")
    inner = inner or InnerSamplerConfig()
    plan = plan_localization(n, c, epsilon, t_const, eta_split)
    schedule = inner_schedule(plan, inner)
    if inner.kind == "exact" and not isinstance(oracle, EnumLaplaceOracle):
        raise ConfigurationError("the exact inner sampler needs an enumeration oracle")
    starts = range(0, n_runs, LOCALIZATION_BLOCK)
    block_seeds = as_seed_sequence(rng_seed).spawn(len(starts))
    samples = np.empty((n_runs, n), dtype=np.int8)
    fields = np.empty((n_runs, n))
    score_ledger, laplace_ledger = QueryLedger(), QueryLedger()
    residuals = []
    for b, start in enumerate(starts):
        runs = min(LOCALIZATION_BLOCK, n_runs - start)
        sl, ll = (score_ledger, laplace_ledger) if b == 0 else (QueryLedger(), QueryLedger())
        state = _localize_block(oracle, plan, inner, schedule, runs, block_seeds[b], sl, ll, residuals if b == 0 else None, workers)
        samples[start : start + runs] = state.signs()
        fields[start : start + runs] = state.w
    return LocalizationResult(
        samples=samples,
        fields=fields,
        plan=plan,
        schedule=schedule,
        score_ledger=score_ledger,
        laplace_ledger=laplace_ledger,
        residuals=residuals,
    )


def _localize_block(oracle, plan, inner, schedule, runs, seed, score_ledger, laplace_ledger, residuals, workers):
    n, c = plan.n, plan.c
    state = LocalizationState.start(n, c, plan.T, runs)
    step_seeds = seed.spawn(plan.T)
    init = GaussianInit(np.zeros(n), c)
    for i in range(plan.T):
        if inner.kind == "exact":
            x = _exact_convolved_draw(oracle.mu, state.w, c, np.random.default_rng(step_seeds[i]))
        else:
            target, score_oracle = convolved_target(oracle, state.w, c, ledger=laplace_ledger)
            kwargs = dict(
                init=init,
                n_samples=runs,
                rng_seed=step_seeds[i],
                acknowledge_override=inner.acknowledge_override,
                workers=workers,
            )
            if inner.kind == "lmc":
                run = run_parallel_lmc(target, score_oracle, schedule, replica_block=None, **kwargs)
            else:
                run = run_parallel_ulmc(target, score_oracle, schedule, **kwargs)
            score_ledger.merge(run.ledger)
            if residuals is not None:
                residuals.append(run.residuals)
            x = run.samples
        state.update(x)
    return state


def _exact_convolved_draw(mu: HypercubeDistribution, w, c, rng):
    """``x ~ tau_w mu``, one per row of ``w``, plus ``N(0, cI)`` noise."""
    logits = mu.log_weights + w @ mu.states.T.astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(w.shape[0]) * cdf[:, -1]
    idx = np.minimum((cdf < u[:, None]).sum(axis=1), cdf.shape[1] - 1)
    return mu.states[idx].astype(np.float64) + math.sqrt(c) * rng.standard_normal(w.shape)


def empirical_distribution(samples, n: int) -> np.ndarray:
    """Histogram of sign vectors over :func:`hypercube_states`, normalized."""
    counts = np.bincount(state_index(samples), minlength=2**n).astype(np.float64)
    return counts / counts.sum()


__all__ = [
    "ApproximateLaplaceOracle",
    "EnumLaplaceOracle",
    "HypercubeDistribution",
    "InnerSamplerConfig",
    "LaplaceOracle",
    "LocalizationPlan",
    "LocalizationResult",
    "LocalizationState",
    "ProductLaplaceOracle",
    "TiltCovarianceReport",
    "approximate_wrapper",
    "convolved_potential",
    "convolved_score",
    "convolved_target",
    "empirical_distribution",
    "extended_tilt",
    "hypercube_states",
    "inner_schedule",
    "log_laplace_enum",
    "make_enum_oracle",
    "make_product_oracle",
    "plan_localization",
    "run_localization_sampler",
    "score_accuracy",
    "state_index",
    "tilted_mean_from_laplace",
    "verify_tilt_covariance_bound",
]
