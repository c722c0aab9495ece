"""Closed-form Gaussian distances, empirical fits and residual-curve summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from parlangevin.errors import InvalidInputError, InvalidParameterError, SingularFitError

CLIP_TOL = 1e-10
RESIDUAL_FLOOR = 1e-24


def _clip_psd(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -CLIP_TOL * max(1.0, abs(vals.max())):
        raise InvalidInputError(f"covariance has a negative eigenvalue {vals.min():.3g}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray
    count: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise InvalidInputError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", _clip_psd(cov))

    @property
    def dimension(self) -> int:
        return self.mean.size


def empirical_gaussian_fit(samples) -> GaussianFit:
    """Sample mean and unbiased (``n - 1``) covariance of an ``(n, d)`` array."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise SingularFitError(f"need at least {d + 1} samples for a {d}-dimensional fit, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianFit(mean=mean, covariance=cov, count=n)


def _chol(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularFitError("covariance is singular") from exc


def gaussian_kl(fit1: GaussianFit, fit2: GaussianFit) -> float:
    """KL(N1 || N2) in closed form."""
    if fit1.dimension != fit2.dimension:
        raise InvalidInputError("fits have different dimensions")
    l1, l2 = _chol(fit1.covariance), _chol(fit2.covariance)
    d = fit1.dimension
    a = np.linalg.solve(l2, l1)
    trace = float(np.sum(a * a))
    diff = np.linalg.solve(l2, fit2.mean - fit1.mean)
    logdet = 2.0 * (np.sum(np.log(np.diag(l2))) - np.sum(np.log(np.diag(l1))))
    kl = 0.5 * (trace + float(diff @ diff) - d + logdet)
    return max(kl, 0.0) if kl > -1e-12 else kl


def _psd_sqrt(cov):
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_w2(fit1: GaussianFit, fit2: GaussianFit) -> float:
    """Bures-Wasserstein distance between two Gaussians."""
    if fit1.dimension != fit2.dimension:
        raise InvalidInputError("fits have different dimensions")
    root = _psd_sqrt(fit1.covariance)
    cross = _psd_sqrt(root @ fit2.covariance @ root)
    bures = np.trace(fit1.covariance) + np.trace(fit2.covariance) - 2.0 * np.trace(cross)
    diff = fit1.mean - fit2.mean
    return math.sqrt(max(float(diff @ diff) + float(bures), 0.0))


def pinsker_tv_bound(kl: float) -> float:
    if kl < 0:
        raise InvalidParameterError("KL must be nonnegative")
    return min(1.0, math.sqrt(kl / 2.0))


def talagrand_w2_bound(kl: float, alpha: float) -> float:
    if kl < 0:
        raise InvalidParameterError("KL must be nonnegative")
    if not alpha > 0:
        raise InvalidParameterError("alpha must be positive")
    return math.sqrt(2.0 * kl / alpha)


def discrete_tv(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError("probability vectors differ in length")
    for v in (p, q):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise InvalidInputError("inputs must be probability vectors")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class ResidualReport:
    """Consecutive ratios ``r[k] / r[k-1]`` (index ``k`` counted from 1).

    Ratios whose denominator is at or below ``floor`` are dropped, as are the
    ratios after it. ``max_ratio`` is taken over ``k >= start``.
    """

    residuals: np.ndarray
    ratios: np.ndarray
    indices: np.ndarray
    max_ratio: float
    start: int
    floor: float


def residual_ratio_report(residuals, start: int = 2, floor: float = RESIDUAL_FLOOR) -> ResidualReport:
    r = np.asarray(residuals, dtype=np.float64).ravel()
    ratios, indices = [], []
    for k in range(1, r.size):
        if r[k - 1] <= floor:
            break
        ratios.append(r[k] / r[k - 1])
        # residuals are numbered from 1, so this is the ratio r_{k+1} / r_k
        indices.append(k + 1)
    ratios = np.array(ratios)
    indices = np.array(indices, dtype=int)
    tail = ratios[indices > start] if ratios.size else ratios
    return ResidualReport(
        residuals=r,
        ratios=ratios,
        indices=indices,
        max_ratio=float(tail.max()) if tail.size else 0.0,
        start=start,
        floor=floor,
    )


def finite_difference_hessian(grad, x, step: float = 1e-4) -> np.ndarray:
    """Symmetrized central-difference Jacobian of ``grad`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    points = np.concatenate([x + step * np.eye(d), x - step * np.eye(d)])
    g = np.asarray(grad(points))
    hess = (g[:d] - g[d:]) / (2.0 * step)
    return 0.5 * (hess + hess.T)


__all__ = [
    "GaussianFit",
    "ResidualReport",
    "discrete_tv",
    "empirical_gaussian_fit",
    "finite_difference_hessian",
    "gaussian_kl",
    "gaussian_w2",
    "pinsker_tv_bound",
    "residual_ratio_report",
    "talagrand_w2_bound",
]
