import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from parlangevin import diagnostics as dg
from parlangevin.errors import InvalidInputError, InvalidParameterError, SingularFitError


def fit(mean, cov):
    return dg.GaussianFit(np.atleast_1d(mean), np.atleast_2d(cov))


def spd(draw_matrix):
    return draw_matrix @ draw_matrix.T + 0.3 * np.eye(draw_matrix.shape[0])


def test_kl_reference_values():
    a = fit([0.0], [[1.0]])
    assert dg.gaussian_kl(a, a) == 0.0
    assert dg.gaussian_kl(a, fit([1.0], [[1.0]])) == pytest.approx(0.5, abs=1e-15)
    assert dg.gaussian_kl(fit([0.0], [[2.0]]), a) == pytest.approx(0.5 * (2 - 1 - math.log(2)), abs=1e-15)
    assert dg.gaussian_kl(fit([0.0], [[2.0]]), a) == pytest.approx(0.153426, abs=1e-6)


def test_kl_singular():
    with pytest.raises(SingularFitError):
        dg.gaussian_kl(fit([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]]), fit([0.0, 0.0], np.eye(2)))


def test_kl_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        dg.gaussian_kl(fit([0.0], [[1.0]]), fit([0.0, 0.0], np.eye(2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4).flatmap(lambda d: st.tuples(
    arrays(np.float64, (d, d), elements=st.floats(-2, 2)),
    arrays(np.float64, (d, d), elements=st.floats(-2, 2)),
    arrays(np.float64, (2, d), elements=st.floats(-3, 3)),
)))
def test_kl_nonnegative_and_zero_on_equal(args):
    a, b, means = args
    f1, f2 = fit(means[0], spd(a)), fit(means[1], spd(b))
    assert dg.gaussian_kl(f1, f2) >= -1e-12
    assert abs(dg.gaussian_kl(f1, f1)) <= 1e-10


def test_w2_reference_values():
    m = np.array([3.0, -4.0])
    assert dg.gaussian_w2(fit(np.zeros(2), np.eye(2)), fit(m, np.eye(2))) == pytest.approx(5.0)
    assert dg.gaussian_w2(fit([0.0], [[4.0]]), fit([0.0], [[0.25]])) == pytest.approx(1.5)
    assert dg.gaussian_w2(fit(np.zeros(2), np.diag([1.0, 4.0])), fit(np.zeros(2), np.diag([4.0, 1.0]))) == pytest.approx(math.sqrt(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(
    arrays(np.float64, (d, d), elements=st.floats(-2, 2)),
    arrays(np.float64, (d, d), elements=st.floats(-2, 2)),
)))
def test_w2_symmetric(args):
    a, b = args
    f1, f2 = fit(np.zeros(a.shape[0]), spd(a)), fit(np.ones(a.shape[0]), spd(b))
    assert dg.gaussian_w2(f1, f2) == pytest.approx(dg.gaussian_w2(f2, f1), rel=1e-6, abs=1e-9)
    assert dg.gaussian_w2(f1, f1) <= 1e-6


def test_pinsker_values():
    assert dg.pinsker_tv_bound(0.0) == 0.0
    assert dg.pinsker_tv_bound(0.08) == pytest.approx(0.2)
    assert dg.pinsker_tv_bound(2.0) == 1.0
    with pytest.raises(InvalidParameterError):
        dg.pinsker_tv_bound(-0.1)


def test_talagrand_values():
    assert dg.talagrand_w2_bound(0.0, 1.0) == 0.0
    assert dg.talagrand_w2_bound(0.08, 1.0) == pytest.approx(0.4)
    assert dg.talagrand_w2_bound(0.08, 2.0) == pytest.approx(0.4 / math.sqrt(2))
    with pytest.raises(InvalidParameterError):
        dg.talagrand_w2_bound(0.1, 0.0)
    with pytest.raises(InvalidParameterError):
        dg.talagrand_w2_bound(-1.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.3, 2.0), st.floats(0.3, 2.0))
def test_pinsker_dominates_exact_tv(m1, m2, s1, s2):
    kl = dg.gaussian_kl(fit([m1], [[s1**2]]), fit([m2], [[s2**2]]))
    f = lambda x: abs(stats.norm.pdf(x, m1, s1) - stats.norm.pdf(x, m2, s2))
    lo, hi = min(m1 - 12 * s1, m2 - 12 * s2), max(m1 + 12 * s1, m2 + 12 * s2)
    tv = 0.5 * integrate.quad(f, lo, hi, limit=400, points=[m1, m2])[0]
    assert dg.pinsker_tv_bound(kl) >= tv - 1e-9


def test_empirical_fit_recovery():
    rng = np.random.default_rng(0)
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    f = dg.empirical_gaussian_fit(rng.multivariate_normal([1.0, -2.0], cov, size=10**6))
    assert np.all(np.abs(f.mean - [1.0, -2.0]) <= 4 / math.sqrt(10**6) * np.sqrt(np.diag(cov)))
    np.testing.assert_allclose(f.covariance, cov, rtol=0.01)
    assert f.count == 10**6


def test_empirical_fit_is_unbiased_form():
    x = np.array([[0.0], [1.0], [2.0]])
    f = dg.empirical_gaussian_fit(x)
    assert f.covariance[0, 0] == pytest.approx(1.0)


def test_empirical_fit_needs_samples():
    with pytest.raises(SingularFitError):
        dg.empirical_gaussian_fit(np.zeros((2, 2)))


def test_fit_validation():
    with pytest.raises(InvalidInputError):
        fit([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        fit([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    clipped = fit([0.0, 0.0], [[1.0, 0.0], [0.0, -1e-12]])
    assert np.linalg.eigvalsh(clipped.covariance).min() >= 0


def test_discrete_tv_values():
    p = np.array([0.2, 0.3, 0.5])
    assert dg.discrete_tv(p, p) == 0.0
    assert dg.discrete_tv([1, 0], [0, 1]) == 1.0
    assert dg.discrete_tv([0.5, 0.5], [0.75, 0.25]) == 0.25
    with pytest.raises(InvalidInputError):
        dg.discrete_tv([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(InvalidInputError):
        dg.discrete_tv([1.0], [0.5, 0.5])


def test_residual_report():
    rep = dg.residual_ratio_report([1.0, 0.5, 0.05, 0.004, 1e-30, 1e-31])
    np.testing.assert_allclose(rep.ratios, [0.5, 0.1, 0.08, 2.5e-28])
    np.testing.assert_array_equal(rep.indices, [2, 3, 4, 5])
    assert rep.max_ratio == pytest.approx(0.1)


def test_residual_report_stops_at_floor():
    rep = dg.residual_ratio_report([1.0, 0.01, 0.0, 0.0])
    assert rep.ratios.size == 2 and rep.max_ratio == 0.0


def test_finite_difference_hessian_quadratic():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    h = dg.finite_difference_hessian(lambda x: x @ a, np.array([0.3, -0.7]))
    np.testing.assert_allclose(h, a, atol=1e-9)
