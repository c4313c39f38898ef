import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from countproc.rounding import (
    DEFAULT_THRESHOLDS,
    CountSeries,
    DomainError,
    GaussianMarginal,
    LatentSeries,
    ThresholdSequence,
    induced_cov,
    induced_mean,
    induced_pmf_table,
    induced_var,
    latent_interval,
    marginal_pmf,
    round_series,
    round_value,
    rounded_normal_mean,
    truncation_count,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


@pytest.mark.parametrize("x,j", [(-1.3, 0), (0.4, 1), (2.0, 3), (0.0, 1), (-1e-300, 0), (7.999, 8)])
def test_round_value_examples(x, j):
    assert round_value(x) == j


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_round_value_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        round_value(bad)


@given(finite)
def test_round_lands_in_its_interval(x):
    j = round_value(x)
    lo, hi = latent_interval(j)
    assert lo <= x < hi


@given(finite, finite)
def test_rounding_is_monotone(x, y):
    if x <= y:
        assert round_value(x) <= round_value(y)


@given(st.integers(0, 10_000))
def test_thresholds_unit_spacing(j):
    t = DEFAULT_THRESHOLDS
    assert t.a(j) < t.a(j + 1)
    if j >= 1:
        assert t.a(j + 1) - t.a(j) == 1.0
    assert t.a(1) == 0.0 and t.a(0) == -math.inf


def test_custom_thresholds_validated():
    with pytest.raises(DomainError):
        ThresholdSequence((1.0, 0.5))
    t = ThresholdSequence((0.0, 0.5, 2.0))
    assert t.round(np.array([-1, 0.2, 0.5, 1.9, 2.0, 3.5])).tolist() == [0, 1, 2, 2, 3, 4]


def test_series_types():
    lat = LatentSeries(np.arange(3.0), np.array([-0.5, 0.5, 1.5]))
    out = round_series(lat)
    assert out.counts.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(out.locations, lat.locations)
    assert len(round_series(LatentSeries(np.zeros(0), np.zeros(0)))) == 0
    with pytest.raises(DomainError):
        CountSeries([0.0, 1.0], [1, -1])
    with pytest.raises(DomainError):
        LatentSeries([0.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        GaussianMarginal(0.0, 0.0)


def test_pmf_examples():
    m = GaussianMarginal(0.0, 1.0)
    assert marginal_pmf(m, 0) == pytest.approx(0.5, abs=1e-12)
    assert marginal_pmf(m, 1) == pytest.approx(stats.norm.cdf(1) - 0.5, abs=1e-12)
    assert marginal_pmf(GaussianMarginal(1e3, 1.0), 0) == 0.0
    with pytest.raises(DomainError):
        marginal_pmf(m, -1)


@given(st.floats(-20, 60), st.floats(0.05, 15))
def test_pmf_normalizes(mu, sd):
    m = GaussianMarginal(mu, sd)
    J = truncation_count(mu, sd, 1e-12)
    total = sum(marginal_pmf(m, j) for j in range(J + 1))
    assert abs(total - 1.0) <= 1e-6
    j, p = induced_pmf_table(m, 1e-12)
    assert abs(p.sum() - 1.0) <= 1e-6


def test_induced_mean_matches_monte_carlo(rng):
    n = 200_000
    for mu, sd in [(0.0, 1.0), (3.0, 1.0), (-1.0, 0.5), (7.3, 2.5)]:
        y = DEFAULT_THRESHOLDS.round(rng.normal(mu, sd, n))
        se = y.std() / math.sqrt(n)
        est = induced_mean(GaussianMarginal(mu, sd), tail_prob=1e-12)
        assert abs(est - y.mean()) < 3 * se, (mu, sd)
        assert abs(induced_var(GaussianMarginal(mu, sd), 1e-12) - y.var()) < 0.02 * y.var() + 1e-3


def test_induced_mean_default_truncation_is_close():
    exact = induced_mean(GaussianMarginal(0.0, 1.0), tail_prob=1e-12)
    trunc = induced_mean(GaussianMarginal(0.0, 1.0))
    assert 0 <= exact - trunc < 1e-3


@given(st.floats(-10, 30), st.floats(0.1, 10))
def test_vectorized_mean_matches_scalar(mu, sd):
    a = induced_mean(GaussianMarginal(mu, sd))
    b = float(rounded_normal_mean(mu, sd))
    assert b == pytest.approx(a, abs=1e-10)


def test_induced_mean_limits():
    assert induced_mean(GaussianMarginal(-50.0, 1.0)) == 0.0
    assert induced_mean(GaussianMarginal(0.5, 1e-3)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9, -0.6])
def test_induced_cov_matches_monte_carlo(rng, rho):
    n = 400_000
    cov = np.array([[1.0, rho], [rho, 1.0]])
    mu = np.array([0.3, 1.2])
    x = rng.multivariate_normal(mu, cov, size=n)
    y = DEFAULT_THRESHOLDS.round(x).astype(float)
    prod = (y[:, 0] - y[:, 0].mean()) * (y[:, 1] - y[:, 1].mean())
    mc, se = prod.mean(), prod.std() / math.sqrt(n)
    est = induced_cov(mu, cov, tail_prob=1e-12)
    assert abs(est - mc) < 3 * se + 1e-6, (est, mc, se)


def test_induced_cov_tends_to_variance():
    v = induced_var(GaussianMarginal(0.0, 1.0), 1e-12)
    c = induced_cov([0.0, 0.0], [[1.0, 1 - 1e-6], [1 - 1e-6, 1.0]], tail_prob=1e-12)
    assert abs(c - v) < 2e-3
    assert induced_cov([0, 0], np.eye(2), 1e-12) == pytest.approx(0.0, abs=1e-7)


def test_induced_cov_validates():
    with pytest.raises(DomainError):
        induced_cov([0, 0], [[1, 2], [2, 1]])
    with pytest.raises(DomainError):
        induced_cov([0, 0], np.eye(3))



def test_small_latent_perturbations_give_small_count_changes(rng):
    # grid L1 distance between rounded paths shrinks with the latent perturbation
    grid = np.linspace(0, 20, 2001)
    step = grid[1] - grid[0]
    base = 2 + grid / 5 + np.sin(grid)
    dists = []
    for eps in (1.0, 0.3, 0.1, 0.03):
        d = []
        for _ in range(50):
            pert = eps * rng.uniform(-1, 1, grid.size)
            d.append(np.sum(np.abs(DEFAULT_THRESHOLDS.round(base + pert) -
                                   DEFAULT_THRESHOLDS.round(base))) * step)
        dists.append(np.mean(d))
    assert all(a > b for a, b in zip(dists, dists[1:]))
    assert dists[-1] < 0.1 * dists[0]
