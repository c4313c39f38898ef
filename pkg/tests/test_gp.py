import math

import numpy as np
import pytest

from countproc import gp
from countproc.rounding import CountSeries, DomainError
from countproc.samplers import make_rng

import _battery


def test_kernel_values():
    k = gp.SqExpKernel(tau1=2.0, tau2=0.5)
    assert gp.kernel_eval(k, np.array([0.0]), np.array([0.0])) == pytest.approx(2.0)
    assert gp.kernel_eval(k, np.array([0.0]), np.array([2.0])) == pytest.approx(2.0 * math.exp(-2.0))
    with pytest.raises(DomainError):
        gp.SqExpKernel(tau1=-1.0)


def test_gram_is_symmetric_positive_definite():
    s = np.linspace(0, 1, 60)  # near-singular without jitter
    G = gp.gram_matrix(gp.SqExpKernel(1.0, 1.0), s)
    np.testing.assert_allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() > 0


def test_conditionals_against_analytic_laws():
    assert _battery.gp_tau1_case()[0] > 0.01
    assert _battery.gp_tau2_case()[0] > 0.01
    p, outside = _battery.gp_latent_case()
    assert p > 0.01 and outside == 0


def test_initial_latent_inside_rectangle():
    counts = np.array([0, 1, 5, 0])
    y = gp.initial_latent(counts)
    np.testing.assert_allclose(y, [-0.5, 0.5, 4.5, -0.5])


def _series():
    s = np.linspace(0, 10, 25)
    return CountSeries(s, np.round(2 + np.sin(s)).astype(int))


def test_fit_stores_post_burn_in_draws_and_respects_counts():
    data = _series()
    cfg = gp.GpFitConfig(n_iter=60, burn_in=20, thin=2, seed=3, check=True)
    store = gp.gp_fit(data, config=cfg)
    assert len(store) == 20
    assert store.iterations[0] == 20 and np.all(np.diff(store.iterations) == 2)
    lo, hi = np.array(data.counts) - 1.0, np.array(data.counts, dtype=float)
    ys = store["ystar"]
    assert np.all((ys < hi) & ((ys >= lo) | (data.counts == 0)))
    assert np.all(store["tau1"] > 0) and np.all(store["tau2"] > 0)


def test_fit_is_reproducible():
    data = _series()
    cfg = gp.GpFitConfig(n_iter=30, burn_in=10, seed=9)
    a, b = gp.gp_fit(data, config=cfg), gp.gp_fit(data, config=cfg)
    np.testing.assert_array_equal(a["ystar"], b["ystar"])
    assert a.meta["config_hash"] == b.meta["config_hash"]


def test_prediction_reproduces_observed_points():
    data = _series()
    store = gp.gp_fit(data, config=gp.GpFitConfig(n_iter=40, burn_in=10, seed=1))
    pred = gp.gp_predict(store, data.locations, make_rng(0))
    assert np.all(pred.counts == data.counts)
    med = gp.posterior_median_series(pred.counts, data.locations)
    np.testing.assert_array_equal(med.counts, data.counts)


def test_joint_prediction_shapes():
    data = _series()
    store = gp.gp_fit(data, config=gp.GpFitConfig(n_iter=30, burn_in=10, seed=1))
    grid = np.linspace(0, 10, 7) + 0.013
    pred = gp.gp_predict(store, grid, make_rng(0), joint=True, max_draws=5)
    assert pred.counts.shape == (5, 7) and np.all(pred.counts >= 0)


def test_input_validation():
    with pytest.raises(DomainError):
        gp.gp_fit(CountSeries([0.0], [1]))
    with pytest.raises(DomainError):
        gp.GpFitConfig(n_iter=10, burn_in=10)
