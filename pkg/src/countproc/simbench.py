"""Simulation study: scenario generators, competitors and the replicate runner.

Every replicate draws a full-grid truth, subsamples it, fits each method on
the subsample and scores the estimate on the full grid by mean absolute
deviation.
"""

from __future__ import annotations

import functools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gp, pspline
from .rounding import DEFAULT_THRESHOLDS, CountSeries, DomainError
from .samplers import child_seed, jittered_cholesky, make_rng

log = logging.getLogger(__name__)

GRID_SIZE = 1000
GRID_LOWER, GRID_UPPER = 0.0, 20.0
SAMPLE_SIZES = (25, 50, 100, 500)
METHODS = ("rgp", "gp", "rps", "ps", "e")
METHOD_LABELS = {"rgp": "RGP", "gp": "GP", "rps": "RPS", "ps": "PS", "e": "E"}


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    grid_size: int = GRID_SIZE
    tau1: float = 1.0
    tau2: float = 1.0
    noise_var: float = 2.0
    poisson_rate: float = 0.5

    def __post_init__(self):
        if self.id not in (1, 2, 3, 4):
            raise DomainError(f"unknown scenario {self.id}")

    @property
    def grid(self):
        return np.linspace(GRID_LOWER, GRID_UPPER, self.grid_size)


def scenario1_rate(s):
    s = np.asarray(s, dtype=float)
    return 2.0 + s / 5.0 + np.sin(s)


def scenario2_mean(s):
    s = np.asarray(s, dtype=float)
    return 2.0 + np.exp(s / 5.0)


@functools.lru_cache(maxsize=8)
def _grid_factor(grid_size, tau1, tau2):
    grid = np.linspace(GRID_LOWER, GRID_UPPER, grid_size)
    cov = tau1 * np.exp(-tau2 * (grid[:, None] - grid[None, :]) ** 2)
    L, _ = jittered_cholesky(cov)
    L.setflags(write=False)
    return L


def gen_scenario1(rng, spec=ScenarioSpec(1)):
    grid = spec.grid
    return CountSeries(grid, rng.poisson(scenario1_rate(grid)))


def _rounded_gp_path(rng, spec, noise_var):
    grid = spec.grid
    L = _grid_factor(spec.grid_size, spec.tau1, spec.tau2)
    latent = scenario2_mean(grid) + L @ rng.standard_normal(grid.size)
    if noise_var > 0:
        latent = latent + math.sqrt(noise_var) * rng.standard_normal(grid.size)
    return CountSeries(grid, DEFAULT_THRESHOLDS.round(latent)), latent


def gen_scenario2(rng, spec=ScenarioSpec(2)):
    return _rounded_gp_path(rng, spec, spec.noise_var)[0]


def gen_scenario3(rng, spec=ScenarioSpec(3)):
    """Homogeneous Poisson counting process ``N(s)`` on the grid interval."""
    grid = spec.grid
    n_events = rng.poisson(spec.poisson_rate * (GRID_UPPER - GRID_LOWER))
    events = np.sort(rng.uniform(GRID_LOWER, GRID_UPPER, n_events))
    return CountSeries(grid, np.searchsorted(events, grid, side="right"))


def gen_scenario4(rng, spec=ScenarioSpec(4)):
    return _rounded_gp_path(rng, spec, 0.0)[0]


GENERATORS = {1: gen_scenario1, 2: gen_scenario2, 3: gen_scenario3, 4: gen_scenario4}


def generate(scenario, rng, spec=None):
    spec = ScenarioSpec(scenario) if spec is None else spec
    return GENERATORS[spec.id](rng, spec)


def subsample_equispaced(full, n):
    size = len(full)
    if n > size:
        raise DomainError(f"cannot take {n} points from a grid of {size}")
    if n < 1:
        raise DomainError("subsample size must be positive")
    stride = size // n
    idx = np.arange(n) * stride
    return CountSeries(full.locations[idx], full.counts[idx])


def empirical_step(observed, grid):
    """Interpolating step function: ``y_j`` on ``[s_j, s_{j+1})``, ``y_1`` before ``s_2``."""
    s = np.asarray(observed.locations, dtype=float).reshape(-1)
    if np.any(np.diff(s) < 0):
        raise DomainError("observed locations must be sorted")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    idx = np.searchsorted(s, grid, side="right") - 1
    idx = np.clip(idx, 0, len(s) - 1)
    return CountSeries(grid, observed.counts[idx])


def mad(estimate, truth):
    if len(estimate) != len(truth) or not np.allclose(estimate.locations, truth.locations):
        raise DomainError("estimate and truth are on different grids")
    if len(truth) == 0:
        raise DomainError("empty grid")
    return float(np.mean(np.abs(estimate.counts - truth.counts)))


@dataclass(frozen=True)
class McmcSettings:
    n_iter: int = 2000
    burn_in: int = 500
    thin: int = 1
    predict_draws: int = 300
    n_interior_knots: int = pspline.DEFAULT_INTERIOR_KNOTS


def _round_fitted_curve(curve):
    # same operator as the rounded models: a fitted value in [j-1, j) maps to j
    return DEFAULT_THRESHOLDS.round(np.asarray(curve))


def two_stage_fit(observed, grid, engine, settings=McmcSettings(), rng=None, seed=0):
    """Fit counts as continuous data, then round the posterior mean curve."""
    rng = make_rng(seed) if rng is None else rng
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if np.all(observed.counts == observed.counts[0]):
        return CountSeries(grid, np.full(grid.size, observed.counts[0]))
    if engine == "gp":
        cfg = gp.GpFitConfig(settings.n_iter, settings.burn_in, settings.thin, seed=seed)
        store = gp.gp_fit(observed, config=cfg, rng=rng, latent_fixed=True)
        pred = gp.gp_predict(store, grid, rng, max_draws=settings.predict_draws)
    elif engine == "pspline":
        cfg = pspline.PsplineFitConfig(settings.n_iter, settings.burn_in, settings.thin, seed=seed)
        basis = pspline.BSplineBasis.equispaced(GRID_LOWER, GRID_UPPER, settings.n_interior_knots)
        store = pspline.rpspline_fit(observed, basis, config=cfg, rng=rng, latent_fixed=True)
        pred = pspline.rpspline_predict(store, grid, rng, max_draws=settings.predict_draws)
    else:
        raise DomainError(f"unknown engine {engine!r}")
    return CountSeries(grid, _round_fitted_curve(pred.mean.mean(axis=0)))


def rounded_fit(observed, grid, engine, settings=McmcSettings(), rng=None, seed=0):
    """Posterior median count path from the rounded model."""
    rng = make_rng(seed) if rng is None else rng
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if engine == "gp":
        cfg = gp.GpFitConfig(settings.n_iter, settings.burn_in, settings.thin, seed=seed)
        store = gp.gp_fit(observed, config=cfg, rng=rng)
        pred = gp.gp_predict(store, grid, rng, max_draws=settings.predict_draws)
    elif engine == "pspline":
        cfg = pspline.PsplineFitConfig(settings.n_iter, settings.burn_in, settings.thin, seed=seed)
        basis = pspline.BSplineBasis.equispaced(GRID_LOWER, GRID_UPPER, settings.n_interior_knots)
        store = pspline.rpspline_fit(observed, basis, config=cfg, rng=rng)
        pred = pspline.rpspline_predict(store, grid, rng, max_draws=settings.predict_draws)
    else:
        raise DomainError(f"unknown engine {engine!r}")
    return gp.posterior_median_series(pred.counts, grid)


def estimate(method, observed, grid, settings=McmcSettings(), seed=0):
    rng = make_rng(seed)
    if method == "e":
        return empirical_step(observed, grid)
    if method == "rgp":
        return rounded_fit(observed, grid, "gp", settings, rng, seed)
    if method == "rps":
        return rounded_fit(observed, grid, "pspline", settings, rng, seed)
    if method == "gp":
        return two_stage_fit(observed, grid, "gp", settings, rng, seed)
    if method == "ps":
        return two_stage_fit(observed, grid, "pspline", settings, rng, seed)
    raise DomainError(f"unknown method {method!r}")


@dataclass(frozen=True)
class ReplicateResult:
    scenario: int
    method: str
    n: int
    replicate: int
    mad: float
    seed: int


@dataclass(frozen=True)
class BenchmarkConfig:
    scenarios: tuple = (1, 2, 3, 4)
    methods: tuple = METHODS
    sample_sizes: tuple = SAMPLE_SIZES
    replicates: int = 50
    mcmc: McmcSettings = field(default_factory=McmcSettings)

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise DomainError(f"unknown method {m!r}")
        for sc in self.scenarios:
            ScenarioSpec(sc)
        if self.replicates < 1:
            raise DomainError("need at least one replicate")


@dataclass
class BenchmarkTable:
    rows: list  # (scenario, method, n, mean, sd, replicates)
    records: list

    def lookup(self, scenario, method, n):
        for row in self.rows:
            if row[0] == scenario and row[1] == method and row[2] == n:
                return row
        raise KeyError((scenario, method, n))

    def mean(self, scenario, method, n):
        return self.lookup(scenario, method, n)[3]

    def sd(self, scenario, method, n):
        return self.lookup(scenario, method, n)[4]


_METHOD_CODE = {m: i for i, m in enumerate(METHODS)}


def _run_replicate(scenario, rep, sample_sizes, methods, mcmc, seed):
    truth = generate(scenario, make_rng(child_seed(seed, scenario, rep)))
    grid = truth.locations
    out = []
    for n in sample_sizes:
        obs = subsample_equispaced(truth, n)
        for m in methods:
            s = child_seed(seed, scenario, rep, n, _METHOD_CODE[m])
            est = estimate(m, obs, grid, mcmc, s)
            out.append(ReplicateResult(scenario, m, n, rep, mad(est, truth), s))
    return out


def worker_count():
    env = os.environ.get("COUNTPROC_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_benchmark(config, seed, workers=None):
    """Table of mean and sd of MAD per (scenario, method, n); a pure function of inputs."""
    workers = worker_count() if workers is None else workers
    jobs = [(sc, rep) for sc in config.scenarios for rep in range(config.replicates)]
    args = (tuple(config.sample_sizes), tuple(config.methods), config.mcmc, int(seed))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_replicate, *zip(*[(sc, rep, *args) for sc, rep in jobs])))
    else:
        chunks = [_run_replicate(sc, rep, *args) for sc, rep in jobs]
    records = [r for chunk in chunks for r in chunk]

    rows = []
    for sc in config.scenarios:
        for m in config.methods:
            for n in config.sample_sizes:
                vals = np.array([r.mad for r in records
                                 if r.scenario == sc and r.method == m and r.n == n])
                sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                rows.append((sc, m, n, float(vals.mean()), sd, int(vals.size)))
    log.info("benchmark done: %d records", len(records))
    return BenchmarkTable(rows, records)


def config_dict(config):
    d = asdict(config)
    d["scenarios"] = list(config.scenarios)
    d["methods"] = list(config.methods)
    d["sample_sizes"] = list(config.sample_sizes)
    return d
