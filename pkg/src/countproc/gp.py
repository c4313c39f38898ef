"""Rounded Gaussian process model with a squared exponential covariance.

The latent path has covariance ``tau1 * exp(-tau2 * |s - s'|^2)`` with
``1/tau1 ~ Ga(a_tau1, b_tau1)`` and ``tau2**p ~ Ga(a_tau2, b_tau2)``.
Each MCMC iteration

1. redraws the latent values inside their count rectangles (slice sampler),
2. redraws ``1/tau1`` from its gamma conditional,
3. updates ``log(tau2)`` by random-walk Metropolis-Hastings,

and prediction at new locations draws from the Gaussian conditional given
each stored latent vector.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .draws import DrawRecorder, DrawStore, config_hash
from .rounding import DEFAULT_THRESHOLDS, CountSeries, DomainError, NumericalError
from .samplers import (
    JITTER_REL,
    ProposalAdapter,
    jittered_cholesky,
    make_rng,
    mh_step,
    sample_gamma,
    sample_tmvn_slice,
    MvnParams,
    Rectangle,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SqExpKernel:
    tau1: float = 1.0
    tau2: float = 1.0
    dim_p: int = 1

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise DomainError("kernel parameters must be positive")
        if self.dim_p < 1:
            raise DomainError("domain dimension must be >= 1")


@dataclass(frozen=True)
class GpPriors:
    a_tau1: float = 1.0
    b_tau1: float = 1.0
    a_tau2: float = 1.0
    b_tau2: float = 1.0

    def __post_init__(self):
        if min(self.a_tau1, self.b_tau1, self.a_tau2, self.b_tau2) <= 0:
            raise DomainError("gamma hyperparameters must be positive")


@dataclass(frozen=True)
class GpFitConfig:
    n_iter: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    proposal_sd: float = 0.5
    adapt: bool = True
    jitter: float = JITTER_REL
    seed: int = 0
    check: bool = False

    def __post_init__(self):
        if self.n_iter < 1 or self.thin < 1 or self.burn_in < 0:
            raise DomainError("n_iter and thin must be positive, burn_in non-negative")
        if self.burn_in >= self.n_iter:
            raise DomainError("burn_in must be smaller than n_iter")
        if not self.proposal_sd > 0:
            raise DomainError("proposal_sd must be positive")


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x.reshape(-1, 1)
    return x


def sq_dists(a, b):
    a, b = _as_points(a), _as_points(b)
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def kernel_eval(k, s, t):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    d2 = float(np.sum((s - t) ** 2))
    return k.tau1 * math.exp(-k.tau2 * d2)


def gram_matrix(k, locations, jitter=JITTER_REL):
    """Covariance matrix at ``locations`` with the factorization jitter applied."""
    pts = _as_points(locations)
    if pts.shape[0] < 1:
        raise DomainError("need at least one location")
    sigma = k.tau1 * np.exp(-k.tau2 * sq_dists(pts, pts))
    _, used = jittered_cholesky(sigma, rel=jitter)
    sigma[np.diag_indices_from(sigma)] += used
    return sigma


class _CorrelationFactor:
    """Cholesky factor, inverse and log-determinant of ``exp(-tau2 D)``."""

    def __init__(self, sqd, tau2, jitter):
        corr = np.exp(-tau2 * sqd)
        self.L, self.jitter = jittered_cholesky(corr, rel=jitter)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.L))))
        self._inv = None

    def quad(self, y):
        z = linalg.solve_triangular(self.L, y, lower=True, check_finite=False)
        return float(z @ z)

    @property
    def inverse(self):
        if self._inv is None:
            inv, info = linalg.lapack.dpotri(self.L, lower=1)
            if info != 0:
                raise NumericalError("inverse from Cholesky factor failed")
            self._inv = np.tril(inv) + np.tril(inv, -1).T
        return self._inv


def log_tau2_target(log_tau2, ystar, tau1, factor, priors, dim_p):
    """Log density of ``log(tau2)`` given the latent vector, up to a constant.

    The gamma prior on ``tau2**p`` is carried to ``log(tau2)`` including the
    Jacobian, which gives ``a*p*eta - b*exp(p*eta)``.
    """
    n = ystar.shape[0]
    loglik = -0.5 * (n * math.log(tau1) + factor.logdet) - 0.5 * factor.quad(ystar) / tau1
    w = math.exp(dim_p * log_tau2)
    return loglik + priors.a_tau2 * dim_p * log_tau2 - priors.b_tau2 * w


def update_tau1(ystar, factor, priors, rng):
    """Conjugate draw of ``tau1`` (its inverse is gamma distributed)."""
    n = ystar.shape[0]
    shape = priors.a_tau1 + 0.5 * n
    rate = priors.b_tau1 + 0.5 * factor.quad(ystar)
    return 1.0 / sample_gamma(shape, rate, rng)


def update_tau2(log_tau2, ystar, tau1, sqd, factor, priors, dim_p, proposal_sd, rng, jitter):
    """One MH step on ``log(tau2)``; returns ``(log_tau2, factor, accepted)``."""
    cache = {log_tau2: factor}

    def target(eta):
        f = cache.get(eta)
        if f is None:
            try:
                f = _CorrelationFactor(sqd, math.exp(eta), jitter)
            except NumericalError:
                return -math.inf
            cache[eta] = f
        return log_tau2_target(eta, ystar, tau1, f, priors, dim_p)

    new, accepted = mh_step(target, proposal_sd, log_tau2, rng)
    return new, cache[new], accepted


def update_latent(ystar, tau1, factor, lower, upper, rng):
    params = MvnParams(np.zeros_like(ystar), covariance=None, precision=factor.inverse / tau1)
    return sample_tmvn_slice(params, Rectangle(lower, upper), ystar, rng)


def initial_latent(counts, thresholds=DEFAULT_THRESHOLDS):
    """Interior starting point: the middle of each count's latent interval."""
    lo, hi = thresholds.bounds(counts)
    lo = np.where(np.isfinite(lo), lo, hi - 1.0)
    return 0.5 * (lo + hi)


def gp_fit(data, priors=GpPriors(), config=GpFitConfig(), rng=None, latent_fixed=False):
    """Run the rounded Gaussian process sampler on one count series.

    With ``latent_fixed`` the latent vector is held at the observed counts
    and only the kernel parameters are sampled; this is the continuous
    (identity-link) fit used by the two-stage competitor.
    """
    n = len(data)
    if n < 2:
        raise DomainError("the Gaussian process fit needs at least two observations")
    rng = make_rng(config.seed) if rng is None else rng
    pts = _as_points(data.locations)
    dim_p = pts.shape[1]
    sqd = sq_dists(pts, pts)
    lower, upper = DEFAULT_THRESHOLDS.bounds(data.counts)

    if latent_fixed:
        ystar = data.counts.astype(float)
    else:
        ystar = initial_latent(data.counts)
    # start with neighbouring observations strongly correlated (about 0.84)
    nn = np.sort(np.where(sqd > 0, sqd, np.inf), axis=1)[:, 0]
    nn = nn[np.isfinite(nn)]
    tau2 = math.log(2.0) / float(np.median(nn)) / 4.0 if nn.size else 1.0
    log_tau2 = math.log(tau2)
    factor = _CorrelationFactor(sqd, tau2, config.jitter)
    tau1 = max(float(ystar @ ystar) / n, 1e-3)

    adapter = ProposalAdapter(config.proposal_sd)
    rec = DrawRecorder(config.n_iter, config.burn_in, config.thin)
    n_acc = 0
    t0 = time.perf_counter()
    for it in range(config.n_iter):
        if it == config.burn_in and config.adapt:
            adapter.freeze()
        if not latent_fixed:
            ystar = update_latent(ystar, tau1, factor, lower, upper, rng)
            if config.check and not (np.all(ystar >= lower) and np.all(ystar < upper)):
                raise AssertionError(f"latent left its rectangle at iteration {it}")
        tau1 = update_tau1(ystar, factor, priors, rng)
        log_tau2, factor, acc = update_tau2(log_tau2, ystar, tau1, sqd, factor, priors, dim_p,
                                            adapter.scale, rng, config.jitter)
        if config.adapt:
            adapter.record(acc)
        if it >= config.burn_in:
            n_acc += acc
        if rec.wants(it):
            rec.record(it, ystar=ystar, tau1=tau1, tau2=math.exp(log_tau2))

    kept = config.n_iter - config.burn_in
    meta = {
        "model": "gp" if latent_fixed else "rgp",
        "seed": config.seed,
        "config_hash": config_hash({**asdict(config), **asdict(priors), "fixed": latent_fixed}),
        "wall_time": time.perf_counter() - t0,
        "tau2_acceptance": n_acc / kept,
        "tau2_proposal_sd": adapter.scale,
        "jitter": config.jitter,
    }
    log.debug("gp_fit done: %s", meta)
    return rec.store(fixed={"locations": pts, "counts": data.counts.copy()}, meta=meta)


@dataclass
class GpPrediction:
    locations: np.ndarray
    latent: np.ndarray
    counts: np.ndarray
    mean: np.ndarray


def gp_predict(draws, new_locations, rng, joint=False, max_draws=None):
    """Posterior predictive draws of latent values and counts at new locations.

    By default each new location is drawn from its marginal conditional
    (pointwise summaries such as the median do not depend on the joint
    law); ``joint=True`` draws the full conditional vector. New locations
    that coincide with an observed one reuse the stored latent value.
    """
    if len(draws) == 0:
        raise DomainError("no posterior draws to predict from")
    store = draws.thin_to(max_draws)
    obs = store.fixed["locations"]
    new = _as_points(new_locations)
    if new.shape[1] != obs.shape[1]:
        raise DomainError("new locations have the wrong dimension")
    jitter = float(store.meta.get("jitter", JITTER_REL))
    sqd_oo = sq_dists(obs, obs)
    sqd_no = sq_dists(new, obs)
    exact = sqd_no == 0.0
    match = np.where(exact.any(axis=1), exact.argmax(axis=1), -1)

    n_draws = len(store)
    m = new.shape[0]
    latent = np.empty((n_draws, m))
    means = np.empty((n_draws, m))
    for d in range(n_draws):
        tau1 = float(store["tau1"][d])
        tau2 = float(store["tau2"][d])
        ystar = store["ystar"][d]
        factor = _CorrelationFactor(sqd_oo, tau2, jitter)
        cross = np.exp(-tau2 * sqd_no)
        w = linalg.cho_solve((factor.L, True), cross.T, check_finite=False).T
        mu = w @ ystar
        if joint:
            cov = tau1 * (np.exp(-tau2 * sq_dists(new, new)) - w @ cross.T)
            cov = 0.5 * (cov + cov.T)
            L, _ = jittered_cholesky(cov + 1e-12 * tau1 * np.eye(m), rel=jitter)
            draw = mu + L @ rng.standard_normal(m)
        else:
            var = tau1 * np.clip(1.0 - np.einsum("ij,ij->i", w, cross), 0.0, None)
            draw = mu + np.sqrt(var) * rng.standard_normal(m)
        hit = match >= 0
        draw[hit] = ystar[match[hit]]
        mu[hit] = ystar[match[hit]]
        latent[d] = draw
        means[d] = mu
    counts = DEFAULT_THRESHOLDS.round(latent)
    return GpPrediction(new, latent, counts, means)


def posterior_median_series(pred_counts, grid):
    """Pointwise posterior median count; always one of the sampled values."""
    pred_counts = np.asarray(pred_counts)
    if pred_counts.ndim == 1:
        pred_counts = pred_counts[:, None]
    if pred_counts.shape[0] == 0:
        raise DomainError("no draws")
    med = np.quantile(pred_counts, 0.5, axis=0, method="inverted_cdf")
    return CountSeries(grid, np.asarray(med).astype(np.int64))
