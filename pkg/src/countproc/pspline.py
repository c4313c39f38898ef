"""Rounded P-splines for a single count series.

The latent path is ``B(s) @ theta + eps`` with a cubic B-spline basis,
a second-order difference penalty ``lambda * theta' P theta``,
``p(tau) ~ 1/tau`` on the residual precision and the two-level prior
``lambda ~ Ga(nu/2, delta*nu/2)``, ``delta ~ Ga(a_delta, b_delta)``.
Every full conditional is conjugate, so the sampler is a plain Gibbs
cycle.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import BSpline

from .draws import DrawRecorder, config_hash
from .rounding import DEFAULT_THRESHOLDS, CountSeries, DomainError
from .samplers import make_rng, sample_gamma, sample_mvn_precision, sample_truncnorm

DEFAULT_INTERIOR_KNOTS = 20


@dataclass(frozen=True)
class BSplineBasis:
    lower: float
    upper: float
    interior_knots: tuple = ()
    degree: int = 3

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DomainError("basis bounds must satisfy lower < upper")
        if self.degree < 0:
            raise DomainError("degree must be non-negative")
        knots = tuple(float(k) for k in self.interior_knots)
        if any(not (self.lower < k < self.upper) for k in knots):
            raise DomainError("interior knots must lie strictly inside the bounds")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise DomainError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior_knots", knots)

    @classmethod
    def equispaced(cls, lower, upper, n_interior=DEFAULT_INTERIOR_KNOTS, degree=3):
        inner = np.linspace(lower, upper, n_interior + 2)[1:-1]
        return cls(float(lower), float(upper), tuple(inner), degree)

    @property
    def size(self):
        return len(self.interior_knots) + self.degree + 1

    @property
    def knots(self):
        k = self.degree
        return np.concatenate([np.full(k + 1, self.lower), self.interior_knots,
                               np.full(k + 1, self.upper)])


@dataclass(frozen=True)
class DifferencePenalty:
    size: int
    order: int = 2

    def __post_init__(self):
        if self.order < 0 or self.order >= self.size:
            raise DomainError("penalty order must be in [0, basis size)")

    @property
    def matrix(self):
        D = np.diff(np.eye(self.size), n=self.order, axis=0)
        return D.T @ D

    @property
    def rank(self):
        return self.size - self.order


def bspline_design(locations, basis):
    """``n x K`` matrix of basis evaluations; locations are clamped to the bounds."""
    if len(basis.knots) < basis.degree + 2:
        raise DomainError("too few knots for the requested degree")
    x = np.asarray(locations, dtype=float).reshape(-1)
    # the last basis function is only supported on the half-open span
    x = np.clip(x, basis.lower, np.nextafter(basis.upper, -np.inf))
    if x.size == 0:
        return np.zeros((0, basis.size))
    return BSpline.design_matrix(x, basis.knots, basis.degree).toarray()


@dataclass(frozen=True)
class PsplineFitConfig:
    n_iter: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    nu: float = 1.0
    a_delta: float = 1.0
    b_delta: float = 1.0
    seed: int = 0
    check: bool = False
    # Ga(a_tau, b_tau) on tau; zeros give p(tau) ~ 1/tau
    a_tau: float = 0.0
    b_tau: float = 0.0

    def __post_init__(self):
        if self.n_iter < 1 or self.thin < 1 or self.burn_in < 0:
            raise DomainError("n_iter and thin must be positive, burn_in non-negative")
        if self.burn_in >= self.n_iter:
            raise DomainError("burn_in must be smaller than n_iter")
        if min(self.nu, self.a_delta, self.b_delta) <= 0:
            raise DomainError("hyperparameters must be positive")
        if min(self.a_tau, self.b_tau) < 0:
            raise DomainError("tau prior parameters must be non-negative")


# -- full conditionals; each is usable in isolation --------------------------

def update_latent(mean, tau, lower, upper, rng):
    return sample_truncnorm(mean, 1.0 / math.sqrt(tau), lower, upper, rng)


def theta_conditional(btb, bty, tau, lam, P):
    """Canonical parameters ``(precision, precision @ mean)`` of theta."""
    return tau * btb + lam * P, tau * bty


def update_theta(btb, bty, tau, lam, P, rng):
    prec, b = theta_conditional(btb, bty, tau, lam, P)
    return sample_mvn_precision(b, prec, rng)


def update_tau(resid, rng, a=0.0, b=0.0):
    """Residual precision under ``p(tau) ~ 1/tau`` (``a = b = 0``)."""
    return sample_gamma(a + 0.5 * resid.size, b + 0.5 * float(resid @ resid), rng)


def update_lambda(theta_quads, rank, n_blocks, delta, nu, rng):
    """Smoothing precision shared by ``n_blocks`` coefficient vectors."""
    return sample_gamma(0.5 * nu + 0.5 * rank * n_blocks, 0.5 * delta * nu + 0.5 * theta_quads, rng)


def update_delta(lam, nu, a_delta, b_delta, rng):
    return sample_gamma(a_delta + 0.5 * nu, b_delta + 0.5 * nu * lam, rng)


def default_basis(locations, n_interior=DEFAULT_INTERIOR_KNOTS, degree=3):
    x = np.asarray(locations, dtype=float).reshape(-1)
    return BSplineBasis.equispaced(float(x.min()), float(x.max()), n_interior, degree)


def _ridge_start(B, y, P):
    A = B.T @ B + 1e-3 * P + 1e-8 * np.eye(B.shape[1])
    return np.linalg.solve(A, B.T @ y)


def rpspline_fit(data, basis=None, penalty=None, config=PsplineFitConfig(), rng=None,
                 latent_fixed=False):
    """Gibbs sampler for the rounded P-spline model.

    ``latent_fixed`` treats the counts themselves as the continuous
    response (the first stage of the two-stage competitor).
    """
    n = len(data)
    if n == 0:
        raise DomainError("no observations")
    rng = make_rng(config.seed) if rng is None else rng
    s = np.asarray(data.locations, dtype=float).reshape(-1)
    basis = default_basis(s) if basis is None else basis
    penalty = DifferencePenalty(basis.size) if penalty is None else penalty
    if penalty.size != basis.size:
        raise DomainError("penalty and basis sizes differ")
    B = bspline_design(s, basis)
    btb = B.T @ B
    P = penalty.matrix
    lower, upper = DEFAULT_THRESHOLDS.bounds(data.counts)

    if latent_fixed:
        ystar = data.counts.astype(float)
    else:
        lo_f = np.where(np.isfinite(lower), lower, upper - 1.0)
        ystar = 0.5 * (lo_f + upper)
    theta = _ridge_start(B, ystar, P)
    resid = ystar - B @ theta
    tau = 1.0 / max(float(resid @ resid) / n, 1e-2)
    lam, delta = 1.0, 1.0

    rec = DrawRecorder(config.n_iter, config.burn_in, config.thin)
    t0 = time.perf_counter()
    for it in range(config.n_iter):
        fit = B @ theta
        if not latent_fixed:
            ystar = update_latent(fit, tau, lower, upper, rng)
            if config.check and not (np.all(ystar >= lower) and np.all(ystar < upper)):
                raise AssertionError(f"latent left its rectangle at iteration {it}")
        theta = update_theta(btb, B.T @ ystar, tau, lam, P, rng)
        resid = ystar - B @ theta
        tau = update_tau(resid, rng, config.a_tau, config.b_tau)
        lam = update_lambda(float(theta @ P @ theta), penalty.rank, 1, delta, config.nu, rng)
        delta = update_delta(lam, config.nu, config.a_delta, config.b_delta, rng)
        if rec.wants(it):
            rec.record(it, theta=theta, tau=tau, lam=lam, delta=delta, ystar=ystar)

    meta = {
        "model": "ps" if latent_fixed else "rps",
        "seed": config.seed,
        "config_hash": config_hash({**asdict(config), "fixed": latent_fixed,
                                    "knots": basis.knots.tolist(), "order": penalty.order}),
        "wall_time": time.perf_counter() - t0,
    }
    fixed = {"locations": s, "counts": data.counts.copy(), "knots": basis.knots,
             "basis": np.array([basis.lower, basis.upper, basis.degree], dtype=float)}
    store = rec.store(fixed=fixed, meta=meta)
    store.basis = basis
    return store


def basis_from_store(store):
    lo, hi, deg = store.fixed["basis"]
    deg = int(deg)
    inner = np.asarray(store.fixed["knots"])[deg + 1:-(deg + 1)]
    return BSplineBasis(float(lo), float(hi), tuple(inner), deg)


@dataclass
class PsplinePrediction:
    locations: np.ndarray
    latent: np.ndarray
    counts: np.ndarray
    mean: np.ndarray


def rpspline_predict(draws, grid, rng, max_draws=None):
    """Per-draw ``B(s) theta + eps`` at ``grid``, rounded to counts.

    Grid points that coincide with an observed location take the sampled
    latent value there, so they reproduce the observed count.
    """
    if len(draws) == 0:
        raise DomainError("no posterior draws to predict from")
    store = draws.thin_to(max_draws)
    basis = getattr(draws, "basis", None) or basis_from_store(store)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    Bg = bspline_design(grid, basis)
    mean = store["theta"] @ Bg.T
    sd = 1.0 / np.sqrt(store["tau"])[:, None]
    latent = mean + sd * rng.standard_normal(mean.shape)
    obs = np.asarray(store.fixed["locations"], dtype=float).reshape(-1)
    order = np.argsort(obs, kind="stable")
    pos = order[np.clip(np.searchsorted(obs[order], grid), 0, obs.size - 1)]
    hit = obs[pos] == grid
    if hit.any():
        latent[:, hit] = store["ystar"][:, pos[hit]]
    return PsplinePrediction(grid, latent, DEFAULT_THRESHOLDS.round(latent), mean)


def posterior_median(pred, grid=None):
    from .gp import posterior_median_series

    return posterior_median_series(pred.counts, pred.locations if grid is None else grid)
