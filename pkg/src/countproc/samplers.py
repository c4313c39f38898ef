"""Random-number kernels shared by the models.

All samplers take a ``numpy.random.Generator`` as their stream; identical
seeds give bitwise-identical draws on either kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from .rounding import DomainError, NumericalError

JITTER_REL = 1e-8
JITTER_RETRIES = 3


def make_rng(seed):
    """Seeded stream; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_seed(seed, *keys):
    """Deterministic 64-bit seed derived from a root seed and integer keys."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Rectangle:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DomainError("rectangle bounds differ in length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo >= hi):
            raise DomainError("rectangle requires lower < upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, x):
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x < self.upper))


def jittered_cholesky(cov, rel=JITTER_REL, retries=JITTER_RETRIES):
    """Lower Cholesky factor of ``cov + jitter * I``.

    The jitter starts at ``rel * max(diag)`` and grows tenfold on failure,
    up to ``retries`` extra attempts. Returns ``(L, jitter)``.
    """
    cov = np.asarray(cov, dtype=float)
    scale = float(np.max(np.diag(cov))) if cov.size else 1.0
    if not scale > 0:
        raise NumericalError("covariance has non-positive diagonal")
    jitter = rel * scale
    eye = np.eye(cov.shape[0])
    for _ in range(retries + 1):
        try:
            return linalg.cholesky(cov + jitter * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance factorization failed after jitter retries")


class MvnParams:
    """Mean and covariance of a multivariate normal.

    The precision may be supplied directly when the caller already has it;
    otherwise it is computed from a jittered Cholesky factor on first use.
    """

    def __init__(self, mean, covariance=None, precision=None):
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        n = self.mean.shape[0]
        if covariance is None and precision is None:
            raise DomainError("need a covariance or a precision")
        self.covariance = None if covariance is None else np.asarray(covariance, dtype=float)
        self._precision = None if precision is None else np.asarray(precision, dtype=float)
        for m in (self.covariance, self._precision):
            if m is not None and m.shape != (n, n):
                raise DomainError("matrix dimensions do not match the mean")

    @property
    def precision(self):
        if self._precision is None:
            L, _ = jittered_cholesky(self.covariance)
            inv_l = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
            self._precision = inv_l.T @ inv_l
        return self._precision

    def is_diagonal(self):
        m = self.covariance if self.covariance is not None else self._precision
        return not np.any(m - np.diag(np.diag(m)))

    def marginal_sd(self):
        if self.covariance is not None:
            return np.sqrt(np.diag(self.covariance))
        return 1.0 / np.sqrt(np.diag(self._precision))


def sample_truncnorm(mu, sd, lo, hi, rng, size=None):
    """Normal ``N(mu, sd^2)`` restricted to ``[lo, hi)``.

    Scalar arguments with ``size=None`` return a float; anything else is
    broadcast and returns an array.
    """
    mu_a, sd_a, lo_a, hi_a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sd, lo, hi)))
    if np.any(lo_a >= hi_a) or np.any(np.isnan(lo_a)) or np.any(np.isnan(hi_a)):
        raise DomainError("truncation interval requires lo < hi")
    if np.any(~(sd_a > 0)):
        raise DomainError("sd must be positive")
    shape = mu_a.shape if size is None else tuple(np.atleast_1d(size))
    u = rng.random(shape)
    out = _kernels.truncnorm_batch(np.broadcast_to(mu_a, shape), np.broadcast_to(sd_a, shape),
                                   np.broadcast_to(lo_a, shape), np.broadcast_to(hi_a, shape), u)
    if size is None and out.ndim == 0:
        return float(out)
    return out


def sample_tmvn_slice(params, rect, current, rng):
    """One transition for ``N(mean, cov)`` restricted to ``rect``.

    Diagonal covariances are updated exactly by coordinatewise truncated
    normals; otherwise one full sweep of the multivariate normal slice
    sampler is made.
    """
    x = np.array(current, dtype=float).reshape(-1)
    n = params.mean.shape[0]
    if x.shape[0] != n or rect.lower.shape[0] != n:
        raise DomainError("dimension mismatch between state, parameters and rectangle")
    if not rect.contains(x):
        raise DomainError("current state lies outside the rectangle")
    if params.is_diagonal():
        return sample_truncnorm(params.mean, params.marginal_sd(), rect.lower, rect.upper, rng)
    expo = rng.standard_exponential()
    u = rng.random(n)
    return _kernels.slice_sweep(x, params.mean, np.ascontiguousarray(params.precision),
                                rect.lower, rect.upper, expo, u)


def sample_gamma(shape, rate, rng, size=None):
    shape_a = np.asarray(shape, dtype=float)
    rate_a = np.asarray(rate, dtype=float)
    if np.any(~(shape_a > 0)) or np.any(~(rate_a > 0)):
        raise DomainError("gamma shape and rate must be positive")
    out = rng.gamma(shape_a, 1.0 / rate_a, size=size)
    return float(out) if np.ndim(out) == 0 else out


def sample_mvn_precision(mean_times_prec, prec, rng):
    """Draw from ``N(P^{-1} b, P^{-1})`` given ``b`` and precision ``P``.

    The canonical form avoids inverting ``P``; a scaled jitter is added on
    factorization failure.
    """
    L, _ = jittered_cholesky(prec)
    m = linalg.cho_solve((L, True), mean_times_prec, check_finite=False)
    z = rng.standard_normal(m.shape[0])
    return m + linalg.solve_triangular(L.T, z, lower=False, check_finite=False)


def mh_step(log_target, proposal_sd, current, rng):
    """Gaussian random-walk Metropolis-Hastings; returns ``(value, accepted)``."""
    if not proposal_sd > 0:
        raise DomainError("proposal_sd must be positive")
    lp_cur = log_target(current)
    if not math.isfinite(lp_cur):
        raise DomainError("log target is not finite at the current value")
    proposal = current + proposal_sd * rng.standard_normal()
    lp_new = log_target(proposal)
    log_u = math.log(rng.random())
    # NaN and -inf targets compare False, so such proposals are rejected
    if log_u < lp_new - lp_cur:
        return proposal, True
    return current, False


class ProposalAdapter:
    """Tunes a random-walk scale toward a target acceptance band during burn-in."""

    def __init__(self, scale, low=0.30, high=0.40, batch=50):
        self.scale = float(scale)
        self.low, self.high, self.batch = low, high, batch
        self._tries = 0
        self._accepts = 0
        self.frozen = False

    def record(self, accepted):
        if self.frozen:
            return
        self._tries += 1
        self._accepts += int(accepted)
        if self._tries == self.batch:
            rate = self._accepts / self._tries
            if rate < self.low:
                self.scale *= 0.7
            elif rate > self.high:
                self.scale *= 1.4
            self._tries = self._accepts = 0

    def freeze(self):
        self.frozen = True
