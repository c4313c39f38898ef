"""Rounding operator and the count law it induces from a latent normal.

Counts are produced from a real latent value by the thresholds
``a_0 = -inf, a_j = j - 1``: a latent value in ``[a_j, a_{j+1})`` becomes
the count ``j``. Boundaries belong to the higher count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

DEFAULT_TAIL_PROB = 1e-4


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class NumericalError(ArithmeticError):
    """A numerical procedure (factorization, quadrature) failed."""


@dataclass(frozen=True)
class ThresholdSequence:
    """Cut-points ``a_1 < ... < a_m`` continued with unit spacing past ``a_m``.

    ``a_0`` is always ``-inf``. The default ``cuts=(0.0,)`` gives
    ``a_j = j - 1``.
    """

    cuts: tuple = (0.0,)

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if not cuts:
            raise DomainError("at least one finite cut-point is required")
        if any(not math.isfinite(c) for c in cuts):
            raise DomainError("cut-points must be finite")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DomainError("cut-points must be strictly increasing")
        object.__setattr__(self, "cuts", cuts)

    @property
    def is_default(self):
        return self.cuts == (0.0,)

    def a(self, j):
        """Threshold ``a_j`` (vectorized over integer ``j``)."""
        j = np.asarray(j)
        if np.any(j < 0):
            raise DomainError("threshold index must be >= 0")
        m = len(self.cuts)
        cuts = np.asarray(self.cuts)
        jj = np.asarray(j, dtype=np.int64)
        inside = np.clip(jj - 1, 0, m - 1)
        out = np.where(jj <= m, cuts[inside], cuts[-1] + (jj - m))
        out = np.where(jj == 0, -np.inf, out).astype(float)
        return out if out.ndim else float(out)

    def round(self, x):
        """Vectorized rounding of latent values to counts."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("latent values must be finite")
        if self.is_default:
            out = np.where(x < 0.0, 0.0, np.floor(x) + 1.0).astype(np.int64)
        else:
            cuts = np.asarray(self.cuts)
            m = len(cuts)
            below = np.searchsorted(cuts, x, side="right")
            above = m + np.floor(x - cuts[-1]).astype(np.int64)
            out = np.where(x >= cuts[-1], above, below).astype(np.int64)
        return out if out.ndim else int(out)

    def bounds(self, counts):
        """Latent rectangle ``[a_y, a_{y+1})`` for each count."""
        counts = np.asarray(counts)
        return self.a(counts), self.a(counts + 1)


DEFAULT_THRESHOLDS = ThresholdSequence()


def _as_locations(locations):
    loc = np.asarray(locations, dtype=float)
    if loc.ndim == 0:
        loc = loc.reshape(1)
    if loc.ndim > 2:
        raise DomainError("locations must be a vector or an (n, p) array")
    return loc


@dataclass(frozen=True)
class LatentSeries:
    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        loc = _as_locations(self.locations)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if loc.shape[0] != val.shape[0]:
            raise DomainError("locations and values differ in length")
        if not np.all(np.isfinite(loc)):
            raise DomainError("locations must be finite")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class CountSeries:
    locations: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        loc = _as_locations(self.locations)
        raw = np.asarray(self.counts).reshape(-1)
        if raw.size and not np.all(np.equal(np.mod(raw, 1), 0)):
            raise DomainError("counts must be integers")
        cnt = raw.astype(np.int64)
        if loc.shape[0] != cnt.shape[0]:
            raise DomainError("locations and counts differ in length")
        if np.any(cnt < 0):
            raise DomainError("counts must be non-negative")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "counts", cnt)

    def __len__(self):
        return self.counts.shape[0]


@dataclass(frozen=True)
class GaussianMarginal:
    mean: float
    sd: float = field(default=1.0)

    def __post_init__(self):
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise DomainError("sd must be positive and finite")
        if not math.isfinite(self.mean):
            raise DomainError("mean must be finite")


def round_value(ystar, thresholds=DEFAULT_THRESHOLDS):
    ystar = float(ystar)
    if not math.isfinite(ystar):
        raise DomainError(f"cannot round non-finite value {ystar!r}")
    return int(thresholds.round(ystar))


def round_series(latent, thresholds=DEFAULT_THRESHOLDS):
    if len(latent) == 0:
        return CountSeries(latent.locations, np.zeros(0, dtype=np.int64))
    return CountSeries(latent.locations, thresholds.round(latent.values))


def latent_interval(j, thresholds=DEFAULT_THRESHOLDS):
    if j < 0:
        raise DomainError("count must be non-negative")
    return thresholds.a(j), thresholds.a(j + 1)


def _cdf(x, mean, sd):
    return special.ndtr((np.asarray(x, dtype=float) - mean) / sd)


def marginal_pmf(marg, j, thresholds=DEFAULT_THRESHOLDS):
    """``pr{y = j}`` for a count obtained by rounding ``N(mean, sd^2)``."""
    lo, hi = latent_interval(j, thresholds)
    # difference of upper tails is accurate when both cdfs are near 1
    if lo > marg.mean:
        p = special.ndtr(-(lo - marg.mean) / marg.sd) - special.ndtr(-(hi - marg.mean) / marg.sd)
    else:
        p = _cdf(hi, marg.mean, marg.sd) - _cdf(lo, marg.mean, marg.sd)
    return float(min(max(p, 0.0), 1.0))


def truncation_count(mean, sd, tail_prob=DEFAULT_TAIL_PROB, thresholds=DEFAULT_THRESHOLDS):
    """Smallest ``J`` with ``F(a_{J+1}) >= 1 - tail_prob``."""
    if not 0.0 < tail_prob < 1.0:
        raise DomainError("tail_prob must lie in (0, 1)")
    upper = mean + sd * special.ndtri(1.0 - tail_prob)
    if not thresholds.is_default:
        top = thresholds.round(upper)
        return max(int(top), 0)
    # a_{J+1} = J for the default thresholds
    return max(int(math.ceil(upper)), 0)


def induced_pmf_table(marg, tail_prob=DEFAULT_TAIL_PROB, thresholds=DEFAULT_THRESHOLDS):
    """Counts ``0..J`` and their probabilities under the truncation rule."""
    J = truncation_count(marg.mean, marg.sd, tail_prob, thresholds)
    j = np.arange(J + 1)
    lo, hi = thresholds.bounds(j)
    zlo = (lo - marg.mean) / marg.sd
    zhi = (hi - marg.mean) / marg.sd
    p = np.where(
        zlo > 0,
        special.ndtr(-zlo) - special.ndtr(-zhi),
        special.ndtr(zhi) - special.ndtr(zlo),
    )
    return j, np.clip(p, 0.0, 1.0)


def induced_mean(marg, tail_prob=DEFAULT_TAIL_PROB, thresholds=DEFAULT_THRESHOLDS):
    j, p = induced_pmf_table(marg, tail_prob, thresholds)
    return float(np.dot(j, p))


def rounded_normal_mean(mean, sd, tail_prob=DEFAULT_TAIL_PROB):
    """Vectorized ``induced_mean`` for the default thresholds.

    Uses ``sum_{k>=1} P(X >= k - 1)`` truncated at the same count as the
    scalar version.
    """
    mean, sd = np.broadcast_arrays(np.asarray(mean, dtype=float), np.asarray(sd, dtype=float))
    if mean.size == 0:
        return np.zeros(mean.shape)
    upper = mean + sd * special.ndtri(1.0 - tail_prob)
    J = np.maximum(np.ceil(upper), 0).astype(np.int64)
    jmax = int(J.max())
    k = np.arange(1, jmax + 1)
    # E y = sum_{k=1}^{J} k (F(k-1) - F(k-2)) ... rewritten as tail sums
    flat_mean = mean.reshape(-1, 1)
    flat_sd = sd.reshape(-1, 1)
    flat_J = J.reshape(-1, 1)
    surv_lo = special.ndtr((flat_mean - (k - 1)) / flat_sd)  # P(X >= k-1)
    surv_top = special.ndtr((flat_mean - flat_J) / flat_sd)  # P(X >= J)
    active = k <= flat_J
    total = np.where(active, surv_lo, 0.0).sum(axis=1) - flat_J[:, 0] * surv_top[:, 0]
    return np.maximum(total, 0.0).reshape(mean.shape)


def _check_cov(cov2x2):
    cov = np.asarray(cov2x2, dtype=float)
    if cov.shape != (2, 2):
        raise DomainError("covariance must be 2x2")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise DomainError("covariance must be symmetric")
    if cov[0, 0] <= 0 or np.linalg.det(cov) <= 0:
        raise DomainError("covariance must be positive definite")
    return cov


def induced_cov(means, cov2x2, tail_prob=DEFAULT_TAIL_PROB, rtol=1e-8):
    """Covariance of two counts obtained by rounding a bivariate normal.

    ``E[y y']`` is integrated over the first coordinate one count-interval at
    a time, with the conditional law of the second coordinate handled in
    closed form through ``rounded_normal_mean``.
    """
    cov = _check_cov(cov2x2)
    m1, m2 = float(means[0]), float(means[1])
    s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    slope = cov[0, 1] / cov[0, 0]
    cond_var = cov[1, 1] - cov[0, 1] ** 2 / cov[0, 0]
    if cond_var <= 0:
        raise DomainError("covariance must be positive definite")
    cond_sd = math.sqrt(cond_var)

    # tiny tail_prob for the inner mean; the outer sum carries the truncation
    inner_tail = min(tail_prob, 1e-12)

    def integrand(x):
        dens = math.exp(-0.5 * ((x - m1) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
        inner = rounded_normal_mean(m2 + slope * (x - m1), cond_sd, inner_tail)
        return dens * float(inner)

    J1 = truncation_count(m1, s1, tail_prob)
    lower_edge = m1 - s1 * special.ndtri(1.0 - 1e-16)
    exy = 0.0
    for j in range(1, J1 + 1):
        a, b = j - 1.0, float(j)
        if b < lower_edge:
            continue
        pts = []
        if abs(slope) > 0:
            # where the conditional mean of y' crosses an integer
            ks = np.arange(math.floor(min(m2 + slope * (a - m1), m2 + slope * (b - m1))) - 1,
                           math.ceil(max(m2 + slope * (a - m1), m2 + slope * (b - m1))) + 2)
            xs = m1 + (ks - m2) / slope
            pts = sorted(float(p) for p in xs if a < p < b)[:50]
        val, _ = integrate.quad(integrand, a, b, points=pts or None, epsabs=0.0,
                                epsrel=rtol, limit=400)
        exy += j * val
    e1 = induced_mean(GaussianMarginal(m1, s1), tail_prob)
    e2 = induced_mean(GaussianMarginal(m2, s2), tail_prob)
    return float(exy - e1 * e2)


def induced_var(marg, tail_prob=DEFAULT_TAIL_PROB):
    j, p = induced_pmf_table(marg, tail_prob)
    mu = np.dot(j, p)
    return float(np.dot(j * j, p) - mu * mu)
