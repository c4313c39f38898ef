"""Hot inner loops.

Every kernel takes its randomness as pre-drawn arrays so the numba and
numpy paths consume the generator identically and produce the same
chains. ``truncnorm_std`` has a vectorized scipy fallback; the slice sweep
is inherently sequential and falls back to interpreted Python.
"""

import math

import numpy as np
from scipy import special

from ._compat import _HAS_NUMBA, jit

_SQRT1_2 = 1.0 / math.sqrt(2.0)


@jit
def _ndtr(x):
    return 0.5 * math.erfc(-x * _SQRT1_2)


@jit
def _ndtr_upper(x):
    # 1 - Phi(x) without cancellation
    return 0.5 * math.erfc(x * _SQRT1_2)


@jit
def _ndtri(p):
    # Wichura (1988) AS241, PPND16; relative accuracy about 1e-16.
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    if r <= 0.0:
        return -math.inf if q < 0.0 else math.inf
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    if q < 0.0:
        return -val
    return val


@jit
def _upper_tail_draw(alpha, beta, u):
    # Draw from N(0,1) restricted to [alpha, beta) with alpha > 0 via the
    # survival function, which stays accurate far into the tail.
    sa = _ndtr_upper(alpha)
    sb = _ndtr_upper(beta)
    if sa > 0.0:
        p = sa - u * (sa - sb)
        if p > 0.0:
            return -_ndtri(p)
    # beyond ~38 sd: exponential approximation of the tail, error O(alpha^-2)
    width = beta - alpha
    if width == math.inf:
        return alpha - math.log1p(-u) / alpha
    return alpha - math.log1p(-u * (-math.expm1(-alpha * width))) / alpha


@jit
def truncnorm_std_scalar(alpha, beta, u):
    """Standard normal restricted to ``[alpha, beta)``, inverse-cdf with ``u``."""
    if alpha > 0.0:
        z = _upper_tail_draw(alpha, beta, u)
    elif beta < 0.0:
        z = -_upper_tail_draw(-beta, -alpha, 1.0 - u)
    else:
        pa = _ndtr(alpha)
        pb = _ndtr(beta)
        z = _ndtri(pa + u * (pb - pa))
    if z < alpha:
        z = alpha
    if z >= beta:
        z = np.nextafter(beta, -math.inf)
    return z


@jit
def _truncnorm_batch_nb(mu, sd, lo, hi, u):
    n = mu.shape[0]
    out = np.empty(n)
    for i in range(n):
        alpha = (lo[i] - mu[i]) / sd[i]
        beta = (hi[i] - mu[i]) / sd[i]
        x = mu[i] + sd[i] * truncnorm_std_scalar(alpha, beta, u[i])
        if x < lo[i]:
            x = lo[i]
        if x >= hi[i]:
            x = np.nextafter(hi[i], -math.inf)
        out[i] = x
    return out


def _truncnorm_batch_np(mu, sd, lo, hi, u):
    mu, sd, lo, hi, u = np.broadcast_arrays(mu, sd, lo, hi, u)
    alpha = (lo - mu) / sd
    beta = (hi - mu) / sd
    z = np.empty(mu.shape)

    upper = alpha > 0.0
    lower = beta < 0.0
    mid = ~(upper | lower)

    pa = special.ndtr(alpha[mid])
    pb = special.ndtr(beta[mid])
    z[mid] = special.ndtri(pa + u[mid] * (pb - pa))

    def tail(a, b, uu):
        sa = special.ndtr(-a)
        sb = special.ndtr(-b)
        p = sa - uu * (sa - sb)
        with np.errstate(divide="ignore", invalid="ignore"):
            expo = np.where(
                np.isinf(b),
                a - np.log1p(-uu) / a,
                a - np.log1p(-uu * (-np.expm1(-a * (b - a)))) / a,
            )
        return np.where(p > 0.0, -special.ndtri(np.where(p > 0.0, p, 0.5)), expo)

    z[upper] = tail(alpha[upper], beta[upper], u[upper])
    z[lower] = -tail(-beta[lower], -alpha[lower], 1.0 - u[lower])

    z = np.clip(z, alpha, None)
    z = np.where(z >= beta, np.nextafter(beta, -np.inf), z)
    x = mu + sd * z
    x = np.maximum(x, lo)
    return np.where(x >= hi, np.nextafter(hi, -np.inf), x)


def truncnorm_batch(mu, sd, lo, hi, u):
    """Vectorized truncated normal draws on ``[lo, hi)`` from uniforms ``u``."""
    mu = np.ascontiguousarray(mu, dtype=float)
    shape = mu.shape
    args = [np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=float), shape)).ravel()
            for a in (sd, lo, hi, u)]
    if _HAS_NUMBA:
        return _truncnorm_batch_nb(mu.ravel(), *args).reshape(shape)
    return _truncnorm_batch_np(mu.ravel(), *args).reshape(shape)


@jit
def slice_sweep(x, mean, prec, lo, hi, expo, u):
    """One sweep of the rectangle-restricted multivariate normal slice sampler.

    The auxiliary level is drawn once per sweep: with ``q(x)`` the
    precision quadratic form, every coordinate is then redrawn uniformly
    from its slice ``{x_i : q(x) <= q_current + 2 * expo}`` intersected with
    ``[lo_i, hi_i)``. ``x`` is updated in place and returned.
    """
    n = x.shape[0]
    d = np.empty(n)
    for i in range(n):
        d[i] = x[i] - mean[i]
    g = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += prec[i, j] * d[j]
        g[i] = acc
    q = 0.0
    for i in range(n):
        q += d[i] * g[i]
    level = q + 2.0 * expo

    for i in range(n):
        a = prec[i, i]
        di = d[i]
        r = g[i] - a * di
        c = q - di * (2.0 * g[i] - a * di)
        disc = r * r - a * (c - level)
        if disc < 0.0:
            disc = 0.0
        root = math.sqrt(disc)
        zlo = (-r - root) / a
        zhi = (-r + root) / a
        if zlo > di:
            zlo = di
        if zhi < di:
            zhi = di
        left = mean[i] + zlo
        right = mean[i] + zhi
        if left < lo[i]:
            left = lo[i]
        if right > hi[i]:
            right = hi[i]
        xi = left + u[i] * (right - left)
        if xi >= hi[i]:
            xi = np.nextafter(hi[i], -math.inf)
        if xi < lo[i]:
            xi = lo[i]
        znew = xi - mean[i]
        delta = znew - di
        if delta != 0.0:
            for j in range(n):
                g[j] += prec[j, i] * delta
            d[i] = znew
            q = a * znew * znew + 2.0 * znew * r + c
        x[i] = xi
    return x


@jit
def ar1_quad_forms(e, starts, rho):
    """Per-subject ``e_i^T R^{-1} e_i`` for unit-variance AR(1) blocks."""
    m = starts.shape[0] - 1
    out = np.empty(m)
    s2 = 1.0 - rho * rho
    for k in range(m):
        a = starts[k]
        b = starts[k + 1]
        acc = e[a] * e[a]
        for t in range(a + 1, b):
            w = e[t] - rho * e[t - 1]
            acc += w * w / s2
        out[k] = acc
    return out


def backend_name():
    return "numba" if _HAS_NUMBA else "numpy"
