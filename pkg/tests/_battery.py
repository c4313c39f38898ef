"""Goodness-of-fit checks of every sampler against an analytic or exact law.

Each check returns ``(pvalue, n_outside)``: the KS p-value of 10^4 (thinned)
draws and the number of draws that left the truncation region.
"""

import math

import numpy as np
from scipy import integrate, stats

from countproc import gp, pspline
from countproc.rounding import DEFAULT_THRESHOLDS
from countproc.samplers import (
    MvnParams,
    Rectangle,
    make_rng,
    mh_step,
    sample_gamma,
    sample_mvn_precision,
    sample_tmvn_slice,
    sample_truncnorm,
)

N = 10_000


def _rejection_tmvn(mean, cov, lo, hi, n, rng):
    out = []
    L = np.linalg.cholesky(cov)
    while sum(len(o) for o in out) < n:
        x = mean + rng.standard_normal((200_000, mean.size)) @ L.T
        keep = np.all((x >= lo) & (x < hi), axis=1)
        out.append(x[keep])
    return np.concatenate(out)[:n]


def _chain(step, x0, n, thin):
    x = x0
    out = []
    for it in range(n * thin):
        x = step(x)
        if it % thin == thin - 1:
            out.append(np.copy(x))
    return np.array(out)


def truncnorm_cases(seed=1):
    rng = make_rng(seed)
    res = {}
    for mu, sd, lo, hi in [(0, 1, 0.5, 2.0), (0, 1, -np.inf, -3.0), (1, 2, 17.0, np.inf),
                           (0, 1, 40.0, 41.0), (3, 0.5, -1.0, 0.0)]:
        x = sample_truncnorm(mu, sd, lo, hi, rng, size=N)
        a, b = (lo - mu) / sd, (hi - mu) / sd
        p = stats.kstest(x, stats.truncnorm(a, b, loc=mu, scale=sd).cdf).pvalue
        res[f"truncnorm[{lo},{hi})"] = (p, int(np.sum((x < lo) | (x >= hi))))
    return res


def gamma_case(seed=2):
    rng = make_rng(seed)
    x = sample_gamma(2.5, 4.0, rng, size=N)
    return stats.kstest(x, stats.gamma(2.5, scale=0.25).cdf).pvalue, 0


def mvn_precision_case(seed=3):
    rng = make_rng(seed)
    A = rng.normal(size=(5, 5))
    P = A @ A.T + np.eye(5)
    b = rng.normal(size=5)
    v = rng.normal(size=5)
    cov = np.linalg.inv(P)
    x = np.array([sample_mvn_precision(b, P, rng) @ v for _ in range(N)])
    return stats.kstest(x, stats.norm(v @ cov @ b, math.sqrt(v @ cov @ v)).cdf).pvalue, 0


def tmvn_slice_case(seed=4, thin=10):
    rng = make_rng(seed)
    mean = np.array([0.3, -0.2, 1.0])
    cov = np.array([[1.0, 0.8, 0.3], [0.8, 1.0, 0.5], [0.3, 0.5, 2.0]])
    lo, hi = np.array([0.0, -np.inf, 0.0]), np.array([1.0, 0.0, 1.0])
    params, rect = MvnParams(mean, cov), Rectangle(lo, hi)
    draws = _chain(lambda x: sample_tmvn_slice(params, rect, x, rng), np.array([0.5, -0.5, 0.5]), N, thin)
    ref = _rejection_tmvn(mean, cov, lo, hi, 100_000, make_rng(seed + 100))
    p = min(stats.ks_2samp(draws[:, k], ref[:, k]).pvalue for k in range(3))
    outside = int(np.sum(~np.all((draws >= lo) & (draws < hi), axis=1)))
    return p, outside


def mh_case(seed=5, thin=10):
    rng = make_rng(seed)
    draws = _chain(lambda x: mh_step(lambda v: -0.5 * v * v, 2.4, x, rng)[0], 0.0, N, thin)
    return stats.kstest(draws, "norm").pvalue, 0


def _gp_setup(seed):
    rng = make_rng(seed)
    s = np.linspace(0, 4, 8)
    sqd = gp.sq_dists(gp._as_points(s), gp._as_points(s))
    ystar = np.array([0.2, 0.9, 1.5, 1.1, 0.4, -0.3, -0.8, -0.2])
    return rng, sqd, ystar


def gp_tau1_case(seed=6):
    rng, sqd, ystar = _gp_setup(seed)
    priors = gp.GpPriors()
    factor = gp._CorrelationFactor(sqd, 0.7, 1e-8)
    x = np.array([gp.update_tau1(ystar, factor, priors, rng) for _ in range(N)])
    law = stats.invgamma(priors.a_tau1 + 4, scale=priors.b_tau1 + 0.5 * factor.quad(ystar))
    return stats.kstest(x, law.cdf).pvalue, 0


def gp_tau2_case(seed=7, thin=10):
    rng, sqd, ystar = _gp_setup(seed)
    priors, tau1 = gp.GpPriors(), 0.8

    def density(eta):
        f = gp._CorrelationFactor(sqd, math.exp(eta), 1e-8)
        return gp.log_tau2_target(eta, ystar, tau1, f, priors, 1)

    grid = np.linspace(-8, 4, 3001)
    logd = np.array([density(e) for e in grid])
    pdf = np.exp(logd - logd.max())
    cdf = integrate.cumulative_trapezoid(pdf, grid, initial=0.0)
    cdf /= cdf[-1]
    state = [0.0, gp._CorrelationFactor(sqd, 1.0, 1e-8)]

    def step(_):
        state[0], state[1], _acc = gp.update_tau2(state[0], ystar, tau1, sqd, state[1], priors, 1,
                                                  1.5, rng, 1e-8)
        return state[0]

    draws = _chain(step, 0.0, N, thin)
    return stats.kstest(draws, lambda x: np.interp(x, grid, cdf)).pvalue, 0


def gp_latent_case(seed=8, thin=10):
    rng = make_rng(seed)
    s = np.array([0.0, 0.6, 1.5])
    sqd = gp.sq_dists(gp._as_points(s), gp._as_points(s))
    tau1 = 1.3
    factor = gp._CorrelationFactor(sqd, 0.8, 1e-8)
    counts = np.array([1, 2, 0])
    lo, hi = DEFAULT_THRESHOLDS.bounds(counts)
    draws = _chain(lambda y: gp.update_latent(y, tau1, factor, lo, hi, rng), gp.initial_latent(counts),
                   N, thin)
    cov = tau1 * np.exp(-0.8 * sqd)
    ref = _rejection_tmvn(np.zeros(3), cov, lo, hi, 100_000, make_rng(seed + 100))
    p = min(stats.ks_2samp(draws[:, k], ref[:, k]).pvalue for k in range(3))
    outside = int(np.sum(~np.all((draws >= lo) & (draws < hi), axis=1)))
    return p, outside


def _pspline_setup(seed):
    rng = make_rng(seed)
    s = np.linspace(0, 10, 40)
    basis = pspline.BSplineBasis.equispaced(0, 10, 6)
    B = pspline.bspline_design(s, basis)
    P = pspline.DifferencePenalty(basis.size).matrix
    y = np.sin(s) + 2 + 0.3 * rng.standard_normal(s.size)
    return rng, B, P, y


def pspline_theta_case(seed=9):
    rng, B, P, y = _pspline_setup(seed)
    tau, lam = 4.0, 2.0
    prec, b = pspline.theta_conditional(B.T @ B, B.T @ y, tau, lam, P)
    cov = np.linalg.inv(prec)
    v = rng.normal(size=B.shape[1])
    x = np.array([pspline.update_theta(B.T @ B, B.T @ y, tau, lam, P, rng) @ v for _ in range(N)])
    return stats.kstest(x, stats.norm(v @ cov @ b, math.sqrt(v @ cov @ v)).cdf).pvalue, 0


def pspline_gamma_cases(seed=10):
    rng, B, P, y = _pspline_setup(seed)
    resid = y - y.mean()
    theta = rng.normal(size=B.shape[1])
    rank, nu, delta, lam = P.shape[0] - 2, 1.0, 0.7, 1.3
    q = float(theta @ P @ theta)
    cases = {
        "pspline tau": (lambda: pspline.update_tau(resid, rng),
                        stats.gamma(0.5 * resid.size, scale=1 / (0.5 * resid @ resid))),
        "pspline lambda": (lambda: pspline.update_lambda(q, rank, 1, delta, nu, rng),
                           stats.gamma(0.5 * nu + 0.5 * rank, scale=1 / (0.5 * delta * nu + 0.5 * q))),
        "pspline delta": (lambda: pspline.update_delta(lam, nu, 1.0, 1.0, rng),
                          stats.gamma(1.0 + 0.5 * nu, scale=1 / (1.0 + 0.5 * nu * lam))),
    }
    return {k: (stats.kstest(np.array([f() for _ in range(N)]), law.cdf).pvalue, 0)
            for k, (f, law) in cases.items()}


def pspline_latent_case(seed=11):
    rng = make_rng(seed)
    mean, tau = 1.7, 2.0
    lo, hi = DEFAULT_THRESHOLDS.bounds(np.full(N, 2))
    x = pspline.update_latent(np.full(N, mean), tau, lo, hi, rng)
    sd = 1 / math.sqrt(tau)
    law = stats.truncnorm((1 - mean) / sd, (2 - mean) / sd, loc=mean, scale=sd)
    return stats.kstest(x, law.cdf).pvalue, int(np.sum((x < lo) | (x >= hi)))


def run_all():
    res = {}
    res.update(truncnorm_cases())
    res["gamma"] = gamma_case()
    res["mvn precision"] = mvn_precision_case()
    res["tmvn slice"] = tmvn_slice_case()
    res["metropolis-hastings"] = mh_case()
    res["gp tau1"] = gp_tau1_case()
    res["gp log tau2"] = gp_tau2_case()
    res["gp latent"] = gp_latent_case()
    res["pspline theta"] = pspline_theta_case()
    res.update(pspline_gamma_cases())
    res["pspline latent"] = pspline_latent_case()
    return res
