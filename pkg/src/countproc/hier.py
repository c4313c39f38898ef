"""Count functional data: many subjects, each with a rounded latent trajectory.

``y*_it = xi_i + f(s_it, x_it) + eps_it`` with subject effects ``xi_i``
drawn from a Dirichlet process (concentration ``alpha``, normal base
measure with precision ``psi``). Two mean structures are provided:

* grouped P-splines, one coefficient vector per group with a shared
  smoothing precision, and iid residuals;
* an additive model over standardized predictors with AR(1) residuals
  within each subject.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg

from . import _kernels
from .draws import DrawRecorder, config_hash
from .pspline import (
    BSplineBasis,
    DifferencePenalty,
    bspline_design,
    update_delta,
    update_lambda,
)
from .rounding import DEFAULT_TAIL_PROB, DEFAULT_THRESHOLDS, DomainError, rounded_normal_mean
from .samplers import (
    MvnParams,
    ProposalAdapter,
    Rectangle,
    make_rng,
    mh_step,
    sample_gamma,
    sample_mvn_precision,
    sample_tmvn_slice,
    sample_truncnorm,
)


@dataclass
class FunctionalDataset:
    """Long-format count trajectories, sorted by subject then time.

    ``groups`` holds one 0-based label per subject; ``group_labels`` maps
    them back to the values read from file.
    """

    subject: np.ndarray
    times: np.ndarray
    counts: np.ndarray
    covariates: np.ndarray | None = None
    groups: np.ndarray | None = None
    subject_labels: list = field(default_factory=list)
    group_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.subject = np.asarray(self.subject, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = self.counts.shape[0]
        if self.subject.shape[0] != n or self.times.shape[0] != n:
            raise DomainError("subject, time and count columns differ in length")
        if np.any(self.counts < 0):
            raise DomainError("counts must be non-negative")
        order = np.lexsort((self.times, self.subject))
        self.subject, self.times, self.counts = self.subject[order], self.times[order], self.counts[order]
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            if cov.shape[0] != n:
                raise DomainError("covariate rows do not match observations")
            self.covariates = cov[order]
        if n and (self.subject.min() != 0 or np.any(np.diff(np.unique(self.subject)) != 1)):
            raise DomainError("subject indices must be 0..m-1")
        m = self.n_subjects
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)
            if self.groups.shape[0] != m:
                raise DomainError("need one group label per subject")
            if np.any(self.groups < 0):
                raise DomainError("group labels out of range")
        if not self.subject_labels:
            self.subject_labels = [str(i) for i in range(m)]

    @property
    def n_subjects(self):
        return int(self.subject.max()) + 1 if self.subject.size else 0

    @property
    def n_groups(self):
        if self.groups is None:
            return 0
        return max(int(self.groups.max()) + 1, len(self.group_labels))

    @property
    def starts(self):
        """Row offsets of each subject block (length ``m + 1``)."""
        return np.searchsorted(self.subject, np.arange(self.n_subjects + 1))

    def __len__(self):
        return int(self.counts.shape[0])


# -- Dirichlet process random effects ----------------------------------------

@dataclass
class DpRandomEffects:
    """Cluster assignments and atoms of a DP with base measure ``N(0, 1/psi)``."""

    assign: np.ndarray
    atoms: np.ndarray
    psi: float = 1.0
    alpha: float = 1.0
    a_psi: float = 1.0
    b_psi: float = 1.0

    @classmethod
    def single_cluster(cls, n_subjects, **kw):
        return cls(np.zeros(n_subjects, dtype=np.int64), np.zeros(1), **kw)

    def __post_init__(self):
        self.assign = np.asarray(self.assign, dtype=np.int64)
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.assign.size and (self.assign.min() < 0 or self.assign.max() >= self.atoms.size):
            raise DomainError("cluster assignment points to a missing atom")
        if not np.all(np.isfinite(self.atoms)):
            raise DomainError("atoms must be finite")

    @property
    def effects(self):
        return self.atoms[self.assign]

    @property
    def sizes(self):
        return np.bincount(self.assign, minlength=self.atoms.size)

    @property
    def n_clusters(self):
        return int(np.count_nonzero(self.sizes))

    @property
    def mean_effect(self):
        """Size-weighted mean of the atoms, i.e. the mean realized effect."""
        return float(self.effects.mean()) if self.assign.size else 0.0


def _log_normal(x, mean, var):
    return -0.5 * (math.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def dp_assign_logweights(sizes, atoms, psi, alpha, ebar, prec):
    """Unnormalized log probabilities: existing clusters then a new one.

    ``sizes`` must already exclude the subject being reassigned; clusters
    of size zero get weight zero. A subject with ``prec == 0`` carries no
    information about its effect.
    """
    with np.errstate(divide="ignore"):
        logw = np.log(sizes.astype(float))
    if prec > 0:
        var = 1.0 / prec
        logw = logw - 0.5 * (ebar - atoms) ** 2 / var
        new = math.log(alpha) + _log_normal(ebar, 0.0, var + 1.0 / psi) + 0.5 * math.log(2 * math.pi * var)
    else:
        new = math.log(alpha)
    return np.append(logw, new)


def dp_gibbs_update(effects, ebar, prec, rng, update_psi=True):
    """One Gibbs scan over cluster labels, atoms and the base precision.

    Subject ``i`` contributes a normal likelihood for its effect with mean
    ``ebar[i]`` and precision ``prec[i]``. Labels are updated with the
    Polya-urn weights (new clusters draw their atom from the one-subject
    posterior), then atoms and ``psi`` are redrawn from their conjugate
    conditionals. Returns a new object.
    """
    ebar = np.asarray(ebar, dtype=float)
    prec = np.asarray(prec, dtype=float)
    assign = effects.assign.copy()
    atoms = list(effects.atoms)
    sizes = list(np.bincount(assign, minlength=len(atoms)))
    psi, alpha = effects.psi, effects.alpha

    for i in range(assign.size):
        sizes[assign[i]] -= 1
        logw = dp_assign_logweights(np.asarray(sizes), np.asarray(atoms), psi, alpha, ebar[i], prec[i])
        w = np.exp(logw - logw.max())
        k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        k = min(k, len(w) - 1)
        if k == len(atoms):
            post_prec = psi + prec[i]
            atom = prec[i] * ebar[i] / post_prec + rng.standard_normal() / math.sqrt(post_prec)
            # reuse an emptied slot to keep the atom list short
            empty = [j for j, s in enumerate(sizes) if s == 0]
            if empty:
                k = empty[0]
                atoms[k] = atom
            else:
                atoms.append(atom)
                sizes.append(0)
        assign[i] = k
        sizes[k] += 1

    # relabel to drop empty clusters
    used = np.flatnonzero(np.asarray(sizes) > 0)
    relabel = np.full(len(atoms), -1)
    relabel[used] = np.arange(used.size)
    assign = relabel[assign]

    K = used.size
    sum_prec = np.bincount(assign, weights=prec, minlength=K)
    sum_pe = np.bincount(assign, weights=prec * ebar, minlength=K)
    post_prec = psi + sum_prec
    new_atoms = sum_pe / post_prec + rng.standard_normal(K) / np.sqrt(post_prec)
    if update_psi:
        psi = sample_gamma(effects.a_psi + 0.5 * K, effects.b_psi + 0.5 * float(new_atoms @ new_atoms), rng)
    return replace(effects, assign=assign, atoms=new_atoms, psi=psi)


# -- shared pieces -----------------------------------------------------------

def ar1_correlation(n, rho):
    if not -1.0 < rho < 1.0:
        raise DomainError("AR(1) correlation must satisfy |rho| < 1")
    if n < 1:
        raise DomainError("n must be positive")
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def ar1_precision(n, rho):
    """Tridiagonal inverse of ``ar1_correlation(n, rho)``."""
    if not -1.0 < rho < 1.0:
        raise DomainError("AR(1) correlation must satisfy |rho| < 1")
    Q = np.zeros((n, n))
    diag = np.full(n, 1.0 + rho * rho)
    diag[0] = diag[-1] = 1.0
    if n == 1:
        diag[0] = 1.0 - rho * rho
    Q[np.diag_indices(n)] = diag
    off = np.arange(n - 1)
    Q[off, off + 1] = Q[off + 1, off] = -rho
    return Q / (1.0 - rho * rho)


def ar1_whiten(v, first, rho):
    """Apply the AR(1) whitening map row-wise; ``first`` flags block starts.

    ``v`` may be a vector or a matrix with rows aligned to observations.
    """
    v = np.asarray(v, dtype=float)
    s = math.sqrt(1.0 - rho * rho)
    out = np.empty_like(v)
    out[1:] = (v[1:] - rho * v[:-1]) / s
    out[0] = v[0]
    out[first] = v[first]
    return out


def conditional_count_expectation(mu_star, tau, tail_prob=DEFAULT_TAIL_PROB):
    """Expected count of the rounded ``N(mu_star, 1/tau)``, truncated at the upper quantile."""
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise DomainError("precision must be positive")
    out = rounded_normal_mean(mu_star, 1.0 / np.sqrt(tau), tail_prob)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class HierConfig:
    n_iter: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    n_interior_knots: int = 20
    degree: int = 3
    penalty_order: int = 2
    nu: float = 1.0
    a_delta: float = 1.0
    b_delta: float = 1.0
    a_psi: float = 1.0
    b_psi: float = 1.0
    alpha: float = 1.0
    random_effects: bool = True
    rho_init: float = 0.0
    fix_rho: bool = False
    rho_proposal_sd: float = 0.1
    seed: int = 0
    check: bool = False

    def __post_init__(self):
        if self.n_iter < 1 or self.thin < 1 or self.burn_in < 0:
            raise DomainError("n_iter and thin must be positive, burn_in non-negative")
        if self.burn_in >= self.n_iter:
            raise DomainError("burn_in must be smaller than n_iter")
        if not -1.0 < self.rho_init < 1.0:
            raise DomainError("rho_init must lie in (-1, 1)")


def _latent_start(counts):
    lo, hi = DEFAULT_THRESHOLDS.bounds(counts)
    lo = np.where(np.isfinite(lo), lo, hi - 1.0)
    return 0.5 * (lo + hi)


def _basis_meta(basis):
    return np.array([basis.lower, basis.upper, basis.degree], dtype=float)


def _basis_from(meta, knots):
    lo, hi, deg = meta
    deg = int(deg)
    return BSplineBasis(float(lo), float(hi), tuple(np.asarray(knots)[deg + 1:-(deg + 1)]), deg)


# -- grouped P-splines -------------------------------------------------------

def fit_grouped(dataset, config=HierConfig(), rng=None):
    """Gibbs sampler for group-specific P-spline trajectories with DP subject effects."""
    if dataset.groups is None:
        raise DomainError("the grouped model needs a group label per subject")
    rng = make_rng(config.seed) if rng is None else rng
    G = dataset.n_groups
    m = dataset.n_subjects
    counts_per_group = np.bincount(dataset.groups, minlength=G)
    if np.any(counts_per_group == 0):
        raise DomainError(f"empty group(s): {np.flatnonzero(counts_per_group == 0).tolist()}")

    t = dataset.times
    basis = BSplineBasis.equispaced(float(t.min()), float(t.max()), config.n_interior_knots,
                                    config.degree)
    penalty = DifferencePenalty(basis.size, config.penalty_order)
    P = penalty.matrix
    B = bspline_design(t, basis)
    row_group = dataset.groups[dataset.subject]
    group_rows = [np.flatnonzero(row_group == g) for g in range(G)]
    btb = [B[r].T @ B[r] for r in group_rows]
    n_i = np.bincount(dataset.subject, minlength=m).astype(float)
    lower, upper = DEFAULT_THRESHOLDS.bounds(dataset.counts)

    ystar = _latent_start(dataset.counts)
    theta = np.zeros((G, basis.size))
    for g in range(G):
        A = btb[g] + 1e-3 * P + 1e-8 * np.eye(basis.size)
        theta[g] = np.linalg.solve(A, B[group_rows[g]].T @ ystar[group_rows[g]])
    effects = DpRandomEffects.single_cluster(m, alpha=config.alpha, a_psi=config.a_psi,
                                             b_psi=config.b_psi)
    tau, lam, delta = 1.0, 1.0, 1.0

    rec = DrawRecorder(config.n_iter, config.burn_in, config.thin)
    t0 = time.perf_counter()
    for it in range(config.n_iter):
        xi_rows = effects.effects[dataset.subject] if config.random_effects else 0.0
        f = np.einsum("ij,ij->i", B, theta[row_group])
        ystar = sample_truncnorm(xi_rows + f, 1.0 / math.sqrt(tau), lower, upper, rng)
        if config.check and not (np.all(ystar >= lower) and np.all(ystar < upper)):
            raise AssertionError(f"latent left its rectangle at iteration {it}")

        r = ystar - xi_rows
        for g in range(G):
            rows = group_rows[g]
            theta[g] = sample_mvn_precision(tau * (B[rows].T @ r[rows]), tau * btb[g] + lam * P, rng)
        f = np.einsum("ij,ij->i", B, theta[row_group])
        quads = float(np.einsum("gi,ij,gj->", theta, P, theta))
        lam = update_lambda(quads, penalty.rank, G, delta, config.nu, rng)
        delta = update_delta(lam, config.nu, config.a_delta, config.b_delta, rng)

        resid = ystar - xi_rows - f
        tau = sample_gamma(0.5 * resid.size, 0.5 * float(resid @ resid), rng)

        if config.random_effects:
            e = ystar - f
            ebar = np.bincount(dataset.subject, weights=e, minlength=m) / n_i
            effects = dp_gibbs_update(effects, ebar, n_i * tau, rng)

        if rec.wants(it):
            xi = effects.effects if config.random_effects else np.zeros(m)
            rec.record(it, theta=theta, tau=tau, lam=lam, delta=delta, psi=effects.psi, xi=xi,
                       mu_q=float(xi.mean()), n_clusters=effects.n_clusters)

    meta = {"model": "grouped", "seed": config.seed, "config_hash": config_hash(asdict(config)),
            "wall_time": time.perf_counter() - t0}
    fixed = {"knots": basis.knots, "basis": _basis_meta(basis), "groups": dataset.groups.copy()}
    return rec.store(fixed=fixed, meta=meta)


def _grouped_basis(store):
    return _basis_from(store.fixed["basis"], store.fixed["knots"])


def group_curves(draws, times):
    """Per-draw latent group trajectories ``B(t) theta_g``: shape ``(D, G, T)``."""
    B = bspline_design(times, _grouped_basis(draws))
    return np.einsum("tk,dgk->dgt", B, draws["theta"])


def group_contrast(draws, group, reference, times):
    """Per-draw time-averaged latent difference between two groups."""
    curves = group_curves(draws, times)
    return (curves[:, group, :] - curves[:, reference, :]).mean(axis=1)


def _interval(x, level=0.95, axis=0):
    a = (1.0 - level) / 2.0
    return np.quantile(x, a, axis=axis), np.quantile(x, 1.0 - a, axis=axis)


def group_burden_summaries(draws, dataset, control=0, onset_threshold=0.5, max_draws=500):
    """Weekly mean burden, cumulative burden and onset week per group.

    For every stored draw the expected count of each subject at each
    distinct time is averaged within its group. The typical subject
    (effect equal to the mean realized effect) defines the onset: the first
    time at which its posterior mean expected count reaches
    ``onset_threshold``; ``None`` if it never does.
    """
    store = draws.thin_to(max_draws)
    weeks = np.unique(dataset.times)
    curves = group_curves(store, weeks)
    D, G, W = curves.shape
    groups = dataset.groups
    burden = np.empty((D, G, W))
    typical = np.empty((D, G, W))
    for d in range(D):
        sd = 1.0 / math.sqrt(float(store["tau"][d]))
        xi = store["xi"][d]
        for g in range(G):
            members = xi[groups == g]
            mu = members[:, None] + curves[d, g][None, :]
            burden[d, g] = rounded_normal_mean(mu, sd).mean(axis=0)
        typical[d] = rounded_normal_mean(curves[d] + float(store["mu_q"][d]), sd)
    cumulative = np.cumsum(burden, axis=2)
    average = burden.mean(axis=2)
    out = []
    for g in range(G):
        lo, hi = _interval(burden[:, g])
        clo, chi = _interval(cumulative[:, g])
        alo, ahi = _interval(average[:, g])
        diff = burden[:, g] - burden[:, control]
        dlo, dhi = _interval(diff)
        typ = typical[:, g].mean(axis=0)
        crossed = np.flatnonzero(typ >= onset_threshold)
        out.append({
            "group": g,
            "weeks": weeks,
            "burden_mean": burden[:, g].mean(axis=0), "burden_lo": lo, "burden_hi": hi,
            "cumulative_mean": cumulative[:, g].mean(axis=0), "cumulative_lo": clo,
            "cumulative_hi": chi,
            "average_mean": float(average[:, g].mean()), "average_lo": float(alo),
            "average_hi": float(ahi),
            "contrast_mean": diff.mean(axis=0), "contrast_lo": dlo, "contrast_hi": dhi,
            "typical_mean": typ,
            "onset": None if crossed.size == 0 else float(weeks[crossed[0]]),
        })
    return out


# -- additive model with AR(1) residuals --------------------------------------

def _sum_to_zero_at(basis, x0):
    """Columns spanning the coefficient vectors whose curve vanishes at ``x0``."""
    b0 = bspline_design([x0], basis)[0]
    return linalg.null_space(b0[None, :])


def _check_contiguous(dataset):
    starts = dataset.starts
    t = dataset.times
    for i in range(dataset.n_subjects):
        block = t[starts[i]:starts[i + 1]]
        if block.size > 1 and not np.allclose(np.diff(block), 1.0):
            raise DomainError(f"subject {dataset.subject_labels[i]} has a non-contiguous time index")


def _rho_log_target(z, e, starts, tau, sizes):
    rho = math.tanh(z)
    s2 = 1.0 - rho * rho
    if s2 <= 0.0:
        return -math.inf
    quad = float(np.sum(_kernels.ar1_quad_forms(e, starts, rho)))
    logdet = float(np.sum(sizes - 1)) * math.log(s2)
    # uniform prior on rho, carried to z = atanh(rho)
    return -0.5 * logdet - 0.5 * tau * quad + math.log(s2)


def fit_additive_ar1(dataset, config=HierConfig(), rng=None):
    """Gibbs/MH sampler for the additive predictor model with AR(1) residuals.

    Predictors are standardized to mean zero and unit variance; each smooth
    effect is constrained to vanish at zero (the predictor mean) so that
    the subject effects carry the overall level.
    """
    if dataset.covariates is None or dataset.covariates.shape[1] < 1:
        raise DomainError("the additive model needs predictor columns")
    _check_contiguous(dataset)
    rng = make_rng(config.seed) if rng is None else rng
    X = dataset.covariates
    n_obs, p = X.shape
    m = dataset.n_subjects
    starts = dataset.starts
    sizes = np.diff(starts)
    first = np.zeros(n_obs, dtype=bool)
    first[starts[:-1]] = True

    x_mean = X.mean(axis=0)
    x_sd = X.std(axis=0)
    if np.any(x_sd == 0):
        raise DomainError("a predictor is constant and cannot be standardized")
    Z = (X - x_mean) / x_sd

    bases, constraints, designs, penalties = [], [], [], []
    for j in range(p):
        basis = BSplineBasis.equispaced(float(Z[:, j].min()), float(Z[:, j].max()),
                                        config.n_interior_knots, config.degree)
        C = _sum_to_zero_at(basis, 0.0)
        bases.append(basis)
        constraints.append(C)
        designs.append(bspline_design(Z[:, j], basis) @ C)
        P = DifferencePenalty(basis.size, config.penalty_order).matrix
        penalties.append(C.T @ P @ C)
    widths = [d.shape[1] for d in designs]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    Xd = np.hstack(designs)
    pen_rank = [int(np.linalg.matrix_rank(Pj)) for Pj in penalties]

    lower, upper = DEFAULT_THRESHOLDS.bounds(dataset.counts)
    ystar = _latent_start(dataset.counts)
    beta = np.zeros(offsets[-1])
    effects = DpRandomEffects(np.zeros(m, dtype=np.int64), np.array([float(ystar.mean())]),
                              alpha=config.alpha, a_psi=config.a_psi, b_psi=config.b_psi)
    tau = 1.0
    lam = np.ones(p)
    delta = np.ones(p)
    rho = config.rho_init
    z = math.atanh(rho)
    adapter = ProposalAdapter(config.rho_proposal_sd)

    rec = DrawRecorder(config.n_iter, config.burn_in, config.thin)
    t0 = time.perf_counter()
    n_acc = 0
    for it in range(config.n_iter):
        if it == config.burn_in:
            adapter.freeze()
        xi_rows = effects.effects[dataset.subject] if config.random_effects else 0.0
        f = Xd @ beta
        mean = xi_rows + f

        # latent vectors, one subject block at a time
        if rho == 0.0:
            ystar = sample_truncnorm(mean, 1.0 / math.sqrt(tau), lower, upper, rng)
        else:
            for i in range(m):
                a, b = starts[i], starts[i + 1]
                prec = tau * ar1_precision(b - a, rho)
                params = MvnParams(mean[a:b], covariance=None, precision=prec)
                ystar[a:b] = sample_tmvn_slice(params, Rectangle(lower[a:b], upper[a:b]),
                                               ystar[a:b], rng)
        if config.check and not (np.all(ystar >= lower) and np.all(ystar < upper)):
            raise AssertionError(f"latent left its rectangle at iteration {it}")

        # joint update of all smooth-effect coefficients in whitened coordinates
        Xw = ar1_whiten(Xd, first, rho)
        rw = ar1_whiten(ystar - xi_rows, first, rho)
        prec_beta = tau * (Xw.T @ Xw)
        for j in range(p):
            sl = slice(offsets[j], offsets[j + 1])
            prec_beta[sl, sl] += lam[j] * penalties[j]
        beta = sample_mvn_precision(tau * (Xw.T @ rw), prec_beta, rng)
        f = Xd @ beta

        for j in range(p):
            bj = beta[offsets[j]:offsets[j + 1]]
            lam[j] = update_lambda(float(bj @ penalties[j] @ bj), pen_rank[j], 1, delta[j],
                                   config.nu, rng)
            delta[j] = update_delta(lam[j], config.nu, config.a_delta, config.b_delta, rng)

        e = ystar - xi_rows - f
        quad = float(np.sum(_kernels.ar1_quad_forms(e, starts, rho)))
        tau = sample_gamma(0.5 * n_obs, 0.5 * quad, rng)

        if not config.fix_rho:
            z, acc = mh_step(lambda v: _rho_log_target(v, e, starts, tau, sizes),
                             adapter.scale, z, rng)
            adapter.record(acc)
            n_acc += acc and it >= config.burn_in
            rho = math.tanh(z)

        if config.random_effects:
            resid = ystar - f
            ones_w = ar1_whiten(np.ones(n_obs), first, rho)
            rw = ar1_whiten(resid, first, rho)
            s11 = np.add.reduceat(ones_w * ones_w, starts[:-1])
            s1e = np.add.reduceat(ones_w * rw, starts[:-1])
            effects = dp_gibbs_update(effects, s1e / s11, tau * s11, rng)

        if rec.wants(it):
            theta = np.stack([constraints[j] @ beta[offsets[j]:offsets[j + 1]] for j in range(p)])
            xi = effects.effects if config.random_effects else np.zeros(m)
            rec.record(it, theta=theta, tau=tau, rho=rho, lam=lam, delta=delta, psi=effects.psi,
                       xi=xi, mu_q=float(xi.mean()), n_clusters=effects.n_clusters)

    kept = config.n_iter - config.burn_in
    meta = {"model": "additive", "seed": config.seed, "config_hash": config_hash(asdict(config)),
            "wall_time": time.perf_counter() - t0, "rho_acceptance": n_acc / kept}
    fixed = {"x_mean": x_mean, "x_sd": x_sd,
             "knots": np.stack([b.knots for b in bases]),
             "basis": np.stack([_basis_meta(b) for b in bases])}
    return rec.store(fixed=fixed, meta=meta)


def _additive_bases(store):
    return [_basis_from(meta, knots) for meta, knots in zip(store.fixed["basis"], store.fixed["knots"])]


def predictor_effect_curve(draws, j, x_grid, level=0.95, standardized=False, max_draws=None,
                           tail_prob=DEFAULT_TAIL_PROB):
    """Posterior mean and interval of the expected count as predictor ``j`` varies.

    The other predictors sit at their mean and the subject effect at the
    mean realized effect of each draw. ``x_grid`` is on the raw predictor
    scale unless ``standardized``. Also returns the band for the change
    relative to the predictor mean.
    """
    store = draws.thin_to(max_draws)
    bases = _additive_bases(store)
    if not 0 <= j < len(bases):
        raise DomainError(f"predictor index {j} out of range")
    x_grid = np.asarray(x_grid, dtype=float).reshape(-1)
    zg = x_grid if standardized else (x_grid - store.fixed["x_mean"][j]) / store.fixed["x_sd"][j]
    bj = bases[j]
    tol = 1e-9 * (bj.upper - bj.lower)
    if np.any(zg < bj.lower - tol) or np.any(zg > bj.upper + tol):
        raise DomainError("grid extends outside the range covered by the predictor basis")

    theta = store["theta"]
    Bj = bspline_design(zg, bj)
    at_zero = np.stack([bspline_design([0.0], b)[0] for b in bases])
    others = np.einsum("dlk,lk->dl", theta, at_zero)
    others[:, j] = 0.0
    mu_star = (theta[:, j, :] @ Bj.T) + others.sum(axis=1)[:, None] + store["mu_q"][:, None]
    mu_zero = (theta[:, j, :] @ at_zero[j]) + others.sum(axis=1) + store["mu_q"]
    tau = store["tau"][:, None]
    curve = conditional_count_expectation(mu_star, np.broadcast_to(tau, mu_star.shape), tail_prob)
    base = conditional_count_expectation(mu_zero, store["tau"], tail_prob)
    diff = curve - np.atleast_1d(base)[:, None]
    lo, hi = _interval(curve, level)
    dlo, dhi = _interval(diff, level)
    return {"x": x_grid, "mean": curve.mean(axis=0), "lo": lo, "hi": hi,
            "diff_mean": diff.mean(axis=0), "diff_lo": dlo, "diff_hi": dhi}


# -- synthetic data ----------------------------------------------------------

def simulate_grouped(rng, n_subjects=30, n_times=20, group_shift=(0.0, 5.0), tau=1.0,
                     effect_sd=0.5, curve=None):
    """Counts from the grouped model with known group trajectories.

    Subjects are split evenly over ``len(group_shift)`` groups; group ``g``
    follows ``curve(t) + group_shift[g]``. Returns ``(dataset, truth)`` where
    ``truth`` holds the latent group curves on the time grid.
    """
    G = len(group_shift)
    times = np.arange(1, n_times + 1, dtype=float)
    base = (1.0 + np.sin(times / n_times * math.pi)) if curve is None else np.asarray(curve(times))
    curves = base[None, :] + np.asarray(group_shift, dtype=float)[:, None]
    groups = np.arange(n_subjects) % G
    xi = effect_sd * rng.standard_normal(n_subjects)
    latent = xi[:, None] + curves[groups] + rng.standard_normal((n_subjects, n_times)) / math.sqrt(tau)
    subject = np.repeat(np.arange(n_subjects), n_times)
    ds = FunctionalDataset(subject, np.tile(times, n_subjects), DEFAULT_THRESHOLDS.round(latent.ravel()),
                           groups=groups, group_labels=[str(g) for g in range(G)])
    return ds, {"times": times, "curves": curves, "xi": xi}


def simulate_additive(rng, n_subjects=30, n_days=60, rho=0.6, tau=1.0, effects=None,
                      effect_sd=0.5, level=1.0):
    """Counts from the additive AR(1) model with four standardized predictors.

    ``effects`` is a list of callables of the standardized predictor; by
    default one increasing, one decreasing and two null effects.
    """
    if effects is None:
        effects = [lambda z: 0.8 * z, lambda z: -0.5 * np.tanh(z), lambda z: 0.0 * z,
                   lambda z: 0.0 * z]
    p = len(effects)
    n = n_subjects * n_days
    X = np.empty((n, p))
    # smooth daily predictors shared by all subjects plus subject-level jitter
    day = np.arange(n_days)
    for j in range(p):
        seasonal = np.sin(2 * math.pi * (day / n_days + j / p))
        X[:, j] = np.tile(seasonal, n_subjects) + 0.5 * rng.standard_normal(n)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    f = sum(effects[j](Z[:, j]) for j in range(p))
    xi = level + effect_sd * rng.standard_normal(n_subjects)
    eps = np.empty((n_subjects, n_days))
    eps[:, 0] = rng.standard_normal(n_subjects)
    s = math.sqrt(1 - rho * rho)
    for t in range(1, n_days):
        eps[:, t] = rho * eps[:, t - 1] + s * rng.standard_normal(n_subjects)
    latent = np.repeat(xi, n_days) + f + eps.ravel() / math.sqrt(tau)
    subject = np.repeat(np.arange(n_subjects), n_days)
    ds = FunctionalDataset(subject, np.tile(day.astype(float), n_subjects),
                           DEFAULT_THRESHOLDS.round(latent), covariates=X)
    return ds, {"rho": rho, "tau": tau, "xi": xi, "effects": effects}
