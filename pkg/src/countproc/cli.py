"""``countproc`` command line: fit, simulate, benchmark and summarize.

Every subcommand writes its tables into ``--output-dir``. Settings come
from built-in defaults, then an optional flat ``key = value`` file given by
``--config``, then command-line flags (flags win).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gp, hier, pspline, simbench
from .draws import config_hash
from .io import (
    ParseError,
    parse_count_series_csv,
    parse_functional_csv,
    read_draws,
    summarize_draws,
    write_draws,
    write_table,
)
from .rounding import DomainError
from .samplers import make_rng

log = logging.getLogger("countproc")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# name -> (type, default, help); shared by flags and the config file
_MCMC = {
    "iters": (int, 10_000, "total MCMC iterations"),
    "burnin": (int, 1_000, "iterations discarded as burn-in"),
    "thin": (int, 1, "keep every k-th post-burn-in draw"),
    "seed": (int, 0, "random seed"),
}
_PLOT = {
    "grid_size": (int, 200, "points in the plot grid"),
    "predict_draws": (int, 1000, "posterior draws used for predictive summaries"),
}
_OPTIONS = {
    "fit-gp": {**_MCMC, **_PLOT,
               "proposal_sd": (float, 0.5, "initial log-tau2 random-walk sd"),
               "a_tau1": (float, 1.0, "gamma shape, 1/tau1"),
               "b_tau1": (float, 1.0, "gamma rate, 1/tau1"),
               "a_tau2": (float, 1.0, "gamma shape, tau2 power"),
               "b_tau2": (float, 1.0, "gamma rate, tau2 power")},
    "fit-pspline": {**_MCMC, **_PLOT,
                    "knots": (int, pspline.DEFAULT_INTERIOR_KNOTS, "interior knots"),
                    "nu": (float, 1.0, "lambda prior degrees of freedom"),
                    "a_delta": (float, 1.0, "delta gamma shape"),
                    "b_delta": (float, 1.0, "delta gamma rate")},
    "fit-grouped": {**_MCMC,
                    "knots": (int, 20, "interior knots"),
                    "control": (int, 0, "index of the reference group"),
                    "predict_draws": (int, 500, "draws used for burden summaries"),
                    "a_psi": (float, 1.0, "base precision gamma shape"),
                    "b_psi": (float, 1.0, "base precision gamma rate")},
    "fit-additive": {**_MCMC,
                     "knots": (int, 20, "interior knots per predictor"),
                     "grid_size": (int, 50, "points per predictor effect curve"),
                     "predict_draws": (int, 500, "draws used for effect curves"),
                     "a_psi": (float, 1.0, "base precision gamma shape"),
                     "b_psi": (float, 1.0, "base precision gamma rate")},
    "simulate": {"scenario": (str, "1", "1-4, 'grouped' or 'additive'"),
                 "n": (int, 0, "equispaced subsample size (0 keeps the full grid)"),
                 "subjects": (int, 30, "subjects for functional data"),
                 "times": (int, 60, "time points per subject"),
                 "rho": (float, 0.6, "AR(1) correlation for additive data"),
                 "seed": (int, 0, "random seed")},
    "benchmark": {"scenario": (str, "1,2,3,4", "comma-separated scenario ids"),
                  "methods": (str, ",".join(simbench.METHODS), "comma-separated methods"),
                  "n": (str, ",".join(map(str, simbench.SAMPLE_SIZES)), "comma-separated sizes"),
                  "replicates": (int, 50, "replicates per scenario"),
                  "iters": (int, 2000, "MCMC iterations per fit"),
                  "burnin": (int, 500, "burn-in per fit"),
                  "thin": (int, 1, "thinning per fit"),
                  "predict_draws": (int, 300, "draws used for the median path"),
                  "workers": (int, 0, "worker processes (0 reads COUNTPROC_THREADS)"),
                  "seed": (int, 0, "random seed")},
    "summarize": {},
}
_NEEDS_INPUT = {"fit-gp", "fit-pspline", "fit-grouped", "fit-additive", "summarize"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="countproc", description="Rounded stochastic-process models for counts.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, opts in _OPTIONS.items():
        p = sub.add_parser(name)
        if name in _NEEDS_INPUT:
            p.add_argument("--input", required=True,
                           help="draws CSV" if name == "summarize" else "data CSV")
        p.add_argument("--output-dir", default=".", help="directory for output tables")
        if opts:
            p.add_argument("--config", help="flat key = value settings file")
        for key, (typ, _, help_) in opts.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=help_)
    return parser


def read_config_file(path, allowed):
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        typ = allowed[key][0]
        try:
            out[key] = typ(value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return out


def resolve_settings(command, args):
    opts = _OPTIONS[command]
    settings = {k: d for k, (_, d, _) in opts.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config, opts))
    for k in opts:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def _meta(command, settings, model=None):
    m = {"command": command, "seed": settings.get("seed", 0),
         "config_hash": config_hash({"command": command, **settings})}
    if model:
        m["model"] = model
    return m


def _interval_rows(grid, counts):
    med = np.quantile(counts, 0.5, axis=0, method="inverted_cdf")
    lo = np.quantile(counts, 0.025, axis=0, method="inverted_cdf")
    hi = np.quantile(counts, 0.975, axis=0, method="inverted_cdf")
    return [[float(g), int(a), int(b), int(c)] for g, a, b, c in zip(grid, med, lo, hi)]


_PLOT_COLUMNS = ["grid", "median", "lower_2.5", "upper_97.5"]


def _write_fit_outputs(out, store, meta, grid, counts):
    write_draws(out / "draws.csv", store, meta)
    write_table(out / "summary.csv", *summarize_draws(store), meta)
    write_table(out / "plot.csv", _PLOT_COLUMNS, _interval_rows(grid, counts), meta)


def _plot_grid(locations, size):
    s = np.asarray(locations, dtype=float).reshape(-1)
    return np.linspace(s.min(), s.max(), size)


def _cmd_fit_gp(args, st, out):
    data = parse_count_series_csv(args.input)
    if np.ndim(data.locations) > 1 and np.shape(data.locations)[1] > 1:
        raise DomainError("plot output supports one-dimensional locations only")
    priors = gp.GpPriors(st["a_tau1"], st["b_tau1"], st["a_tau2"], st["b_tau2"])
    cfg = gp.GpFitConfig(st["iters"], st["burnin"], st["thin"], st["proposal_sd"], seed=st["seed"])
    rng = make_rng(st["seed"])
    store = gp.gp_fit(data, priors, cfg, rng)
    meta = _meta("fit-gp", st, "rgp")
    grid = _plot_grid(data.locations, st["grid_size"])
    pred = gp.gp_predict(store, grid, rng, max_draws=st["predict_draws"])
    _write_fit_outputs(out, store, meta, grid, pred.counts)


def _cmd_fit_pspline(args, st, out):
    data = parse_count_series_csv(args.input)
    basis = pspline.default_basis(data.locations, st["knots"])
    cfg = pspline.PsplineFitConfig(st["iters"], st["burnin"], st["thin"], st["nu"], st["a_delta"],
                                   st["b_delta"], seed=st["seed"])
    rng = make_rng(st["seed"])
    store = pspline.rpspline_fit(data, basis, config=cfg, rng=rng)
    meta = _meta("fit-pspline", st, "rps")
    grid = _plot_grid(data.locations, st["grid_size"])
    pred = pspline.rpspline_predict(store, grid, rng, max_draws=st["predict_draws"])
    _write_fit_outputs(out, store, meta, grid, pred.counts)


def _hier_config(st):
    return hier.HierConfig(n_iter=st["iters"], burn_in=st["burnin"], thin=st["thin"],
                           n_interior_knots=st["knots"], a_psi=st["a_psi"], b_psi=st["b_psi"],
                           seed=st["seed"])


def _cmd_fit_grouped(args, st, out):
    data = parse_functional_csv(args.input)
    if data.groups is None:
        raise DomainError("fit-grouped needs a 'group' column")
    if not 0 <= st["control"] < data.n_groups:
        raise DomainError(f"control group index {st['control']} out of range")
    store = hier.fit_grouped(data, _hier_config(st), make_rng(st["seed"]))
    meta = _meta("fit-grouped", st, "grouped")
    write_draws(out / "draws.csv", store, meta)
    summ = hier.group_burden_summaries(store, data, control=st["control"],
                                       max_draws=st["predict_draws"])
    labels = data.group_labels
    rows = [[labels[s["group"]], s["average_mean"], s["average_lo"], s["average_hi"],
             "none" if s["onset"] is None else s["onset"]] for s in summ]
    write_table(out / "summary.csv", ["group", "average_burden", "lower_2.5", "upper_97.5", "onset"],
                rows, meta)
    plot = []
    for s in summ:
        for k, w in enumerate(s["weeks"]):
            plot.append([labels[s["group"]], w, s["burden_mean"][k], s["burden_lo"][k],
                         s["burden_hi"][k], s["cumulative_mean"][k], s["contrast_lo"][k],
                         s["contrast_hi"][k]])
    write_table(out / "plot.csv", ["group", "grid", "burden_mean", "lower_2.5", "upper_97.5",
                                   "cumulative_mean", "contrast_lower_2.5", "contrast_upper_97.5"],
                plot, meta)


def _cmd_fit_additive(args, st, out):
    data = parse_functional_csv(args.input)
    store = hier.fit_additive_ar1(data, _hier_config(st), make_rng(st["seed"]))
    meta = _meta("fit-additive", st, "additive")
    write_draws(out / "draws.csv", store, meta)
    write_table(out / "summary.csv", *summarize_draws(store), meta)
    plot = []
    for j in range(data.covariates.shape[1]):
        x = data.covariates[:, j]
        grid = np.linspace(x.min(), x.max(), st["grid_size"])
        c = hier.predictor_effect_curve(store, j, grid, max_draws=st["predict_draws"])
        for k in range(grid.size):
            plot.append([f"x{j + 1}", grid[k], c["mean"][k], c["lo"][k], c["hi"][k]])
    write_table(out / "plot.csv", ["predictor", "grid", "mean", "lower_2.5", "upper_97.5"], plot, meta)


def _cmd_simulate(args, st, out):
    rng = make_rng(st["seed"])
    meta = _meta("simulate", st)
    sc = st["scenario"]
    if sc in ("grouped", "additive"):
        if sc == "grouped":
            ds, _ = hier.simulate_grouped(rng, st["subjects"], st["times"])
        else:
            ds, _ = hier.simulate_additive(rng, st["subjects"], st["times"], rho=st["rho"])
        cols = ["subject", "s", "y"]
        if ds.groups is not None:
            cols.append("group")
        if ds.covariates is not None:
            cols += [f"x{j + 1}" for j in range(ds.covariates.shape[1])]
        rows = []
        for r in range(len(ds)):
            i = int(ds.subject[r])
            row = [str(i), ds.times[r], int(ds.counts[r])]
            if ds.groups is not None:
                row.append(str(int(ds.groups[i])))
            if ds.covariates is not None:
                row += list(ds.covariates[r])
            rows.append(row)
        write_table(out / "data.csv", cols, rows, meta)
        return
    try:
        scenario = int(sc)
    except ValueError:
        raise UsageError(f"unknown scenario {sc!r}") from None
    series = simbench.generate(scenario, rng)
    write_table(out / "truth.csv", ["s", "y"], zip(series.locations, series.counts), meta)
    if st["n"]:
        series = simbench.subsample_equispaced(series, st["n"])
    write_table(out / "data.csv", ["s", "y"], zip(series.locations, series.counts), meta)


def _int_list(text, name):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--{name} must be a comma-separated list of integers") from None


def _cmd_benchmark(args, st, out):
    mcmc = simbench.McmcSettings(st["iters"], st["burnin"], st["thin"], st["predict_draws"])
    methods = tuple(m.strip().lower() for m in st["methods"].split(",") if m.strip())
    cfg = simbench.BenchmarkConfig(_int_list(st["scenario"], "scenario"), methods,
                                   _int_list(st["n"], "n"), st["replicates"], mcmc)
    table = simbench.run_benchmark(cfg, st["seed"], workers=st["workers"] or None)
    meta = _meta("benchmark", st)
    write_table(out / "benchmark.csv", ["scenario", "method", "n", "mean_mad", "sd_mad", "replicates"],
                [[r[0], simbench.METHOD_LABELS[r[1]], r[2], r[3], r[4], r[5]] for r in table.rows], meta)
    write_table(out / "replicates.csv", ["scenario", "method", "n", "replicate", "mad", "seed"],
                [[r.scenario, simbench.METHOD_LABELS[r.method], r.n, r.replicate, r.mad, r.seed]
                 for r in table.records], meta)


def _cmd_summarize(args, st, out):
    store = read_draws(args.input)
    meta = {"command": "summarize", **{k: store.meta[k] for k in ("model", "seed", "config_hash")
                                       if k in store.meta}}
    write_table(out / "summary.csv", *summarize_draws(store), meta)


_COMMANDS = {
    "fit-gp": _cmd_fit_gp, "fit-pspline": _cmd_fit_pspline, "fit-grouped": _cmd_fit_grouped,
    "fit-additive": _cmd_fit_additive, "simulate": _cmd_simulate, "benchmark": _cmd_benchmark,
    "summarize": _cmd_summarize,
}


def cli_dispatch(argv):
    """Run one subcommand; returns 0 on success, 1 on runtime errors, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        settings = resolve_settings(args.command, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](args, settings, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ParseError, OSError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
