"""Compare the numba and pure-numpy backends on the sampler hot paths.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``COUNTPROC_DISABLE_NUMBA``. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from countproc import _kernels, backend_name
from countproc.gp import gp_fit, GpFitConfig
from countproc.rounding import CountSeries
from countproc.samplers import make_rng

repeat = int(sys.argv[1])
rng = make_rng(0)
res = {"backend": backend_name()}

n = 100_000
mu = rng.normal(size=n); sd = np.ones(n); lo = mu - 1.0; hi = mu + 0.5; u = rng.random(n)
_kernels.truncnorm_batch(mu, sd, lo, hi, u)
res["truncnorm_batch_100k"] = min(timeit.repeat(lambda: _kernels.truncnorm_batch(mu, sd, lo, hi, u), number=1, repeat=repeat))

m = 200
s = np.linspace(0, 10, m)
cov = np.exp(-0.5 * (s[:, None] - s[None, :]) ** 2) + 1e-6 * np.eye(m)
prec = np.linalg.inv(cov)
x0 = np.full(m, 0.5); lo = np.zeros(m); hi = np.ones(m); mean = np.zeros(m)
expo = float(rng.standard_exponential()); us = rng.random(m)
def sweep():
    _kernels.slice_sweep(x0.copy(), mean, prec, lo, hi, expo, us)
sweep()
res["slice_sweep_200"] = min(timeit.repeat(sweep, number=10, repeat=repeat)) / 10

e = rng.normal(size=30 * 60); starts = np.arange(0, 30 * 60 + 1, 60)
_kernels.ar1_quad_forms(e, starts, 0.6)
res["ar1_quad_30x60"] = min(timeit.repeat(lambda: _kernels.ar1_quad_forms(e, starts, 0.6), number=10, repeat=repeat)) / 10

loc = np.linspace(0, 20, 50)
data = CountSeries(loc, rng.poisson(2.0, 50))
cfg = GpFitConfig(n_iter=300, burn_in=100, seed=1)
gp_fit(data, config=GpFitConfig(n_iter=5, burn_in=1))
res["rgp_fit_n50_300it"] = min(timeit.repeat(lambda: gp_fit(data, config=cfg), number=1, repeat=max(1, repeat // 2)))
print(json.dumps(res))
"""


def run(disable, repeat):
    env = dict(os.environ, COUNTPROC_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':<22}{fast['backend'] + ' (s)':>14}{slow['backend'] + ' (s)':>14}{'speedup':>10}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<22}{fast[key]:>14.6f}{slow[key]:>14.6f}{slow[key] / fast[key]:>10.1f}")


if __name__ == "__main__":
    main()
