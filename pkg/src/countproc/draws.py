"""In-memory container for MCMC output."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


def config_hash(config):
    """Short stable hash of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DrawStore:
    """Post-burn-in, thinned draws keyed by parameter name.

    ``draws[name]`` has the stored iteration on its first axis. ``fixed``
    holds data the model needs for prediction (locations, counts, bases);
    ``meta`` holds scalars such as the seed, config hash and model name.
    """

    draws: dict = field(default_factory=dict)
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.iterations.shape[0])

    def __getitem__(self, name):
        return self.draws[name]

    def thin_to(self, max_draws):
        """Evenly spaced subset of at most ``max_draws`` stored draws."""
        n = len(self)
        if max_draws is None or n <= max_draws:
            return self
        idx = np.unique(np.linspace(0, n - 1, max_draws).round().astype(int))
        return DrawStore({k: v[idx] for k, v in self.draws.items()}, self.iterations[idx],
                         self.fixed, dict(self.meta))


class DrawRecorder:
    """Collects draws after burn-in at the configured thinning."""

    def __init__(self, n_iter, burn_in, thin):
        if burn_in >= n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        if thin < 1:
            raise ValueError("thin must be >= 1")
        self.n_iter, self.burn_in, self.thin = n_iter, burn_in, thin
        self._rows = {}
        self._iters = []

    def wants(self, it):
        return it >= self.burn_in and (it - self.burn_in) % self.thin == 0

    def record(self, it, **values):
        self._iters.append(it)
        for k, v in values.items():
            self._rows.setdefault(k, []).append(np.array(v, dtype=float, copy=True))

    def store(self, fixed=None, meta=None):
        draws = {k: np.stack(v) for k, v in self._rows.items()}
        return DrawStore(draws, np.asarray(self._iters, dtype=np.int64), fixed or {}, meta or {})
