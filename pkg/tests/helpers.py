"""Independent generators shared by several test modules."""

import numpy as np
from scipy.spatial.distance import cdist

from evtradio.evt import XI_SWITCH, TailModel


def gudmundson_field(seed, n=500, range_m=20.0, variance=1.0, noise=0.01, signal=True):
    """Points uniform over the 200 m x 130 m hall and a noisy exponential-correlation field."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(-100, 100, n), rng.uniform(-65, 65, n)])
    y = rng.normal(0.0, np.sqrt(noise), n)
    if signal:
        cov = variance * np.exp(-cdist(x, x) / range_m)
        y = y + np.linalg.cholesky(cov + 1e-10 * np.eye(n)) @ rng.standard_normal(n)
    return x, y


def random_tails(n, seed):
    rng = np.random.default_rng(seed)
    shapes = rng.uniform(-0.4, 0.6, n)
    shapes[: n // 5] = rng.uniform(-0.9, 0.9, n // 5) * XI_SWITCH  # exponential-limit branch
    return [TailModel(float(u), float(s), float(x), 0.99)
            for u, s, x in zip(rng.uniform(-3, 3, n), rng.uniform(0.05, 2.0, n), shapes)]
