import math

import numpy as np
import pytest

from polymerlab.disorder import DisorderLaw, EnvironmentField, sample_seed
from polymerlab.partition import free_energy_pass, truncation_radius


@pytest.fixture(scope="session")
def free_energy_samples():
    """Cached (log Zhat_N, overlaps) for gaussian disorder at radius ceil(5 sqrt N)."""
    cache = {}

    def get(N, beta=1.2, samples=200, seed=2024):
        key = (N, beta, samples, seed)
        if key not in cache:
            env = EnvironmentField(DisorderLaw(), sample_seed(seed, np.arange(samples)), N, N)
            cache[key] = free_energy_pass(env, beta, N, min(N, truncation_radius(N)))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def free_energy_ladder(free_energy_samples):
    """N -> (-(1/N) mean log Zhat_N, stderr) at beta = 1.2 for N = 64..512."""
    out = {}
    for N in (64, 128, 256, 512):
        lz, _ = free_energy_samples(N)
        g = -lz / N
        out[N] = (float(g.mean()), float(g.std(ddof=1) / math.sqrt(g.size)))
    return out
