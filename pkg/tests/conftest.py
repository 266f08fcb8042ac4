"""Shared fixtures: benchmark markets and a session-level simulation cache."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from asianlns import McConfig, benchmark_cases, simulate


@pytest.fixture(scope="session")
def cases():
    """The seven benchmark markets, 1-based access via cases[i]."""
    return {i: m for i, m in enumerate(benchmark_cases(), start=1)}


@pytest.fixture(scope="session")
def sim_cache():
    """Memoized path simulations keyed by (market, config, stream)."""
    cache = {}

    def get(market, config: McConfig, stream: int = 0):
        key = (market, config, stream)
        if key not in cache:
            cache[key] = simulate(market, config, stream=stream)
        return cache[key]

    return get


#: full verification budget (200k paths at a 1e-3 step, as in the
#: published benchmark intervals)
FULL_MC = McConfig(paths=200_000, dt=1e-3, seed=42)

#: lighter budget for unit-level statistical checks
LIGHT_MC = McConfig(paths=65_536, dt=5e-3, seed=11)


@pytest.fixture(scope="session")
def full_mc():
    return FULL_MC


@pytest.fixture(scope="session")
def light_mc():
    return LIGHT_MC
