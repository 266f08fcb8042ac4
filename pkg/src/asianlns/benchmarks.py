"""The seven standard benchmark parameterizations and their reference data.

The cases (ordered by increasing tau = sigma^2 T) are a widely used test
set for arithmetic Asian option pricers; reference prices from published
implementations of several methods ship as fixture data for comparison
reporting.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .model import MarketParams


@lru_cache(maxsize=1)
def reference_data() -> dict:
    """Raw fixture data: per-case parameters and external reference prices."""
    with resources.files("asianlns.data").joinpath("reference_prices.json").open() as fh:
        return json.load(fh)


@lru_cache(maxsize=1)
def benchmark_cases() -> tuple:
    """The seven benchmark markets as MarketParams, in case order."""
    data = reference_data()
    k = data["strike"]
    return tuple(MarketParams(r=c["r"], sigma=c["sigma"], T=c["T"], S0=c["S0"], K=k)
                 for c in data["cases"])


def reference_case(case: int) -> dict:
    """Reference row (1-based case index)."""
    for row in reference_data()["cases"]:
        if row["case"] == case:
            return row
    raise KeyError(f"no benchmark case {case}")
