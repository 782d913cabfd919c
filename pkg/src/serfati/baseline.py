"""Frozen fitted constants shared by the solver, bounds, and certifications.

Constants are fitted once at desk scale by scripts/refit_baseline.py and
shipped in data/baseline.json; runtime code only reads them. Estimate
certifications compare fresh sweep values against the stored ones and
fail on drift beyond a tolerance, which is how silent quadrature or
kernel regressions get caught.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=1)
def load_baseline() -> dict:
    with resources.files("serfati").joinpath("data/baseline.json").open() as fh:
        return json.load(fh)


def constant(name: str) -> float:
    """A fitted scalar from the baseline file, by dotted name."""
    node = load_baseline()
    for part in name.split("."):
        try:
            node = node[part]
        except (KeyError, TypeError):
            raise KeyError(f"no baseline constant {name!r}") from None
    return float(node)


def fitted_constants() -> dict:
    """The flat fitted-constant table, for run manifests."""
    return dict(load_baseline()["fitted"])


def estimate_baseline(name: str) -> dict:
    """Stored sweep record for one estimate certification."""
    table = load_baseline().get("estimates", {})
    if name not in table:
        raise KeyError(f"no baseline record for estimate {name!r}")
    return table[name]
