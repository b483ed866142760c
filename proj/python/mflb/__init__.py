"""Multifractal-aware load balancing: traffic synthesis, MF-DFA, queue simulation."""

import json as _json

from . import _core
from ._core import (
    analytic_binomial_h,
    effective_bandwidth,
    fit_loglog,
    forecast_util,
    gen_binomial_cascade,
    gen_fgn,
    jain_index,
    mfdfa,
    sliding_window_starts,
    window_count,
)

__all__ = [
    "analytic_binomial_h",
    "cli",
    "compare",
    "effective_bandwidth",
    "fit_loglog",
    "forecast_util",
    "gen_binomial_cascade",
    "gen_fgn",
    "jain_index",
    "mfdfa",
    "run_scenario",
    "sliding_window_starts",
    "window_count",
]


def _as_text(scenario):
    return scenario if isinstance(scenario, str) else _json.dumps(scenario)


def run_scenario(scenario, seed=None, algorithm=None):
    """Runs a scenario (JSON text or dict) and returns the metrics report as a dict."""
    return _json.loads(_core.run_scenario(_as_text(scenario), seed, algorithm))


def compare(scenario, algorithms, seeds):
    """Mean/stddev per algorithm and metric over paired seeds."""
    return _core.compare(_as_text(scenario), list(algorithms), list(seeds))


def cli(args):
    """Runs the command-line tool in-process; returns the exit status."""
    return _core.cli(list(args))
