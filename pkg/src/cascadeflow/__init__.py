"""Steady-state cascading-outage simulation with infeasibility currents."""

from pathlib import Path

from .cascade import CascadeParams, CascadeReport, Outcome, check_limits, run_cascade
from .network import ContingencyEvent, Network, find_islands, load_case, parse_case, scale_loading, validate
from .stage1 import SolverOptions, solve_island

CASES_DIR = Path(__file__).with_name("cases")


def case_path(name: str) -> Path:
    """Path of a bundled fixture, e.g. ``case_path("ieee14")``."""
    path = CASES_DIR / f"{name}.json"
    if not path.exists():
        known = sorted(p.stem for p in CASES_DIR.glob("*.json"))
        raise FileNotFoundError(f"no bundled case {name!r}; available: {', '.join(known)}")
    return path


__all__ = [
    "CASES_DIR", "CascadeParams", "CascadeReport", "ContingencyEvent", "Network", "Outcome", "SolverOptions",
    "case_path", "check_limits", "find_islands", "load_case", "parse_case", "run_cascade", "scale_loading",
    "solve_island", "validate",
]
