"""Approachability with constraints: strategies, simulation and checks for repeated vector-payoff games."""

from .game import VectorPayoffGame, check_conditions, check_convex_approachable, find_safe_actions, safety_gap
from .scenarios import SCENARIO_NAMES, Scenario, build_scenario
from .simulate import MonteCarloReport, RunTrace, fit_rate, monte_carlo, run, safe_frequency_growth

__all__ = [
    "MonteCarloReport",
    "RunTrace",
    "SCENARIO_NAMES",
    "Scenario",
    "VectorPayoffGame",
    "build_scenario",
    "check_conditions",
    "check_convex_approachable",
    "find_safe_actions",
    "fit_rate",
    "monte_carlo",
    "run",
    "safe_frequency_growth",
    "safety_gap",
]
