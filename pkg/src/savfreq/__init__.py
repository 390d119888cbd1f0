"""Joint transit frequency setting and SAV feeder fleet sizing.

A hybrid of particle swarm search and a local smooth sub-problem, evaluated by
a fixed point between feeder wait times, route choice and logit mode choice.
"""

from .evaluator import EvalResult, brute_force, evaluate, operating_cost, repair
from .graph import build_graph
from .local_nlp import extract_reference, solve_local, sub_objective
from .pso import run_hybrid
from .scenario import Scenario, ScenarioError, Solution, load_scenario

__all__ = [
    "EvalResult",
    "Scenario",
    "ScenarioError",
    "Solution",
    "brute_force",
    "build_graph",
    "evaluate",
    "extract_reference",
    "load_scenario",
    "operating_cost",
    "repair",
    "run_hybrid",
    "solve_local",
    "sub_objective",
]
