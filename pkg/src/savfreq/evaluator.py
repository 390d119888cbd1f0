"""Fitness of a Solution: fixed point, boarding rejections, served demand,
operating cost and budget repair."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import LinkFlows, MultimodalGraph, PathResult, build_graph
from .sams import ODK, AssignmentState, fixed_point
from .scenario import Scenario, Solution

__all__ = [
    "EvalResult",
    "GridTooLarge",
    "Solution",
    "brute_force",
    "evaluate",
    "operating_cost",
    "repair",
    "sams_rejection",
    "transit_rejection",
]

GRID_LIMIT = 10**7


class GridTooLarge(ValueError):
    pass


@dataclass
class EvalResult:
    solution: Solution
    objective: float  # day-weighted served demand, persons/day
    served_per_period: np.ndarray  # persons/h per period
    demand_per_period: np.ndarray  # total OD demand, persons/h
    transit_per_period: np.ndarray  # logit transit demand, persons/h
    transit_demand: dict[ODK, float]
    rejection_transit: np.ndarray  # (P, K)
    rejection_sams: np.ndarray  # (P, K)
    wait_min: np.ndarray
    utilization: np.ndarray
    flows: LinkFlows
    cost: float
    feasible: bool
    path_meta: dict[ODK, PathResult]
    converged: bool
    fp_iterations: int

    @property
    def rejected_per_period(self) -> np.ndarray:
        return np.maximum(self.rejection_transit, self.rejection_sams).sum(axis=0)


def transit_rejection(peak_flow: float, capacity_per_veh: float, f: float) -> float:
    return max(0.0, peak_flow - capacity_per_veh * f)


def sams_rejection(rho: float, feeder_flow_sum: float) -> float:
    """Feeder riders beyond fleet capacity: ``(1 - 1/rho)`` of the feeder flow."""
    if feeder_flow_sum <= 0.0:
        return 0.0
    if math.isinf(rho):
        return feeder_flow_sum
    if rho <= 0.0:
        return 0.0
    return max(0.0, (1.0 - 1.0 / rho) * feeder_flow_sum)


def operating_cost(sol: Solution, sc: Scenario) -> float:
    """Daily operating cost: per-period duration times transit plus SAV vehicle-hours."""
    transit = sc.pattern_hourly_cost() @ sol.freq if sc.n_patterns else np.zeros(sc.n_periods)
    per_period = transit + sc.sams.unit_op_cost * sol.fleet
    return float(sc.durations @ per_period)


def _sav_cost(fleet: np.ndarray, sc: Scenario) -> float:
    return float(sc.durations @ (sc.sams.unit_op_cost * fleet))


def repair(sol: Solution, sc: Scenario) -> Solution:
    """Clamp to the boxes and restore the daily budget.

    Fleet cost takes priority; the remaining budget bounds transit, whose
    frequencies are scaled down by a single common factor when over. Never
    scales up.
    """
    budget = sc.budget.daily_budget
    fleet = np.clip(sol.fleet, 0.0, sc.fleet_upper)
    freq = np.clip(sol.freq, 0.0, sc.freq_upper) if sc.n_patterns else sol.freq.copy()
    sav = _sav_cost(fleet, sc)
    if sav > budget:
        fleet = _shrink(fleet, lambda x: _sav_cost(x, sc), budget, 0.0)
        freq = np.zeros_like(freq)
    elif operating_cost(Solution(freq, fleet), sc) > budget:
        freq = _shrink(freq, lambda x: operating_cost(Solution(x, fleet), sc), budget, sav)
    return Solution(freq, fleet)


def _shrink(x: np.ndarray, cost_fn, limit: float, fixed: float) -> np.ndarray:
    """Scale ``x`` by one factor so that ``cost_fn`` (linear in ``x`` plus ``fixed``)
    is at most ``limit``, stepping the factor down past rounding error."""
    factor = max(limit - fixed, 0.0) / (cost_fn(x) - fixed)
    y = x * factor
    while cost_fn(y) > limit and factor > 0.0:
        factor = np.nextafter(factor, 0.0)
        y = x * factor
    return y


def _score(st: AssignmentState, sol: Solution, sc: Scenario):
    n_k, n_p = sc.n_periods, sc.n_patterns
    cap = sc.pattern_capacity()
    r_tau = np.zeros((n_p, n_k))
    r_chi = np.zeros((n_p, n_k))
    for k in range(n_k):
        for p in range(n_p):
            r_tau[p, k] = transit_rejection(st.flows.peak[p, k], cap[p], sol.freq[p, k])
            r_chi[p, k] = sams_rejection(st.utilization[k], st.flows.feeder_flow[p, k])
    transit = np.zeros(n_k)
    for (o, d, k), q in st.transit_q.items():
        transit[k] += q
    served = transit - np.maximum(r_tau, r_chi).sum(axis=0)
    return float(sc.durations @ served), served, transit, r_tau, r_chi


def evaluate(sol: Solution, sc: Scenario, g: MultimodalGraph) -> EvalResult:
    """Full evaluation. The objective is served demand summed over periods,
    weighted by period duration.

    If the fixed point does not converge, the worse of its last two passes is
    reported, so a cycling assignment never scores on its optimistic half.
    """
    fp = fixed_point(sc, g, sol)
    st = fp.final_state
    scored = _score(st, sol, sc)
    if not fp.converged and fp.previous_state is not None:
        alt = _score(fp.previous_state, sol, sc)
        if alt[0] < scored[0]:
            st, scored = fp.previous_state, alt
    objective, served, transit, r_tau, r_chi = scored
    demand = np.zeros(sc.n_periods)
    for d in sc.demand:
        demand[d.period] += d.trips_per_h
    cost = operating_cost(sol, sc)
    return EvalResult(
        solution=sol,
        objective=objective,
        served_per_period=served,
        demand_per_period=demand,
        transit_per_period=transit,
        transit_demand=st.transit_q,
        rejection_transit=r_tau,
        rejection_sams=r_chi,
        wait_min=st.wait_used,
        utilization=st.utilization,
        flows=st.flows,
        cost=cost,
        feasible=cost <= sc.budget.daily_budget,
        path_meta=st.paths,
        converged=fp.converged,
        fp_iterations=fp.iterations,
    )


def grid_size(sc: Scenario, freq_grid: Sequence[float], fleet_grid: Sequence[float]) -> int:
    return len(freq_grid) ** (sc.n_patterns * sc.n_periods) * len(fleet_grid) ** sc.n_periods


def iter_grid(sc: Scenario, freq_grid: Sequence[float], fleet_grid: Sequence[float]):
    n_p, n_k = sc.n_patterns, sc.n_periods
    for fs in itertools.product(freq_grid, repeat=n_p * n_k):
        for ss in itertools.product(fleet_grid, repeat=n_k):
            yield Solution(np.array(fs, dtype=float).reshape(n_p, n_k), np.array(ss, dtype=float))


def brute_force(
    sc: Scenario,
    freq_grid: Sequence[float],
    fleet_grid: Sequence[float],
    g: MultimodalGraph | None = None,
    table: list | None = None,
) -> tuple[Solution, EvalResult]:
    """Exhaustive grid search (test oracle).

    Every grid point is repaired before evaluation. The best objective wins;
    ties go to lower cost, then to the lexicographically smaller vector. When
    ``table`` is given, one ``(grid point, repaired solution, result)`` row is
    appended per evaluation.
    """
    n = grid_size(sc, freq_grid, fleet_grid)
    if n > GRID_LIMIT:
        raise GridTooLarge(f"grid has {n} points, limit is {GRID_LIMIT}")
    g = g if g is not None else build_graph(sc)
    best: tuple | None = None
    for point in iter_grid(sc, freq_grid, fleet_grid):
        sol = repair(point, sc)
        res = evaluate(sol, sc, g)
        if table is not None:
            table.append((point, sol, res))
        key = (-res.objective, res.cost, tuple(sol.to_vector()))
        if best is None or key < best[0]:
            best = (key, sol, res)
    assert best is not None
    return best[1], best[2]


# --------------------------------------------------------------------------- #
# CSV export
# --------------------------------------------------------------------------- #


def write_tables(res: EvalResult, sc: Scenario, out_dir: str | Path) -> None:
    """Write ``served.csv``, ``patterns.csv`` and ``sams.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rejected = res.rejected_per_period
    with open(out / "served.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "demand", "served", "rejected"])
        for k in range(sc.n_periods):
            w.writerow([k, repr(float(res.demand_per_period[k])), repr(float(res.served_per_period[k])),
                        repr(float(rejected[k]))])
    with open(out / "patterns.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "k", "f", "peak", "r_tau", "r_chi"])
        for p in range(sc.n_patterns):
            for k in range(sc.n_periods):
                w.writerow([p, k, repr(float(res.solution.freq[p, k])), repr(float(res.flows.peak[p, k])),
                            repr(float(res.rejection_transit[p, k])), repr(float(res.rejection_sams[p, k]))])
    with open(out / "sams.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "s", "rho", "wait"])
        for k in range(sc.n_periods):
            w.writerow([k, repr(float(res.solution.fleet[k])), repr(float(res.utilization[k])),
                        repr(float(res.wait_min[k]))])
