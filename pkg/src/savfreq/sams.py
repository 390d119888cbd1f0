"""SAV feeder performance: wait-time curve, utilization and the fixed point that
couples feeder wait with route choice, mode choice and loading."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .choice import ModeSplit, mode_split, transit_utility
from .graph import (
    UNREACHABLE,
    LinkFlows,
    MultimodalGraph,
    PathResult,
    assign_flows,
    shortest_paths_from,
    update_costs,
)
from .scenario import SamsParams, Scenario, Solution

ODK = tuple[int, int, int]


def wait_time(rho: float, sp: SamsParams) -> float:
    """Average feeder wait (minutes) as a piecewise-linear function of utilization."""
    if rho <= sp.cutoff_lo:
        return sp.min_wait_min
    if rho <= sp.cutoff_hi:
        return sp.min_wait_min + sp.slope_lo_min * (rho - sp.cutoff_lo)
    return (sp.min_wait_min + sp.slope_lo_min * (sp.cutoff_hi - sp.cutoff_lo)
            + sp.slope_hi_min * (rho - sp.cutoff_hi))


def wait_slope(rho: float, sp: SamsParams) -> float:
    if rho <= sp.cutoff_lo:
        return 0.0
    if rho <= sp.cutoff_hi:
        return sp.slope_lo_min
    return sp.slope_hi_min


def utilization(feeder_time_pax_h: float, fleet: float, occupancy: float) -> float:
    """Feeder passenger-hours per unit of fleet capacity.

    Returns ``inf`` when there is feeder demand but no fleet; downstream this
    means every feeder rider is rejected.
    """
    if feeder_time_pax_h <= 0.0:
        return 0.0
    if fleet <= 0.0:
        return math.inf
    return feeder_time_pax_h / (occupancy * fleet)


def routing_wait(rho: float, sp: SamsParams) -> float:
    """Wait used on feeder edges: the curve value capped at the maximum wait."""
    if math.isinf(rho):
        return sp.max_wait_min
    return min(wait_time(rho, sp), sp.max_wait_min)


def approximate_wait(rho: float, w_ref: float, w_start: float, sc: Scenario,
                     max_iter: int = 50, tol: float = 0.01) -> float:
    """Solve ``x = wait(rho * exp(beta_time * wait_factor * (x - w_ref)))``.

    Utilization responds to a wait change through logit demand, anchored at the
    current ``(rho, w_ref)``. The right-hand side is nonincreasing in ``x``, so the
    root is unique and lies in ``[W, g(W)]``; the iteration is a fixed-point step
    damped by ``1 / (1 - g'(x))`` and safeguarded by that bracket.
    """
    sp = sc.sams
    if rho <= 0.0:
        return sp.min_wait_min
    if math.isinf(rho):
        return sp.max_wait_min
    b = sc.choice.beta_time * sc.choice.wait_factor

    def g(x: float) -> tuple[float, float]:
        r = rho * math.exp(b * (x - w_ref))
        val = wait_time(r, sp)
        if val >= sp.max_wait_min:
            return sp.max_wait_min, 0.0
        return val, wait_slope(r, sp) * r * b

    lo = sp.min_wait_min
    hi = g(lo)[0]
    x = min(max(w_start, lo), hi)
    for _ in range(max_iter):
        gx, dg = g(x)
        h = x - gx
        if abs(h) <= tol:
            break
        if h < 0:
            lo = x
        else:
            hi = x
        x_new = x - h / (1.0 - dg)
        # flat curve pieces send the step onto a bracket end; bisect instead
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        x = x_new
    return x


@dataclass
class AssignmentState:
    """One pass of route choice, mode choice and loading at fixed feeder waits."""

    wait_used: np.ndarray
    paths: dict[ODK, PathResult]
    splits: dict[ODK, ModeSplit]
    transit_q: dict[ODK, float]
    flows: LinkFlows
    utilization: np.ndarray
    wait_calc: np.ndarray


@dataclass
class FixedPointResult:
    wait_min: np.ndarray
    utilization: np.ndarray
    iterations: int
    converged: bool
    final_split: dict[ODK, ModeSplit]
    final_flows: LinkFlows
    paths: dict[ODK, PathResult]
    transit_q: dict[ODK, float]
    wait_calc: np.ndarray
    wait_history: list[np.ndarray]
    final_state: AssignmentState
    previous_state: AssignmentState | None  # pass before the final one, if any


def assignment_pass(sc: Scenario, g: MultimodalGraph, sol: Solution, wait: np.ndarray) -> AssignmentState:
    """Route, split and load every OD at feeder waits ``wait``, then recompute
    utilization and the implied wait."""
    n_k = sc.n_periods
    cp = sc.choice
    by_origin: dict[tuple[int, int], list] = {}
    for d in sc.demand:
        if d.trips_per_h > 0.0:
            by_origin.setdefault((d.period, d.origin), []).append(d)

    paths: dict[ODK, PathResult] = {}
    splits: dict[ODK, ModeSplit] = {}
    transit_q: dict[ODK, float] = {}
    overlays = [update_costs(g, sol.freq, wait, k) for k in range(n_k)]
    for (k, o) in sorted(by_origin):
        reach = shortest_paths_from(g, overlays[k], o)
        for d in by_origin[(k, o)]:
            pr = reach.get(d.destination, UNREACHABLE)
            u_t = transit_utility(pr.generalized_cost_min, d.transit_fare, cp) if pr.reachable else -math.inf
            ms = mode_split(d.trips_per_h, u_t, d.p2p_sams_utility, d.drive_utility)
            key = (o, d.destination, k)
            paths[key] = pr
            splits[key] = ms
            transit_q[key] = ms.transit_trips_per_h

    flows = assign_flows(g, transit_q, paths, n_k)
    rho = np.array([utilization(flows.feeder_time_h[k], sol.fleet[k], sc.sams.avg_occupancy) for k in range(n_k)])
    w_calc = np.array([routing_wait(r, sc.sams) for r in rho])
    return AssignmentState(np.asarray(wait, dtype=float).copy(), paths, splits, transit_q, flows, rho, w_calc)


def fixed_point(sc: Scenario, g: MultimodalGraph, sol: Solution) -> FixedPointResult:
    """Iterate feeder waits to a fixed point with assignment.

    Each outer iteration routes and loads at the current waits, computes the
    implied waits from utilization, refines them with the demand-elastic scalar
    approximation and blends the two with the configured step sizes. Iteration
    stops once the implied wait is within ``fp_tol_min`` of the wait used for
    routing (which also bounds the blended update), or after ``fp_max_outer``
    passes with ``converged=False``.

    Periods without fleet route at the maximum wait throughout and are left
    out of the convergence test; their feeder riders are rejected downstream.
    All-or-nothing loading can make the
    iteration cycle (riders leave the feeder once its wait rises, which drops
    the wait again); the last two passes are returned so callers can score a
    non-converged cycle conservatively.
    """
    sp = sc.sams
    n_k = sc.n_periods
    pinned = np.asarray(sol.fleet) <= 0.0
    w = np.where(pinned, sp.max_wait_min, sp.min_wait_min)
    history = [w.copy()]
    converged = False
    it = 0
    st = None
    prev = None
    for it in range(1, sp.fp_max_outer + 1):
        prev = st
        st = assignment_pass(sc, g, sol, w)
        if np.all((np.abs(st.wait_calc - w) <= sp.fp_tol_min) | pinned):
            converged = True
            break
        w_hat = np.array([approximate_wait(st.utilization[k], w[k], st.wait_calc[k], sc) for k in range(n_k)])
        w = np.where(pinned, sp.max_wait_min, sp.fp_step_approx * w_hat + sp.fp_step_calc * st.wait_calc)
        history.append(w.copy())
    assert st is not None
    return FixedPointResult(
        wait_min=st.wait_used,
        utilization=st.utilization,
        iterations=it,
        converged=converged,
        final_split=st.splits,
        final_flows=st.flows,
        paths=st.paths,
        transit_q=st.transit_q,
        wait_calc=st.wait_calc,
        wait_history=history,
        final_state=st,
        previous_state=prev,
    )
