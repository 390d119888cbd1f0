"""Local improvement around a full evaluation.

Routes are frozen at the reference evaluation and OD demand is aggregated per
pattern. Demand responds to frequency and feeder-wait changes through
multiplicative elasticity factors derived from the logit model, and the
resulting smooth sub-problem is maximized by spectral projected gradient with a
quadratic budget penalty.

Smoothing: every ``max(0, x)`` becomes ``t*log(1+exp(x/t))`` and every
``max(a, b)`` becomes ``t*logaddexp(a/t, b/t)`` with ``t = 1/softmax_sharpness``
in persons/h. Elasticity clipping and the wait curve use their own small
temperatures (``CLAMP_TEMP``, ``RHO_TEMP``, ``WAIT_CAP_TEMP``).

The objective is weighted by period duration, like the full evaluation. Inside
``solve_local`` the feeder wait is not a free variable: for each candidate
``(f, s)`` it is the fixed point of the smoothed wait curve at the implied
utilization (floored at the local lower bound), and the gradient accounts for
that dependence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _nlp_kernels as kern
from .evaluator import EvalResult, repair
from .graph import F_MIN, EdgeKind, MultimodalGraph
from .sams import ODK
from .scenario import ChoiceParams, NlpParams, Scenario, Solution

CLAMP_TEMP = 0.01  # elasticity units
RHO_TEMP = 0.01  # utilization units
WAIT_CAP_TEMP = 0.1  # minutes
PENALTY_TOL = 1e-4  # relative budget excess at which penalty escalation stops; repair closes the rest


@dataclass(frozen=True)
class ReferenceState:
    """Frozen snapshot of one evaluation that parameterizes the sub-problem.

    The ``*_by_legs`` arrays have shape ``(P, K, 3)``; the last axis is the
    number of feeder legs (0, 1, 2) on the OD's path. Feeder hours and feeder
    leg counts are attributed to the pattern each feeder link accesses, so that
    at the reference point the aggregated utilization and feeder flows equal
    those of the full evaluation.
    """

    ref_freq: np.ndarray  # (P, K), floored at F_MIN
    ref_fleet: np.ndarray  # (K,)
    ref_wait_min: np.ndarray  # (K,)
    od_transit_demand: dict[ODK, float]
    feeder_count: dict[ODK, int]
    feeder_time: dict[ODK, float]  # minutes
    peak_demand: np.ndarray  # (P, K)
    od_to_pattern: tuple[tuple[tuple[ODK, ...], ...], ...]  # [p][k]
    demand_by_legs: np.ndarray
    feeder_hours_by_legs: np.ndarray
    feeder_flow_by_legs: np.ndarray


@dataclass
class SubSolution:
    freq: np.ndarray  # (P, K)
    fleet: np.ndarray  # (K,)
    wait: np.ndarray  # (K,) minutes

    def copy(self) -> SubSolution:
        return SubSolution(self.freq.copy(), self.fleet.copy(), self.wait.copy())


def extract_reference(res: EvalResult, sc: Scenario, g: MultimodalGraph) -> ReferenceState:
    n_p, n_k = sc.n_patterns, sc.n_periods
    dem = np.zeros((n_p, n_k, 3))
    hours = np.zeros((n_p, n_k, 3))
    legs = np.zeros((n_p, n_k, 3))
    members: list[list[list[ODK]]] = [[[] for _ in range(n_k)] for _ in range(n_p)]
    count: dict[ODK, int] = {}
    ftime: dict[ODK, float] = {}
    for key, pr in res.path_meta.items():
        q = res.transit_demand.get(key, 0.0)
        k = key[2]
        count[key] = pr.feeder_link_count
        ftime[key] = pr.feeder_time_min
        if not pr.reachable:
            continue
        i = pr.feeder_link_count
        for p in pr.patterns_used:
            members[p][k].append(key)
            dem[p, k, i] += q
        for e in pr.links_used:
            if g.kind[e] == EdgeKind.ACCESS_FEEDER:
                p = int(g.pattern[e])
                hours[p, k, i] += q * g.feeder_ride_min[e] / 60.0
                legs[p, k, i] += q
    return ReferenceState(
        ref_freq=np.maximum(res.solution.freq, F_MIN),
        ref_fleet=res.solution.fleet.copy(),
        ref_wait_min=np.asarray(res.wait_min, dtype=float).copy(),
        od_transit_demand=dict(res.transit_demand),
        feeder_count=count,
        feeder_time=ftime,
        peak_demand=res.flows.peak.copy(),
        od_to_pattern=tuple(tuple(tuple(m) for m in row) for row in members),
        demand_by_legs=dem,
        feeder_hours_by_legs=hours,
        feeder_flow_by_legs=legs,
    )


def elasticity_transit(f, F_ref, cp: ChoiceParams, nlp: NlpParams):
    """Demand factor for a frequency change from ``F_ref`` to ``f`` (headways in minutes)."""
    f = np.maximum(np.asarray(f, dtype=float), F_MIN)
    F_ref = np.maximum(np.asarray(F_ref, dtype=float), F_MIN)
    a = cp.beta_time * cp.wait_factor / 2.0
    return np.clip(np.exp(a * (60.0 / f - 60.0 / F_ref)), nlp.elasticity_lo, nlp.elasticity_hi)


def elasticity_feeder(u, U_ref, i: int, cp: ChoiceParams, nlp: NlpParams):
    """Demand factor for ``i`` feeder legs when the feeder wait moves from ``U_ref`` to ``u``."""
    y = np.exp(i * cp.beta_time * cp.wait_factor * (np.asarray(u, dtype=float) - U_ref))
    return np.clip(y, nlp.elasticity_lo, nlp.elasticity_hi)


class _Problem:
    """Packed constants of one sub-problem."""

    def __init__(self, ref: ReferenceState, sc: Scenario):
        cp, nlp, sp = sc.choice, sc.solver.nlp, sc.sams
        self.n_p, self.n_k = ref.ref_freq.shape
        data = np.empty((kern.N_DATA,) + ref.ref_freq.shape)
        data[kern.A0:kern.A2 + 1] = np.moveaxis(ref.demand_by_legs, 2, 0)
        data[kern.B1] = ref.feeder_hours_by_legs[..., 1]
        data[kern.B2] = ref.feeder_hours_by_legs[..., 2]
        data[kern.C1] = ref.feeder_flow_by_legs[..., 1]
        data[kern.C2] = ref.feeder_flow_by_legs[..., 2]
        data[kern.QPI] = ref.peak_demand
        data[kern.FREF] = ref.ref_freq
        self.data = data
        par = np.empty(kern.N_PAR)
        par[kern.P_A] = cp.beta_time * cp.wait_factor / 2.0
        par[kern.P_B] = cp.beta_time * cp.wait_factor
        par[kern.P_YLO] = nlp.elasticity_lo
        par[kern.P_YHI] = nlp.elasticity_hi
        par[kern.P_T] = 1.0 / nlp.softmax_sharpness
        par[kern.P_REG] = nlp.reg
        par[kern.P_OCC] = sp.avg_occupancy
        par[kern.P_WMIN] = sp.min_wait_min
        par[kern.P_CUT_LO] = sp.cutoff_lo
        par[kern.P_CUT_HI] = sp.cutoff_hi
        par[kern.P_SLOPE_LO] = sp.slope_lo_min
        par[kern.P_SLOPE_HI] = sp.slope_hi_min
        par[kern.P_WMAX] = sp.max_wait_min
        par[kern.P_BUDGET] = sc.budget.daily_budget
        par[kern.P_FMIN] = F_MIN
        par[kern.P_CLAMP_T] = CLAMP_TEMP
        par[kern.P_RHO_T] = RHO_TEMP
        par[kern.P_CAP_T] = WAIT_CAP_TEMP
        self.par = par
        self.cap = np.asarray(sc.pattern_capacity(), dtype=float)
        self.dur = np.asarray(sc.durations, dtype=float)
        self.u_ref = np.asarray(ref.ref_wait_min, dtype=float)
        self.budget = sc.budget.daily_budget
        self.cost_f = sc.durations[None, :] * sc.pattern_hourly_cost()[:, None]
        self.cost_s = sc.durations * sp.unit_op_cost
        self.f_hi = np.minimum(nlp.freq_expand * ref.ref_freq, sc.freq_upper)
        self.s_hi = np.asarray(sc.fleet_upper, dtype=float)
        self.u_lo = np.minimum(nlp.wait_shrink * self.u_ref, sp.max_wait_min)
        self.u_hi = np.full(self.n_k, sp.max_wait_min)

    def value_grad(self, f, s, u):
        gf = np.empty((self.n_p, self.n_k))
        gs = np.empty(self.n_k)
        gu = np.empty(self.n_k)
        T, dTdu = np.empty(self.n_k), np.empty(self.n_k)
        dTdf = np.empty((self.n_p, self.n_k))
        v = kern.value_grad(np.ascontiguousarray(f, dtype=float), np.ascontiguousarray(s, dtype=float),
                            np.ascontiguousarray(u, dtype=float), self.data, self.cap, self.dur, self.u_ref,
                            self.par, gf, gs, gu, T, dTdf, dTdu)
        return v, gf, gs, gu

    def reduced(self, f, s):
        gf = np.empty((self.n_p, self.n_k))
        gs = np.empty(self.n_k)
        u = np.empty(self.n_k)
        v = kern.reduced(np.ascontiguousarray(f, dtype=float), np.ascontiguousarray(s, dtype=float),
                         self.data, self.cap, self.dur, self.u_ref, self.u_lo, self.par, gf, gs, u)
        return v, gf, gs, u

    def budget_violation(self, f, s) -> float:
        return float(((self.cost_f * f).sum() + self.cost_s @ s) / self.budget - 1.0)

    def spg(self, f0, s0, mu: float, max_iter: int, trace: list | None):
        width = np.concatenate([self.f_hi.ravel(), self.s_hi])
        lo = np.zeros_like(width)
        x0 = np.concatenate([f0.ravel(), s0])
        xi0 = np.clip(np.divide(x0, width, out=np.zeros_like(x0), where=width > 0), 0.0, 1.0)
        tv, ts, tb = np.empty(max_iter), np.empty(max_iter), np.empty(max_iter)
        xi, n_it = kern.spg(xi0, lo, width, self.n_p, self.n_k, mu, max_iter, self.data, self.cap, self.dur,
                            self.u_ref, self.u_lo, self.cost_f, self.cost_s, self.par, tv, ts, tb)
        if trace is not None:
            for j in range(n_it):
                trace.append((len(trace), float(tv[j]), float(ts[j]), float(tb[j])))
        x = lo + width * xi
        n_f = self.n_p * self.n_k
        return x[:n_f].reshape(self.n_p, self.n_k), x[n_f:]


def local_bounds(ref: ReferenceState, sc: Scenario) -> tuple[SubSolution, SubSolution]:
    prob = _Problem(ref, sc)
    lo = SubSolution(np.zeros_like(ref.ref_freq), np.zeros(prob.n_k), prob.u_lo.copy())
    hi = SubSolution(prob.f_hi.copy(), prob.s_hi.copy(), prob.u_hi.copy())
    return lo, hi


def sub_objective(x: SubSolution, ref: ReferenceState, sc: Scenario) -> tuple[float, SubSolution]:
    """Smoothed local objective and its exact gradient with respect to
    frequency, fleet and the feeder-wait variable."""
    v, gf, gs, gu = _Problem(ref, sc).value_grad(x.freq, x.fleet, x.wait)
    return v, SubSolution(gf, gs, gu)


def consistent_wait(f, s, ref: ReferenceState, sc: Scenario) -> np.ndarray:
    """Feeder wait implied by ``(f, s)`` through the smoothed wait curve, floored
    at the local lower bound."""
    return _Problem(ref, sc).reduced(f, s)[3]


def reference_point(ref: ReferenceState) -> SubSolution:
    return SubSolution(ref.ref_freq.copy(), ref.ref_fleet.copy(), ref.ref_wait_min.copy())


@dataclass
class LocalOutcome:
    solution: Solution
    value: float
    start_value: float
    starts: list[tuple[float, float]] = field(default_factory=list)  # (value, budget violation) per start


MAX_PENALTY_ROUNDS = 6


def solve_local_detailed(
    ref: ReferenceState,
    sc: Scenario,
    start: SubSolution | None = None,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> LocalOutcome:
    nlp = sc.solver.nlp
    prob = _Problem(ref, sc)
    rng = rng if rng is not None else np.random.default_rng(0)
    start = start if start is not None else reference_point(ref)
    f0 = np.clip(start.freq, 0.0, prob.f_hi)
    s0 = np.clip(start.fleet, 0.0, prob.s_hi)
    start_sol = repair(Solution(f0, s0), sc)
    start_val = prob.reduced(start_sol.freq, start_sol.fleet)[0]

    best_sol, best_val = start_sol, start_val
    mu0 = 10.0 * max(1.0, abs(start_val))
    starts = []
    for j in range(nlp.multistart_count):
        if j == 0:
            f, s = f0, s0
        else:
            f = np.clip(f0 * (1.0 + nlp.perturb_sigma_frac * rng.standard_normal(f0.shape)), 0.0, prob.f_hi)
            s = np.clip(s0 * (1.0 + nlp.perturb_sigma_frac * rng.standard_normal(s0.shape)), 0.0, prob.s_hi)
        mu = mu0
        for _ in range(MAX_PENALTY_ROUNDS):
            f, s = prob.spg(f, s, mu, nlp.max_pg_iters, trace)
            if prob.budget_violation(f, s) <= PENALTY_TOL:
                break
            mu *= 100.0
        cand = repair(Solution(f, s), sc)
        val = prob.reduced(cand.freq, cand.fleet)[0]
        starts.append((val, prob.budget_violation(cand.freq, cand.fleet)))
        if val > best_val:
            best_sol, best_val = cand, val
    return LocalOutcome(best_sol, best_val, start_val, starts)


def solve_local(
    ref: ReferenceState,
    sc: Scenario,
    start: SubSolution | None = None,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> Solution:
    """Improve around the reference; returns a repaired full Solution that is
    never worse (by the smoothed sub-objective) than the projected start."""
    return solve_local_detailed(ref, sc, start, rng, trace).solution


def write_trace(trace: list, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "value", "step", "budget_violation"])
        for row in trace:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
