"""Problem-instance data types, the JSON scenario format, loading and validation.

A scenario is immutable once loaded. All parameter blocks (``choice``, ``sams``,
``budget``, ``solver``) are optional in the file; omitted fields take the
defaults declared on the dataclasses below.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Hashable

import jsonschema
import numpy as np

SCHEMA_FILE = "scenario.schema.json"


class ScenarioError(Exception):
    """Raised when a scenario document is malformed or violates an invariant."""

    def __init__(self, message: str, violations: list[Violation] | None = None):
        super().__init__(message)
        self.violations = violations or []


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.path}: {self.message}"


# --------------------------------------------------------------------------- #
# Domain types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class TimePeriod:
    id: int
    duration_h: float
    name: str = ""


@dataclass(frozen=True)
class TransitMode:
    id: int
    vehicle_capacity: float
    unit_op_cost: float
    name: str = ""


@dataclass(frozen=True)
class Pattern:
    id: int
    mode: int
    cycle_time_h: float
    stop_sequence: tuple[Hashable, ...]
    segment_times_min: tuple[float, ...]
    max_frequency: float = 20.0
    name: str = ""


@dataclass(frozen=True)
class Zone:
    """A demand zone with its walking and SAV-feeder access options."""

    id: int
    walk_access: tuple[tuple[Hashable, float], ...] = ()
    feeder_access: tuple[tuple[Hashable, float], ...] = ()
    name: str = ""

    @property
    def connected(self) -> bool:
        return bool(self.walk_access or self.feeder_access)


@dataclass(frozen=True)
class DemandEntry:
    origin: int
    destination: int
    period: int
    trips_per_h: float
    p2p_sams_utility: float
    drive_utility: float
    transit_fare: float = 2.5


@dataclass(frozen=True)
class ChoiceParams:
    asc_transit: float = -1.5
    beta_time: float = -0.12
    beta_fare: float = -0.5
    wait_factor: float = 1.5
    walk_factor: float = 2.0
    transfer_penalty_min: float = 5.0


@dataclass(frozen=True)
class SamsParams:
    min_wait_min: float = 3.0
    cutoff_lo: float = 0.5
    cutoff_hi: float = 0.8
    slope_lo_min: float = 20.0
    slope_hi_min: float = 50.0
    avg_occupancy: float = 1.5
    unit_op_cost: float = 30.0
    max_fleet: float = 10000.0
    fp_step_approx: float = 0.8
    fp_step_calc: float = 0.2
    fp_tol_min: float = 3.0
    fp_max_outer: int = 25
    max_wait_min: float = 60.0


@dataclass(frozen=True)
class BudgetParams:
    daily_budget: float = 10_000_000.0


@dataclass(frozen=True)
class PsoParams:
    epochs: int = 30
    particles: int = 40
    inertia: float = 0.9
    cognitive: float = 2.0
    social: float = 2.0
    velocity_clamp_frac: float = 0.25
    seed: int = 0


@dataclass(frozen=True)
class NlpParams:
    reg: float = 0.001
    freq_expand: float = 2.0
    wait_shrink: float = 0.5
    elasticity_lo: float = 0.0
    elasticity_hi: float = 3.0
    obj_tol: float = 0.1
    max_inner_iters: int = 5
    multistart_count: int = 4
    perturb_sigma_frac: float = 0.2
    softmax_sharpness: float = 10.0
    max_pg_iters: int = 60


@dataclass(frozen=True)
class SolverParams:
    pso: PsoParams = field(default_factory=PsoParams)
    nlp: NlpParams = field(default_factory=NlpParams)


@dataclass(eq=False)
class Solution:
    """Decision vector: frequency per (pattern, period) and SAV fleet per period."""

    freq: np.ndarray  # shape (P, K), vehicles/h
    fleet: np.ndarray  # shape (K,), vehicles

    def __post_init__(self) -> None:
        self.freq = np.asarray(self.freq, dtype=float)
        self.fleet = np.asarray(self.fleet, dtype=float)
        if self.freq.ndim != 2 or self.fleet.ndim != 1 or self.freq.shape[1] != self.fleet.shape[0]:
            raise ValueError(f"inconsistent solution shapes {self.freq.shape} / {self.fleet.shape}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Solution):
            return NotImplemented
        return np.array_equal(self.freq, other.freq) and np.array_equal(self.fleet, other.fleet)

    def __repr__(self) -> str:
        return f"Solution(freq={self.freq.tolist()}, fleet={self.fleet.tolist()})"

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.freq.ravel(), self.fleet])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_patterns: int, n_periods: int) -> Solution:
        vec = np.asarray(vec, dtype=float)
        n_f = n_patterns * n_periods
        if vec.shape != (n_f + n_periods,):
            raise ValueError(f"vector of length {vec.shape} does not match {n_patterns}x{n_periods}")
        return cls(vec[:n_f].reshape(n_patterns, n_periods).copy(), vec[n_f:].copy())

    def copy(self) -> Solution:
        return Solution(self.freq.copy(), self.fleet.copy())

    def to_dict(self) -> dict[str, Any]:
        return {"freq_per_h": self.freq.tolist(), "fleet": self.fleet.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Solution:
        freq = np.asarray(data["freq_per_h"], dtype=float)
        if freq.ndim == 1 and freq.size == 0:
            freq = freq.reshape(0, len(data["fleet"]))
        return cls(freq, np.asarray(data["fleet"], dtype=float))


@dataclass(frozen=True)
class Scenario:
    periods: tuple[TimePeriod, ...]
    modes: tuple[TransitMode, ...]
    patterns: tuple[Pattern, ...]
    zones: tuple[Zone, ...]
    demand: tuple[DemandEntry, ...]
    choice: ChoiceParams = field(default_factory=ChoiceParams)
    sams: SamsParams = field(default_factory=SamsParams)
    budget: BudgetParams = field(default_factory=BudgetParams)
    solver: SolverParams = field(default_factory=SolverParams)
    baseline: Solution | None = None

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    @property
    def durations(self) -> np.ndarray:
        return np.array([p.duration_h for p in self.periods], dtype=float)

    @property
    def freq_upper(self) -> np.ndarray:
        """Upper frequency bound per pattern, broadcast to (P, K)."""
        fmax = np.array([p.max_frequency for p in self.patterns], dtype=float)
        return np.repeat(fmax[:, None], self.n_periods, axis=1)

    @property
    def fleet_upper(self) -> np.ndarray:
        return np.full(self.n_periods, float(self.sams.max_fleet))

    def pattern_capacity(self) -> np.ndarray:
        return np.array([self.modes[p.mode].vehicle_capacity for p in self.patterns], dtype=float)

    def pattern_hourly_cost(self) -> np.ndarray:
        """Operating cost per unit frequency for one hour of service, gamma_m * cycle time."""
        return np.array([self.modes[p.mode].unit_op_cost * p.cycle_time_h for p in self.patterns], dtype=float)

    def replace(self, **changes: Any) -> Scenario:
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------- #
# Validation
# --------------------------------------------------------------------------- #


def validate(sc: Scenario) -> list[Violation]:
    """Check every type invariant; returns an empty list for a valid scenario."""
    out: list[Violation] = []

    def bad(code: str, path: str, msg: str) -> None:
        out.append(Violation(code, path, msg))

    if [p.id for p in sc.periods] != list(range(len(sc.periods))):
        bad("PeriodIdsNotContiguous", "periods", "period ids must be 0..K-1 in order")
    for i, per in enumerate(sc.periods):
        if not per.duration_h > 0:
            bad("DurationNonpositive", f"periods[{i}].duration_h", f"{per.duration_h} must be > 0")

    if [m.id for m in sc.modes] != list(range(len(sc.modes))):
        bad("ModeIdsNotContiguous", "modes", "mode ids must be 0..M-1 in order")
    for i, m in enumerate(sc.modes):
        if not m.vehicle_capacity > 0:
            bad("CapacityNonpositive", f"modes[{i}].vehicle_capacity", "must be > 0")
        if not m.unit_op_cost >= 0:
            bad("CostNegative", f"modes[{i}].unit_op_cost", "must be >= 0")

    if [p.id for p in sc.patterns] != list(range(len(sc.patterns))):
        bad("PatternIdsNotContiguous", "patterns", "pattern ids must be 0..P-1 in order")
    stops: set[Hashable] = set()
    for i, p in enumerate(sc.patterns):
        path = f"patterns[{i}]"
        if not 0 <= p.mode < len(sc.modes):
            bad("PatternModeUnknown", f"{path}.mode", f"mode {p.mode} does not exist")
        if not p.cycle_time_h > 0:
            bad("CycleTimeNonpositive", f"{path}.cycle_time_h", "must be > 0")
        if not p.max_frequency > 0:
            bad("FreqBoundNonpositive", f"{path}.max_frequency", f"pattern {p.id} has max_frequency {p.max_frequency}")
        if len(p.segment_times_min) != len(p.stop_sequence) - 1:
            bad("SegmentCountMismatch", f"{path}.segment_times_min",
                f"{len(p.segment_times_min)} segments for {len(p.stop_sequence)} stops")
        if any(not t > 0 for t in p.segment_times_min):
            bad("SegmentTimeNonpositive", f"{path}.segment_times_min", "all segment times must be > 0")
        stops.update(p.stop_sequence)

    if [z.id for z in sc.zones] != list(range(len(sc.zones))):
        bad("ZoneIdsNotContiguous", "zones", "zone ids must be 0..N-1 in order")
    for i, z in enumerate(sc.zones):
        for kind, entries in (("walk_access", z.walk_access), ("feeder_access", z.feeder_access)):
            for j, (stop, t) in enumerate(entries):
                if not t > 0:
                    bad("AccessTimeNonpositive", f"zones[{i}].{kind}[{j}]", f"time {t} must be > 0")
                if stop not in stops:
                    bad("AccessStopUnknown", f"zones[{i}].{kind}[{j}]", f"stop {stop!r} is on no pattern")

    n_z, n_k = len(sc.zones), len(sc.periods)
    for i, d in enumerate(sc.demand):
        path = f"demand[{i}]"
        if not d.trips_per_h >= 0:
            bad("DemandNegative", f"{path}.trips_per_h", "must be >= 0")
        if d.origin == d.destination:
            bad("DemandSelfLoop", path, "origin equals destination")
        if not (0 <= d.origin < n_z and 0 <= d.destination < n_z):
            bad("DemandZoneUnknown", path, "origin/destination zone does not exist")
        if not 0 <= d.period < n_k:
            bad("DemandPeriodUnknown", f"{path}.period", f"period {d.period} does not exist")
        if d.transit_fare < 0:
            bad("FareNegative", f"{path}.transit_fare", "must be >= 0")
    seen = set()
    for i, d in enumerate(sc.demand):
        key = (d.origin, d.destination, d.period)
        if key in seen:
            bad("DemandDuplicate", f"demand[{i}]", f"duplicate entry for {key}")
        seen.add(key)

    c = sc.choice
    if not c.beta_time < 0:
        bad("BetaTimeNonnegative", "choice.beta_time", "must be < 0")
    if not c.beta_fare < 0:
        bad("BetaFareNonnegative", "choice.beta_fare", "must be < 0")
    if not c.wait_factor >= 1:
        bad("WaitFactorBelowOne", "choice.wait_factor", "must be >= 1")
    if not c.walk_factor >= 1:
        bad("WalkFactorBelowOne", "choice.walk_factor", "must be >= 1")
    if not c.transfer_penalty_min >= 0:
        bad("TransferPenaltyNegative", "choice.transfer_penalty_min", "must be >= 0")

    s = sc.sams
    if not 0 < s.cutoff_lo < s.cutoff_hi:
        bad("CutoffOrder", "sams.cutoff_lo", f"need 0 < cutoff_lo < cutoff_hi, got {s.cutoff_lo}, {s.cutoff_hi}")
    if not (s.slope_lo_min > 0 and s.slope_hi_min > 0):
        bad("SlopeNonpositive", "sams.slope_lo_min", "both slopes must be > 0")
    if not (0 < s.fp_step_approx < 1 and 0 < s.fp_step_calc < 1
            and abs(s.fp_step_approx + s.fp_step_calc - 1.0) <= 1e-12):
        bad("StepSizesNotConvex", "sams.fp_step_approx", "step sizes must lie in (0,1) and sum to 1")
    if not s.fp_tol_min > 0:
        bad("FpTolNonpositive", "sams.fp_tol_min", "must be > 0")
    if not s.fp_max_outer >= 1:
        bad("FpMaxOuterBelowOne", "sams.fp_max_outer", "must be >= 1")
    if not s.avg_occupancy > 0:
        bad("OccupancyNonpositive", "sams.avg_occupancy", "must be > 0")
    if not s.min_wait_min >= 0:
        bad("MinWaitNegative", "sams.min_wait_min", "must be >= 0")
    if not s.max_wait_min > s.min_wait_min:
        bad("MaxWaitBelowMin", "sams.max_wait_min", "must exceed min_wait_min")
    if not s.unit_op_cost >= 0:
        bad("CostNegative", "sams.unit_op_cost", "must be >= 0")
    if not s.max_fleet >= 0:
        bad("FleetBoundNegative", "sams.max_fleet", "must be >= 0")

    if not sc.budget.daily_budget > 0:
        bad("BudgetNonpositive", "budget.daily_budget", "must be > 0")

    pso, nlp = sc.solver.pso, sc.solver.nlp
    if pso.epochs < 0:
        bad("EpochsNegative", "solver.pso.epochs", "must be >= 0")
    if pso.particles < 1:
        bad("ParticlesBelowOne", "solver.pso.particles", "must be >= 1")
    if not 0 < pso.velocity_clamp_frac <= 1:
        bad("VelocityClampRange", "solver.pso.velocity_clamp_frac", "must be in (0, 1]")
    if not 0 <= nlp.elasticity_lo < nlp.elasticity_hi:
        bad("ElasticityBounds", "solver.nlp.elasticity_lo", "need 0 <= lo < hi")
    if not nlp.obj_tol > 0:
        bad("ObjTolNonpositive", "solver.nlp.obj_tol", "must be > 0")
    if not nlp.freq_expand > 1:
        bad("FreqExpandNotAboveOne", "solver.nlp.freq_expand", "must be > 1")
    if not 0 < nlp.wait_shrink < 1:
        bad("WaitShrinkRange", "solver.nlp.wait_shrink", "must be in (0, 1)")
    if nlp.reg < 0:
        bad("RegNegative", "solver.nlp.reg", "must be >= 0")
    if nlp.multistart_count < 1:
        bad("MultistartBelowOne", "solver.nlp.multistart_count", "must be >= 1")
    if nlp.max_inner_iters < 1:
        bad("InnerItersBelowOne", "solver.nlp.max_inner_iters", "must be >= 1")
    if nlp.max_pg_iters < 1:
        bad("PgItersBelowOne", "solver.nlp.max_pg_iters", "must be >= 1")
    if not nlp.softmax_sharpness > 0:
        bad("SharpnessNonpositive", "solver.nlp.softmax_sharpness", "must be > 0")
    if nlp.perturb_sigma_frac < 0:
        bad("PerturbNegative", "solver.nlp.perturb_sigma_frac", "must be >= 0")

    if sc.baseline is not None:
        b = sc.baseline
        if b.freq.shape != (len(sc.patterns), len(sc.periods)) or b.fleet.shape != (len(sc.periods),):
            bad("BaselineShape", "baseline", f"expected freq {len(sc.patterns)}x{len(sc.periods)}")
        elif len(sc.patterns) and (np.any(b.freq < 0) or np.any(b.freq > sc.freq_upper)):
            bad("BaselineOutOfBounds", "baseline.freq_per_h", "frequencies outside [0, max_frequency]")
        elif np.any(b.fleet < 0) or np.any(b.fleet > sc.sams.max_fleet):
            bad("BaselineOutOfBounds", "baseline.fleet", "fleet outside [0, max_fleet]")
    return out


# --------------------------------------------------------------------------- #
# File format
# --------------------------------------------------------------------------- #


def scenario_schema() -> dict[str, Any]:
    return json.loads(resources.files(__package__).joinpath(SCHEMA_FILE).read_text())


def _stop_id(v: Any) -> Hashable:
    return v if isinstance(v, (str, int)) else str(v)


def _block(cls: type, data: dict[str, Any] | None) -> Any:
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    return cls(**{k: float(v) if types[k] == "float" else v for k, v in (data or {}).items()})


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    """Build and validate a Scenario from an already-parsed JSON document."""
    try:
        jsonschema.validate(doc, scenario_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {exc.message}") from None

    periods = tuple(TimePeriod(p["id"], float(p["duration_h"]), p.get("name", "")) for p in doc["periods"])
    modes = tuple(
        TransitMode(m["id"], float(m["vehicle_capacity"]), float(m["unit_op_cost"]), m.get("name", ""))
        for m in doc["modes"]
    )
    patterns = tuple(
        Pattern(
            id=p["id"],
            mode=p["mode"],
            cycle_time_h=float(p["cycle_time_h"]),
            stop_sequence=tuple(_stop_id(s) for s in p["stop_sequence"]),
            segment_times_min=tuple(float(t) for t in p["segment_times_min"]),
            max_frequency=float(p.get("max_frequency", 20.0)),
            name=p.get("name", ""),
        )
        for p in doc["patterns"]
    )
    zones = tuple(
        Zone(
            id=z["id"],
            walk_access=tuple((_stop_id(s), float(t)) for s, t in z.get("walk_access", [])),
            feeder_access=tuple((_stop_id(s), float(t)) for s, t in z.get("feeder_access", [])),
            name=z.get("name", ""),
        )
        for z in doc["zones"]
    )
    demand = tuple(
        DemandEntry(
            origin=d["origin"],
            destination=d["destination"],
            period=d["period"],
            trips_per_h=float(d["trips_per_h"]),
            p2p_sams_utility=float(d["p2p_sams_utility"]),
            drive_utility=float(d["drive_utility"]),
            transit_fare=float(d.get("transit_fare", 2.5)),
        )
        for d in doc["demand"]
    )
    solver_doc = doc.get("solver") or {}
    solver = SolverParams(pso=_block(PsoParams, solver_doc.get("pso")), nlp=_block(NlpParams, solver_doc.get("nlp")))
    baseline = Solution.from_dict(doc["baseline"]) if doc.get("baseline") else None

    sc = Scenario(
        periods=periods,
        modes=modes,
        patterns=patterns,
        zones=zones,
        demand=demand,
        choice=_block(ChoiceParams, doc.get("choice")),
        sams=_block(SamsParams, doc.get("sams")),
        budget=_block(BudgetParams, doc.get("budget")),
        solver=solver,
        baseline=baseline,
    )
    violations = validate(sc)
    if violations:
        raise ScenarioError("invalid scenario:\n" + "\n".join(f"  {v}" for v in violations), violations)
    return sc


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    """Full document with every parameter written out explicitly."""
    def drop_empty_name(d: dict[str, Any]) -> dict[str, Any]:
        if d.get("name") == "":
            d.pop("name")
        return d

    return {
        "periods": [drop_empty_name(dataclasses.asdict(p)) for p in sc.periods],
        "modes": [drop_empty_name(dataclasses.asdict(m)) for m in sc.modes],
        "patterns": [
            drop_empty_name({
                "id": p.id,
                "name": p.name,
                "mode": p.mode,
                "cycle_time_h": p.cycle_time_h,
                "max_frequency": p.max_frequency,
                "stop_sequence": list(p.stop_sequence),
                "segment_times_min": list(p.segment_times_min),
            })
            for p in sc.patterns
        ],
        "zones": [
            drop_empty_name({
                "id": z.id,
                "name": z.name,
                "walk_access": [list(a) for a in z.walk_access],
                "feeder_access": [list(a) for a in z.feeder_access],
            })
            for z in sc.zones
        ],
        "demand": [dataclasses.asdict(d) for d in sc.demand],
        "choice": dataclasses.asdict(sc.choice),
        "sams": dataclasses.asdict(sc.sams),
        "budget": dataclasses.asdict(sc.budget),
        "solver": {"pso": dataclasses.asdict(sc.solver.pso), "nlp": dataclasses.asdict(sc.solver.nlp)},
        "baseline": sc.baseline.to_dict() if sc.baseline is not None else None,
    }


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


# Dotted overrides accepted from the command line, e.g. ``solver.pso.epochs=2``.
OVERRIDABLE_BLOCKS = ("choice", "sams", "budget", "solver.pso", "solver.nlp")


def apply_overrides(sc: Scenario, overrides: dict[str, str]) -> Scenario:
    """Return a copy of ``sc`` with dotted-key parameter overrides applied and re-validated."""
    doc = scenario_to_dict(sc)
    for key, raw in overrides.items():
        block, _, name = key.rpartition(".")
        if block not in OVERRIDABLE_BLOCKS:
            raise ScenarioError(f"override {key!r}: unknown parameter block {block!r}")
        target = doc
        for part in block.split("."):
            target = target[part]
        if name not in target:
            raise ScenarioError(f"override {key!r}: unknown parameter {name!r}")
        current = target[name]
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(current, float) and isinstance(value, int):
            value = float(value)
        if type(value) is not type(current):
            raise ScenarioError(f"override {key!r}: expected {type(current).__name__}, got {raw!r}")
        target[name] = value
    return scenario_from_dict(copy.deepcopy(doc))
