from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import pytest

from savfreq.scenario import Scenario, Solution, load_scenario, scenario_from_dict

WALK_P = 0.5  # share of zones (beyond the first two) reached on foot
SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.json"


def line_doc(**blocks) -> dict:
    """One bus pattern A-B-C, zone 0 walks to A, zone 1 walks to C, one period."""
    doc = {
        "periods": [{"id": 0, "duration_h": 1.0}],
        "modes": [{"id": 0, "vehicle_capacity": 70.0, "unit_op_cost": 188.0}],
        "patterns": [{"id": 0, "mode": 0, "cycle_time_h": 1.0, "stop_sequence": ["A", "B", "C"],
                      "segment_times_min": [5.0, 5.0]}],
        "zones": [
            {"id": 0, "walk_access": [["A", 2.0]], "feeder_access": []},
            {"id": 1, "walk_access": [["C", 2.0]], "feeder_access": []},
        ],
        "demand": [{"origin": 0, "destination": 1, "period": 0, "trips_per_h": 100.0,
                    "p2p_sams_utility": -5.0, "drive_utility": -4.0}],
    }
    doc.update(copy.deepcopy(blocks))
    return doc


def line_scenario(**blocks) -> Scenario:
    return scenario_from_dict(line_doc(**blocks))


def feeder_doc(rng: np.random.Generator) -> dict:
    """Random feeder-dependent instance: 3-6 zones, 1-3 patterns, 2 periods.

    Zones are either feeder-only or walk-only (so access never switches between
    the two), with at least two feeder zones. All patterns share the hub stop
    ``H`` so the network is connected.
    """
    n_pat = int(rng.integers(1, 4))
    n_zone = int(rng.integers(3, 7))
    patterns = []
    stops = []
    for p in range(n_pat):
        extra = [f"s{p}_{i}" for i in range(int(rng.integers(1, 3)))]
        seq = extra[:1] + ["H"] + extra[1:]
        stops.extend(seq)
        patterns.append({"id": p, "mode": int(rng.integers(0, 2)), "cycle_time_h": float(rng.uniform(0.6, 1.5)),
                         "stop_sequence": seq, "segment_times_min": [float(rng.uniform(3, 10)) for _ in seq[1:]]})
    stops = sorted(set(stops))
    zones = []
    for z in range(n_zone):
        link = [[stops[int(rng.integers(len(stops)))], float(rng.uniform(3, 12))]]
        if z >= 2 and rng.random() < WALK_P:
            zones.append({"id": z, "walk_access": link, "feeder_access": []})
        else:
            zones.append({"id": z, "walk_access": [], "feeder_access": link})
    demand = []
    for k in range(2):
        for o in range(n_zone):
            for d in range(n_zone):
                if o != d and rng.random() < 0.6:
                    demand.append({"origin": o, "destination": d, "period": k,
                                   "trips_per_h": float(rng.uniform(20, 300)),
                                   "p2p_sams_utility": float(rng.uniform(-7, -4)),
                                   "drive_utility": float(rng.uniform(-6, -3))})
    return {
        "periods": [{"id": 0, "duration_h": 3.0}, {"id": 1, "duration_h": 6.0}],
        "modes": [{"id": 0, "vehicle_capacity": 70.0, "unit_op_cost": 188.0},
                  {"id": 1, "vehicle_capacity": 800.0, "unit_op_cost": 1800.0}],
        "patterns": patterns,
        "zones": zones,
        "demand": demand,
        "sams": {"max_fleet": 500.0},
        "budget": {"daily_budget": 1e6},
    }


def feeder_fixture(seed: int, rho_range: tuple[float, float] = (0.3, 1.0)) -> tuple[Scenario, Solution]:
    """Random feeder-dependent scenario plus a solution whose fleet is sized so
    that utilization at the minimum wait lands in ``rho_range``."""
    from savfreq.graph import build_graph
    from savfreq.sams import assignment_pass

    rng = np.random.default_rng([seed, 77])
    sc = scenario_from_dict(feeder_doc(rng))
    freq = rng.uniform(2.0, 12.0, (sc.n_patterns, sc.n_periods))
    probe = assignment_pass(sc, build_graph(sc), Solution(freq, np.ones(sc.n_periods)),
                            np.full(sc.n_periods, sc.sams.min_wait_min))
    target = rng.uniform(*rho_range, sc.n_periods)
    fleet = np.maximum(probe.flows.feeder_time_h / (sc.sams.avg_occupancy * target), 1.0)
    return sc, Solution(freq, fleet)


@pytest.fixture(scope="session")
def t1() -> Scenario:
    return load_scenario(scenario_path("t1"))


@pytest.fixture(scope="session")
def t2() -> Scenario:
    return load_scenario(scenario_path("t2"))


@pytest.fixture(scope="session")
def t3() -> Scenario:
    return load_scenario(scenario_path("t3"))


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    def record(n: int, ok: bool, detail: str) -> bool:
        _CRITERIA.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(_CRITERIA[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
