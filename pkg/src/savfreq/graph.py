"""Multimodal routing graph: construction, per-period cost overlays, shortest paths
and all-or-nothing loading.

Node ids: demand nodes first (node ``z`` is zone ``z``), then one transit node per
(pattern, stop position) in pattern order. Demand nodes are only ever path
endpoints; a path never passes through another zone.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Hashable, Mapping

import numpy as np

from .scenario import Scenario

#: Frequency (veh/h) below which a pattern counts as removed.
F_MIN = 0.1

INF = math.inf


class GraphError(Exception):
    pass


class EdgeKind(IntEnum):
    ACCESS_WALK = 0
    ACCESS_FEEDER = 1
    TRANSIT = 2
    TRANSFER = 3


@dataclass
class MultimodalGraph:
    n_zones: int
    n_patterns: int
    node_labels: list[tuple]
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray
    static_cost: np.ndarray
    static_time: np.ndarray  # unweighted part of the static cost
    pattern: np.ndarray  # pattern the edge belongs to or boards, -1 for none
    boards: np.ndarray  # True where traversing the edge boards ``pattern``
    feeder_ride_min: np.ndarray
    wait_factor: float
    unconnected_zones: tuple[int, ...]
    out_edges: list[list[tuple[int, int]]] = field(repr=False)
    transit_edges: list[np.ndarray] = field(repr=False)
    feeder_edges: list[np.ndarray] = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def count(self, kind: EdgeKind) -> int:
        return int(np.sum(self.kind == kind))


@dataclass
class CostOverlay:
    """Dynamic costs for one period; owned by a single evaluation."""

    period: int
    cost: list[float]
    time: list[float]


@dataclass(frozen=True)
class PathResult:
    generalized_cost_min: float = 0.0
    journey_time_min: float = 0.0
    patterns_used: tuple[int, ...] = ()
    links_used: tuple[int, ...] = ()
    feeder_link_count: int = 0
    feeder_time_min: float = 0.0
    reachable: bool = False


UNREACHABLE = PathResult()


@dataclass
class LinkFlows:
    flow: np.ndarray  # (E, K) persons/h
    peak: np.ndarray  # (P, K) max flow over the pattern's transit edges
    feeder_flow: np.ndarray  # (P, K) sum of flow on the pattern's feeder edges
    feeder_time_h: np.ndarray  # (K,) sum of flow * ride time, passenger-hours per hour


def build_graph(sc: Scenario) -> MultimodalGraph:
    n_z = len(sc.zones)
    labels: list[tuple] = [("zone", z.id) for z in sc.zones]
    nodes_at_stop: dict[Hashable, list[tuple[int, int]]] = {}
    first_node: list[int] = []
    for p in sc.patterns:
        first_node.append(len(labels))
        for i, stop in enumerate(p.stop_sequence):
            nodes_at_stop.setdefault(stop, []).append((len(labels), p.id))
            labels.append(("stop", p.id, i, stop))

    src: list[int] = []
    dst: list[int] = []
    kind: list[int] = []
    cost: list[float] = []
    time: list[float] = []
    pat: list[int] = []
    boards: list[bool] = []
    ride: list[float] = []

    def add(u: int, v: int, k: EdgeKind, c: float, t: float, p: int, b: bool, r: float = 0.0) -> None:
        src.append(u)
        dst.append(v)
        kind.append(int(k))
        cost.append(c)
        time.append(t)
        pat.append(p)
        boards.append(b)
        ride.append(r)

    for p in sc.patterns:
        base = first_node[p.id]
        for i, seg in enumerate(p.segment_times_min):
            add(base + i, base + i + 1, EdgeKind.TRANSIT, seg, seg, p.id, False)

    for stop, members in nodes_at_stop.items():
        for a, pa in members:
            for b, pb in members:
                if pa != pb:
                    add(a, b, EdgeKind.TRANSFER, sc.choice.transfer_penalty_min, 0.0, pb, True)

    walk_factor = sc.choice.walk_factor
    unconnected = []
    for z in sc.zones:
        if not z.connected:
            unconnected.append(z.id)
        for stop, t in z.walk_access:
            if stop not in nodes_at_stop:
                raise GraphError(f"zone {z.id} walks to unknown stop {stop!r}")
            for node, p in nodes_at_stop[stop]:
                add(z.id, node, EdgeKind.ACCESS_WALK, t * walk_factor, t, p, True)
                add(node, z.id, EdgeKind.ACCESS_WALK, t * walk_factor, t, p, False)
        for stop, t in z.feeder_access:
            if stop not in nodes_at_stop:
                raise GraphError(f"zone {z.id} has feeder access to unknown stop {stop!r}")
            for node, p in nodes_at_stop[stop]:
                add(z.id, node, EdgeKind.ACCESS_FEEDER, t, t, p, True, t)
                add(node, z.id, EdgeKind.ACCESS_FEEDER, t, t, p, False, t)

    n_nodes = len(labels)
    out: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
    for e, (u, v) in enumerate(zip(src, dst)):
        out[u].append((e, v))
    for lst in out:
        lst.sort(key=lambda ev: (ev[1], ev[0]))

    kind_a = np.array(kind, dtype=np.int8)
    pat_a = np.array(pat, dtype=np.int64)
    transit_edges = [np.flatnonzero((kind_a == EdgeKind.TRANSIT) & (pat_a == p.id)) for p in sc.patterns]
    feeder_edges = [np.flatnonzero((kind_a == EdgeKind.ACCESS_FEEDER) & (pat_a == p.id)) for p in sc.patterns]

    return MultimodalGraph(
        n_zones=n_z,
        n_patterns=len(sc.patterns),
        node_labels=labels,
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        kind=kind_a,
        static_cost=np.array(cost, dtype=float),
        static_time=np.array(time, dtype=float),
        pattern=pat_a,
        boards=np.array(boards, dtype=bool),
        feeder_ride_min=np.array(ride, dtype=float),
        wait_factor=sc.choice.wait_factor,
        unconnected_zones=tuple(unconnected),
        out_edges=out,
        transit_edges=transit_edges,
        feeder_edges=feeder_edges,
    )


def boarding_wait_min(f: np.ndarray | float) -> np.ndarray:
    """Expected wait (half headway) in minutes; infinite for removed patterns."""
    f = np.asarray(f, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(f < F_MIN, INF, 30.0 / np.maximum(f, F_MIN))


def update_costs(g: MultimodalGraph, freq: np.ndarray, wait_min: np.ndarray, k: int) -> CostOverlay:
    """Overlay for period ``k`` from frequencies ``freq[p, k]`` and feeder waits ``wait_min[k]``."""
    freq = np.asarray(freq, dtype=float)
    cost = g.static_cost.copy()
    time = g.static_time.copy()
    if g.n_patterns:
        bw = boarding_wait_min(freq[:, k])
        board = g.boards
        w_board = bw[g.pattern[board]]
        cost[board] += g.wait_factor * w_board
        time[board] += w_board
    feeder = g.kind == EdgeKind.ACCESS_FEEDER
    w = float(wait_min[k])
    cost[feeder] += g.wait_factor * w
    time[feeder] += w
    return CostOverlay(k, cost.tolist(), time.tolist())


def _path_result(g: MultimodalGraph, ov: CostOverlay, c: float, edges: tuple[int, ...]) -> PathResult:
    feeder, transit = int(EdgeKind.ACCESS_FEEDER), int(EdgeKind.TRANSIT)
    kinds = g.kind
    n_feeder = 0
    t_feeder = 0.0
    pats = set()
    for e in edges:
        k = kinds[e]
        if k == feeder:
            n_feeder += 1
            t_feeder += g.feeder_ride_min[e]
        elif k == transit:
            pats.add(int(g.pattern[e]))
    return PathResult(
        generalized_cost_min=c,
        journey_time_min=float(sum(ov.time[e] for e in edges)),
        patterns_used=tuple(sorted(pats)),
        links_used=edges,
        feeder_link_count=n_feeder,
        feeder_time_min=float(t_feeder),
        reachable=True,
    )


def shortest_paths_from(g: MultimodalGraph, ov: CostOverlay, origin: int) -> dict[int, PathResult]:
    """Dijkstra from one zone to every other reachable zone.

    Labels are ``(cost, node sequence)`` so equal-cost ties resolve to the
    lexicographically smallest node-id sequence. Edge costs are positive, so a
    node's label is final when first popped.
    """
    cost = ov.cost
    out = g.out_edges
    n_z = g.n_zones
    best = {origin: 0.0}
    done: set[int] = set()
    heap: list[tuple[float, tuple[int, ...], tuple[int, ...]]] = [(0.0, (origin,), ())]
    found: dict[int, PathResult] = {}
    while heap:
        c, nodes, edges = heapq.heappop(heap)
        v = nodes[-1]
        if v in done:
            continue
        done.add(v)
        if v < n_z and v != origin:
            found[v] = _path_result(g, ov, c, edges)
            continue
        for e, w in out[v]:
            if w in done or w == origin:
                continue
            ce = cost[e]
            if ce == INF:
                continue
            nc = c + ce
            if nc <= best.get(w, INF):
                best[w] = nc
                heapq.heappush(heap, (nc, nodes + (w,), edges + (e,)))
    return found


def shortest_path(g: MultimodalGraph, ov: CostOverlay, o: int, d: int) -> PathResult:
    return shortest_paths_from(g, ov, o).get(d, UNREACHABLE)


def assign_flows(
    g: MultimodalGraph,
    transit_q: Mapping[tuple[int, int, int], float],
    paths: Mapping[tuple[int, int, int], PathResult],
    n_periods: int,
) -> LinkFlows:
    """All-or-nothing loading of each OD's transit demand onto its shortest path."""
    flow = np.zeros((g.n_edges, n_periods))
    for (o, d, k), q in transit_q.items():
        if q <= 0.0:
            continue
        pr = paths.get((o, d, k), UNREACHABLE)
        if not pr.reachable:
            continue
        if pr.links_used:
            flow[list(pr.links_used), k] += q
    return link_flow_summary(g, flow)


def link_flow_summary(g: MultimodalGraph, flow: np.ndarray) -> LinkFlows:
    n_k = flow.shape[1]
    peak = np.zeros((g.n_patterns, n_k))
    feeder_flow = np.zeros((g.n_patterns, n_k))
    for p in range(g.n_patterns):
        te = g.transit_edges[p]
        if te.size:
            peak[p] = flow[te].max(axis=0)
        fe = g.feeder_edges[p]
        if fe.size:
            feeder_flow[p] = flow[fe].sum(axis=0)
    feeder_time_h = (flow * (g.feeder_ride_min / 60.0)[:, None]).sum(axis=0)
    return LinkFlows(flow=flow, peak=peak, feeder_flow=feeder_flow, feeder_time_h=feeder_time_h)


def write_edge_list(g: MultimodalGraph, path: str | Path) -> None:
    """Debug dump with columns ``src,dst,kind,static_cost,pattern``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "kind", "static_cost", "pattern"])
        for e in range(g.n_edges):
            w.writerow([int(g.src[e]), int(g.dst[e]), EdgeKind(int(g.kind[e])).name,
                        repr(float(g.static_cost[e])), int(g.pattern[e])])
