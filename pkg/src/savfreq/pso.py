"""Particle swarm over frequency/fleet vectors, with the local NLP as an
improvement operator applied to every particle before each swarm step."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluator import EvalResult, evaluate, repair
from .graph import MultimodalGraph, build_graph
from .local_nlp import extract_reference, solve_local
from .scenario import PsoParams, Scenario, Solution

# Stream tags keep the per-particle random substreams of different purposes apart.
_INIT, _STEP, _NLP = 0, 1, 2


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_objective: float = -np.inf


@dataclass
class Swarm:
    particles: list[Particle]
    global_best: np.ndarray
    global_best_objective: float
    epoch: int
    seed: int
    upper: np.ndarray  # box upper bounds; lower bounds are zero


@dataclass(frozen=True)
class HistoryRecord:
    epoch: int
    particle: int
    objective: float  # at the swarm position
    post_nlp_objective: float  # after the inner NLP loop (equals objective when PSO-only)
    cost: float  # of the post-NLP solution
    solution: Solution
    pre_solution: Solution


@dataclass
class HybridResult:
    best: Solution
    best_eval: EvalResult
    history: list[HistoryRecord] = field(default_factory=list)
    epoch_best: list[float] = field(default_factory=list)
    epoch_mean: list[float] = field(default_factory=list)


def box_upper(sc: Scenario) -> np.ndarray:
    return np.concatenate([sc.freq_upper.ravel(), sc.fleet_upper])


def _decode(x: np.ndarray, sc: Scenario) -> Solution:
    return Solution.from_vector(x, sc.n_patterns, sc.n_periods)


def _substream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def init_swarm(sc: Scenario, seed: int | None = None) -> Swarm:
    """Particle 0 is the baseline (mid-box without one); the rest are uniform in
    the boxes. Every position is repaired; velocities start at zero."""
    pp = sc.solver.pso
    seed = pp.seed if seed is None else seed
    upper = box_upper(sc)
    particles = []
    for i in range(pp.particles):
        if i == 0:
            x = sc.baseline.to_vector() if sc.baseline is not None else 0.5 * upper
        else:
            x = _substream(seed, _INIT, i).uniform(0.0, 1.0, upper.size) * upper
        x = repair(_decode(x, sc), sc).to_vector()
        particles.append(Particle(x, np.zeros_like(x), x.copy()))
    return Swarm(particles, particles[0].position.copy(), -np.inf, 0, seed, upper)


def velocity_update(x, v, personal_best, global_best, h1: float, h2: float, pp: PsoParams, upper):
    """Inertia plus cognitive and social pulls, clamped per coordinate to a
    fraction of the box width."""
    v_new = pp.inertia * v + pp.cognitive * h1 * (personal_best - x) + pp.social * h2 * (global_best - x)
    vmax = pp.velocity_clamp_frac * upper
    return np.clip(v_new, -vmax, vmax)


def update_bests(sw: Swarm, fitness) -> None:
    for p, fit in zip(sw.particles, fitness):
        if fit > p.best_objective:
            p.best_objective = float(fit)
            p.best_position = p.position.copy()
        if fit > sw.global_best_objective:
            sw.global_best_objective = float(fit)
            sw.global_best = p.position.copy()


def step(sw: Swarm, fitness, sc: Scenario) -> Swarm:
    """Update bests from ``fitness`` (one value per particle at its current
    position), then move every particle and repair it. Mutates and returns ``sw``."""
    pp = sc.solver.pso
    update_bests(sw, fitness)
    for i, p in enumerate(sw.particles):
        h1, h2 = _substream(sw.seed, _STEP, sw.epoch, i).random(2)
        p.velocity = velocity_update(p.position, p.velocity, p.best_position, sw.global_best, h1, h2, pp, sw.upper)
        x = np.clip(p.position + p.velocity, 0.0, sw.upper)
        p.position = repair(_decode(x, sc), sc).to_vector()
    sw.epoch += 1
    return sw


def improve(sol: Solution, res: EvalResult, sc: Scenario, g: MultimodalGraph,
            rng: np.random.Generator) -> tuple[Solution, EvalResult]:
    """Inner loop: reference, local solve, re-evaluate; repeated while the true
    objective moves by at least ``obj_tol``. Returns the best solution seen."""
    nlp = sc.solver.nlp
    best_sol, best_res = sol, res
    cur = res
    for _ in range(nlp.max_inner_iters):
        cand = solve_local(extract_reference(cur, sc, g), sc, rng=rng)
        cand_res = evaluate(cand, sc, g)
        if cand_res.objective > best_res.objective:
            best_sol, best_res = cand, cand_res
        change = cand_res.objective - cur.objective
        cur = cand_res
        if abs(change) < nlp.obj_tol:
            break
    return best_sol, best_res


def _particle_task(args):
    i, x, sc, g, seed, epoch, pso_only = args
    sol = _decode(x, sc)
    res = evaluate(sol, sc, g)
    if pso_only:
        return i, res, sol, res
    best_sol, best_res = improve(sol, res, sc, g, _substream(seed, _NLP, epoch, i))
    return i, res, best_sol, best_res


def run_hybrid(sc: Scenario, pso_only: bool = False, threads: int = 1, seed: int | None = None,
               g: MultimodalGraph | None = None) -> HybridResult:
    """Swarm search with NLP improvement of every particle in every epoch.

    Particle work within an epoch runs on ``threads`` workers; each particle
    draws from its own seeded substream, so results do not depend on
    scheduling. With zero epochs the initial swarm is evaluated (and improved)
    once without history records.
    """
    pp = sc.solver.pso
    g = g if g is not None else build_graph(sc)
    sw = init_swarm(sc, seed)
    history: list[HistoryRecord] = []
    best: tuple[float, Solution, EvalResult] | None = None
    epoch_best: list[float] = []
    epoch_mean: list[float] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for e in range(max(pp.epochs, 1)):
            tasks = [(i, p.position, sc, g, sw.seed, e, pso_only) for i, p in enumerate(sw.particles)]
            results = list(pool.map(_particle_task, tasks)) if pool else [_particle_task(t) for t in tasks]
            fitness = []
            for i, res, sol, post in results:
                p = sw.particles[i]
                p.position = sol.to_vector()
                fitness.append(post.objective)
                if pp.epochs > 0:
                    history.append(HistoryRecord(e, i, res.objective, post.objective, post.cost, sol, res.solution))
                if best is None or post.objective > best[0]:
                    best = (post.objective, sol, post)
            epoch_best.append(best[0])
            epoch_mean.append(float(np.mean(fitness)))
            if e + 1 < pp.epochs:
                step(sw, fitness, sc)
            else:
                update_bests(sw, fitness)
    finally:
        if pool:
            pool.shutdown()
    assert best is not None
    if pp.epochs == 0:
        epoch_best, epoch_mean = [], []
    return HybridResult(best[1], best[2], history, epoch_best, epoch_mean)


def write_history(history: list[HistoryRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "particle", "objective", "post_nlp_objective", "cost"])
        for r in history:
            w.writerow([r.epoch, r.particle, repr(r.objective), repr(r.post_nlp_objective), repr(r.cost)])
