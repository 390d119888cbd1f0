import dataclasses

import numpy as np
import pytest

import savfreq.pso as pso
from savfreq.evaluator import operating_cost
from savfreq.pso import box_upper, init_swarm, run_hybrid, step, velocity_update, write_history
from savfreq.scenario import PsoParams, Solution


def _small(sc, **kw):
    params = dict(epochs=2, particles=4)
    params.update(kw)
    return sc.replace(solver=dataclasses.replace(sc.solver, pso=dataclasses.replace(sc.solver.pso, **params)))


def _with_nlp(sc, **kw):
    return sc.replace(solver=dataclasses.replace(sc.solver, nlp=dataclasses.replace(sc.solver.nlp, **kw)))


def test_single_particle_is_baseline(t1):
    sw = init_swarm(_small(t1, particles=1))
    assert len(sw.particles) == 1
    assert np.array_equal(sw.particles[0].position, t1.baseline.to_vector())


def test_init_deterministic_and_feasible(t1):
    sc = _small(t1, particles=40)
    a, b = init_swarm(sc, seed=5), init_swarm(sc, seed=5)
    assert len(a.particles) == 40
    for pa, pb in zip(a.particles, b.particles):
        assert np.array_equal(pa.position, pb.position)
        sol = Solution.from_vector(pa.position, sc.n_patterns, sc.n_periods)
        assert operating_cost(sol, sc) <= sc.budget.daily_budget
        assert np.all(pa.position >= 0) and np.all(pa.position <= box_upper(sc))
    c = init_swarm(sc, seed=6)
    assert not np.array_equal(a.particles[3].position, c.particles[3].position)


def test_velocity_terms_vanish_at_best():
    pp = PsoParams()
    x = np.array([3.0, 4.0])
    v = velocity_update(x, np.zeros(2), x, x, 0.7, 0.2, pp, np.full(2, 100.0))
    assert not v.any()


def test_pure_inertia():
    pp = PsoParams(inertia=1.0, cognitive=0.0, social=0.0, velocity_clamp_frac=1.0)
    upper = np.array([10.0])
    x, v = np.array([1.0]), np.array([3.0])
    seen = []
    for _ in range(5):
        v = velocity_update(x, v, x, x, 0.5, 0.5, pp, upper)
        x = np.clip(x + v, 0.0, upper)
        seen.append(float(x[0]))
    assert seen == [4.0, 7.0, 10.0, 10.0, 10.0]


def test_hand_velocity_example():
    x0, best = np.array([0.0]), np.array([10.0])
    raw = velocity_update(x0, np.zeros(1), best, best, 0.5, 0.5, PsoParams(velocity_clamp_frac=1.0), np.array([100.0]))
    assert raw.tolist() == [20.0]
    # default clamp is a quarter of the box width: 40 -> 10
    upper = np.array([40.0])
    v = velocity_update(x0, np.zeros(1), best, best, 0.5, 0.5, PsoParams(), upper)
    assert v.tolist() == [10.0]
    assert np.clip(x0 + v, 0.0, upper).tolist() == [10.0]


def test_step_keeps_feasibility(t1):
    sc = _small(t1, particles=6)
    sw = init_swarm(sc)
    rng = np.random.default_rng(0)
    for _ in range(3):
        step(sw, rng.uniform(0, 100, 6), sc)
        for p in sw.particles:
            sol = Solution.from_vector(p.position, sc.n_patterns, sc.n_periods)
            assert operating_cost(sol, sc) <= sc.budget.daily_budget
    assert sw.epoch == 3


def test_run_deterministic_and_history_feasible(t1, tmp_path):
    sc = _small(t1)
    a = run_hybrid(sc, seed=3)
    b = run_hybrid(sc, seed=3)
    write_history(a.history, tmp_path / "a.csv")
    write_history(b.history, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(a.history) == 2 * 4
    for r in a.history:
        assert r.cost <= sc.budget.daily_budget
        assert r.post_nlp_objective >= r.objective
    assert all(x <= y for x, y in zip(a.epoch_best, a.epoch_best[1:]))
    assert a.best_eval.objective == max(r.post_nlp_objective for r in a.history)


def test_pso_only_history(t1):
    res = run_hybrid(_small(t1), pso_only=True, seed=1)
    assert all(r.post_nlp_objective == r.objective for r in res.history)


def test_zero_epochs(t1, monkeypatch):
    calls = []
    real = pso.improve
    monkeypatch.setattr(pso, "improve", lambda *a: calls.append(1) or real(*a))
    res = run_hybrid(_small(t1, epochs=0, particles=3), seed=0)
    assert res.history == [] and res.epoch_best == []
    assert len(calls) == 3
    assert res.best_eval.objective >= 0


def test_huge_tolerance_single_inner_pass(t1, monkeypatch):
    calls = []
    real = pso.solve_local
    monkeypatch.setattr(pso, "solve_local", lambda *a, **k: calls.append(1) or real(*a, **k))
    sc = _with_nlp(_small(t1, epochs=2, particles=3), obj_tol=1e30)
    run_hybrid(sc, seed=0)
    assert len(calls) == 2 * 3


def test_hybrid_not_worse_than_pso_only(t1):
    sc = _small(t1, epochs=3, particles=6)
    h = run_hybrid(sc, seed=2).best_eval.objective
    p = run_hybrid(sc, pso_only=True, seed=2).best_eval.objective
    assert h >= p


def test_threads_do_not_change_results(t1, tmp_path):
    sc = _small(t1)
    write_history(run_hybrid(sc, seed=4, threads=1).history, tmp_path / "1.csv")
    write_history(run_hybrid(sc, seed=4, threads=3).history, tmp_path / "3.csv")
    assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "3.csv").read_bytes()


def test_history_csv_columns(t1, tmp_path):
    res = run_hybrid(_small(t1, epochs=1, particles=2), seed=0)
    write_history(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,particle,objective,post_nlp_objective,cost"
    assert len(lines) == 3
    assert float(lines[1].split(",")[3]) == pytest.approx(res.history[0].post_nlp_objective)
