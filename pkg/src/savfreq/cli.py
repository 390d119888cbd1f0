"""Command-line entry point.

    savfreq run --scenario t1.json --out runs/t1 --seed 7
    savfreq evaluate --scenario t1.json --solution runs/t1/solution.json --out ev/
    savfreq oracle --scenario t1.json --freq-grid 0,2,5,10,20 --fleet-grid 0,50,200 --out or/
    savfreq export-history --history runs/t1/history.csv --out runs/t1/convergence.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from collections import defaultdict
from pathlib import Path

from .evaluator import GridTooLarge, brute_force, evaluate, repair, write_tables
from .graph import build_graph
from .pso import run_hybrid, write_history
from .scenario import Scenario, ScenarioError, Solution, apply_overrides, load_scenario


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ScenarioError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    overrides = _parse_set(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["solver.pso.seed"] = str(args.seed)
    return apply_overrides(sc, overrides) if overrides else sc


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_hybrid(sc, pso_only=args.pso_only, threads=args.threads)
    ev = res.best_eval
    _write_json(out / "solution.json", {**res.best.to_dict(), "objective": ev.objective, "cost": ev.cost,
                                        "seed": sc.solver.pso.seed})
    write_tables(ev, sc, out)
    write_history(res.history, out / "history.csv")
    print(f"objective {ev.objective!r}")
    print(f"cost {ev.cost!r}")
    return 0


def cmd_evaluate(args) -> int:
    sc = _load(args)
    if args.solution:
        sol = Solution.from_dict(json.loads(Path(args.solution).read_text()))
    elif sc.baseline is not None:
        sol = sc.baseline
    else:
        raise ScenarioError("no --solution given and the scenario has no baseline")
    if sol.freq.shape != (sc.n_patterns, sc.n_periods):
        raise ScenarioError(f"solution has shape {sol.freq.shape}, scenario needs {(sc.n_patterns, sc.n_periods)}")
    if args.repair:
        sol = repair(sol, sc)
    ev = evaluate(sol, sc, build_graph(sc))
    if args.out:
        write_tables(ev, sc, args.out)
    print(f"objective {ev.objective!r}")
    print(f"cost {ev.cost!r}")
    print(f"feasible {str(ev.feasible).lower()}")
    return 0


def cmd_oracle(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table: list = []
    sol, ev = brute_force(sc, args.freq_grid, args.fleet_grid, table=table)
    _write_json(out / "oracle_best.json", {**sol.to_dict(), "objective": ev.objective, "cost": ev.cost})
    n_p, n_k = sc.n_patterns, sc.n_periods
    names = [f"f_{p}_{k}" for p in range(n_p) for k in range(n_k)] + [f"s_{k}" for k in range(n_k)]
    with open(out / "oracle_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [f"repaired_{n}" for n in names] + ["objective", "cost"])
        for point, repaired, r in table:
            w.writerow([repr(float(v)) for v in point.to_vector()] + [repr(float(v)) for v in repaired.to_vector()]
                       + [repr(r.objective), repr(r.cost)])
    print(f"objective {ev.objective!r}")
    print(f"cost {ev.cost!r}")
    return 0


def cmd_export_history(args) -> int:
    """Per-epoch convergence table (best, mean, best-so-far) from a history.csv."""
    by_epoch: dict[int, list[float]] = defaultdict(list)
    with open(args.history, newline="") as fh:
        for row in csv.DictReader(fh):
            by_epoch[int(row["epoch"])].append(float(row["post_nlp_objective"]))
    best_so_far = float("-inf")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "best_objective", "mean_objective", "best_so_far"])
        for e in sorted(by_epoch):
            vals = by_epoch[e]
            best_so_far = max(best_so_far, max(vals))
            w.writerow([e, repr(max(vals)), repr(sum(vals) / len(vals)), repr(best_so_far)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="savfreq", description="Transit frequency and SAV fleet optimization")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="parameter override, e.g. solver.pso.epochs=2 (repeatable)")

    p = sub.add_parser("run", help="optimize frequencies and fleet")
    scenario_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--pso-only", action="store_true", help="skip the local NLP improvement")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="evaluate one solution (the baseline by default)")
    scenario_args(p)
    p.add_argument("--solution", help="solution JSON with freq_per_h and fleet")
    p.add_argument("--out", help="directory for the result tables")
    p.add_argument("--repair", action="store_true", help="repair the solution to the budget first")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="exhaustive grid search")
    scenario_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--freq-grid", type=_grid, required=True)
    p.add_argument("--fleet-grid", type=_grid, required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("export-history", help="per-epoch convergence table from history.csv")
    p.add_argument("--history", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_history)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GridTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
