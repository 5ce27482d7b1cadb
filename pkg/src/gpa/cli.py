"""Headless entry point: run scenarios, replay traces, batch benchmark suites."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys

import numpy as np

__all__ = ["main"]

log = logging.getLogger("gpa")

EXIT_OK = 0
EXIT_COLLISION = 2
EXIT_CONFIG = 3


def _setup_logging():
    level = os.environ.get("GPA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_scenario(args) -> dict:
    from .scenarios import get_scenario

    scenario = get_scenario(args.scenario, seed=args.seed)
    planner = scenario.setdefault("planner", {})
    if getattr(args, "no_pa", False):
        planner["perception_aware"] = False
    if getattr(args, "legacy_vis", False):
        planner["legacy_visibility"] = True
    if getattr(args, "fine", False):
        planner["kappa"] = 2 * int(planner.get("kappa", 8))
    if getattr(args, "intent", None):
        intent = scenario.setdefault("intent", {})
        intent["mode"] = args.intent
        if args.intent == "trace":
            if not getattr(args, "trace", None):
                raise ValueError("--intent trace needs --trace FILE")
            intent["trace"] = args.trace
    return scenario


def cmd_run(args) -> int:
    from .sim import run

    try:
        scenario = _load_scenario(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        log.error("scenario error: %s", exc)
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or "."
    try:
        metrics, sim = run(scenario, seed=args.seed, out_dir=out,
                           record_trace_path=args.record_trace)
    except (KeyError, ValueError) as exc:
        print(f"scenario error: missing or invalid field {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_map:
        np.savez_compressed(os.path.join(out, "map_snapshot.npz"),
                            origin=sim.planner_map.origin,
                            resolution=sim.planner_map.resolution,
                            cells=sim.planner_map.cells)
    d = metrics.to_dict()
    print(json.dumps(d, sort_keys=True))
    if d["collided"]:
        return EXIT_COLLISION
    return EXIT_OK


def _one_speed_run(seed: int):
    from .scenarios import forest
    from .sim import run

    metrics, sim = run(forest(seed=seed), seed=seed)
    d = metrics.to_dict()
    return {
        "seed": seed,
        "goal_reached": d["goal_reached"],
        "collided": d["collided"],
        "finish_time": d["finish_time"],
        "speed_within_band": d["speed_within_band"],
        "max_speed": d["max_speed"],
        "solve_ms_median": float(np.median(sim.solve_times)),
        "solve_ms_p95": float(np.percentile(sim.solve_times, 95)),
    }


def _one_racing_run(seed: int):
    from .scenarios import ring_course
    from .sim import run

    out = {"seed": seed}
    for mode in ("scripted", "rc"):
        metrics, _ = run(ring_course(seed=seed, intent_mode=mode), seed=seed)
        d = metrics.to_dict()
        out[f"{mode}_success_rate"] = d["ring_success_rate"]
        out[f"{mode}_switches"] = d["switch_total"]
        out[f"{mode}_topo_stability"] = d["topo_stability"]
        out[f"{mode}_finish_time"] = d["finish_time"]
    return out


def _one_corner_run(seed: int):
    from .scenarios import corner
    from .sim import run

    out = {"seed": seed}
    for tag, pa in (("pa", True), ("nopa", False)):
        metrics, _ = run(corner(seed=seed, perception_aware=pa), seed=seed)
        d = metrics.to_dict()
        out[f"{tag}_first_sight"] = d["first_sight"].get("so_corner")
        out[f"{tag}_collided"] = d["collided"]
        out[f"{tag}_goal"] = d["goal_reached"]
    a, b = out["pa_first_sight"], out["nopa_first_sight"]
    out["pa_greater"] = (a is not None) and (b is None or a > b)
    return out


SUITES = {"speed": _one_speed_run, "racing": _one_racing_run, "corner": _one_corner_run}


def cmd_bench(args) -> int:
    runner = SUITES[args.suite]
    seeds = list(range(args.repeats))
    if args.workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(args.workers) as pool:
            rows = pool.map(runner, seeds)
    else:
        rows = [runner(s) for s in seeds]
    os.makedirs(args.out or ".", exist_ok=True)
    path = os.path.join(args.out or ".", f"bench_{args.suite}.csv")
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow(row)
        numeric = {c: [float(r[c]) for r in rows
                       if isinstance(r[c], (int, float)) and r[c] is not None]
                   for c in cols}
        for label, reduce in (("mean", statistics.fmean),
                              ("median", statistics.median),
                              ("p90", lambda v: float(np.percentile(v, 90)))):
            agg = {c: (round(reduce(v), 6) if v else "") for c, v in numeric.items()}
            agg[cols[0]] = label
            w.writerow(agg)
    print(path)
    for row in rows:
        log.info("bench row: %s", row)
    return EXIT_OK


def cmd_serve(args) -> int:
    import asyncio

    from .bridge import serve

    try:
        scenario = _load_scenario(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    scenario.setdefault("intent", {})["mode"] = "live"
    realtime = os.environ.get("GPA_REALTIME", "1") != "0"
    session = asyncio.run(serve(scenario, port=args.port, seed=args.seed,
                                record_trace_path=args.record_trace, realtime=realtime))
    if session.sim.metrics.collided:
        return EXIT_COLLISION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpa", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario headless")
    run_p.add_argument("--scenario", required=True,
                       help="builtin name (smoke|forest|corner|rings) or JSON path")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", default=None, help="artifact directory")
    run_p.add_argument("--no-pa", action="store_true", help="zero the visibility weight")
    run_p.add_argument("--legacy-vis", action="store_true",
                       help="swap in the legacy visibility metric")
    run_p.add_argument("--intent", choices=["scripted", "trace", "rc"], default=None)
    run_p.add_argument("--trace", default=None, help="intent trace to replay")
    run_p.add_argument("--record-trace", default=None, help="record applied intent here")
    run_p.add_argument("--fine", action="store_true",
                       help="double the constraint-point density per piece")
    run_p.add_argument("--dump-map", action="store_true")
    run_p.set_defaults(func=cmd_run)

    replay_p = sub.add_parser("replay", help="replay a recorded intent trace")
    replay_p.add_argument("--scenario", required=True)
    replay_p.add_argument("--seed", type=int, default=0)
    replay_p.add_argument("--out", default=None)
    replay_p.add_argument("--trace", required=True)
    replay_p.add_argument("--no-pa", action="store_true")
    replay_p.add_argument("--legacy-vis", action="store_true")
    replay_p.add_argument("--record-trace", default=None)
    replay_p.add_argument("--dump-map", action="store_true")
    replay_p.set_defaults(func=cmd_run, intent="trace")

    bench_p = sub.add_parser("bench", help="batch suites over seeds")
    bench_p.add_argument("--suite", choices=sorted(SUITES), required=True)
    bench_p.add_argument("--repeats", type=int, default=5)
    bench_p.add_argument("--out", default=None)
    bench_p.add_argument("--workers", type=int, default=1)
    bench_p.set_defaults(func=cmd_bench)

    serve_p = sub.add_parser("serve", help="live session server for the cockpit")
    serve_p.add_argument("--scenario", required=True)
    serve_p.add_argument("--seed", type=int, default=0)
    serve_p.add_argument("--port", type=int, default=8765)
    serve_p.add_argument("--record-trace", default=None)
    serve_p.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
