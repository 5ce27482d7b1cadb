"""Acceptance gate: one test per release criterion, each printing PASS/FAIL.

The closed-loop suites (speed keeping, perception awareness) run their seeds in
a 2-worker pool; everything is seeded and deterministic.
"""

import json
import multiprocessing as mp
import time

import numpy as np
import pytest

from oracles import brute_force_anchor_cluster, brute_force_esdf

from gpa.costs import (
    DynLimits,
    ObjectiveContext,
    PenaltyWeights,
    VisibilityConfig,
    confident_fov_balls,
    total_objective,
)
from gpa.minco import minco_construct, sample_constraint_points
from gpa.worldmap import OCCUPIED, CameraModel, DepthImage, OccupancyWorld, build_esdf, query_distance_gradient


def report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- gradients --


def pillar_field(rng):
    world = OccupancyWorld.empty([-3, -3, -3], (60, 60, 60), 0.1)
    for _ in range(6):
        c = rng.uniform(-2.0, 2.0, 2)
        i, j, _ = world.world_to_index([c[0], c[1], 0])
        world.cells[i:i + 2, j:j + 2, :] = OCCUPIED
    return build_esdf(world, 5.0)


def test_gradient_certification():
    rng = np.random.default_rng(2024)
    esdf = pillar_field(rng)
    configs = [
        ("energy", PenaltyWeights(1, 0, 0, 0, 0, 0), False),
        ("dynamics", PenaltyWeights(0, 1, 0, 0, 0, 0), False),
        ("time", PenaltyWeights(0, 0, 1, 0, 0, 0), False),
        ("visibility", PenaltyWeights(0, 0, 0, 1, 0, 0), False),
        ("visibility-legacy", PenaltyWeights(0, 0, 0, 1, 0, 0), True),
        ("collision", PenaltyWeights(0, 0, 0, 0, 1, 0), False),
        ("uniformity", PenaltyWeights(0, 0, 0, 0, 0, 1), False),
        ("total", PenaltyWeights(1e-2, 1e2, 10, 1e2, 1e3, 1e2), False),
    ]
    t0 = time.perf_counter()
    n_fixtures = 100
    h = 2e-7
    worst = 0.0
    for trial in range(n_fixtures):
        M = int(rng.integers(2, 7))
        T = rng.uniform(0.5, 1.4, M)
        start = rng.uniform(-1.6, -0.2, 3) * np.array([1, 1, 0.2])
        goal = rng.uniform(0.4, 2.0, 3) * np.array([1, 1, 0.2])
        q = np.linspace(start, goal, M + 1)[1:-1] + rng.normal(size=(M - 1, 3)) * 0.3
        bs = np.vstack([start, rng.normal(size=3) * 0.5, rng.normal(size=3) * 0.5])
        be = np.vstack([goal, np.zeros(3), np.zeros(3)])
        name, weights, legacy = configs[trial % len(configs)]
        ctx = ObjectiveContext(
            boundary_start=bs, boundary_end=be, weights=weights, esdf=esdf,
            vis=VisibilityConfig(target=rng.uniform(0.8, 2.4, 3) * np.array([1, 1, 0.2]),
                                 n_balls=8, rho=0.8, legacy=legacy),
            limits=DynLimits(max_v=1.0, max_a=2.0, max_j=10.0), kappa=6)
        rep = total_objective(q, T, ctx)
        for i in range(M - 1):
            for d in range(3):
                qp = q.copy(); qp[i, d] += h
                qm = q.copy(); qm[i, d] -= h
                fd = (total_objective(qp, T, ctx).total - total_objective(qm, T, ctx).total) / (2 * h)
                err = abs(rep.grad_q[i, d] - fd) / max(abs(fd), abs(rep.grad_q[i, d]), 1e-6)
                worst = max(worst, err)
                assert err < 1e-4, (name, trial, "q", i, d, rep.grad_q[i, d], fd)
        for i in range(M):
            Tp = T.copy(); Tp[i] += h
            Tm = T.copy(); Tm[i] -= h
            fd = (total_objective(q, Tp, ctx).total - total_objective(q, Tm, ctx).total) / (2 * h)
            err = abs(rep.grad_T_total[i] - fd) / max(abs(fd), abs(rep.grad_T_total[i]), 1e-6)
            worst = max(worst, err)
            assert err < 1e-4, (name, trial, "T", i, rep.grad_T_total[i], fd)
    wall = time.perf_counter() - t0
    report("gradient certification",
           wall < 60.0,
           f"{n_fixtures} fixtures, all penalties, worst rel err {worst:.2e}, {wall:.1f}s")


# ------------------------------------------------------------------- minco --


def test_minco_correctness():
    rng = np.random.default_rng(5)
    ok_interp = True
    for _ in range(25):
        M = int(rng.integers(1, 7))
        T = rng.uniform(0.4, 2.0, M)
        q = rng.normal(size=(M - 1, 3))
        bs = rng.normal(size=(3, 3))
        be = rng.normal(size=(3, 3))
        tr = minco_construct(q, T, bs, be)
        knots = tr.t_knots
        for n in range(3):
            ok_interp &= bool(np.allclose(tr.eval_piece(0, 0.0, n), bs[n], atol=1e-9))
            ok_interp &= bool(np.allclose(tr.eval_piece(M - 1, T[-1], n), be[n], atol=1e-9))
        for i in range(M - 1):
            ok_interp &= bool(np.allclose(tr.eval(knots[i + 1]), q[i], atol=1e-9))

    # min-jerk recovery through the optimizer
    from gpa.optimizer import OptimizerConfig, chain_to_tau, minimize, pack, unpack

    bs = np.zeros((3, 3))
    be = np.zeros((3, 3)); be[0] = [1.0, 0.5, 0.0]
    ctx = ObjectiveContext(boundary_start=bs, boundary_end=be,
                           weights=PenaltyWeights(1.0, 0, 1e-3, 0, 0, 0))

    def fun(x):
        qv, Tv = unpack(x, 1)
        if not np.all(np.isfinite(Tv)) or np.any(Tv > 1e6):
            return np.inf, np.zeros_like(x)
        rep = total_objective(qv, Tv, ctx)
        return rep.total, chain_to_tau(rep.grad_q, rep.grad_T_total, Tv)

    x, _ = minimize(fun, pack(np.zeros((0, 3)), np.array([0.7])),
                    OptimizerConfig(max_iter=150, grad_tol_rel=1e-12))
    _, T_opt = unpack(x, 1)
    T_star = (3600.0 * float(be[0] @ be[0]) / 1e-3) ** (1.0 / 6.0)
    recovered = minco_construct(np.zeros((0, 3)), T_opt, bs, be)
    oracle = minco_construct(np.zeros((0, 3)), [T_star], bs, be)
    ok_minjerk = bool(np.allclose(recovered.coeffs, oracle.coeffs, atol=1e-6))

    # linear construction scaling
    times = []
    sizes = [8, 16, 32, 64]
    for M in sizes:
        q = rng.normal(size=(M - 1, 3))
        T = rng.uniform(0.5, 1.5, M)
        reps = []
        for _ in range(7):
            t0 = time.perf_counter()
            minco_construct(q, T, np.zeros((3, 3)), np.zeros((3, 3)))
            reps.append(time.perf_counter() - t0)
        times.append(min(reps))
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    ok_scale = slope < 1.6
    report("minco correctness",
           ok_interp and ok_minjerk and ok_scale,
           f"interp 1e-9 {ok_interp}, min-jerk recovery {ok_minjerk}, scaling slope {slope:.2f}")


# ----------------------------------------------------- field + clustering --


def test_esdf_and_clustering_oracles():
    rng = np.random.default_rng(99)
    esdf_exact = True
    for _ in range(3):
        world = OccupancyWorld.empty([0, 0, 0], (32, 32, 32), 0.1)
        world.cells[rng.random(world.cells.shape) < 0.05] = OCCUPIED
        esdf = build_esdf(world, 1.5)
        esdf_exact &= bool(np.allclose(esdf.distance, brute_force_esdf(world, 1.5), atol=1e-9))

    cam = CameraModel(fx=18.0, fy=18.0, cx=16, cy=16, width=32, height=32,
                      min_depth=0.1, max_depth=12.0)
    from gpa.intent import dbscan_cluster, generate_topo_path

    cluster_ok = True
    for trial in range(6):
        depth = np.full((32, 32), 10.0)
        for _ in range(rng.integers(2, 5)):
            u0, v0 = rng.integers(0, 26, 2)
            du, dv = rng.integers(2, 7, 2)
            depth[v0:v0 + dv, u0:u0 + du] = rng.uniform(0.8, 4.0)
        vs, us = np.nonzero((depth >= 0.3) & (depth <= 5.0))
        if len(us) == 0:
            continue
        k = rng.integers(0, len(us))
        anchor = (int(us[k]), int(vs[k]))
        frame = DepthImage(depth=depth, r_world_cam=np.eye(3), t_world_cam=np.zeros(3))
        got = {tuple(p) for p in dbscan_cluster(frame, cam, anchor).pixels}
        want = brute_force_anchor_cluster(depth, cam, anchor, 0.25, 4, (0.3, 5.0))
        cluster_ok &= got == want

    # canonical topological fixtures: empty, ring, gap
    empty = DepthImage(depth=np.full((32, 32), 10.0), r_world_cam=np.eye(3),
                       t_world_cam=np.zeros(3))
    t_empty = generate_topo_path(empty, cam, (16, 16))
    fixture_ok = len(t_empty.waypoints) == 0 and len(t_empty.clusters) == 0

    ring = np.full((32, 32), 10.0)
    for ang in np.linspace(0, 2 * np.pi, 200):
        ring[int(round(16 + 5 * np.sin(ang))), int(round(16 + 5 * np.cos(ang)))] = 2.0
    t_ring = generate_topo_path(DepthImage(depth=ring, r_world_cam=np.eye(3),
                                           t_world_cam=np.zeros(3)), cam, (16, 16))
    fixture_ok &= len(t_ring.clusters) == 1 and len(t_ring.waypoints) == 1
    fixture_ok &= abs(t_ring.ray_params[0] - 2.0) < 0.1

    gap = np.full((32, 32), 10.0)
    gap[8:24, 6:12] = 2.0
    gap[8:24, 20:26] = 2.0
    t_gap = generate_topo_path(DepthImage(depth=gap, r_world_cam=np.eye(3),
                                          t_world_cam=np.zeros(3)), cam, (16, 16))
    fixture_ok &= len(t_gap.clusters) == 2 and 1 <= len(t_gap.waypoints) <= 2

    report("esdf and clustering oracles",
           esdf_exact and cluster_ok and fixture_ok,
           f"esdf exact {esdf_exact}, dbscan oracle {cluster_ok}, topo fixtures {fixture_ok}")


# ----------------------------------------------------------- closed loop  --


def _speed_run(seed):
    from gpa.scenarios import forest
    from gpa.sim import run

    metrics, sim = run(forest(seed=seed), seed=seed)
    d = metrics.to_dict()
    return {"seed": seed, "goal": d["goal_reached"], "collided": d["collided"],
            "band": d["speed_within_band"], "max_speed": d["max_speed"],
            "solve_times": list(sim.solve_times)}


def _corner_pair(seed):
    from gpa.scenarios import corner
    from gpa.sim import run

    out = {"seed": seed}
    for tag, pa in (("pa", True), ("nopa", False)):
        metrics, _ = run(corner(seed=seed, perception_aware=pa), seed=seed)
        d = metrics.to_dict()
        out[tag] = d["first_sight"].get("so_corner")
        out[f"{tag}_collided"] = d["collided"]
    return out


@pytest.fixture(scope="module")
def speed_suite():
    with mp.get_context("spawn").Pool(2) as pool:
        return pool.map(_speed_run, range(20))


def test_speed_keeping(speed_suite):
    rows = speed_suite
    completed = [r for r in rows if r["goal"] and not r["collided"]]
    bands = [r["band"] for r in completed]
    ok_complete = len(completed) >= 19
    ok_band = all(b is not None and b >= 0.80 for b in bands)
    # executed speed never exceeds the commanded maximum by more than the
    # optimizer feasibility slack
    worst_overspeed = max(r["max_speed"] for r in rows)
    ok_cap = worst_overspeed <= 1.5 * 1.05 + 1e-9
    report("speed keeping (forest, 20 seeds)",
           ok_complete and ok_band and ok_cap,
           f"completed {len(completed)}/20, band min {min(bands):.3f} "
           f"mean {np.mean(bands):.3f}, max speed {worst_overspeed:.3f}")


def test_replan_budget():
    # dedicated single-process run: the criterion is per-core latency, so the
    # measurement must not share the machine with the pooled suites
    rows = _speed_run(0)
    times = np.asarray(rows["solve_times"])
    med = float(np.median(times))
    p95 = float(np.percentile(times, 95))
    report("replan budget", med <= 15.0 and p95 <= 50.0,
           f"median {med:.1f} ms, p95 {p95:.1f} ms over {len(times)} replans")


def test_perception_awareness():
    with mp.get_context("spawn").Pool(2) as pool:
        pairs = pool.map(_corner_pair, range(10))
    wins = 0
    for row in pairs:
        pa, nopa = row["pa"], row["nopa"]
        if pa is not None and (nopa is None or pa > nopa):
            wins += 1
    report("perception awareness (PA > NoPA first sight)",
           wins >= 9,
           f"{wins}/10 pairs, values {[(round(r['pa'] or 0, 2), round(r['nopa'] or 0, 2)) for r in pairs]}")


def _visibility_ratio_profile(traj, esdf, target):
    """Per constraint point, the worst ball clearance ratio min_k Xi(v_k)/l_k.

    The pinned start sample is excluded (no optimizer authority there); the
    scalar compared across metrics is the median over the trajectory, since in
    any occlusion fixture the early samples are occluded no matter the metric.
    """
    cfg = VisibilityConfig(target=target, n_balls=20, rho=0.8)
    pts = sample_constraint_points(traj, 8)
    out = []
    for p in pts.positions_flat()[1:]:
        centers, _, l, _ = confident_fov_balls(p, cfg)
        if len(centers) == 0:
            continue
        dist, _, _ = query_distance_gradient(esdf, centers)
        out.append(float(np.min(dist / l)))
    return np.asarray(out)


def test_metric_ordering_new_vs_legacy():
    # canonical single-obstacle fixture: a block sitting on the line of sight
    from gpa.intent import IntentState, TopoPath
    from gpa.planner import Planner, PlannerConfig

    world = OccupancyWorld.empty([0, 0, 0], (100, 60, 24), 0.1)
    world.cells[45:55, 20:30, :] = OCCUPIED         # 1 m block between start and target
    esdf = build_esdf(world, 5.0)
    start = np.array([2.0, 2.5, 1.2])
    target = np.array([8.0, 2.5, 1.2])
    ray = target - start
    ray = ray / np.linalg.norm(ray)
    topo = TopoPath(ray_origin=start, ray_dir=ray, waypoints=np.zeros((0, 3)), clusters=[])

    med = {}
    for legacy in (False, True):
        planner = Planner(PlannerConfig(legacy_visibility=legacy))
        intent = IntentState(gaze_px=(0, 0), ray_origin=start, ray_dir=ray,
                             local_target=target, desired_speed=1.2)
        res = planner.replan((start, np.array([1.2, 0.0, 0.0]), np.zeros(3)),
                             intent, topo, world, 0.0, esdf=esdf)
        med[legacy] = float(np.median(_visibility_ratio_profile(res.traj, esdf, target)))
    report("visibility metric ordering (new >= legacy)",
           med[False] >= med[True] - 1e-9 and med[False] > 0.0,
           f"median min-ratio new {med[False]:.3f} vs legacy {med[True]:.3f}")


def test_topological_stability():
    from gpa.scenarios import ring_course
    from gpa.sim import run

    scripted, _ = run(ring_course(seed=0, intent_mode="scripted"), seed=0)
    rc, _ = run(ring_course(seed=0, intent_mode="rc"), seed=0)
    s = scripted.to_dict()
    r = rc.to_dict()
    ok = (s["ring_success_rate"] == 1.0 and s["switch_total"] == 0
          and r["switch_total"] > s["switch_total"]
          and r["ring_success_rate"] < s["ring_success_rate"])
    report("topological stability (gaze vs rc)",
           ok,
           f"scripted S={s['ring_success_rate']} switches={s['switch_total']}; "
           f"rc S={r['ring_success_rate']} switches={r['switch_total']}")


def test_determinism_bitwise(tmp_path):
    from gpa.cli import main

    sc = {
        "name": "det",
        "seed": 0,
        "world": {"aabb": [[0, -3, 0], [12, 3, 2.5]], "resolution": 0.1,
                  "primitives": [{"type": "cylinder", "center": [5.0, 0.6, 1.25],
                                  "radius": 0.15, "height": 2.5}]},
        "start": {"position": [1.0, 0.0, 1.2], "yaw": 0.0},
        "goal": {"position": [10.0, 0.0, 1.2], "radius": 0.8},
        "intent": {"mode": "scripted", "speed": 1.3, "targets": [[10.0, 0.0, 1.2]]},
        "planner": {},
        "duration": 16.0,
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(sc))
    trace = tmp_path / "trace.jsonl"
    assert main(["run", "--scenario", str(path), "--seed", "4", "--out",
                 str(tmp_path / "rec"), "--record-trace", str(trace)]) == 0
    for d in ("r1", "r2"):
        assert main(["replay", "--scenario", str(path), "--seed", "4",
                     "--out", str(tmp_path / d), "--trace", str(trace)]) == 0
    rec = (tmp_path / "rec" / "metrics.json").read_bytes()
    r1 = (tmp_path / "r1" / "metrics.json").read_bytes()
    r2 = (tmp_path / "r2" / "metrics.json").read_bytes()
    report("bitwise determinism (record/replay)",
           rec == r1 == r2,
           f"metrics.json {len(rec)} bytes identical across record and two replays")
