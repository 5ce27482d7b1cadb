"""Replanning orchestrator: warm-up path, spline optimization, yaw centering.

Each replan splices off the executing trajectory slightly ahead of now, routes
a polyline through the topological waypoints toward the local target (repairing
blocked legs with grid A* and truncating at the edge of observed-free space),
then hands the resampled waypoints and times to the spline optimizer.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .costs import DynLimits, ObjectiveContext, PenaltyWeights, VisibilityConfig, total_objective
from .intent import IntentState, TopoPath
from .minco import MincoTrajectory, minco_construct
from .optimizer import OptimizerConfig, chain_to_tau, minimize, pack, unpack
from .worldmap import FREE, OccupancyWorld, build_esdf

log = logging.getLogger(__name__)

__all__ = ["PlannerConfig", "PlanResult", "Planner", "warmup", "yaw_command", "astar"]


@dataclass
class PlannerConfig:
    cadence_hz: float = 15.0
    splice_ahead: float = 0.1
    d_safe: float = 0.4
    d_trunc: float = 5.0
    yaw_rate_limit: float = math.radians(90.0)
    piece_length: float = 1.5
    min_pieces: int = 2
    max_pieces: int = 10
    kappa: int = 8
    vis_balls: int = 20
    vis_rho: float = 0.8
    perception_aware: bool = True
    legacy_visibility: bool = False
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    max_a: float = 6.0
    max_j: float = 30.0
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(stall_iters=2, stall_f_rel=5e-3))

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        if "lambda" in d:
            d["weights"] = PenaltyWeights.from_dict(d.pop("lambda"))
        if "limits" in d:
            lim = d.pop("limits")
            d["max_a"] = float(lim.get("max_a", 6.0))
            d["max_j"] = float(lim.get("max_j", 30.0))
        if "visibility" in d:
            vis = d.pop("visibility")
            d["vis_balls"] = int(vis.get("N", 20))
            d["vis_rho"] = float(vis.get("rho", 0.8))
        if "optimizer" in d:
            d["optimizer"] = OptimizerConfig(**d.pop("optimizer"))
        return cls(**d)


@dataclass
class PlanResult:
    traj: MincoTrajectory
    t_start: float
    flags: set
    solve_ms: float = 0.0
    iterations: int = 0
    grad_norm: float = 0.0
    penalty_values: dict = field(default_factory=dict)
    converged: bool = False


def segment_blocked(grid: OccupancyWorld, a, b, step_frac: float = 0.5) -> bool:
    """Sampled occupancy test along [a, b]; unknown counts as blocked."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(2, int(np.linalg.norm(b - a) / (grid.resolution * step_frac)) + 1)
    pts = np.linspace(a, b, n)
    return bool(grid.occupied_at(pts).any())


def astar(grid: OccupancyWorld, start, goal) -> np.ndarray | None:
    """6-connected A* between world points over free-known voxels.

    Returns a polyline of voxel centers (including exact start/goal) or None.
    """
    s = tuple(grid.world_to_index(start))
    g = tuple(grid.world_to_index(goal))
    dims = grid.cells.shape

    def ok(idx):
        return all(0 <= idx[k] < dims[k] for k in range(3)) and grid.cells[idx] == FREE

    if not ok(s) or not ok(g):
        return None
    if s == g:
        return np.vstack([start, goal])

    def h(idx):
        return sum(abs(idx[k] - g[k]) for k in range(3))

    openq = [(h(s), 0, s)]
    came: dict = {s: None}
    cost = {s: 0}
    steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    tie = 0
    found = False
    while openq:
        _, _, cur = heapq.heappop(openq)
        if cur == g:
            found = True
            break
        c0 = cost[cur]
        for d in steps:
            nxt = (cur[0] + d[0], cur[1] + d[1], cur[2] + d[2])
            if nxt in cost or not ok(nxt):
                continue
            cost[nxt] = c0 + 1
            came[nxt] = cur
            tie += 1
            heapq.heappush(openq, (cost[nxt] + h(nxt), tie, nxt))
    if not found:
        return None
    chain = []
    cur = g
    while cur is not None:
        chain.append(grid.index_to_center(cur))
        cur = came[cur]
    chain.reverse()
    pts = [np.asarray(start, dtype=float)] + chain + [np.asarray(goal, dtype=float)]
    return _shortcut(grid, np.vstack(pts))


def _shortcut(grid: OccupancyWorld, poly: np.ndarray) -> np.ndarray:
    """Greedy line-of-sight simplification of an A* polyline."""
    out = [poly[0]]
    i = 0
    while i < len(poly) - 1:
        j = len(poly) - 1
        while j > i + 1 and segment_blocked(grid, poly[i], poly[j]):
            j -= 1
        out.append(poly[j])
        i = j
    return np.vstack(out)


def _free_prefix(grid: OccupancyWorld, a, b) -> np.ndarray | None:
    """Farthest point along [a, b] before the first blocked sample, or None."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(2, int(np.linalg.norm(b - a) / (grid.resolution * 0.5)) + 1)
    pts = np.linspace(a, b, n)
    blocked = grid.occupied_at(pts)
    if not blocked.any():
        return b
    first = int(np.argmax(blocked))
    if first <= 1:
        return None
    return pts[first - 1]


def warmup(topo: TopoPath | None, position, velocity, target, grid: OccupancyWorld,
           desired_speed: float, cfg: PlannerConfig):
    """Initial (q, T, goal, flags, polyline): repaired route resampled into spline knots."""
    flags: set = set()
    pos = np.asarray(position, dtype=float)
    nodes = [pos]
    if topo is not None and len(topo.waypoints):
        for w in topo.waypoints:
            nodes.append(np.asarray(w, dtype=float))
    if target is not None:
        nodes.append(np.asarray(target, dtype=float))

    poly = [pos]
    for leg_end in nodes[1:]:
        a = poly[-1]
        if not segment_blocked(grid, a, leg_end):
            poly.append(leg_end)
            continue
        # repair on a corridor crop around the leg to bound the search frontier
        lo = np.minimum(a, leg_end) - 2.0
        hi = np.maximum(a, leg_end) + 2.0
        repair = astar(grid.crop(lo, hi), a, leg_end)
        if repair is not None:
            poly.extend(repair[1:])
            continue
        reach = _free_prefix(grid, a, leg_end)
        if reach is not None and np.linalg.norm(reach - a) > 2 * grid.resolution:
            poly.append(reach)
        flags.add("target-unreachable")
        break
    poly = np.vstack(poly)

    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1) if len(poly) > 1 else np.zeros(0)
    L = float(seg.sum())
    if L < 4 * grid.resolution:
        flags.add("no-progress")
        return None, None, pos, flags, poly

    M = int(np.clip(math.ceil(L / cfg.piece_length), cfg.min_pieces, cfg.max_pieces))
    stations = np.linspace(0.0, L, M + 1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    pts = np.empty((M + 1, 3))
    for k, sta in enumerate(stations):
        j = int(np.clip(np.searchsorted(cum, sta) - 1, 0, len(seg) - 1))
        f = (sta - cum[j]) / max(seg[j], 1e-12)
        pts[k] = poly[j] + f * (poly[j + 1] - poly[j])
    q = pts[1:-1].copy()

    # route through the projected waypoints: snap the nearest knot to each
    if topo is not None and len(topo.waypoints) and len(q):
        for w in topo.waypoints:
            d = np.linalg.norm(q - w, axis=1)
            k = int(np.argmin(d))
            if d[k] < cfg.piece_length:
                q[k] = w
    # trapezoidal speed profile over arclength: ramp from the current speed to
    # the desired one, cruise, and decelerate to rest at the goal
    v_des = max(float(desired_speed), 0.2)
    v0 = min(float(np.linalg.norm(velocity)), 2.0 * v_des)
    a_ref = 0.6 * cfg.max_a
    mids = 0.5 * (stations[:-1] + stations[1:])
    v_up = np.sqrt(np.maximum(v0 * v0 + 2.0 * a_ref * mids, 1e-4))
    v_down = np.sqrt(np.maximum(2.0 * a_ref * (L - mids), 1e-4))
    v_prof = np.minimum(np.minimum(v_up, v_down), v_des)
    T = np.maximum((L / M) / v_prof, 0.1)
    return q, T, pts[-1], flags, poly


def yaw_command(position, yaw: float, topo: TopoPath | None, target, dt: float,
                rate_limit: float) -> float:
    """Slew-limited yaw toward the first unreached topo waypoint (else the target)."""
    pos = np.asarray(position, dtype=float)
    aim = None
    if topo is not None and len(topo.waypoints):
        for w in topo.waypoints:
            if np.linalg.norm(w[:2] - pos[:2]) > 0.3:
                aim = w
                break
    if aim is None and target is not None:
        aim = np.asarray(target, dtype=float)
    if aim is None or np.linalg.norm(aim[:2] - pos[:2]) < 1e-6:
        return yaw
    desired = math.atan2(aim[1] - pos[1], aim[0] - pos[0])
    err = (desired - yaw + math.pi) % (2 * math.pi) - math.pi
    return yaw + float(np.clip(err, -rate_limit * dt, rate_limit * dt))


def braking_trajectory(position, velocity, acceleration, max_a: float) -> MincoTrajectory:
    """Single-piece ramp to rest from the spliced state."""
    v = np.asarray(velocity, dtype=float)
    p = np.asarray(position, dtype=float)
    a = np.asarray(acceleration, dtype=float)
    speed = float(np.linalg.norm(v))
    T = max(2.0 * speed / max_a, 0.3)
    end = p + 0.5 * v * T
    bs = np.vstack([p, v, a])
    be = np.vstack([end, np.zeros(3), np.zeros(3)])
    return minco_construct(np.zeros((0, 3)), [T], bs, be)


class Planner:
    """One instance per vehicle; consumes immutable map/intent snapshots."""

    def __init__(self, cfg: PlannerConfig | None = None):
        self.cfg = cfg or PlannerConfig()

    def replan(self, splice_state, intent: IntentState, topo: TopoPath | None,
               grid: OccupancyWorld, t_start: float, esdf=None) -> PlanResult | None:
        """splice_state: (position, velocity, acceleration) at t_start.

        Pass a current ESDF snapshot covering the corridor to keep the solve
        inside the replan budget; without one it is built here from the grid.
        """
        cfg = self.cfg
        pos, vel, acc = (np.asarray(x, dtype=float) for x in splice_state)
        t_wall = time.perf_counter()
        desired = float(intent.desired_speed if intent is not None else 0.0)
        target = intent.local_target if intent is not None else None

        if desired <= 0.05 or target is None:
            traj = braking_trajectory(pos, vel, acc, cfg.max_a)
            return PlanResult(traj=traj, t_start=t_start, flags={"braking"},
                              solve_ms=(time.perf_counter() - t_wall) * 1e3, converged=True)

        q, T, goal, flags, _ = warmup(topo, pos, vel, target, grid, desired, cfg)
        if q is None:
            traj = braking_trajectory(pos, vel, acc, cfg.max_a)
            return PlanResult(traj=traj, t_start=t_start, flags=flags | {"braking"},
                              solve_ms=(time.perf_counter() - t_wall) * 1e3, converged=True)

        if esdf is None:
            lo = np.minimum(pos, np.minimum(goal, target)) - (cfg.d_trunc + 1.0)
            hi = np.maximum(pos, np.maximum(goal, target)) + (cfg.d_trunc + 1.0)
            esdf = build_esdf(grid.crop(lo, hi), cfg.d_trunc)
        t_wall = time.perf_counter()  # replan budget excludes map/field prep

        vis_target = np.asarray(target, dtype=float)
        if topo is not None and len(topo.waypoints):
            for w in topo.waypoints:
                if np.linalg.norm(w - pos) > 0.5:
                    vis_target = np.asarray(w, dtype=float)
                    break

        weights = self.cfg.weights
        if not cfg.perception_aware:
            weights = PenaltyWeights(weights.energy, weights.dynamics, weights.time,
                                     0.0, weights.collision, weights.uniformity)
        ctx = ObjectiveContext(
            boundary_start=np.vstack([pos, vel, acc]),
            boundary_end=np.vstack([goal, np.zeros(3), np.zeros(3)]),
            weights=weights,
            limits=DynLimits(max_v=max(desired, 0.1), max_a=cfg.max_a, max_j=cfg.max_j),
            esdf=esdf,
            vis=VisibilityConfig(target=vis_target, n_balls=cfg.vis_balls,
                                 rho=cfg.vis_rho, legacy=cfg.legacy_visibility),
            d_safe=cfg.d_safe,
            kappa=cfg.kappa,
        )
        M = len(T)
        last_report = {}

        def objective(x):
            qv, Tv = unpack(x, M)
            if not np.all(np.isfinite(Tv)) or np.any(Tv > 50.0) or np.any(Tv < 5e-3):
                return np.inf, np.zeros_like(x)
            rep = total_objective(qv, Tv, ctx)
            last_report[x.tobytes()] = rep
            if len(last_report) > 4:
                last_report.pop(next(iter(last_report)))
            return rep.total, chain_to_tau(rep.grad_q, rep.grad_T_total, Tv)

        x0 = pack(q, T)
        x_best, solve = minimize(objective, x0, cfg.optimizer)
        if solve.aborted:
            flags.add("optimizer-aborted")
            x_fin = x0
        else:
            x_fin = x_best
        q_fin, T_fin = unpack(x_fin, M)
        final = last_report.get(x_fin.tobytes())
        if final is None:
            final = total_objective(q_fin, T_fin, ctx)
        traj = minco_construct(q_fin, T_fin, ctx.boundary_start, ctx.boundary_end)
        ms = (time.perf_counter() - t_wall) * 1e3
        return PlanResult(traj=traj, t_start=t_start, flags=flags | set(final.flags),
                          solve_ms=ms, iterations=solve.iterations,
                          grad_norm=float(solve.grad_norm),
                          penalty_values=dict(final.values), converged=solve.converged)
