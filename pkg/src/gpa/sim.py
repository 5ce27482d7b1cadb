"""Closed-loop experiment engine with ideal trajectory tracking.

Each tick renders a depth frame from the ground-truth world, integrates it into
the planner map, samples the intent source, replans at the configured cadence,
and advances the vehicle along the newest spliced trajectory.  All randomness
flows from the run seed, so a (scenario, seed, trace) triple is bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .intent import GazeSample, IntentPipeline, read_trace
from .planner import Planner, PlannerConfig, yaw_command
from .worldmap import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    CameraModel,
    OccupancyWorld,
    _raycast_grid,
    add_primitive,
    build_esdf,
    integrate_depth,
    query_distance_gradient,
    render_depth,
    world_from_primitives,
)

log = logging.getLogger(__name__)

__all__ = ["VehicleState", "Metrics", "Simulation", "run", "topology_switch_counter",
           "first_sight_distance", "default_camera"]


@dataclass
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    t: float

    def wrap(self):
        self.yaw = (self.yaw + math.pi) % (2 * math.pi) - math.pi
        return self


@dataclass
class Metrics:
    ring_success: int = 0
    ring_total: int = 0
    switch_per_ring: list = field(default_factory=list)
    finish_time: float | None = None
    collided: bool = False
    goal_reached: bool = False
    first_sight: dict = field(default_factory=dict)
    speed_within_band: float | None = None
    max_speed: float = 0.0
    replan_count: int = 0

    @property
    def success_rate(self) -> float | None:
        return self.ring_success / self.ring_total if self.ring_total else None

    @property
    def topo_stability(self) -> float | None:
        """Ring count over total switches; None encodes the no-switch infinity."""
        total = sum(self.switch_per_ring) if self.switch_per_ring else 0
        if not self.ring_total:
            return None
        return self.ring_total / total if total > 0 else None

    def to_dict(self) -> dict:
        total_switches = int(sum(self.switch_per_ring)) if self.switch_per_ring else 0
        return {
            "ring_success": self.ring_success,
            "ring_total": self.ring_total,
            "ring_success_rate": self.success_rate,
            "switch_per_ring": [int(x) for x in self.switch_per_ring],
            "switch_total": total_switches,
            "topo_stability": self.topo_stability,
            "finish_time": self.finish_time,
            "collided": self.collided,
            "goal_reached": self.goal_reached,
            "first_sight": self.first_sight,
            "speed_within_band": self.speed_within_band,
            "max_speed": self.max_speed,
            "replan_count": self.replan_count,
        }


def default_camera(spec: dict | None = None) -> CameraModel:
    spec = spec or {}
    w = int(spec.get("width", 160))
    h = int(spec.get("height", 120))
    fx = float(spec.get("fx", 0.55 * w))
    return CameraModel(
        fx=fx, fy=float(spec.get("fy", fx)),
        cx=float(spec.get("cx", w / 2)), cy=float(spec.get("cy", h / 2)),
        width=w, height=h,
        min_depth=float(spec.get("min_depth", 0.1)),
        max_depth=float(spec.get("max_depth", 8.0)),
    )


# -- intent sources ----------------------------------------------------------


class ScriptedGazeSource:
    """Gaze pinned to the projection of the active route target (perfect operator)."""

    def __init__(self, targets, speed: float, advance_radius: float = 1.2):
        self.targets = [np.asarray(t, dtype=float) for t in targets]
        self.speed = float(speed)
        self.advance_radius = advance_radius
        self.idx = 0

    @property
    def active_target(self):
        return self.targets[min(self.idx, len(self.targets) - 1)]

    def _advance(self, position):
        while self.idx < len(self.targets) - 1 and (
                np.linalg.norm(self.targets[self.idx] - position) < self.advance_radius):
            self.idx += 1

    def look_point(self, position):
        self._advance(position)
        return self.active_target

    def sample(self, t, vehicle, cam: CameraModel):
        look = self.look_point(vehicle.position)
        return _project_normalized(look, vehicle, cam) + (self.speed,)


class RcNoisySource(ScriptedGazeSource):
    """Heading-channel baseline: bearing to the target plus OU noise, same speed input."""

    def __init__(self, targets, speed: float, rng: np.random.Generator,
                 sigma: float = 0.35, tau: float = 0.6, advance_radius: float = 1.2):
        super().__init__(targets, speed, advance_radius)
        self.rng = rng
        self.sigma = sigma
        self.tau = tau
        self.theta = 0.0
        self.phi = 0.0

    def sample(self, t, vehicle, cam: CameraModel):
        dt = 1.0 / 15.0
        decay = math.exp(-dt / self.tau)
        kick = math.sqrt(max(1.0 - decay * decay, 0.0))
        self.theta = self.theta * decay + self.sigma * kick * self.rng.standard_normal()
        self.phi = self.phi * decay + 0.3 * self.sigma * kick * self.rng.standard_normal()
        look = self.look_point(vehicle.position)
        delta = look - vehicle.position
        dist = np.linalg.norm(delta)
        if dist < 1e-6:
            return 0.5, 0.5, True, self.speed
        bearing = math.atan2(delta[1], delta[0]) + self.theta
        pitch = math.asin(np.clip(delta[2] / dist, -1, 1)) + self.phi
        noisy = vehicle.position + dist * np.array([
            math.cos(bearing) * math.cos(pitch),
            math.sin(bearing) * math.cos(pitch),
            math.sin(pitch),
        ])
        return _project_normalized(noisy, vehicle, cam) + (self.speed,)


class TraceSource:
    """Replays a recorded {t, u, v, valid, speed} JSONL stream, sample-and-hold."""

    def __init__(self, records):
        self.records = sorted(records, key=lambda r: r["t"])
        self.k = 0
        self.last = None
        self.exhausted = False

    def sample(self, t, vehicle, cam: CameraModel):
        while self.k < len(self.records) and self.records[self.k]["t"] <= t + 1e-9:
            self.last = self.records[self.k]
            self.k += 1
        if self.k >= len(self.records):
            self.exhausted = True
        if self.last is None:
            return 0.5, 0.5, False, 0.0
        r = self.last
        return float(r["u"]), float(r["v"]), bool(r["valid"]), float(r["speed"])


def _project_normalized(point, vehicle, cam: CameraModel):
    """World point -> normalized image coordinates, clamped to the frame edge."""
    r_wc, t_wc = cam.camera_pose(vehicle.position, vehicle.yaw)
    p_cam = r_wc.T @ (np.asarray(point, dtype=float) - t_wc)
    if p_cam[2] <= 0.05:
        # behind the camera: pin the gaze toward the turn direction edge
        u = 0.0 if p_cam[0] < 0 else 1.0
        return u, 0.5, True
    u = (cam.fx * p_cam[0] / p_cam[2] + cam.cx) / (cam.width - 1)
    v = (cam.fy * p_cam[1] / p_cam[2] + cam.cy) / (cam.height - 1)
    return float(np.clip(u, 0.0, 1.0)), float(np.clip(v, 0.0, 1.0)), True


# -- rings and surprise obstacles ---------------------------------------------


@dataclass(eq=False)
class RingGate:
    center: np.ndarray
    axis: np.ndarray
    major_radius: float
    minor_radius: float
    passed: bool = False
    missed: bool = False
    switches: int = 0
    last_class: str | None = None

    def __post_init__(self):
        # fixed in-plane basis for the around-side sector classification
        up = np.array([0.0, 0.0, 1.0]) if abs(self.axis[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        self.e1 = np.cross(up, self.axis)
        self.e1 /= np.linalg.norm(self.e1)
        self.e2 = np.cross(self.axis, self.e1)

    @property
    def hole_radius(self) -> float:
        return self.major_radius - self.minor_radius

    def side(self, p) -> float:
        return float((np.asarray(p) - self.center) @ self.axis)

    def classify_point(self, p) -> str:
        radial = np.asarray(p) - self.center
        radial = radial - (radial @ self.axis) * self.axis
        rad = float(np.linalg.norm(radial))
        if rad < self.hole_radius:
            return "through"
        ang = math.atan2(float(radial @ self.e2), float(radial @ self.e1))
        sector = int((ang + math.pi) / (math.pi / 2)) % 4
        return f"around-{sector}"

    def classify_trajectory(self, traj, t0: float = 0.0) -> str:
        ts = np.arange(t0, traj.total_time + 1e-9, 0.05)
        if len(ts) < 2:
            return "no-cross"
        pts = np.stack([traj.eval(float(t)) for t in ts])
        sides = (pts - self.center) @ self.axis
        for k in range(len(ts) - 1):
            if sides[k] < 0.0 <= sides[k + 1]:
                f = -sides[k] / (sides[k + 1] - sides[k])
                return self.classify_point(pts[k] + f * (pts[k + 1] - pts[k]))
        return "no-cross"


def topology_switch_counter(ring: RingGate, new_class: str) -> int:
    """Returns 1 when the planned crossing class flipped for the active ring.

    Plans too short to reach the pass-plane carry no crossing topology, so
    `no-cross` neither sets nor clears the remembered class.
    """
    if new_class == "no-cross":
        return 0
    bump = 0
    if ring.last_class is not None and new_class != ring.last_class:
        bump = 1
    ring.last_class = new_class
    return bump


@njit(cache=True)
def _all_voxels_visible(cells, gox, goy, goz, res, centers, normals, camx, camy, camz,
                        R, fx, fy, cx, cy, w, h, maxd):
    """True when every camera-facing voxel projects into the frame unoccluded."""
    any_facing = False
    for i in range(centers.shape[0]):
        # cast at the exposed face point, not the voxel center buried behind it
        vx = centers[i, 0] + 0.45 * res * normals[i, 0]
        vy = centers[i, 1] + 0.45 * res * normals[i, 1]
        vz = centers[i, 2] + 0.45 * res * normals[i, 2]
        tox = camx - vx
        toy = camy - vy
        toz = camz - vz
        rng = math.sqrt(tox * tox + toy * toy + toz * toz)
        if rng < 1e-9:
            continue
        cosv = (normals[i, 0] * tox + normals[i, 1] * toy + normals[i, 2] * toz) / rng
        if cosv <= 0.25:
            continue  # edge-on faces subtend nothing; they are not "in view"
        any_facing = True
        # frustum check in camera coordinates (R maps world -> camera)
        dxw = vx - camx
        dyw = vy - camy
        dzw = vz - camz
        xc = R[0, 0] * dxw + R[0, 1] * dyw + R[0, 2] * dzw
        yc = R[1, 0] * dxw + R[1, 1] * dyw + R[1, 2] * dzw
        zc = R[2, 0] * dxw + R[2, 1] * dyw + R[2, 2] * dzw
        if zc <= 0.05 or zc > maxd:
            return False
        u = fx * xc / zc + cx
        v = fy * yc / zc + cy
        if u < 0 or u > w - 1 or v < 0 or v > h - 1:
            return False
        dist = math.sqrt(dxw * dxw + dyw * dyw + dzw * dzw)
        ddx = dxw / dist
        ddy = dyw / dist
        ddz = dzw / dist
        th = _raycast_grid(cells, gox, goy, goz, res, camx, camy, camz,
                           ddx, ddy, ddz, 1e-6, dist + res)
        if 0.0 <= th < dist - 1.0 * res:
            return False
    return any_facing


class SurpriseObstacle:
    """Ground-truth-only obstacle tracked for the first-full-sight metric."""

    def __init__(self, name: str, world: OccupancyWorld, mask: np.ndarray):
        self.name = name
        idx = np.argwhere(mask)
        self.centroid = world.origin + (idx.mean(axis=0) + 0.5) * world.resolution
        surf_idx = []
        normals = []
        dirs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
        dims = world.cells.shape
        occ = world.cells == OCCUPIED
        for i, j, k in idx:
            n = np.zeros(3)
            for d in dirs:
                ii, jj, kk = i + d[0], j + d[1], k + d[2]
                inside = 0 <= ii < dims[0] and 0 <= jj < dims[1] and 0 <= kk < dims[2]
                if not inside or not occ[ii, jj, kk]:
                    n += d
            if np.any(n):
                surf_idx.append((i, j, k))
                normals.append(n / np.linalg.norm(n))
        self.surface = world.origin + (np.asarray(surf_idx, dtype=float) + 0.5) * world.resolution
        self.normals = np.asarray(normals)
        self.first_sight_distance: float | None = None

    def check(self, world: OccupancyWorld, cam: CameraModel, vehicle: VehicleState) -> bool:
        if self.first_sight_distance is not None or not len(self.surface):
            return False
        r_wc, t_wc = cam.camera_pose(vehicle.position, vehicle.yaw)
        ok = _all_voxels_visible(
            world.cells, world.origin[0], world.origin[1], world.origin[2], world.resolution,
            self.surface, self.normals, t_wc[0], t_wc[1], t_wc[2],
            np.ascontiguousarray(r_wc.T), cam.fx, cam.fy, cam.cx, cam.cy,
            cam.width, cam.height, cam.max_depth)
        if ok:
            self.first_sight_distance = float(np.linalg.norm(vehicle.position - self.centroid))
            return True
        return False


def first_sight_distance(run_events: list, so_name: str) -> float | None:
    """Distance recorded at the first-full-sight event for a surprise obstacle."""
    for ev in run_events:
        if ev.get("type") == "so_seen" and ev.get("name") == so_name:
            return float(ev["distance"])
    return None


# -- the simulation -----------------------------------------------------------


class Simulation:
    def __init__(self, scenario: dict, seed: int = 0, record_trace: list | None = None):
        self.scenario = scenario
        self.seed = int(scenario.get("seed", seed) if seed is None else seed)
        self.rng = np.random.default_rng(self.seed)
        self.world = world_from_primitives(scenario["world"])
        for prim in scenario.get("surprise", []):
            add_primitive(self.world, prim["primitive"] if "primitive" in prim else prim)
        self.cam = default_camera(scenario.get("camera"))
        self.dt = 1.0 / float(scenario.get("planner", {}).get("cadence_hz", 15.0))
        self.duration = float(scenario.get("duration", 60.0))
        self.planner = Planner(PlannerConfig.from_dict(scenario.get("planner", {})))
        start = scenario.get("start", {})
        self.vehicle = VehicleState(
            position=np.asarray(start.get("position", [0.0, 0.0, 1.0]), dtype=float),
            velocity=np.zeros(3), acceleration=np.zeros(3),
            yaw=float(start.get("yaw", 0.0)), t=0.0)
        goal = scenario.get("goal", {})
        self.goal = np.asarray(goal["position"], dtype=float) if "position" in goal else None
        self.goal_radius = float(goal.get("radius", 0.8))

        self.rings = [RingGate(center=np.asarray(r["center"], dtype=float),
                               axis=_unit(r.get("axis", [1, 0, 0])),
                               major_radius=float(r["major_radius"]),
                               minor_radius=float(r["minor_radius"]))
                      for r in scenario.get("rings", [])]
        self.surprises = self._build_surprises(scenario)

        self.planner_map = OccupancyWorld.empty(self.world.origin, self.world.dims,
                                                self.world.resolution, fill=UNKNOWN)
        self._carve_start_bubble()
        self.gt_esdf = build_esdf(self.world, d_trunc=1.0)
        self.pipeline = IntentPipeline(self.cam)
        self.source = self._build_source(scenario)
        self.plans = []
        self.events: list = []
        self.trajectory_rows: list = []
        self.metrics = Metrics(ring_total=len(self.rings),
                               switch_per_ring=[0] * len(self.rings))
        self.record_trace = record_trace
        self.done = False
        self.tick_count = 0
        self.speed_log: list = []
        self.desired_log: list = []
        self.solve_times: list = []
        self.live_intent = None  # optional (u, v, valid, speed) override for the bridge
        self._trace_flagged = False
        self._map_version = 0
        self._esdf_cache = None  # (esdf, version, lo, hi)
        self.last_frame = None
        self.last_topo = None

    def _carve_start_bubble(self):
        p = self.vehicle.position
        lo = self.planner_map.world_to_index(p - 0.4)
        hi = self.planner_map.world_to_index(p + 0.4) + 1
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, self.planner_map.dims)
        self.planner_map.cells[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = FREE

    def _build_surprises(self, scenario):
        out = []
        for k, prim in enumerate(scenario.get("surprise", [])):
            probe = OccupancyWorld.empty(self.world.origin, self.world.dims,
                                         self.world.resolution, fill=FREE)
            add_primitive(probe, prim["primitive"] if "primitive" in prim else prim)
            name = prim.get("name", f"so_{k}") if isinstance(prim, dict) else f"so_{k}"
            out.append(SurpriseObstacle(name, self.world, probe.cells == OCCUPIED))
        return out

    def _build_source(self, scenario):
        spec = scenario.get("intent", {"mode": "scripted"})
        mode = spec.get("mode", "scripted")
        speed = float(spec.get("speed", 1.5))
        targets = spec.get("targets")
        if targets is None:
            targets = [r["center"] for r in scenario.get("rings", [])]
            if self.goal is not None:
                targets = targets + [self.goal.tolist()]
        if not targets:
            targets = [(self.vehicle.position + [5.0, 0, 0]).tolist()]
        if mode == "scripted":
            return ScriptedGazeSource(targets, speed)
        if mode == "rc":
            rc = spec.get("rc", {})
            return RcNoisySource(targets, speed, self.rng,
                                 sigma=float(rc.get("sigma", 0.35)),
                                 tau=float(rc.get("tau", 0.6)))
        if mode == "trace":
            records = read_trace(spec["trace"])
            if not records:
                log.warning("empty intent trace; falling back to the scripted source")
                return ScriptedGazeSource(targets, speed)
            return TraceSource(records)
        if mode == "live":
            return None
        raise ValueError(f"unknown intent mode: {mode}")

    # -- per-tick machinery ---------------------------------------------------

    def active_plan(self, t: float):
        best = None
        for plan in self.plans:
            if plan.t_start <= t + 1e-9 and (best is None or plan.t_start > best.t_start):
                best = plan
        return best

    def state_on_plan(self, plan, t: float):
        tau = t - plan.t_start
        exhausted = tau > plan.traj.total_time
        tau = min(max(tau, 0.0), plan.traj.total_time)
        p, v, a, _ = plan.traj.state(tau)
        if exhausted:
            v = np.zeros(3)
            a = np.zeros(3)
        return p, v, a, exhausted

    def step(self, t_next: float):
        """Ideal tracking: the vehicle state is the newest active trajectory sample."""
        plan = self.active_plan(t_next)
        if plan is None:
            self.vehicle.t = t_next
            return
        p, v, a, exhausted = self.state_on_plan(plan, t_next)
        if exhausted and "trajectory-exhausted" not in [e.get("type") for e in self.events[-3:]]:
            self.events.append({"t": t_next, "type": "trajectory-exhausted"})
        target = self.pipeline.state.local_target if self.pipeline.state else None
        self.vehicle.yaw = yaw_command(p, self.vehicle.yaw, self.last_topo, target,
                                       self.dt, self.planner.cfg.yaw_rate_limit)
        self.vehicle = VehicleState(position=p, velocity=v, acceleration=a,
                                    yaw=self.vehicle.yaw, t=t_next).wrap()

    def tick(self):
        if self.done:
            return False
        t = self.tick_count * self.dt
        r_wc, t_wc = self.cam.camera_pose(self.vehicle.position, self.vehicle.yaw)
        frame = render_depth(self.world, self.cam, r_wc, t_wc, stamp=t)
        self._map_version += integrate_depth(self.planner_map, frame, self.cam)
        self.last_frame = frame

        if self.source is not None:
            u, v, valid, speed = self.source.sample(t, self.vehicle, self.cam)
        elif self.live_intent is not None:
            u, v, valid, speed = self.live_intent
        else:
            u, v, valid, speed = 0.5, 0.5, False, 0.0
        if self.record_trace is not None:
            self.record_trace.append({"t": t, "u": u, "v": v, "valid": bool(valid),
                                      "speed": speed})
        if isinstance(self.source, TraceSource) and self.source.exhausted \
                and not self._trace_flagged:
            self._trace_flagged = True
            self.events.append({"t": t, "type": "trace-exhausted"})
        self.desired_log.append(float(speed))
        sample = GazeSample(u * (self.cam.width - 1), v * (self.cam.height - 1),
                            stamp=t, valid=bool(valid))
        intent_state, topo = self.pipeline.tick(sample, speed, frame)
        self.last_topo = topo

        t_splice = t + self.planner.cfg.splice_ahead
        plan = self.active_plan(t_splice)
        if plan is not None:
            pos, vel, acc, _ = self.state_on_plan(plan, t_splice)
        else:
            pos, vel, acc = (self.vehicle.position, self.vehicle.velocity,
                             self.vehicle.acceleration)

        target = intent_state.local_target
        esdf = self._current_esdf(pos, target) if target is not None else None
        result = self.planner.replan((pos, vel, acc), intent_state, topo,
                                     self.planner_map, t_splice, esdf=esdf)
        if result is not None:
            self.plans.append(result)
            self.plans = self.plans[-4:]
            self.metrics.replan_count += 1
            self.solve_times.append(result.solve_ms)
            self.events.append({"t": t, "type": "replan",
                                "iterations": result.iterations,
                                "grad_norm": result.grad_norm,
                                "flags": sorted(result.flags),
                                "penalties": {k: float(val) for k, val in
                                              sorted(result.penalty_values.items())}})
            self._classify_topology(result, t)

        prev_pos = self.vehicle.position.copy()
        self.step(t + self.dt)
        self._log_state()
        self._check_rings(prev_pos, self.vehicle.position, t + self.dt)
        self._check_collision(t + self.dt)
        self._check_surprises(t + self.dt)
        self._check_goal(t + self.dt)
        self.tick_count += 1
        if t + self.dt >= self.duration and not self.done:
            self.done = True
            self.events.append({"t": t + self.dt, "type": "timeout"})
        return not self.done

    def _current_esdf(self, pos, target):
        """Truncated field over the active corridor, rebuilt only when the map
        changed (at half cadence) or the query box escapes the cached crop."""
        margin = self.planner.cfg.d_trunc + 1.5
        glo, ghi = self.planner_map.aabb
        need_lo = np.maximum(np.minimum(pos, target) - 1.0, glo)
        need_hi = np.minimum(np.maximum(pos, target) + 1.0, ghi)
        cache = self._esdf_cache
        if cache is not None:
            esdf, version, lo, hi = cache
            # clamped crop faces sit on the grid boundary and cannot be escaped
            inside = bool(np.all((need_lo >= lo + 0.1) | (lo <= glo + 1e-9))
                          and np.all((need_hi <= hi - 0.1) | (hi >= ghi - 1e-9)))
            fresh = version == self._map_version
            # dirty maps refresh at half cadence; clean maps reuse indefinitely
            if inside and (fresh or self.tick_count % 2 != 0):
                return esdf
        lo = np.minimum(pos, target) - margin
        hi = np.maximum(pos, target) + margin
        esdf = build_esdf(self.planner_map.crop(lo, hi), self.planner.cfg.d_trunc)
        self._esdf_cache = (esdf, self._map_version,
                            np.maximum(lo, glo), np.minimum(hi, ghi))
        return esdf

    def _classify_topology(self, plan, t):
        ring = self._active_ring()
        # when the intent source exposes its route index, count switches only
        # while the ring is the active intent target
        if isinstance(self.source, ScriptedGazeSource) and self.rings:
            idx = self.source.idx
            ring = self.rings[idx] if idx < len(self.rings) else None
            if ring is not None and (ring.passed or ring.missed):
                ring = None
        if ring is None:
            return
        cls = ring.classify_trajectory(plan.traj)
        idx = self.rings.index(ring)
        bump = topology_switch_counter(ring, cls)
        if bump:
            ring.switches += bump
            self.metrics.switch_per_ring[idx] += bump
            self.events.append({"t": t, "type": "topology_switch", "ring": idx,
                                "from": None, "to": cls})

    def _active_ring(self):
        for ring in self.rings:
            if not ring.passed and not ring.missed:
                return ring
        return None

    def _check_rings(self, p0, p1, t):
        for k, ring in enumerate(self.rings):
            if ring.passed or ring.missed:
                continue
            s0, s1 = ring.side(p0), ring.side(p1)
            if s0 < 0.0 <= s1:
                f = -s0 / (s1 - s0)
                cross = p0 + f * (p1 - p0)
                radial = cross - ring.center
                radial = radial - (radial @ ring.axis) * ring.axis
                if np.linalg.norm(radial) < ring.hole_radius:
                    ring.passed = True
                    self.metrics.ring_success += 1
                    self.events.append({"t": t, "type": "ring_pass", "ring": k})
                elif np.linalg.norm(radial) < 4.0 * ring.major_radius:
                    ring.missed = True
                    self.events.append({"t": t, "type": "ring_miss", "ring": k})
            break  # only the active ring is scored

    def _check_collision(self, t):
        d, _, _ = query_distance_gradient(self.gt_esdf, self.vehicle.position)
        if d < self.planner.cfg.d_safe / 2.0:
            self.metrics.collided = True
            self.events.append({"t": t, "type": "collision",
                                "position": self.vehicle.position.tolist()})
            self.done = True

    def _check_surprises(self, t):
        for so in self.surprises:
            if so.check(self.world, self.cam, self.vehicle):
                self.metrics.first_sight[so.name] = so.first_sight_distance
                self.events.append({"t": t, "type": "so_seen", "name": so.name,
                                    "distance": so.first_sight_distance})

    def _check_goal(self, t):
        if self.goal is None or self.done:
            return
        if np.linalg.norm(self.vehicle.position - self.goal) < self.goal_radius:
            self.metrics.goal_reached = True
            self.metrics.finish_time = t
            self.events.append({"t": t, "type": "goal"})
            self.done = True

    def _log_state(self):
        v = self.vehicle
        self.trajectory_rows.append([v.t, *v.position, *v.velocity, *v.acceleration, v.yaw])
        self.speed_log.append(float(np.linalg.norm(v.velocity)))

    # -- terminal metrics -------------------------------------------------------

    def finalize(self) -> Metrics:
        speeds = np.asarray(self.speed_log)
        self.metrics.max_speed = float(speeds.max()) if len(speeds) else 0.0
        desired = np.asarray(self.desired_log[: len(speeds)])
        if len(speeds) and len(desired):
            ts = np.arange(len(speeds)) * self.dt
            t_end = ts[-1]
            mask = (ts >= 2.0) & (ts <= t_end - 2.0) & (desired > 0.05)
            if mask.any():
                inside = np.abs(speeds[mask] - desired[mask]) <= 0.15 * desired[mask]
                self.metrics.speed_within_band = float(np.mean(inside))
        return self.metrics


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def run(scenario: dict, seed: int = 0, out_dir=None, record_trace_path=None):
    """Execute a scenario to completion; optionally write the artifact set."""
    recorder = [] if record_trace_path else None
    sim = Simulation(scenario, seed=seed, record_trace=recorder)
    while sim.tick():
        pass
    metrics = sim.finalize()
    if record_trace_path:
        from .intent import write_trace
        write_trace(record_trace_path, recorder)
    if out_dir is not None:
        write_artifacts(sim, metrics, out_dir)
    return metrics, sim


def write_artifacts(sim: Simulation, metrics: Metrics, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(metrics.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
        for ev in sim.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "trajectory.csv"), "w") as fh:
        fh.write("t,px,py,pz,vx,vy,vz,ax,ay,az,yaw\n")
        for row in sim.trajectory_rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
