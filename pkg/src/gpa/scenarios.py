"""Built-in scenario builders mirroring the benchmark experiment setups.

Builders return plain JSON-serializable dicts so generated scenarios can be
saved, diffed, and replayed byte-identically.
"""

from __future__ import annotations

import json
import math

import numpy as np

__all__ = ["smoke_empty", "forest", "corner", "ring_course", "get_scenario", "BUILTIN"]


def smoke_empty(seed: int = 0) -> dict:
    return {
        "name": "smoke_empty",
        "seed": seed,
        "world": {"aabb": [[0, -4, 0], [12, 4, 3]], "resolution": 0.1, "primitives": []},
        "start": {"position": [1.0, 0.0, 1.5], "yaw": 0.0},
        "goal": {"position": [9.0, 0.0, 1.5], "radius": 0.8},
        "intent": {"mode": "scripted", "speed": 1.0, "targets": [[9.0, 0.0, 1.5]]},
        "planner": {},
        "duration": 30.0,
    }


def _corridor_y(x: float, amplitude: float = 2.0, wavelength: float = 30.0) -> float:
    return amplitude * math.sin(2.0 * math.pi * x / wavelength)


def forest(seed: int = 0, density: float = 0.625, size=(60.0, 20.0, 2.0),
           pillar_radius: float = 0.08, corridor_halfwidth: float = 1.0,
           speed: float = 1.5) -> dict:
    """Random pillar forest at the stated obstacle density with a flyable route.

    Pillars sit on a jittered grid hitting the requested count; the operator's
    route (a gentle sine) is kept clear and displaced pillars are re-seeded
    off-route so the global density is preserved.
    """
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    count = int(round(density * sx * sy))
    g = math.sqrt(sx * sy / count) * 0.98
    xs = np.arange(g / 2, sx - g / 4, g)
    ys = np.arange(g / 2, sy - g / 4, g)
    cells = [(x, y) for x in xs for y in ys]
    order = rng.permutation(len(cells))[:count]
    jit = max(g / 2 - pillar_radius - 0.18, 0.05)
    centers = []
    removed = 0
    for k in order:
        x = cells[k][0] + rng.uniform(-jit, jit)
        y = cells[k][1] + rng.uniform(-jit, jit) - sy / 2
        if abs(y - _corridor_y(x)) < corridor_halfwidth + pillar_radius:
            removed += 1
            continue
        centers.append((x, y))
    # preserve the stated density: re-seed displaced pillars off the route
    attempts = 0
    while removed > 0 and attempts < 4000:
        attempts += 1
        x = rng.uniform(1.0, sx - 1.0)
        y = rng.uniform(-sy / 2 + 0.5, sy / 2 - 0.5)
        if abs(y - _corridor_y(x)) < corridor_halfwidth + pillar_radius + 0.2:
            continue
        if centers and np.min(np.hypot(*(np.asarray(centers) - [x, y]).T)) < 0.45:
            continue
        centers.append((x, y))
        removed -= 1

    prims = [{"type": "cylinder", "center": [float(x), float(y), sz / 2],
              "radius": pillar_radius, "height": sz} for x, y in centers]
    route = [[float(x), float(_corridor_y(x)), 1.0] for x in np.arange(6.0, sx - 1.9, 4.0)]
    route.append([sx - 2.0, float(_corridor_y(sx - 2.0)), 1.0])
    return {
        "name": f"forest_{seed}",
        "seed": seed,
        "world": {"aabb": [[0, -sy / 2, 0], [sx, sy / 2, sz]], "resolution": 0.1,
                  "primitives": prims},
        "start": {"position": [2.0, float(_corridor_y(2.0)), 1.0], "yaw": 0.0},
        "goal": {"position": route[-1], "radius": 1.0},
        "intent": {"mode": "scripted", "speed": speed, "targets": route},
        "planner": {},
        "duration": 90.0,
    }


def corner(seed: int = 0, perception_aware: bool = True, speed: float = 1.2) -> dict:
    """L-shaped corridor with a surprise obstacle hidden behind the inner corner."""
    rng = np.random.default_rng(seed)
    wall_h = 2.4
    so_y = 3.3 + rng.uniform(-0.2, 0.2)
    so_x = 9.55 + rng.uniform(-0.08, 0.08)
    start_x = 1.2 + rng.uniform(0.0, 0.6)

    def box(x0, y0, x1, y1):
        return {"type": "box", "min": [x0, y0, 0.0], "max": [x1, y1, wall_h]}

    prims = [
        box(0.0, 0.0, 12.5, 0.6),        # south wall of leg 1
        box(0.0, 2.4, 9.2, 3.0),         # north wall of leg 1 (inner corner at x=9.2)
        box(11.6, 2.4, 12.5, 10.0),      # east wall of leg 2
        box(8.6, 3.0, 9.2, 10.0),        # west wall of leg 2
        box(0.0, 9.4, 12.5, 10.0),       # far cap
        box(12.0, 0.0, 12.5, 2.4),       # end cap of leg 1
    ]
    # the surprise box hugs the inner (west) side of leg 2, just past the corner
    so = {"type": "box", "min": [so_x - 0.2, so_y - 0.2, 0.8],
          "max": [so_x + 0.2, so_y + 0.2, 1.6], "name": "so_corner"}
    return {
        "name": f"corner_{seed}",
        "seed": seed,
        "world": {"aabb": [[0, 0, 0], [12.5, 10, wall_h]], "resolution": 0.1,
                  "primitives": prims},
        "surprise": [so],
        "start": {"position": [start_x, 1.5, 1.2], "yaw": 0.0},
        "goal": {"position": [10.4, 8.6, 1.2], "radius": 0.8},
        # the operator looks into the upcoming turn, then down the new leg
        "intent": {"mode": "scripted", "speed": speed,
                   "targets": [[10.4, 3.4, 1.2], [10.4, 8.6, 1.2]]},
        "planner": {"perception_aware": perception_aware},
        "duration": 45.0,
    }


def ring_course(seed: int = 0, n_rings: int = 10, intent_mode: str = "scripted",
                speed: float = 1.5, rc_sigma: float = 0.35) -> dict:
    """Straight racing course of rings with alternating lateral offsets."""
    rng = np.random.default_rng(seed)
    rings = []
    targets = []
    for k in range(n_rings):
        x = 6.0 + 6.0 * k
        y = (1.0 if k % 2 == 0 else -1.0) * 1.1 + float(rng.uniform(-0.15, 0.15))
        rings.append({"center": [x, y, 1.5], "axis": [1.0, 0.0, 0.0],
                      "major_radius": 0.6, "minor_radius": 0.1})
        targets.append([x, y, 1.5])
    goal = [6.0 * n_rings + 4.0, 0.0, 1.5]
    targets.append(goal)
    intent = {"mode": intent_mode, "speed": speed, "targets": targets}
    if intent_mode == "rc":
        intent["rc"] = {"sigma": rc_sigma, "tau": 0.6}
    prims = [dict(type="ring", **r) for r in rings]
    return {
        "name": f"rings_{intent_mode}_{seed}",
        "seed": seed,
        "world": {"aabb": [[0, -5, 0], [6.0 * n_rings + 6.0, 5, 3.0]], "resolution": 0.1,
                  "primitives": prims},
        "rings": rings,
        "start": {"position": [1.0, 0.0, 1.5], "yaw": 0.0},
        "goal": {"position": goal, "radius": 1.0},
        "intent": intent,
        "planner": {},
        "duration": 120.0,
    }


BUILTIN = {
    "smoke": smoke_empty,
    "forest": forest,
    "corner": corner,
    "rings": ring_course,
}


def get_scenario(name_or_path: str, seed: int = 0, **kwargs) -> dict:
    """Resolve a builtin name (optionally builtin:name) or load a JSON file."""
    name = name_or_path
    if name.startswith("builtin:"):
        name = name.split(":", 1)[1]
    if name in BUILTIN:
        return BUILTIN[name](seed=seed, **kwargs)
    with open(name_or_path) as fh:
        scenario = json.load(fh)
    if kwargs:
        raise ValueError("builder options only apply to builtin scenarios")
    return scenario
