"""Operator intent: gaze registration, smoothing, local target, topological path.

The topological path pins which gap or object the operator means: breadth-first
search over the depth image from the gaze pixel triggers density clustering on
in-range pixels; clusters that contain the gaze join the path, and the first
pair of flanking clusters whose merged bounding box straddles the gaze closes
the search.  Cluster centroids projected onto the gaze ray become waypoints.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .worldmap import CameraModel, DepthImage

__all__ = [
    "GazeSample",
    "IntentState",
    "Cluster",
    "TopoPath",
    "register_gaze",
    "smooth_gaze",
    "project_local_target",
    "dbscan_cluster",
    "generate_topo_path",
    "IntentPipeline",
    "read_trace",
    "write_trace",
]

PERCEPTION_RANGE = (0.3, 5.0)
DBSCAN_EPS = 0.25
DBSCAN_MIN_PTS = 4
BBOX_INFLATE_PX = 2
WAYPOINT_DEDUP_M = 0.2
SMOOTH_WINDOW = 10


@dataclass
class GazeSample:
    u: float
    v: float
    stamp: float = 0.0
    valid: bool = True


@dataclass
class IntentState:
    gaze_px: tuple | None           # smoothed pixel on the depth image
    ray_origin: np.ndarray | None   # gaze ray in world frame
    ray_dir: np.ndarray | None
    local_target: np.ndarray | None
    desired_speed: float = 0.0


@dataclass
class Cluster:
    pixels: np.ndarray              # (N, 2) int (u, v)
    bbox_px: tuple                  # (umin, vmin, umax, vmax), tight
    centroid3d: np.ndarray          # camera-frame mean of back-projected members

    def contains(self, u: float, v: float, inflate: int = BBOX_INFLATE_PX) -> bool:
        umin, vmin, umax, vmax = self.bbox_px
        return (umin - inflate <= u <= umax + inflate
                and vmin - inflate <= v <= vmax + inflate)


def _merged_contains(a: Cluster, b: Cluster, u: float, v: float,
                     inflate: int = BBOX_INFLATE_PX) -> bool:
    """Bounding box of the merged set = union of the member boxes."""
    umin = min(a.bbox_px[0], b.bbox_px[0]) - inflate
    vmin = min(a.bbox_px[1], b.bbox_px[1]) - inflate
    umax = max(a.bbox_px[2], b.bbox_px[2]) + inflate
    vmax = max(a.bbox_px[3], b.bbox_px[3]) + inflate
    return umin <= u <= umax and vmin <= v <= vmax


@dataclass
class TopoPath:
    ray_origin: np.ndarray
    ray_dir: np.ndarray             # unit
    waypoints: np.ndarray           # (K, 3) on the ray, ascending ray parameter
    clusters: list = field(default_factory=list)

    @property
    def ray_params(self) -> np.ndarray:
        return (self.waypoints - self.ray_origin) @ self.ray_dir


def register_gaze(sample: GazeSample, cam_i: CameraModel, cam_d: CameraModel,
                  r_i_to_d: np.ndarray | None = None,
                  t_i_to_d: np.ndarray | None = None):
    """Map a gaze pixel on the view image to the depth image, or None when invalid."""
    if not sample.valid:
        return None
    p_i = np.array([(sample.u - cam_i.cx) / cam_i.fx,
                    (sample.v - cam_i.cy) / cam_i.fy, 1.0])
    if r_i_to_d is not None:
        p_i = r_i_to_d @ p_i
    if t_i_to_d is not None:
        p_i = p_i + t_i_to_d
    if p_i[2] <= 1e-9:
        return None
    u = cam_d.fx * p_i[0] / p_i[2] + cam_d.cx
    v = cam_d.fy * p_i[1] / p_i[2] + cam_d.cy
    u = float(np.clip(u, 0, cam_d.width - 1))
    v = float(np.clip(v, 0, cam_d.height - 1))
    return u, v


def smooth_gaze(history) -> tuple | None:
    """Component-wise median of the valid samples in the window, integer pixels."""
    pts = [(s[0], s[1]) for s in history if s is not None]
    if not pts:
        return None
    arr = np.asarray(pts, dtype=float)
    med = np.median(arr, axis=0)
    return int(round(med[0])), int(round(med[1]))


def project_local_target(g_d: tuple, frame: DepthImage, cam: CameraModel,
                         r_max: float = PERCEPTION_RANGE[1]):
    """Gaze ray in the world frame plus the point r_max metres along it.

    The target distance is fixed at the reliable perception range regardless of
    the measured depth under the gaze pixel.
    """
    d_cam = cam.pixel_ray(g_d[0], g_d[1])
    direction = frame.r_world_cam @ d_cam
    origin = frame.t_world_cam.copy()
    return origin + r_max * direction, origin, direction


class _FrameCloud:
    """Per-frame backprojection and neighbour structure shared by cluster calls."""

    def __init__(self, frame: DepthImage, cam: CameraModel, r_range=PERCEPTION_RANGE):
        self.shape = frame.depth.shape
        depth = frame.depth
        self.in_range = (depth >= r_range[0]) & (depth <= r_range[1])
        vs, us = np.nonzero(self.in_range)
        z = depth[vs, us]
        self.pix = np.stack([us, vs], axis=1)
        self.pts = np.ascontiguousarray(
            np.stack([(us - cam.cx) / cam.fx * z, (vs - cam.cy) / cam.fy * z, z], axis=1))
        self.index_of = np.full(self.shape, -1, dtype=np.int64)
        self.index_of[vs, us] = np.arange(len(vs))
        self.clustered = np.zeros(len(vs), dtype=bool)
        self._csr = None

    def grid_hash(self, eps: float):
        """eps-cell spatial hash: (sorted unique cell keys, CSR starts, point order)."""
        if self._csr is None:
            cells = np.floor(self.pts / eps).astype(np.int64) + (1 << 20)
            keys = (cells[:, 0] << 42) | (cells[:, 1] << 21) | cells[:, 2]
            order = np.argsort(keys, kind="stable")
            sk = keys[order]
            bounds = np.flatnonzero(np.diff(sk)) + 1
            starts = np.concatenate([[0], bounds, [len(sk)]]).astype(np.int64)
            uniq = sk[starts[:-1]]
            self._csr = (uniq, starts, order.astype(np.int64))
        return self._csr


@njit(cache=True, inline="always")
def _cell_key(cx, cy, cz):
    return ((cx + (1 << 20)) << 42) | ((cy + (1 << 20)) << 21) | (cz + (1 << 20))


@njit(cache=True, inline="always")
def _cell_slot(uniq, key):
    lo = np.searchsorted(uniq, key)
    if lo < uniq.shape[0] and uniq[lo] == key:
        return lo
    return -1


@njit(cache=True)
def _live_degree(pts, uniq, starts, order, alive, eps, i, cap):
    """Count alive points within eps of point i, early-exiting at cap (<=0: no cap)."""
    e2 = eps * eps
    cx = int(math.floor(pts[i, 0] / eps))
    cy = int(math.floor(pts[i, 1] / eps))
    cz = int(math.floor(pts[i, 2] / eps))
    c = 0
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                slot = _cell_slot(uniq, _cell_key(cx + dx, cy + dy, cz + dz))
                if slot < 0:
                    continue
                for k in range(starts[slot], starts[slot + 1]):
                    j = order[k]
                    if not alive[j]:
                        continue
                    ddx = pts[j, 0] - pts[i, 0]
                    ddy = pts[j, 1] - pts[i, 1]
                    ddz = pts[j, 2] - pts[i, 2]
                    if ddx * ddx + ddy * ddy + ddz * ddz <= e2:
                        c += 1
                        if cap > 0 and c >= cap:
                            return c
    return c


@njit(cache=True)
def _grow_kernel(pts, uniq, starts, order, alive, anchor, eps, min_pts, member):
    """Density-connected growth from the anchor over the alive subset.

    Fills `member`; returns the count (0 means noise anchor -> caller makes a
    singleton).  Border anchors join the nearest live core neighbour's cluster.
    """
    n = alive.shape[0]
    e2 = eps * eps
    seed = anchor
    if _live_degree(pts, uniq, starts, order, alive, eps, anchor, min_pts) < min_pts:
        best = -1
        best_d = 1e30
        cx = int(math.floor(pts[anchor, 0] / eps))
        cy = int(math.floor(pts[anchor, 1] / eps))
        cz = int(math.floor(pts[anchor, 2] / eps))
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    slot = _cell_slot(uniq, _cell_key(cx + dx, cy + dy, cz + dz))
                    if slot < 0:
                        continue
                    for k in range(starts[slot], starts[slot + 1]):
                        j = order[k]
                        if j == anchor or not alive[j]:
                            continue
                        ddx = pts[j, 0] - pts[anchor, 0]
                        ddy = pts[j, 1] - pts[anchor, 1]
                        ddz = pts[j, 2] - pts[anchor, 2]
                        d2 = ddx * ddx + ddy * ddy + ddz * ddz
                        if d2 > e2:
                            continue
                        if _live_degree(pts, uniq, starts, order, alive, eps, j,
                                        min_pts) >= min_pts:
                            d = math.sqrt(d2)
                            if d < best_d - 1e-15 or (abs(d - best_d) <= 1e-15 and j < best):
                                best_d = d
                                best = j
        if best < 0:
            return 0
        seed = best
    stack = np.empty(n, dtype=np.int64)
    visited_core = np.zeros(n, dtype=np.bool_)
    member[anchor] = True
    member[seed] = True
    visited_core[seed] = True
    stack[0] = seed
    top = 1
    count = 2 if seed != anchor else 1
    while top > 0:
        top -= 1
        c = stack[top]
        ccx = int(math.floor(pts[c, 0] / eps))
        ccy = int(math.floor(pts[c, 1] / eps))
        ccz = int(math.floor(pts[c, 2] / eps))
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    slot = _cell_slot(uniq, _cell_key(ccx + dx, ccy + dy, ccz + dz))
                    if slot < 0:
                        continue
                    for k in range(starts[slot], starts[slot + 1]):
                        j = order[k]
                        if not alive[j]:
                            continue
                        ddx = pts[j, 0] - pts[c, 0]
                        ddy = pts[j, 1] - pts[c, 1]
                        ddz = pts[j, 2] - pts[c, 2]
                        if ddx * ddx + ddy * ddy + ddz * ddz > e2:
                            continue
                        if not member[j]:
                            member[j] = True
                            count += 1
                        if not visited_core[j] and _live_degree(
                                pts, uniq, starts, order, alive, eps, j, min_pts) >= min_pts:
                            visited_core[j] = True
                            stack[top] = j
                            top += 1
    return count


def _grow_cluster(cloud: _FrameCloud, anchor_idx: int, eps: float, min_pts: int) -> np.ndarray:
    """Indices of the density-connected cluster containing the anchor.

    Runs over the not-yet-clustered points only; a noise anchor yields a
    singleton.  Border anchors join the cluster of the nearest core neighbour.
    """
    uniq, starts, order = cloud.grid_hash(eps)
    alive = ~cloud.clustered
    member = np.zeros(len(alive), dtype=np.bool_)
    found = _grow_kernel(cloud.pts, uniq, starts, order, alive, int(anchor_idx),
                         float(eps), int(min_pts), member)
    if found == 0:
        return np.array([anchor_idx], dtype=np.int64)
    return np.nonzero(member)[0].astype(np.int64)


def dbscan_cluster(frame: DepthImage, cam: CameraModel, anchor: tuple,
                   eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS,
                   r_range=PERCEPTION_RANGE, cloud: _FrameCloud | None = None) -> Cluster:
    """Cluster around an in-range anchor pixel; members become permanently labeled."""
    if cloud is None:
        cloud = _FrameCloud(frame, cam, r_range)
    au, av = int(anchor[0]), int(anchor[1])
    idx = cloud.index_of[av, au]
    if idx < 0 or cloud.clustered[idx]:
        raise ValueError("anchor must be an unclustered in-range pixel")
    members = _grow_cluster(cloud, int(idx), eps, min_pts)
    cloud.clustered[members] = True
    pix = cloud.pix[members]
    bbox = (int(pix[:, 0].min()), int(pix[:, 1].min()),
            int(pix[:, 0].max()), int(pix[:, 1].max()))
    return Cluster(pixels=pix, bbox_px=bbox, centroid3d=cloud.pts[members].mean(axis=0))


@njit(cache=True)
def _bfs_kernel(explored, index_of, clustered, qu, qv, head_tail):
    """Resumeable breadth-first flood; returns the next unclustered in-range
    point index, or -1 when the queue drains."""
    h, w = explored.shape
    head = head_tail[0]
    tail = head_tail[1]
    while head < tail:
        u = qu[head]
        v = qv[head]
        head += 1
        for du in range(-1, 2):
            for dv in range(-1, 2):
                if du == 0 and dv == 0:
                    continue
                nu = u + du
                nv = v + dv
                if 0 <= nu < w and 0 <= nv < h and not explored[nv, nu]:
                    explored[nv, nu] = True
                    qu[tail] = nu
                    qv[tail] = nv
                    tail += 1
        idx = index_of[v, u]
        if idx >= 0 and not clustered[idx]:
            head_tail[0] = head
            head_tail[1] = tail
            return idx
    head_tail[0] = head
    head_tail[1] = tail
    return -1


def generate_topo_path(frame: DepthImage, cam: CameraModel, g_d: tuple,
                       r_range=PERCEPTION_RANGE, eps: float = DBSCAN_EPS,
                       min_pts: int = DBSCAN_MIN_PTS) -> TopoPath:
    """Breadth-first cluster discovery seeded at the gaze pixel.

    Clusters containing the gaze join the path set; the first flanking cluster
    and the one whose merged box recaptures the gaze close the search.
    """
    target, origin, direction = project_local_target(g_d, frame, cam, r_range[1])
    h, w = frame.depth.shape
    gu, gv = int(round(g_d[0])), int(round(g_d[1]))
    gu = min(max(gu, 0), w - 1)
    gv = min(max(gv, 0), h - 1)

    cloud = _FrameCloud(frame, cam, r_range)
    chosen: list[Cluster] = []
    c1_m: Cluster | None = None

    if cloud.in_range.any():
        explored = np.zeros((h, w), dtype=np.bool_)
        explored[gv, gu] = True
        qu = np.empty(h * w, dtype=np.int32)
        qv = np.empty(h * w, dtype=np.int32)
        qu[0] = gu
        qv[0] = gv
        head_tail = np.array([0, 1], dtype=np.int64)
        remaining = int(cloud.in_range.sum())
        while remaining > 0:
            trig = _bfs_kernel(explored, cloud.index_of, cloud.clustered, qu, qv, head_tail)
            if trig < 0:
                break
            u, v = int(cloud.pix[trig, 0]), int(cloud.pix[trig, 1])
            c_temp = dbscan_cluster(frame, cam, (u, v), eps, min_pts, r_range, cloud)
            remaining -= len(c_temp.pixels)
            if c_temp.contains(gu, gv):
                chosen.append(c_temp)
            elif c1_m is None:
                c1_m = c_temp
                chosen.append(c1_m)
            elif _merged_contains(c1_m, c_temp, gu, gv):
                chosen.append(c_temp)  # the closing flank
                break
            # non-containing clusters that do not close the margin are dropped

    waypoints = _project_waypoints(chosen, frame, origin, direction)
    return TopoPath(ray_origin=origin, ray_dir=direction, waypoints=waypoints, clusters=chosen)


def _project_waypoints(clusters, frame, origin, direction) -> np.ndarray:
    if not clusters:
        return np.zeros((0, 3))
    cams = np.stack([c.centroid3d for c in clusters])
    world = cams @ frame.r_world_cam.T + frame.t_world_cam
    ts = (world - origin) @ direction
    ts = np.sort(ts[ts > 1e-6])
    kept = []
    for t in ts:
        if not kept or t - kept[-1] >= WAYPOINT_DEDUP_M:
            kept.append(float(t))
    return origin[None, :] + np.array(kept)[:, None] * direction[None, :]


class IntentPipeline:
    """Stateful per-vehicle intent: smoothing window and sample-and-hold targets.

    The gaze device outruns the camera tick (a tracker delivers several
    samples per rendered frame), so each frame tick feeds `samples_per_tick`
    copies of the registered sample into the ten-sample smoothing window;
    otherwise the median would lag the camera rotation by most of a second.
    """

    def __init__(self, cam_d: CameraModel, cam_i: CameraModel | None = None,
                 r_range=PERCEPTION_RANGE, window: int = SMOOTH_WINDOW,
                 eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS,
                 samples_per_tick: int = 3):
        self.cam_d = cam_d
        self.cam_i = cam_i or cam_d
        self.r_range = r_range
        self.eps = eps
        self.min_pts = min_pts
        self.samples_per_tick = samples_per_tick
        self.history = deque(maxlen=window)
        self.smoothed: tuple | None = None
        self.state = IntentState(None, None, None, None, 0.0)
        self.topo: TopoPath | None = None

    def tick(self, sample: GazeSample, speed: float, frame: DepthImage):
        registered = register_gaze(sample, self.cam_i, self.cam_d)
        for _ in range(self.samples_per_tick):
            self.history.append(registered)
        px = smooth_gaze(self.history)
        if px is not None:
            self.smoothed = px
        if self.smoothed is None:
            self.state = IntentState(None, None, None, None, float(speed))
            self.topo = None
            return self.state, self.topo
        topo = generate_topo_path(frame, self.cam_d, self.smoothed,
                                  self.r_range, self.eps, self.min_pts)
        target = topo.ray_origin + self.r_range[1] * topo.ray_dir
        self.state = IntentState(gaze_px=self.smoothed, ray_origin=topo.ray_origin,
                                 ray_dir=topo.ray_dir, local_target=target,
                                 desired_speed=float(speed))
        self.topo = topo
        return self.state, self.topo


def write_trace(path, records) -> None:
    """records: iterable of dicts {t, u, v, valid, speed}; JSON Lines."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"t": r["t"], "u": r["u"], "v": r["v"],
                                 "valid": bool(r["valid"]), "speed": r["speed"]},
                                sort_keys=True) + "\n")


def read_trace(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
