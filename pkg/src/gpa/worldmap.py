"""Voxel world, truncated distance field, and the simulated depth sensor.

Holds both the ground-truth world (no unknowns) and the online planner map
(initially all unknown, grown by integrating rendered depth frames).  The
distance field treats unknown space as occupied, so planning stays inside
observed-free territory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

__all__ = [
    "FREE",
    "OCCUPIED",
    "UNKNOWN",
    "OccupancyWorld",
    "EsdfField",
    "CameraModel",
    "DepthImage",
    "build_esdf",
    "query_distance_gradient",
    "render_depth",
    "integrate_depth",
    "world_from_primitives",
]

FREE = np.int8(0)
OCCUPIED = np.int8(1)
UNKNOWN = np.int8(2)

# body x forward, y left, z up  ->  camera x right, y down, z forward
R_BODY_CAM = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass
class OccupancyWorld:
    origin: np.ndarray            # (3,) world position of the grid corner
    resolution: float
    cells: np.ndarray             # (nx, ny, nz) int8 in {FREE, OCCUPIED, UNKNOWN}

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if any(d < 1 for d in self.cells.shape):
            raise ValueError("grid dims must be >= 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.cells.shape

    @property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.origin, self.origin + np.array(self.cells.shape) * self.resolution

    @classmethod
    def empty(cls, origin, dims, resolution, fill=FREE) -> "OccupancyWorld":
        cells = np.full(tuple(int(d) for d in dims), fill, dtype=np.int8)
        return cls(origin=np.asarray(origin, dtype=float), resolution=float(resolution), cells=cells)

    def world_to_index(self, p) -> np.ndarray:
        return np.floor((np.asarray(p) - self.origin) / self.resolution).astype(np.int64)

    def index_to_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def contains(self, p) -> bool:
        lo, hi = self.aabb
        p = np.asarray(p)
        return bool(np.all(p >= lo) and np.all(p < hi))

    def state_at(self, p) -> int:
        if not self.contains(p):
            return int(UNKNOWN)
        i, j, k = self.world_to_index(p)
        return int(self.cells[i, j, k])

    def occupied_at(self, pts: np.ndarray, unknown_as_occupied: bool = True) -> np.ndarray:
        """Vectorized occupancy lookup; out-of-grid points count as occupied."""
        pts = np.atleast_2d(pts)
        idx = np.floor((pts - self.origin) / self.resolution).astype(np.int64)
        dims = np.array(self.cells.shape)
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        out = np.ones(len(pts), dtype=bool)
        ii = idx[inside]
        states = self.cells[ii[:, 0], ii[:, 1], ii[:, 2]]
        blocked = states == OCCUPIED
        if unknown_as_occupied:
            blocked |= states == UNKNOWN
        out[inside] = blocked
        return out

    def copy(self) -> "OccupancyWorld":
        return OccupancyWorld(self.origin.copy(), self.resolution, self.cells.copy())

    def crop(self, lo, hi) -> "OccupancyWorld":
        """Sub-grid copy covering the world-frame box [lo, hi], clipped to this grid."""
        i0 = np.maximum(self.world_to_index(lo), 0)
        i1 = np.minimum(self.world_to_index(hi) + 1, np.array(self.cells.shape))
        i1 = np.maximum(i1, i0 + 1)
        sub = self.cells[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]].copy()
        return OccupancyWorld(self.origin + i0 * self.resolution, self.resolution, sub)


@dataclass
class EsdfField:
    origin: np.ndarray
    resolution: float
    distance: np.ndarray          # (nx, ny, nz) meters, in [0, d_trunc]
    d_trunc: float
    gradient_ready: bool = True

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.distance.shape

    @property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.origin, self.origin + np.array(self.distance.shape) * self.resolution

    def query(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return query_distance_gradient(self, pts)


def build_esdf(grid: OccupancyWorld, d_trunc: float = 5.0) -> EsdfField:
    """Exact truncated Euclidean distance to the nearest occupied voxel center.

    Unknown cells are treated as occupied.  A grid with no occupied voxels
    yields a uniform field at d_trunc.
    """
    occ = (grid.cells == OCCUPIED) | (grid.cells == UNKNOWN)
    if not occ.any():
        dist = np.full(grid.cells.shape, d_trunc, dtype=np.float64)
    else:
        dist = ndimage.distance_transform_edt(~occ, sampling=grid.resolution)
        np.minimum(dist, d_trunc, out=dist)
    return EsdfField(
        origin=grid.origin.copy(),
        resolution=grid.resolution,
        distance=np.ascontiguousarray(dist),
        d_trunc=float(d_trunc),
    )


@njit(cache=True, inline="always")
def _trilin_point(D, ox, oy, oz, res, px, py, pz):
    """(distance, gx, gy, gz, oob) of the trilinear field at one point."""
    nx, ny, nz = D.shape
    out = (px < ox or py < oy or pz < oz
           or px >= ox + nx * res or py >= oy + ny * res or pz >= oz + nz * res)
    ux = (px - ox) / res - 0.5
    uy = (py - oy) / res - 0.5
    uz = (pz - oz) / res - 0.5
    hx = (nx - 1) - 1e-9
    hy = (ny - 1) - 1e-9
    hz = (nz - 1) - 1e-9
    ux = 0.0 if ux < 0.0 else (hx if ux > hx else ux)
    uy = 0.0 if uy < 0.0 else (hy if uy > hy else uy)
    uz = 0.0 if uz < 0.0 else (hz if uz > hz else uz)
    ix = int(ux)
    iy = int(uy)
    iz = int(uz)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    if iz > nz - 2:
        iz = nz - 2
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    c000 = D[ix, iy, iz]
    c100 = D[ix + 1, iy, iz]
    c010 = D[ix, iy + 1, iz]
    c110 = D[ix + 1, iy + 1, iz]
    c001 = D[ix, iy, iz + 1]
    c101 = D[ix + 1, iy, iz + 1]
    c011 = D[ix, iy + 1, iz + 1]
    c111 = D[ix + 1, iy + 1, iz + 1]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    dist = c0 * (1 - fz) + c1 * fz
    gx = ((c100 - c000) * (1 - fy) + (c110 - c010) * fy) * (1 - fz) \
        + ((c101 - c001) * (1 - fy) + (c111 - c011) * fy) * fz
    gy = ((c010 - c000) * (1 - fx) + (c110 - c100) * fx) * (1 - fz) \
        + ((c011 - c001) * (1 - fx) + (c111 - c101) * fx) * fz
    gz = ((c001 - c000) * (1 - fx) + (c101 - c100) * fx) * (1 - fy) \
        + ((c011 - c010) * (1 - fx) + (c111 - c110) * fx) * fy
    return dist, gx / res, gy / res, gz / res, out


@njit(cache=True)
def _trilinear_kernel(D, ox, oy, oz, res, pts, dist, grad, oob):
    for k in range(pts.shape[0]):
        d, gx, gy, gz, out = _trilin_point(D, ox, oy, oz, res,
                                           pts[k, 0], pts[k, 1], pts[k, 2])
        dist[k] = d
        grad[k, 0] = gx
        grad[k, 1] = gy
        grad[k, 2] = gz
        oob[k] = out


def query_distance_gradient(esdf: EsdfField, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trilinear distance and its analytic gradient at world points.

    Out-of-bounds points are clamped to the interpolation boundary and
    flagged; callers decide policy.  Accepts (3,) or (K, 3).
    """
    single = np.asarray(pts).ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))
    K = pts.shape[0]
    dist = np.empty(K)
    grad = np.empty((K, 3))
    oob = np.empty(K, dtype=np.bool_)
    _trilinear_kernel(esdf.distance, esdf.origin[0], esdf.origin[1], esdf.origin[2],
                      esdf.resolution, pts, dist, grad, oob)
    if single:
        return float(dist[0]), grad[0], bool(oob[0])
    return dist, grad, oob


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    min_depth: float = 0.1
    max_depth: float = 8.0
    r_body_cam: np.ndarray = field(default_factory=lambda: R_BODY_CAM.copy())
    t_body_cam: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.min_depth < self.max_depth):
            raise ValueError("need 0 < min_depth < max_depth")
        self.r_body_cam = np.asarray(self.r_body_cam, dtype=float)
        self.t_body_cam = np.asarray(self.t_body_cam, dtype=float)

    def pixel_ray(self, u: float, v: float) -> np.ndarray:
        """Unit ray direction in the camera frame through pixel (u, v)."""
        d = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        return d / np.linalg.norm(d)

    def project(self, p_cam: np.ndarray) -> tuple[float, float, float]:
        """(u, v, z) of a camera-frame point; z <= 0 means behind the camera."""
        z = p_cam[2]
        if z <= 1e-9:
            return -1.0, -1.0, z
        return self.fx * p_cam[0] / z + self.cx, self.fy * p_cam[1] / z + self.cy, z

    def camera_pose(self, position: np.ndarray, yaw: float) -> tuple[np.ndarray, np.ndarray]:
        """(R_world_cam, t_world_cam) for a level body at `position` with `yaw`."""
        cy, sy = math.cos(yaw), math.sin(yaw)
        r_wb = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        r_wc = r_wb @ self.r_body_cam.T
        t_wc = np.asarray(position, dtype=float) + r_wb @ self.t_body_cam
        return r_wc, t_wc


@dataclass
class DepthImage:
    depth: np.ndarray             # (h, w) z-depth meters; 0.0 marks invalid
    r_world_cam: np.ndarray       # camera-to-world rotation at capture
    t_world_cam: np.ndarray
    stamp: float = 0.0

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def valid_mask(self) -> np.ndarray:
        return self.depth > 0.0


@njit(cache=True)
def _raycast_grid(cells, gox, goy, goz, res, ox, oy, oz, dx, dy, dz, t0, t1):
    """First-occupied-hit parameter along ray o + t*d for t in [t0, t1]; -1 if none."""
    nx, ny, nz = cells.shape
    # clip to grid AABB
    tmin, tmax = t0, t1
    for a in range(3):
        if a == 0:
            o, d, lo, hi = ox, dx, gox, gox + nx * res
        elif a == 1:
            o, d, lo, hi = oy, dy, goy, goy + ny * res
        else:
            o, d, lo, hi = oz, dz, goz, goz + nz * res
        if abs(d) < 1e-12:
            if o < lo or o >= hi:
                return -1.0
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
    if tmin >= tmax:
        return -1.0
    eps = 1e-9 * res
    t = tmin + eps
    px = ox + dx * t
    py = oy + dy * t
    pz = oz + dz * t
    ix = int(math.floor((px - gox) / res))
    iy = int(math.floor((py - goy) / res))
    iz = int(math.floor((pz - goz) / res))
    if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
        return -1.0
    stepx = 1 if dx > 0 else -1
    stepy = 1 if dy > 0 else -1
    stepz = 1 if dz > 0 else -1
    big = 1e30
    tdx = res / abs(dx) if abs(dx) > 1e-12 else big
    tdy = res / abs(dy) if abs(dy) > 1e-12 else big
    tdz = res / abs(dz) if abs(dz) > 1e-12 else big
    nb = gox + (ix + (1 if stepx > 0 else 0)) * res
    tmx = (nb - ox) / dx if abs(dx) > 1e-12 else big
    nb = goy + (iy + (1 if stepy > 0 else 0)) * res
    tmy = (nb - oy) / dy if abs(dy) > 1e-12 else big
    nb = goz + (iz + (1 if stepz > 0 else 0)) * res
    tmz = (nb - oz) / dz if abs(dz) > 1e-12 else big
    eps_span = 1e-6 * res
    t_enter = tmin
    while t_enter <= t1:
        if cells[ix, iy, iz] == 1:
            # report the middle of the traversed span inside the hit voxel:
            # strictly interior, so depth -> position -> voxel inverts uniquely.
            # zero-measure corner grazes are passed through, not hit.
            t_exit = min(tmx, min(tmy, tmz))
            if t_exit > t1:
                t_exit = t1
            if t_exit - t_enter >= eps_span:
                return 0.5 * (t_enter + t_exit)
        # advance every axis tied at the minimum so exact corner crossings
        # skip the zero-measure diagonal voxels (and integration can mirror it)
        tm = min(tmx, min(tmy, tmz))
        t_enter = tm
        if tmx == tm:
            tmx += tdx
            ix += stepx
            if ix < 0 or ix >= nx:
                return -1.0
        if tmy == tm:
            tmy += tdy
            iy += stepy
            if iy < 0 or iy >= ny:
                return -1.0
        if tmz == tm:
            tmz += tdz
            iz += stepz
            if iz < 0 or iz >= nz:
                return -1.0
    return -1.0


@njit(cache=True)
def _render_kernel(cells, gox, goy, goz, res, fx, fy, cx, cy, mind, maxd,
                   R, tw, out):
    h, w = out.shape
    for v in range(h):
        for u in range(w):
            rx = (u - cx) / fx
            ry = (v - cy) / fy
            s = math.sqrt(rx * rx + ry * ry + 1.0)
            dxc, dyc, dzc = rx / s, ry / s, 1.0 / s
            dx = R[0, 0] * dxc + R[0, 1] * dyc + R[0, 2] * dzc
            dy = R[1, 0] * dxc + R[1, 1] * dyc + R[1, 2] * dzc
            dz = R[2, 0] * dxc + R[2, 1] * dyc + R[2, 2] * dzc
            t0 = mind * s
            t1 = maxd * s
            th = _raycast_grid(cells, gox, goy, goz, res,
                               tw[0], tw[1], tw[2], dx, dy, dz, t0, t1)
            if th < 0.0:
                out[v, u] = 0.0
            else:
                out[v, u] = th / s


@njit(cache=True)
def _carve_ray(cells, gox, goy, goz, res, ox, oy, oz, dx, dy, dz, t0, t_end, mark_hit):
    """Free the voxels fully traversed before t_end; if mark_hit, occupy the
    voxel containing the point at t_end (render reports a strictly-interior
    span midpoint, so the position lookup is unambiguous).  Returns the number
    of voxel state changes."""
    changed = 0
    nx, ny, nz = cells.shape
    tol = 1e-12 * (1.0 + abs(t_end))
    tmin, tmax = t0, t_end
    for a in range(3):
        if a == 0:
            o, d, lo, hi = ox, dx, gox, gox + nx * res
        elif a == 1:
            o, d, lo, hi = oy, dy, goy, goy + ny * res
        else:
            o, d, lo, hi = oz, dz, goz, goz + nz * res
        if abs(d) < 1e-12:
            if o < lo or o >= hi:
                return 0
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
    if tmin < tmax:
        eps = 1e-9 * res
        t = tmin + eps
        px = ox + dx * t
        py = oy + dy * t
        pz = oz + dz * t
        ix = int(math.floor((px - gox) / res))
        iy = int(math.floor((py - goy) / res))
        iz = int(math.floor((pz - goz) / res))
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
            stepx = 1 if dx > 0 else -1
            stepy = 1 if dy > 0 else -1
            stepz = 1 if dz > 0 else -1
            big = 1e30
            tdx = res / abs(dx) if abs(dx) > 1e-12 else big
            tdy = res / abs(dy) if abs(dy) > 1e-12 else big
            tdz = res / abs(dz) if abs(dz) > 1e-12 else big
            nb = gox + (ix + (1 if stepx > 0 else 0)) * res
            tmx = (nb - ox) / dx if abs(dx) > 1e-12 else big
            nb = goy + (iy + (1 if stepy > 0 else 0)) * res
            tmy = (nb - oy) / dy if abs(dy) > 1e-12 else big
            nb = goz + (iz + (1 if stepz > 0 else 0)) * res
            tmz = (nb - oz) / dz if abs(dz) > 1e-12 else big
            eps_span = 1e-6 * res
            t_enter = tmin
            while True:
                t_exit = min(tmx, min(tmy, tmz))
                if t_exit > t_end - tol:
                    break  # current voxel reaches the hit point: leave it alone
                # sliver traversals are skipped by the renderer, so their
                # occupancy was never observed: leave them unknown too
                if t_exit - t_enter >= eps_span and cells[ix, iy, iz] == 2:
                    cells[ix, iy, iz] = 0
                    changed += 1
                t_enter = t_exit
                if tmx == t_exit:
                    tmx += tdx
                    ix += stepx
                    if ix < 0 or ix >= nx:
                        break
                if tmy == t_exit:
                    tmy += tdy
                    iy += stepy
                    if iy < 0 or iy >= ny:
                        break
                if tmz == t_exit:
                    tmz += tdz
                    iz += stepz
                    if iz < 0 or iz >= nz:
                        break
    if mark_hit:
        px = ox + dx * t_end
        py = oy + dy * t_end
        pz = oz + dz * t_end
        hx = int(math.floor((px - gox) / res))
        hy = int(math.floor((py - goy) / res))
        hz = int(math.floor((pz - goz) / res))
        if 0 <= hx < nx and 0 <= hy < ny and 0 <= hz < nz:
            if cells[hx, hy, hz] != 1:
                changed += 1
            cells[hx, hy, hz] = 1
    return changed


@njit(cache=True)
def _integrate_kernel(cells, gox, goy, goz, res, fx, fy, cx, cy, mind, maxd,
                      R, tw, depth):
    changed = 0
    h, w = depth.shape
    for v in range(h):
        for u in range(w):
            d = depth[v, u]
            rx = (u - cx) / fx
            ry = (v - cy) / fy
            s = math.sqrt(rx * rx + ry * ry + 1.0)
            dxc, dyc, dzc = rx / s, ry / s, 1.0 / s
            dx = R[0, 0] * dxc + R[0, 1] * dyc + R[0, 2] * dzc
            dy = R[1, 0] * dxc + R[1, 1] * dyc + R[1, 2] * dzc
            dz = R[2, 0] * dxc + R[2, 1] * dyc + R[2, 2] * dzc
            if d > 0.0:
                t_end = d * s
                mark_hit = True
            else:
                t_end = maxd * 0.999 * s
                mark_hit = False
            changed += _carve_ray(cells, gox, goy, goz, res, tw[0], tw[1], tw[2],
                                  dx, dy, dz, mind * s, t_end, mark_hit)
    return changed


def render_depth(world: OccupancyWorld, cam: CameraModel, r_world_cam: np.ndarray,
                 t_world_cam: np.ndarray, stamp: float = 0.0) -> DepthImage:
    """Per-pixel DDA ray march; depth is z-depth of the first occupied voxel."""
    out = np.zeros((cam.height, cam.width), dtype=np.float64)
    _render_kernel(
        world.cells, world.origin[0], world.origin[1], world.origin[2], world.resolution,
        cam.fx, cam.fy, cam.cx, cam.cy, cam.min_depth, cam.max_depth,
        np.ascontiguousarray(r_world_cam, dtype=np.float64),
        np.ascontiguousarray(t_world_cam, dtype=np.float64), out,
    )
    return DepthImage(depth=out, r_world_cam=np.array(r_world_cam, dtype=float),
                      t_world_cam=np.array(t_world_cam, dtype=float), stamp=stamp)


def integrate_depth(planner_map: OccupancyWorld, frame: DepthImage, cam: CameraModel) -> int:
    """Carve the frame into the planner map: free along rays, occupied at hits.

    Observed cells never revert to unknown; occupied wins over free when views
    disagree at quantization boundaries.  Returns the voxel change count.
    """
    return _integrate_kernel(
        planner_map.cells, planner_map.origin[0], planner_map.origin[1], planner_map.origin[2],
        planner_map.resolution, cam.fx, cam.fy, cam.cx, cam.cy, cam.min_depth, cam.max_depth,
        np.ascontiguousarray(frame.r_world_cam, dtype=np.float64),
        np.ascontiguousarray(frame.t_world_cam, dtype=np.float64),
        np.ascontiguousarray(frame.depth, dtype=np.float64),
    )


def world_from_primitives(spec: dict) -> OccupancyWorld:
    """Voxelize a scenario world block: axis-aligned boxes, vertical cylinders, rings.

    Expected keys: aabb [[x0,y0,z0],[x1,y1,z1]], resolution, primitives list.
    """
    lo = np.asarray(spec["aabb"][0], dtype=float)
    hi = np.asarray(spec["aabb"][1], dtype=float)
    res = float(spec.get("resolution", 0.1))
    dims = np.maximum(np.ceil((hi - lo) / res - 1e-9).astype(int), 1)
    world = OccupancyWorld.empty(lo, dims, res, fill=FREE)
    for prim in spec.get("primitives", []):
        add_primitive(world, prim)
    return world


def add_primitive(world: OccupancyWorld, prim: dict) -> None:
    kind = prim["type"]
    res = world.resolution
    if kind == "box":
        bmin = np.asarray(prim["min"], dtype=float)
        bmax = np.asarray(prim["max"], dtype=float)
        i0 = np.maximum(world.world_to_index(bmin + 0.5 * res * 0), 0)
        i1 = np.minimum(world.world_to_index(bmax) + 1, np.array(world.dims))
        if np.any(i1 <= i0):
            return
        sl = tuple(slice(int(a), int(b)) for a, b in zip(i0, i1))
        centers_in = _centers_mask(world, i0, i1, lambda c: np.all((c >= bmin) & (c <= bmax), axis=-1))
        world.cells[sl][centers_in] = OCCUPIED
    elif kind == "cylinder":
        c = np.asarray(prim["center"], dtype=float)
        r = float(prim["radius"])
        h = float(prim["height"])
        bmin = c - np.array([r, r, h / 2])
        bmax = c + np.array([r, r, h / 2])
        i0 = np.maximum(world.world_to_index(bmin), 0)
        i1 = np.minimum(world.world_to_index(bmax) + 1, np.array(world.dims))
        if np.any(i1 <= i0):
            return
        sl = tuple(slice(int(a), int(b)) for a, b in zip(i0, i1))

        def inside(cen):
            dxy = cen[..., :2] - c[:2]
            return (np.einsum("...k,...k", dxy, dxy) <= r * r) & (np.abs(cen[..., 2] - c[2]) <= h / 2)

        world.cells[sl][_centers_mask(world, i0, i1, inside)] = OCCUPIED
    elif kind == "ring":
        c = np.asarray(prim["center"], dtype=float)
        axis = np.asarray(prim.get("axis", [1.0, 0.0, 0.0]), dtype=float)
        axis = axis / np.linalg.norm(axis)
        R = float(prim["major_radius"])
        r = float(prim["minor_radius"])
        ext = R + r
        bmin, bmax = c - ext, c + ext
        i0 = np.maximum(world.world_to_index(bmin), 0)
        i1 = np.minimum(world.world_to_index(bmax) + 1, np.array(world.dims))
        if np.any(i1 <= i0):
            return
        sl = tuple(slice(int(a), int(b)) for a, b in zip(i0, i1))

        def inside(cen):
            d = cen - c
            hh = np.einsum("...k,k", d, axis)
            radial = d - hh[..., None] * axis
            rad = np.sqrt(np.einsum("...k,...k", radial, radial))
            return (rad - R) ** 2 + hh ** 2 <= r * r

        world.cells[sl][_centers_mask(world, i0, i1, inside)] = OCCUPIED
    else:
        raise ValueError(f"unknown primitive type: {kind}")


def _centers_mask(world: OccupancyWorld, i0, i1, predicate) -> np.ndarray:
    ii = np.arange(int(i0[0]), int(i1[0]))
    jj = np.arange(int(i0[1]), int(i1[1]))
    kk = np.arange(int(i0[2]), int(i1[2]))
    gi, gj, gk = np.meshgrid(ii, jj, kk, indexing="ij")
    centers = world.origin + (np.stack([gi, gj, gk], axis=-1) + 0.5) * world.resolution
    return predicate(centers)
