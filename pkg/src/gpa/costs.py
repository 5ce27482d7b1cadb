"""Trajectory penalties and their analytic gradients in (coefficients, times).

Each penalty returns (value, dJ/dc, dJ/dT) with dJ/dc shaped (M, 2s, 3) and
dJ/dT shaped (M,).  Integral penalties use trapezoidal weights over the
constraint points; time gradients combine the direct quadrature scaling with
the chain through the sample clock t = (j / kappa) * T_i.  Everything here is
certified against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .minco import ConstraintPoints, MincoTrajectory, minco_construct, sample_constraint_points
from .worldmap import EsdfField, _trilin_point, query_distance_gradient

__all__ = [
    "PenaltyWeights",
    "VisibilityConfig",
    "DynLimits",
    "ObjectiveReport",
    "ObjectiveContext",
    "confident_fov_balls",
    "penalty_time",
    "penalty_energy",
    "penalty_dynamics",
    "penalty_visibility",
    "penalty_visibility_legacy",
    "penalty_collision",
    "penalty_uniform",
    "total_objective",
]


@dataclass
class PenaltyWeights:
    energy: float = 1.0e-2
    dynamics: float = 1.0e3
    time: float = 20.0
    visibility: float = 1.0e2
    collision: float = 1.0e4
    uniformity: float = 1.0e2

    def __post_init__(self):
        for name in ("energy", "dynamics", "time", "visibility", "collision", "uniformity"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")

    _ALIASES = {"e": "energy", "d": "dynamics", "t": "time",
                "vis": "visibility", "c": "collision", "u": "uniformity"}

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltyWeights":
        return cls(**{cls._ALIASES.get(k, k): float(v) for k, v in d.items()})


@dataclass
class VisibilityConfig:
    target: np.ndarray
    n_balls: int = 20
    rho: float = 0.8
    legacy: bool = False

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if self.n_balls < 1:
            raise ValueError("need at least one ball")
        if self.rho <= 0:
            raise ValueError("rho must be positive")


@dataclass
class DynLimits:
    max_v: float = 1.5
    max_a: float = 6.0
    max_j: float = 30.0

    def __post_init__(self):
        if min(self.max_v, self.max_a, self.max_j) <= 0:
            raise ValueError("limits must be positive")


@dataclass
class ObjectiveReport:
    values: dict                      # unweighted penalty values by name
    total: float
    grad_c: np.ndarray                # (M, 2s, 3) weighted
    grad_T: np.ndarray                # (M,) weighted, pre-pullback
    grad_q: np.ndarray                # (M-1, 3) total after spline pullback
    grad_T_total: np.ndarray          # (M,) total after spline pullback
    flags: frozenset = frozenset()


TRAP_EPS = 1e-6


def _trap_weights(kappa: int) -> np.ndarray:
    w = np.ones(kappa + 1)
    w[0] = w[-1] = 0.5
    return w


def penalty_time(traj: MincoTrajectory):
    M = traj.n_pieces
    return float(np.sum(traj.T)), np.zeros((M, 2 * traj.s, 3)), np.ones(M)


_ENERGY_CACHE: dict = {}


def _energy_tables(s: int):
    """Coefficient table for the closed-form int ||p^(s)||^2 Gram sum."""
    tabs = _ENERGY_CACHE.get(s)
    if tabs is None:
        ncoef = 2 * s
        a = np.zeros(ncoef)
        for j in range(s, ncoef):
            a[j] = np.prod(np.arange(j - s + 1, j + 1, dtype=float))
        jj, kk = np.meshgrid(np.arange(ncoef), np.arange(ncoef), indexing="ij")
        pw = jj + kk - 2 * s + 1
        mask = (jj >= s) & (kk >= s)
        aa = np.where(mask, np.outer(a, a) / np.where(mask, pw, 1), 0.0)
        tabs = (aa, np.where(mask, pw, 0))
        _ENERGY_CACHE[s] = tabs
    return tabs


def penalty_energy(traj: MincoTrajectory):
    """Closed-form int ||p^(s)||^2 per piece with exact gradients."""
    s, M = traj.s, traj.n_pieces
    aa, pw = _energy_tables(s)
    dc = np.zeros((M, 2 * s, 3))
    dT = np.zeros(M)
    val = 0.0
    for i in range(M):
        Ti = traj.T[i]
        c = traj.coeffs[i]
        A = aa * Ti ** pw                       # zero off the >= s block by construction
        val += float(np.sum(A * (c @ c.T)))
        dc[i] = 2.0 * A @ c
        dT[i] = float(np.sum(traj.eval_piece(i, Ti, s) ** 2))
    return val, dc, dT


def _integral_accumulate(pts: ConstraintPoints, traj: MincoTrajectory, order: int,
                         pen: np.ndarray, dpen_dp: np.ndarray):
    """Assemble (value, dc, dT) for J = sum_i (T_i/k) sum_j w_j pen(p^(order)_{i,j})."""
    M = pts.n_pieces
    kappa = pts.kappa
    w = _trap_weights(kappa)
    frac = np.arange(kappa + 1) / kappa
    Ti = traj.T
    val = float(np.sum((Ti / kappa) * (pen @ w)))
    # dJ/dc_i via the basis rows of the sampled derivative order
    scaled = (Ti[:, None] / kappa) * w[None, :]
    dc = np.einsum("ij,ijb,ijd->ibd", scaled, pts.B[order], dpen_dp)
    # direct quadrature scaling + chain through t = frac * T_i
    dpen_dt = np.einsum("ijd,ijd->ij", dpen_dp, pts.P[order + 1])
    dT = (pen @ w) / kappa + np.einsum("ij,ij,j->i", scaled, dpen_dt, frac)
    return val, dc, dT


def confident_fov_balls(p_vis: np.ndarray, cfg: VisibilityConfig):
    """Ball chain from p_vis toward the target: centers, radii, offsets, fractions.

    Degenerate geometry (p_vis at the target) yields empty arrays.
    """
    p_vis = np.asarray(p_vis, dtype=float)
    delta = cfg.target - p_vis
    span = float(np.linalg.norm(delta))
    if span <= 1e-6:
        z = np.zeros(0)
        return np.zeros((0, 3)), z, z, z
    psi = np.arange(1, cfg.n_balls + 1) / cfg.n_balls
    centers = p_vis[None, :] + psi[:, None] * delta[None, :]
    l = psi * span
    r = cfg.rho * l
    return centers, r, l, psi


def _visibility_terms(pts: ConstraintPoints, esdf: EsdfField, cfg: VisibilityConfig):
    """Per-sample visibility cost and its gradient w.r.t. the sample position."""
    M, K = pts.t_local.shape
    P = pts.P[0].reshape(-1, 3)
    S = P.shape[0]
    delta = cfg.target[None, :] - P
    span = np.linalg.norm(delta, axis=1)
    live = span > 1e-6
    psi = np.arange(1, cfg.n_balls + 1) / cfg.n_balls

    centers = P[:, None, :] + psi[None, :, None] * delta[:, None, :]
    l = span[:, None] * psi[None, :]
    dist, grad, oob = query_distance_gradient(esdf, centers.reshape(-1, 3))
    dist = dist.reshape(S, -1)
    grad = grad.reshape(S, -1, 3)

    with np.errstate(divide="ignore", invalid="ignore"):
        if cfg.legacy:
            f = (cfg.rho * l) ** 2 - dist ** 2
            # d f~/dp = 2 rho^2 psi (p - v_k) - 2 (1 - psi) Xi grad
            df_dp = (2.0 * cfg.rho ** 2 * psi[None, :, None]) * (P[:, None, :] - centers) \
                - 2.0 * (1.0 - psi)[None, :, None] * dist[:, :, None] * grad
        else:
            f = cfg.rho - dist / l
            df_dp = (psi[None, :] * dist / l ** 3)[:, :, None] * (P[:, None, :] - centers) \
                - ((1.0 - psi)[None, :] / l)[:, :, None] * grad
    act = (f > 0.0) & live[:, None]
    fa = np.where(act, f, 0.0)
    pen = np.sum(fa ** 3, axis=1)
    dpen_dp = np.einsum("sk,skd->sd", 3.0 * fa ** 2, np.where(act[:, :, None], df_dp, 0.0))
    flags = frozenset({"esdf-oob"} if bool(np.any(oob)) else set())
    if not np.all(live):
        flags = flags | {"degenerate-visibility"}
    return pen.reshape(M, K), dpen_dp.reshape(M, K, 3), flags


def penalty_visibility(pts: ConstraintPoints, esdf: EsdfField, cfg: VisibilityConfig,
                       traj: MincoTrajectory):
    if esdf is None:
        raise ValueError("visibility penalty needs a distance field")
    pen, dpen, flags = _visibility_terms(pts, esdf, cfg)
    val, dc, dT = _integral_accumulate(pts, traj, 0, pen, dpen)
    return val, dc, dT, flags


def penalty_visibility_legacy(pts: ConstraintPoints, esdf: EsdfField, cfg: VisibilityConfig,
                              traj: MincoTrajectory):
    if esdf is None:
        raise ValueError("visibility penalty needs a distance field")
    cfg_legacy = VisibilityConfig(target=cfg.target, n_balls=cfg.n_balls, rho=cfg.rho, legacy=True)
    pen, dpen, flags = _visibility_terms(pts, esdf, cfg_legacy)
    val, dc, dT = _integral_accumulate(pts, traj, 0, pen, dpen)
    return val, dc, dT, flags


def penalty_dynamics(pts: ConstraintPoints, limits: DynLimits, traj: MincoTrajectory):
    """Hinge-cubed overshoot of squared velocity/acceleration/jerk norms."""
    M = pts.n_pieces
    total = 0.0
    dc = np.zeros((M, 2 * traj.s, 3))
    dT = np.zeros(M)
    for order, mx in ((1, limits.max_v), (2, limits.max_a), (3, limits.max_j)):
        Pn = pts.P[order]
        G = np.einsum("ijd,ijd->ij", Pn, Pn) - mx * mx
        act = G > 0.0
        Ga = np.where(act, G, 0.0)
        pen = Ga ** 3
        dpen_dp = (6.0 * Ga ** 2)[:, :, None] * np.where(act[:, :, None], Pn, 0.0)
        v, c_, t_ = _integral_accumulate(pts, traj, order, pen, dpen_dp)
        total += v
        dc += c_
        dT += t_
    return total, dc, dT


def penalty_collision(pts: ConstraintPoints, esdf: EsdfField, d_safe: float,
                      traj: MincoTrajectory):
    """Clearance hinge d_safe - Xi(p) cubed, quadrature-weighted."""
    if esdf is None:
        raise ValueError("collision penalty needs a distance field")
    M, K = pts.t_local.shape
    P = pts.P[0].reshape(-1, 3)
    dist, grad, oob = query_distance_gradient(esdf, P)
    G = d_safe - dist
    # out-of-field samples are maximally penalized with no pull-back direction
    G = np.where(oob, d_safe, G)
    act = G > 0.0
    Ga = np.where(act, G, 0.0)
    pen = (Ga ** 3).reshape(M, K)
    dpen = (-3.0 * Ga ** 2)[:, None] * np.where((act & ~oob)[:, None], grad, 0.0)
    val, dc, dT = _integral_accumulate(pts, traj, 0, pen, dpen.reshape(M, K, 3))
    flags = frozenset({"esdf-oob"} if bool(np.any(oob)) else set())
    return val, dc, dT, flags


def penalty_uniform(pts: ConstraintPoints, traj: MincoTrajectory):
    """Squared difference of consecutive squared gap lengths over all samples."""
    M = pts.n_pieces
    kappa = pts.kappa
    ncoef = 2 * traj.s
    # flatten with junction samples deduplicated, attributed to the earlier piece
    pieces = [0] + [i for i in range(M) for _ in range(kappa)]
    sample_j = [0] + [j for _ in range(M) for j in range(1, kappa + 1)]
    pi = np.array([0] + [(m - 1) // kappa for m in range(1, M * kappa + 1)])
    pj = np.array(sample_j)
    X = pts.P[0][pi, pj]                    # (S, 3)
    S = X.shape[0]
    if S < 3:
        return 0.0, np.zeros((M, ncoef, 3)), np.zeros(M)
    delta = X[1:] - X[:-1]
    D = np.einsum("md,md->m", delta, delta)
    diff = D[1:] - D[:-1]
    val = float(np.sum(diff ** 2))
    dD = np.zeros(S - 1)
    dD[1:] += 2.0 * diff
    dD[:-1] -= 2.0 * diff
    gX = np.zeros((S, 3))
    contrib = (2.0 * dD)[:, None] * delta
    gX[1:] += contrib
    gX[:-1] -= contrib
    dc = np.zeros((M, ncoef, 3))
    dT = np.zeros(M)
    np.add.at(dc, pi, pts.B[0][pi, pj][:, :, None] * gX[:, None, :])
    np.add.at(dT, pi, np.einsum("md,md->m", gX, pts.P[1][pi, pj]) * (pj / kappa))
    return val, dc, dT


@njit(cache=True)
def _field_penalties_kernel(P, B, T, w_trap, frac, D, ox, oy, oz, res,
                            w_d, max_v2, max_a2, max_j2,
                            w_c, d_safe,
                            w_vis, target, n_balls, rho, legacy,
                            values, dc, dT):
    """Fused quadrature pass: dynamics + collision + visibility, weighted.

    P: (5, M, K, 3) derivatives 0..4 at the constraint points; B: matching
    basis rows (5, M, K, ncoef).  Accumulates weighted gradients in place and
    writes the three unweighted penalty values; returns a flag bitmask
    (1 = esdf out-of-bounds touched, 2 = degenerate visibility geometry).
    """
    M = P.shape[1]
    K = P.shape[2]
    ncoef = B.shape[3]
    kappa = K - 1
    flags = 0
    for i in range(M):
        Ti = T[i]
        for j in range(K):
            wq = (Ti / kappa) * w_trap[j]
            # gradient of the order-0 cost terms w.r.t. the sample position
            g0x = 0.0
            g0y = 0.0
            g0z = 0.0
            pen0 = 0.0
            px = P[0, i, j, 0]
            py = P[0, i, j, 1]
            pz = P[0, i, j, 2]

            if w_d > 0.0:
                for order in range(1, 4):
                    if order == 1:
                        mx2 = max_v2
                    elif order == 2:
                        mx2 = max_a2
                    else:
                        mx2 = max_j2
                    vx = P[order, i, j, 0]
                    vy = P[order, i, j, 1]
                    vz = P[order, i, j, 2]
                    G = vx * vx + vy * vy + vz * vz - mx2
                    if G > 0.0:
                        G2 = G * G
                        values[0] += wq * G2 * G
                        s = w_d * wq * 6.0 * G2
                        for b in range(ncoef):
                            bb = B[order, i, j, b]
                            if bb != 0.0:
                                dc[i, b, 0] += s * bb * vx
                                dc[i, b, 1] += s * bb * vy
                                dc[i, b, 2] += s * bb * vz
                        dGdt = 2.0 * (P[order + 1, i, j, 0] * vx
                                      + P[order + 1, i, j, 1] * vy
                                      + P[order + 1, i, j, 2] * vz)
                        dT[i] += w_d * (w_trap[j] / kappa) * G2 * G \
                            + w_d * wq * 3.0 * G2 * dGdt * frac[j]

            if w_c > 0.0:
                d, gx, gy, gz, oob = _trilin_point(D, ox, oy, oz, res, px, py, pz)
                if oob:
                    flags |= 1
                    Gc = d_safe
                    gx = 0.0
                    gy = 0.0
                    gz = 0.0
                else:
                    Gc = d_safe - d
                if Gc > 0.0:
                    Gc2 = Gc * Gc
                    values[1] += wq * Gc2 * Gc
                    s = w_c * 3.0 * Gc2
                    pen0 += w_c * Gc2 * Gc
                    g0x -= s * gx
                    g0y -= s * gy
                    g0z -= s * gz

            if w_vis > 0.0:
                dxt = target[0] - px
                dyt = target[1] - py
                dzt = target[2] - pz
                span = math.sqrt(dxt * dxt + dyt * dyt + dzt * dzt)
                if span <= 1e-6:
                    flags |= 2
                else:
                    for k in range(1, n_balls + 1):
                        psi = k / n_balls
                        cx_ = px + psi * dxt
                        cy_ = py + psi * dyt
                        cz_ = pz + psi * dzt
                        l = psi * span
                        d, gx, gy, gz, oob = _trilin_point(D, ox, oy, oz, res, cx_, cy_, cz_)
                        if oob:
                            flags |= 1
                        if legacy:
                            f = (rho * l) ** 2 - d * d
                        else:
                            f = rho - d / l
                        if f > 0.0:
                            f2 = f * f
                            values[2] += wq * f2 * f
                            s = w_vis * 3.0 * f2
                            pen0 += w_vis * f2 * f
                            if legacy:
                                a = 2.0 * rho * rho * psi
                                b2 = 2.0 * (1.0 - psi) * d
                                g0x += s * (a * (px - cx_) - b2 * gx)
                                g0y += s * (a * (py - cy_) - b2 * gy)
                                g0z += s * (a * (pz - cz_) - b2 * gz)
                            else:
                                a = psi * d / (l * l * l)
                                b2 = (1.0 - psi) / l
                                g0x += s * (a * (px - cx_) - b2 * gx)
                                g0y += s * (a * (py - cy_) - b2 * gy)
                                g0z += s * (a * (pz - cz_) - b2 * gz)

            if pen0 != 0.0 or g0x != 0.0 or g0y != 0.0 or g0z != 0.0:
                for b in range(ncoef):
                    bb = B[0, i, j, b]
                    if bb != 0.0:
                        dc[i, b, 0] += wq * bb * g0x
                        dc[i, b, 1] += wq * bb * g0y
                        dc[i, b, 2] += wq * bb * g0z
                dpdt = (g0x * P[1, i, j, 0] + g0y * P[1, i, j, 1]
                        + g0z * P[1, i, j, 2])
                dT[i] += (w_trap[j] / kappa) * pen0 + wq * dpdt * frac[j]
    return flags


def _field_penalties_fused(pts: ConstraintPoints, traj: MincoTrajectory,
                           ctx: "ObjectiveContext"):
    """Weighted dynamics/collision/visibility in one numba pass."""
    w = ctx.weights
    M = pts.n_pieces
    ncoef = 2 * traj.s
    P = np.stack(pts.P)
    B = np.stack(pts.B)
    values = np.zeros(3)
    dc = np.zeros((M, ncoef, 3))
    dT = np.zeros(M)
    esdf = ctx.esdf
    need_field = w.collision > 0 or w.visibility > 0
    if need_field and esdf is None:
        raise ValueError("collision/visibility penalties need a distance field")
    if esdf is None:
        D = np.zeros((2, 2, 2))
        ox = oy = oz = 0.0
        res = 1.0
    else:
        D = esdf.distance
        ox, oy, oz = esdf.origin
        res = esdf.resolution
    vis = ctx.vis
    if w.visibility > 0 and vis is None:
        raise ValueError("visibility weight set but no visibility config")
    target = vis.target if vis is not None else np.zeros(3)
    n_balls = vis.n_balls if vis is not None else 1
    rho = vis.rho if vis is not None else 0.8
    legacy = bool(vis.legacy) if vis is not None else False
    frac = np.arange(pts.kappa + 1) / pts.kappa
    flags = _field_penalties_kernel(
        P, B, traj.T, _trap_weights(pts.kappa), frac, D, ox, oy, oz, res,
        w.dynamics, ctx.limits.max_v ** 2, ctx.limits.max_a ** 2, ctx.limits.max_j ** 2,
        w.collision, ctx.d_safe,
        w.visibility, np.asarray(target, dtype=float), int(n_balls), float(rho), legacy,
        values, dc, dT)
    out = set()
    if flags & 1:
        out.add("esdf-oob")
    if flags & 2:
        out.add("degenerate-visibility")
    return values, dc, dT, frozenset(out)


@dataclass
class ObjectiveContext:
    boundary_start: np.ndarray
    boundary_end: np.ndarray
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    limits: DynLimits = field(default_factory=DynLimits)
    esdf: EsdfField | None = None
    vis: VisibilityConfig | None = None
    d_safe: float = 0.4
    kappa: int = 8
    s: int = 3


def total_objective(q: np.ndarray, T: np.ndarray, ctx: ObjectiveContext) -> ObjectiveReport:
    """Construct the spline, evaluate all weighted penalties, pull gradients back to (q, T)."""
    traj = minco_construct(q, T, ctx.boundary_start, ctx.boundary_end, ctx.s)
    pts = sample_constraint_points(traj, ctx.kappa)
    w = ctx.weights
    M = traj.n_pieces
    dc = np.zeros((M, 2 * ctx.s, 3))
    dT = np.zeros(M)
    values = {}
    flags: frozenset = frozenset()

    def add(name, weight, result):
        nonlocal dc, dT, flags
        if len(result) == 4:
            v, c_, t_, fl = result
            flags = flags | fl
        else:
            v, c_, t_ = result
        values[name] = v
        dc += weight * c_
        dT += weight * t_

    values["energy"] = 0.0
    values["dynamics"] = 0.0
    values["time"] = 0.0
    values["visibility"] = 0.0
    values["collision"] = 0.0
    values["uniformity"] = 0.0
    if w.energy > 0:
        add("energy", w.energy, penalty_energy(traj))
    if w.time > 0:
        add("time", w.time, penalty_time(traj))
    if w.uniformity > 0:
        add("uniformity", w.uniformity, penalty_uniform(pts, traj))
    if w.dynamics > 0 or w.collision > 0 or w.visibility > 0:
        field_vals, c_, t_, fl = _field_penalties_fused(pts, traj, ctx)
        values["dynamics"], values["collision"], values["visibility"] = (
            float(field_vals[0]), float(field_vals[1]), float(field_vals[2]))
        dc += c_
        dT += t_
        flags = flags | fl

    total = (
        w.energy * values["energy"] + w.dynamics * values["dynamics"]
        + w.time * values["time"] + w.visibility * values["visibility"]
        + w.collision * values["collision"] + w.uniformity * values["uniformity"]
    )
    gq, gT = traj.backprop(dc, dT)
    return ObjectiveReport(values=values, total=float(total), grad_c=dc, grad_T=dT,
                           grad_q=gq, grad_T_total=gT, flags=flags)
