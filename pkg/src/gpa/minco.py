"""Minimum-control-effort polynomial splines over waypoints and piece times.

The trajectory class pins an s-integrator spline (degree 2s-1 pieces) to
intermediate waypoints ``q`` and per-piece durations ``T`` by solving one
banded linear system; it also exposes the adjoint of that solve so penalty
gradients in coefficient space can be pulled back to (q, T) at O(M) cost.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

__all__ = [
    "MincoTrajectory",
    "ConstraintPoints",
    "minco_construct",
    "sample_constraint_points",
    "dump_trajectory",
]


class ConstructionError(ValueError):
    """Raised for invalid (q, T, boundary) inputs."""


class StaleCacheError(RuntimeError):
    """Raised when backprop is asked to run against mutated (q, T)."""


_FACT_CACHE: dict = {}


def _fact_table(ncoef: int) -> np.ndarray:
    """FACT[n, j] = j! / (j - n)! for j >= n, else 0."""
    tab = _FACT_CACHE.get(ncoef)
    if tab is None:
        tab = np.zeros((ncoef, ncoef))
        for n in range(ncoef):
            for j in range(n, ncoef):
                tab[n, j] = math.factorial(j) / math.factorial(j - n)
        _FACT_CACHE[ncoef] = tab
    return tab


def _basis(t: float, order: int, ncoef: int) -> np.ndarray:
    """beta^(order)(t): derivatives of the natural monomial basis [1, t, ..., t^(ncoef-1)]."""
    b = np.zeros(ncoef)
    if order >= ncoef:
        return b
    fact = _fact_table(ncoef)[order]
    tp = 1.0
    for j in range(order, ncoef):
        b[j] = fact[j] * tp
        tp *= t
    return b


def _basis_rows(t: float, orders: int, ncoef: int) -> np.ndarray:
    """Stacked beta^(n)(t) rows for n = 0..orders-1, shape (orders, ncoef)."""
    fact = _fact_table(ncoef)[:orders]
    tp = np.ones(ncoef)
    for j in range(1, ncoef):
        tp[j] = tp[j - 1] * t
    out = np.zeros((orders, ncoef))
    for n in range(orders):
        out[n, n:] = fact[n, n:] * tp[:ncoef - n]
    return out


def _fingerprint(q: np.ndarray, T: np.ndarray) -> bytes:
    return q.tobytes() + T.tobytes()


@njit(cache=True)
def _fill_system(T, q, bs, be, s, fact):
    """Banded system (both orientations) and right-hand side for the spline solve."""
    M = T.shape[0]
    ncoef = 2 * s
    nsys = ncoef * M
    bw = 3 * s - 1
    band = np.zeros((2 * bw + 1, nsys))
    band_T = np.zeros((2 * bw + 1, nsys))
    b = np.zeros((nsys, 3))
    rows_T = np.zeros((ncoef, ncoef))

    def put(r, c, val):
        band[bw + r - c, c] = val
        band_T[bw + c - r, r] = val

    for n in range(s):
        put(n, n, fact[n, n])
        for d in range(3):
            b[n, d] = bs[n, d]
    for i in range(1, M):
        Ti = T[i - 1]
        for n in range(ncoef):
            tp = 1.0
            for j in range(n, ncoef):
                rows_T[n, j] = fact[n, j] * tp
                tp *= Ti
        base = s + ncoef * (i - 1)
        ci = ncoef * (i - 1)
        for j in range(ncoef):
            put(base, ci + j, rows_T[0, j])
        for d in range(3):
            b[base, d] = q[i - 1, d]
        for n in range(ncoef - 1):
            r = base + 1 + n
            for j in range(n, ncoef):
                put(r, ci + j, rows_T[n, j])
            put(r, ci + ncoef + n, -fact[n, n])
    Ti = T[M - 1]
    for n in range(s):
        tp = 1.0
        for j in range(n, ncoef):
            rows_T[n, j] = fact[n, j] * tp
            tp *= Ti
    for n in range(s):
        r = nsys - s + n
        for j in range(n, ncoef):
            put(r, nsys - ncoef + j, rows_T[n, j])
        for d in range(3):
            b[r, d] = be[n, d]
    return band, band_T, b


@dataclass
class MincoTrajectory:
    """An M-piece spline c = M(q, T) with cached banded factors for backprop."""

    s: int
    T: np.ndarray                 # (M,) piece durations, all > 0
    q: np.ndarray                 # (M-1, 3) intermediate waypoints
    boundary_start: np.ndarray    # (s, 3) pos/vel/... at t = 0
    boundary_end: np.ndarray      # (s, 3) pos/vel/... at t = total
    coeffs: np.ndarray = field(repr=False, default=None)   # (M, 2s, 3)
    _band: np.ndarray = field(repr=False, default=None)
    _band_T: np.ndarray = field(repr=False, default=None)
    _stamp: bytes = field(repr=False, default=b"")

    @property
    def n_pieces(self) -> int:
        return len(self.T)

    @property
    def total_time(self) -> float:
        return float(np.sum(self.T))

    @property
    def t_knots(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.T)))

    def locate(self, t: float) -> tuple[int, float, bool]:
        """Piece index and local time for absolute t; flag marks out-of-range clamping."""
        total = self.total_time
        in_range = 0.0 <= t <= total
        t = min(max(t, 0.0), total)
        knots = self.t_knots
        i = int(np.searchsorted(knots, t, side="right")) - 1
        i = min(max(i, 0), self.n_pieces - 1)
        return i, t - knots[i], not in_range

    def eval(self, t: float, n: int = 0) -> np.ndarray:
        """n-th derivative of the trajectory at absolute time t (clamped to [0, total])."""
        i, tau, _ = self.locate(t)
        return self.eval_piece(i, tau, n)

    def eval_piece(self, i: int, tau: float, n: int = 0) -> np.ndarray:
        ncoef = 2 * self.s
        if n >= ncoef:
            return np.zeros(3)
        return _basis(tau, n, ncoef) @ self.coeffs[i]

    def eval_many(self, ts: np.ndarray, n: int = 0) -> np.ndarray:
        return np.stack([self.eval(float(t), n) for t in np.atleast_1d(ts)])

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(pos, vel, acc, jerk) at absolute time t."""
        i, tau, _ = self.locate(t)
        return tuple(self.eval_piece(i, tau, n) for n in range(4))

    # -- gradient pullback -------------------------------------------------

    def backprop(self, dF_dc: np.ndarray, dF_dT: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pull (dF/dc, direct dF/dT) back to total (dH/dq, dH/dT).

        dF_dc has shape (M, 2s, 3); dF_dT has shape (M,).  One adjoint banded
        solve; the T-sensitivity of the system matrix enters through the rows
        that evaluate piece i at its own duration.
        """
        if _fingerprint(self.q, self.T) != self._stamp:
            raise StaleCacheError("trajectory (q, T) mutated since construction")
        s, M = self.s, self.n_pieces
        ncoef = 2 * s
        nsys = ncoef * M
        rhs = dF_dc.reshape(nsys, 3)
        bw = 3 * s - 1
        # adjoint solve G = A^-T dF/dc
        G = solve_banded((bw, bw), self._band_T, rhs)

        dq = np.zeros((M - 1, 3))
        dT = np.asarray(dF_dT, dtype=float).copy()
        for i in range(1, M):
            row_wp = s + ncoef * (i - 1)
            dq[i - 1] = G[row_wp]
        # rows whose entries depend on T_i: junction-i (piece i evaluated at T_i)
        # and, for the last piece, the end-boundary rows.
        for i in range(M):
            Ti = self.T[i]
            rows = _basis_rows(Ti, ncoef, ncoef)
            derivs = rows[1:] @ self.coeffs[i]                      # p^(n)(T_i), n = 1..2s-1
            if i < M - 1:
                base = s + ncoef * i
                acc = float(np.sum(G[base] * derivs[0]))            # waypoint row
                acc += float(np.sum(G[base + 1:base + ncoef] * derivs[:ncoef - 1]))
            else:
                base = nsys - s
                acc = float(np.sum(G[base:base + s] * derivs[:s]))
            dT[i] -= acc
        return dq, dT


def minco_construct(
    q: np.ndarray,
    T: np.ndarray,
    boundary_start: np.ndarray,
    boundary_end: np.ndarray,
    s: int = 3,
) -> MincoTrajectory:
    """Solve for the unique minimum int ||p^(s)||^2 spline through q with times T.

    boundary_* stack position, velocity, ... up to order s-1 (shape (s, 3)).
    Raises ConstructionError for non-positive durations; warns via the return
    object's conditioning flag when durations are spread beyond 1e6.
    """
    T = np.atleast_1d(np.asarray(T, dtype=float))
    q = np.asarray(q, dtype=float).reshape(-1, 3)
    boundary_start = np.asarray(boundary_start, dtype=float).reshape(s, 3)
    boundary_end = np.asarray(boundary_end, dtype=float).reshape(s, 3)
    M = len(T)
    if M < 1:
        raise ConstructionError("need at least one piece")
    if q.shape[0] != M - 1:
        raise ConstructionError(f"expected {M - 1} intermediate points, got {q.shape[0]}")
    if np.any(T <= 0.0):
        raise ConstructionError("piece durations must be positive")
    if np.max(T) / np.min(T) > 1e6:
        import logging

        logging.getLogger(__name__).warning(
            "piece duration spread %.3g may make the spline system ill-conditioned",
            float(np.max(T) / np.min(T)),
        )

    ncoef = 2 * s
    bw = 3 * s - 1
    band, band_T, b = _fill_system(T, q, boundary_start, boundary_end, s,
                                   _fact_table(ncoef))
    coeffs = solve_banded((bw, bw), band, b).reshape(M, ncoef, 3)
    traj = MincoTrajectory(
        s=s,
        T=T.copy(),
        q=q.copy(),
        boundary_start=boundary_start.copy(),
        boundary_end=boundary_end.copy(),
        coeffs=coeffs,
        _band=band,
        _band_T=band_T,
    )
    traj._stamp = _fingerprint(traj.q, traj.T)
    return traj


@dataclass
class ConstraintPoints:
    """Trajectory samples p(j T_i / kappa) with cached derivatives and basis rows.

    P[n] has shape (M, kappa+1, 3) for derivative order n; B[n] holds the
    matching beta^(n) rows, shape (M, kappa+1, 2s), so penalty gradients can be
    assembled as outer products without re-evaluating the basis.
    """

    kappa: int
    t_local: np.ndarray          # (M, kappa+1)
    P: list[np.ndarray]          # derivative orders 0..4
    B: list[np.ndarray]

    @property
    def n_pieces(self) -> int:
        return self.t_local.shape[0]

    def positions_flat(self) -> np.ndarray:
        """All samples as one (M*(kappa+1), 3) array (junction samples duplicated)."""
        return self.P[0].reshape(-1, 3)


def sample_constraint_points(traj: MincoTrajectory, kappa: int, max_order: int = 4) -> ConstraintPoints:
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    M = traj.n_pieces
    ncoef = 2 * traj.s
    frac = np.arange(kappa + 1) / kappa
    t_local = traj.T[:, None] * frac[None, :]
    B = []
    P = []
    for n in range(max_order + 1):
        Bn = np.zeros((M, kappa + 1, ncoef))
        for j in range(n, ncoef):
            a = math.factorial(j) / math.factorial(j - n)
            Bn[:, :, j] = a * t_local ** (j - n)
        B.append(Bn)
        P.append(np.einsum("ijk,ikd->ijd", Bn, traj.coeffs))
    return ConstraintPoints(kappa=kappa, t_local=t_local, P=P, B=B)


def dump_trajectory(traj: MincoTrajectory, path, dt: float = 0.05) -> None:
    """CSV of (t, pos, vel, acc, jerk) at fixed dt with a JSON header line."""
    header = {
        "s": traj.s,
        "M": traj.n_pieces,
        "T": traj.T.tolist(),
        "q": traj.q.tolist(),
        "boundary": {
            "start": traj.boundary_start.tolist(),
            "end": traj.boundary_end.tolist(),
        },
    }
    ts = np.arange(0.0, traj.total_time + 1e-9, dt)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("t,px,py,pz,vx,vy,vz,ax,ay,az,jx,jy,jz\n")
        for t in ts:
            p, v, a, j = traj.state(float(t))
            row = [t, *p, *v, *a, *j]
            fh.write(",".join(f"{x:.9g}" for x in row) + "\n")
