"""Quasi-Newton solver behaviour on analytic fixtures."""

import numpy as np
import pytest

from gpa.costs import ObjectiveContext, PenaltyWeights, total_objective
from gpa.minco import minco_construct
from gpa.optimizer import OptimizerConfig, chain_to_tau, minimize, pack, unpack

REST = np.zeros((3, 3))


def test_convex_quadratic_converges_to_analytic_minimum():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(10, 10))
    H = A @ A.T + 10 * np.eye(10)
    b = rng.normal(size=10)
    x_star = np.linalg.solve(H, b)

    calls = {"n": 0}

    def fun(x):
        calls["n"] += 1
        return 0.5 * float(x @ H @ x) - float(b @ x), H @ x - b

    x, rep = minimize(fun, np.zeros(10), OptimizerConfig(max_iter=50, grad_tol_rel=1e-8))
    assert np.linalg.norm(x - x_star) < 1e-8
    assert rep.iterations <= 50
    assert rep.converged


def test_pure_time_objective_decreases_until_cap():
    # J = sum exp(tau): gradient strictly positive in T, no finite minimizer
    def fun(x):
        T = np.exp(x)
        return float(np.sum(T)), T  # d/dtau sum exp(tau) = exp(tau)

    x0 = np.zeros(3)
    x, rep = minimize(fun, x0, OptimizerConfig(max_iter=25))
    # no lower bound: tau runs away downward (until the cap or vanishing gradient)
    assert np.all(x < x0 - 3.0)
    assert rep.f_best < 0.1


def test_smooth_hinge_terminates_without_livelock():
    # sum of cubed hinges, kinked at 0 with known minimizer at the origin
    def fun(x):
        v = float(np.sum(np.maximum(x, 0.0) ** 3 + np.maximum(-x, 0.0) ** 3))
        g = 3 * np.maximum(x, 0.0) ** 2 - 3 * np.maximum(-x, 0.0) ** 2
        return v, g

    x0 = np.array([1.5, -2.0, 0.7, -0.1])
    x, rep = minimize(fun, x0, OptimizerConfig(max_iter=200, grad_tol_rel=1e-10))
    assert rep.evaluations < 5000
    assert np.all(np.abs(x) < 0.05)
    assert rep.f_best < fun(x0)[0]


def test_best_seen_objective_never_increases():
    rng = np.random.default_rng(4)
    H = np.diag(rng.uniform(0.1, 30.0, 8))

    seen = []

    def fun(x):
        f = 0.5 * float(x @ H @ x)
        seen.append(f)
        return f, H @ x

    x, rep = minimize(fun, rng.normal(size=8))
    assert rep.f_best <= seen[0]
    assert rep.f_best == pytest.approx(min(seen))


def test_nonfinite_objective_aborts_with_best_seen():
    def fun(x):
        if x[0] < -1.0:
            return np.nan, np.full(2, np.nan)
        return float(x @ x), 2 * x

    x, rep = minimize(fun, np.array([4.0, 0.0]))
    assert np.isfinite(rep.f_best)
    assert rep.f_best <= 16.0


def test_determinism_same_inputs_same_iterates():
    rng = np.random.default_rng(11)
    H = np.diag(rng.uniform(0.5, 5.0, 6))
    x0 = rng.normal(size=6)

    def make_fun(log):
        def fun(x):
            log.append(x.copy())
            return 0.5 * float(x @ H @ x), H @ x
        return fun

    log1, log2 = [], []
    x1, _ = minimize(make_fun(log1), x0)
    x2, _ = minimize(make_fun(log2), x0)
    assert np.array_equal(x1, x2)
    assert len(log1) == len(log2)
    assert all(np.array_equal(a, b) for a, b in zip(log1, log2))


def test_pack_unpack_round_trip_and_chain():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(3, 3))
    T = rng.uniform(0.2, 2.0, 4)
    x = pack(q, T)
    q2, T2 = unpack(x, 4)
    assert np.allclose(q2, q, atol=1e-12)
    assert np.allclose(T2, T, rtol=1e-12)
    assert np.allclose(pack(q2, T2), x, atol=1e-12)
    # tau = 0 -> T = 1
    assert np.allclose(unpack(np.zeros(3), 1)[1], [1.0])
    # chain factor dT/dtau = T against finite differences
    gq = rng.normal(size=(3, 3))
    gT = rng.normal(size=4)
    gx = chain_to_tau(gq, gT, T)
    h = 1e-8
    for i in range(4):
        xp = x.copy(); xp[9 + i] += h
        xm = x.copy(); xm[9 + i] -= h
        fd = ((np.exp(xp[9 + i]) - np.exp(xm[9 + i])) / (2 * h)) * gT[i]
        assert gx[9 + i] == pytest.approx(fd, rel=1e-7)


def test_recovers_min_jerk_spline_from_perturbed_start():
    # energy + tiny time cost from a perturbed 1-piece problem must land on the
    # analytic min-jerk quintic for the optimal duration
    bs = REST.copy()
    be = np.zeros((3, 3)); be[0] = [1.0, 0.5, 0.0]
    ctx = ObjectiveContext(boundary_start=bs, boundary_end=be,
                           weights=PenaltyWeights(1.0, 0, 1e-3, 0, 0, 0))

    def fun(x):
        q, T = unpack(x, 1)
        if not np.all(np.isfinite(T)) or np.any(T > 1e6):
            return np.inf, np.zeros_like(x)
        rep = total_objective(q, T, ctx)
        return rep.total, chain_to_tau(rep.grad_q, rep.grad_T_total, T)

    x0 = pack(np.zeros((0, 3)), np.array([0.7]))
    x, rep = minimize(fun, x0, OptimizerConfig(max_iter=120, grad_tol_rel=1e-12))
    _, T_opt = unpack(x, 1)
    # closed form: J = 720 |p|^2 / T^5 + lam*T  ->  T* = (3600 |p|^2 / lam)^(1/6)
    disp2 = float(be[0] @ be[0])
    T_star = (3600.0 * disp2 / 1e-3) ** (1.0 / 6.0)
    assert T_opt[0] == pytest.approx(T_star, rel=1e-5)
    tr = minco_construct(np.zeros((0, 3)), T_opt, bs, be)
    oracle = minco_construct(np.zeros((0, 3)), [T_star], bs, be)
    assert np.allclose(tr.coeffs, oracle.coeffs, atol=1e-6)
