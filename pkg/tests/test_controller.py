from functools import lru_cache

import numpy as np
import pytest

from oracles import random_ltv, rollout
from rflmpc import qp as qpsolver
from rflmpc.controller import (ControllerConfig, ControllerState, Controller, estimate_future_windows,
                               warm_start_shift)
from rflmpc.dynamics import LtvMatrices, PlantParams, VehicleParams, nominal_ltv
from rflmpc.paths import PathSpec, generate_path
from rflmpc.prediction import Bounds, HorizonConfig, build_augmented, build_nominal
from rflmpc.residual_learning import ForestConfig, ResidualForest, build_samples, fit_forest
from rflmpc.simulate import SimSettings, run_closed_loop


def test_warm_start_shift():
    assert np.array_equal(warm_start_shift([1.0, 2.0, 3.0], 3), [2.0, 3.0, 3.0])
    assert np.array_equal(warm_start_shift(None, 4), np.zeros(4))
    assert np.array_equal(warm_start_shift([5.0], 1), [5.0])
    with pytest.raises(ValueError):
        warm_start_shift([1.0, 2.0], 3)


def _filled_state(rng, N):
    st = ControllerState(N, u_prev=0.01)
    for _ in range(N):
        st.states.append(rng.standard_normal(4))
        st.increments.append(rng.standard_normal())
    return st


def test_first_window_is_recorded_history(rng):
    N = 6
    st = _filled_state(rng, N)
    plan = rng.standard_normal(N)
    Zn, Zc = estimate_future_windows(np.append(st.states[-1], 0.01), random_ltv(rng), plan, st)
    assert Zn.shape == (N, 4 * N) and Zc.shape == (N, N)
    assert np.array_equal(Zn[0], np.array(st.states).ravel())
    # the increment applied at step k is the first planned one
    assert np.array_equal(Zc[0], np.append(st.past_increments(), plan[0]))


def test_null_system_gives_zero_windows():
    N = 5
    z = LtvMatrices(np.zeros((5, 5)), np.zeros((5, 1)), np.zeros((5, 1)))
    st = ControllerState(N)
    for _ in range(N):
        st.states.append(np.zeros(4))
        st.increments.append(0.0)
    Zn, Zc = estimate_future_windows(np.zeros(5), z, np.zeros(N), st)
    assert np.all(Zn == 0.0) and np.all(Zc == 0.0)


def test_last_window_newest_state_is_rollout(rng):
    # [DERIVED] iterative rollout oracle
    for _ in range(20):
        N = int(rng.integers(2, 10))
        ltv = random_ltv(rng, 0.2)
        st = _filled_state(rng, N)
        xi = np.append(st.states[-1], 0.02)
        plan = rng.standard_normal(N)
        Zn, Zc = estimate_future_windows(xi, ltv, plan, st)
        ref = rollout(ltv, xi, plan, N - 1).reshape(N - 1, 5)
        assert np.abs(Zn[-1][-4:] - ref[-1, :4]).max() <= 1e-12 * max(1.0, np.abs(ref).max())
        assert np.array_equal(Zc[-1], plan)


def test_windows_need_history():
    st = ControllerState(4)
    st.states.append(np.zeros(4))
    with pytest.raises(ValueError):
        estimate_future_windows(np.zeros(5), random_ltv(np.random.default_rng(0)), np.zeros(4), st)


def _cfg(N=8):
    return ControllerConfig(horizon=HorizonConfig(N, N))


def test_zero_forest_matches_nominal_step_by_step(rng):
    cfg = _cfg()
    a, b = Controller(cfg), Controller(cfg, ResidualForest.zeros(8, n_trees=3))
    for k in range(40):
        err = 0.05 * rng.standard_normal(4)
        w = rng.uniform(-0.3, 0.3, 8)
        ua, da = a.step(err, w)
        ub, db = b.step(err, w)
        assert abs(ua - ub) <= 1e-12
        assert db.used_forest == (k >= 7)
    assert b.state.warmed_up


def test_equilibrium_straight_path():
    cfg = _cfg()
    c = Controller(cfg)
    for _ in range(10):
        u, d = c.step(np.zeros(4), np.zeros(8))
        assert abs(u) <= 1e-9 and d.slack <= 1e-9 and d.status == qpsolver.SOLVED


def test_forest_window_mismatch_rejected():
    with pytest.raises(ValueError):
        Controller(_cfg(8), ResidualForest.zeros(6))


def test_command_respects_bounds(rng):
    b = Bounds(du_lo=-0.01, du_hi=0.01, u_lo=-0.05, u_hi=0.05)
    c = Controller(ControllerConfig(horizon=HorizonConfig(8, 8), bounds=b))
    u_prev = 0.0
    for _ in range(60):
        u, _ = c.step(np.array([rng.uniform(-1.5, 1.5), 0.0, 0.0, 0.0]), np.zeros(8))
        assert b.u_lo - 1e-15 <= u <= b.u_hi + 1e-15
        assert b.du_lo - 1e-15 <= u - u_prev <= b.du_hi + 1e-15
        u_prev = u


def _fake_solve(status):
    def solve(p, settings=None):
        return qpsolver.QpSolution(np.full(p.n, 0.5), np.zeros(p.m), status, 7)
    return solve


def test_max_iter_falls_back_to_shifted_plan(monkeypatch):
    c = Controller(_cfg())
    c.step(np.array([0.1, 0, 0, 0]), np.zeros(8))
    prev = c.state.prev_plan.copy()
    monkeypatch.setattr(qpsolver, "solve", _fake_solve(qpsolver.MAX_ITER))
    u_before = c.state.u_prev
    u, d = c.step(np.array([0.1, 0, 0, 0]), np.zeros(8))
    assert d.status == qpsolver.MAX_ITER and "max_iter" in d.fallback
    assert u == pytest.approx(u_before + prev[1])
    assert np.array_equal(c.state.prev_plan, warm_start_shift(prev, 8))


def test_infeasible_falls_back_to_zero_increment(monkeypatch):
    c = Controller(_cfg())
    c.step(np.array([0.1, 0, 0, 0]), np.zeros(8))
    u_before = c.state.u_prev
    monkeypatch.setattr(qpsolver, "solve", _fake_solve(qpsolver.PRIMAL_INFEASIBLE))
    u, d = c.step(np.array([0.1, 0, 0, 0]), np.zeros(8))
    assert u == u_before and np.isfinite(u)
    assert "infeasible" in d.fallback


def test_nonfinite_error_rejected():
    with pytest.raises(ValueError):
        Controller(_cfg()).step(np.array([np.nan, 0, 0, 0]), np.zeros(8))


def test_warm_start_reduces_iterations_on_closed_loop(monkeypatch):
    # replay every closed-loop QP cold and compare the iteration counts
    calls = []
    real = qpsolver.solve

    def recording(p, settings=None):
        sol = real(p, settings)
        calls.append((p, settings, sol.iterations))
        return sol

    monkeypatch.setattr(qpsolver, "solve", recording)
    path = generate_path(PathSpec.parse("S20, L25:90, S20"))
    run_closed_loop(path, ControllerConfig(), PlantParams(), SimSettings(offset=0.3))
    monkeypatch.setattr(qpsolver, "solve", real)
    warm = [it for _, _, it in calls[1:]]
    cold = []
    for p, s, _ in calls[1:]:
        s2 = qpsolver.QpSettings(eps_abs=s.eps_abs, eps_rel=s.eps_rel, max_iter=s.max_iter)
        cold.append(real(p, s2).iterations)
    assert np.median(warm) <= np.median(cold)


# ------------------------------------------------- learned open-loop prediction

def _injected_log(L, seed=3):
    """Nominal model plus a residue of 0.01*du in the e1d row."""
    rng = np.random.default_rng(seed)
    ltv = nominal_ltv(VehicleParams(), 0.02, 0.1)
    du = rng.uniform(-0.01, 0.01, L)
    u = np.cumsum(du)
    err = np.zeros((L, 4))
    err[0] = [0.1, 0.0, 0.01, 0.0]
    for k in range(L - 1):
        nxt = ltv.Ad @ np.append(err[k], u[k] - du[k]) + ltv.Bd.ravel() * du[k] + ltv.Dd.ravel()
        err[k + 1] = nxt[:4] + np.array([0.0, 0.01 * du[k], 0.0, 0.0])
    return err, du, u, ltv


@lru_cache(maxsize=None)
def _open_loop_errors():
    N, L = 16, 3000
    err, du, u, ltv = _injected_log(L)
    ds = build_samples(err, du, u, lambda k: ltv, N)
    tr, _ = ds.split_chronological(0.7)
    forest = fit_forest(tr, ForestConfig(n_trees=10, max_depth=2, min_leaf=60, seed=1))
    ev = build_nominal(ltv, HorizonConfig(N, N))
    rng = np.random.default_rng(0)
    en, ea = [], []
    for k in rng.choice(np.arange(int(0.7 * L) + N, L - N - 1), 100, replace=False):
        st = ControllerState(N)
        for i in range(k - N + 1, k + 1):
            st.states.append(err[i])
        for i in range(k - N + 1, k):
            st.increments.append(du[i])
        xi, plan = np.append(err[k], u[k - 1]), du[k:k + N]
        Zn, _ = estimate_future_windows(xi, ltv, plan, st)
        aug = build_augmented(ev, forest.predict_leaf_batch(Zn), st.past_increments())
        truth = err[k + 1:k + N + 1]
        en.append((ev.C @ ev.predict(xi, plan)).reshape(N, 4) - truth)
        ea.append((aug.C @ aug.predict(xi, plan)).reshape(N, 4) - truth)
    return np.array(en), np.array(ea)


def _rmse(a):
    return float(np.sqrt(np.mean(a ** 2)))


def test_learned_one_step_prediction_recovers_residue():
    # [DERIVED] synthetic truth = nominal + known du-linear residue
    en, ea = _open_loop_errors()
    assert _rmse(ea[:, 0]) <= 0.05 * _rmse(en[:, 0])
    assert _rmse(ea) < _rmse(en)


@pytest.mark.xfail(strict=True, reason="per-row residues are not propagated through Ad, so the residue "
                                       "integrated into e1 by the truth is never predicted (ratio ~0.67)")
def test_learned_horizon_prediction_halves_rmse():
    en, ea = _open_loop_errors()
    assert _rmse(ea) <= 0.5 * _rmse(en)
