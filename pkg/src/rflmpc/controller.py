"""Receding-horizon steering controller with an optional learned residue.

Each step shifts the previous plan as an initial guess, rolls the nominal
model forward under that guess to estimate the future feature windows,
queries the forest for one averaged coefficient matrix per prediction row,
folds the coefficients into the stacked prediction, and solves the
condensed QP. Without a forest (or before the history buffer is full) it is
a plain nominal MPC.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import qp as qpsolver
from .dynamics import LtvMatrices, VehicleParams, continuous_matrices, discretize_and_augment
from .prediction import (NX, NY, AugmentedEvolution, Bounds, HorizonConfig, QpWeights,
                         build_augmented, build_nominal, condense_qp, expand_increments)
from .residual_learning import FeatureWindow, ResidualForest


@dataclass(frozen=True)
class ControllerConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    weights: QpWeights = field(default_factory=QpWeights)
    bounds: Bounds = field(default_factory=Bounds)
    qp_eps: float = 1e-6
    qp_max_iter: int = 4000


class ControllerState:
    """History ring buffers and the previous optimal plan."""

    def __init__(self, N: int, u_prev: float = 0.0):
        self.N = N
        self.states: deque = deque(maxlen=N)
        self.increments: deque = deque(maxlen=N)
        self.prev_plan: np.ndarray | None = None
        self.prev_duals: np.ndarray | None = None
        self.u_prev = float(u_prev)

    @property
    def warmed_up(self) -> bool:
        return len(self.states) == self.N and len(self.increments) >= self.N - 1

    def past_increments(self) -> np.ndarray:
        return np.array(list(self.increments)[-(self.N - 1):]) if self.N > 1 else np.zeros(0)


@dataclass
class ControlDiagnostics:
    status: str = qpsolver.SOLVED
    iterations: int = 0
    qp_ms: float = 0.0
    step_ms: float = 0.0
    slack: float = 0.0
    du: float = 0.0
    eps_pred: np.ndarray = field(default_factory=lambda: np.zeros((0, NY)))
    leaves: np.ndarray | None = None
    used_forest: bool = False
    fallback: str = ""
    kkt_max: float = float("nan")
    qp: object = None


def warm_start_shift(prev, Nc: int) -> np.ndarray:
    """Drop the first increment and repeat the last; zeros on a cold start."""
    if prev is None:
        return np.zeros(Nc)
    prev = np.asarray(prev, dtype=float).ravel()
    if prev.size != Nc:
        raise ValueError(f"previous plan has {prev.size} entries, expected {Nc}")
    return np.append(prev[1:], prev[-1])


def affine_terms(vehicle: VehicleParams, Ts: float, psi_dot_des) -> list[np.ndarray]:
    """Augmented affine term ``Dd`` for every prediction row."""
    Dc = continuous_matrices(vehicle)[2].ravel()
    out = []
    for w in np.atleast_1d(psi_dot_des):
        d = np.zeros(NX)
        d[:NY] = Ts * Dc * w
        out.append(d)
    return out


def ltv_for(vehicle: VehicleParams, Ts: float, psi_dot_des0: float) -> LtvMatrices:
    Ac, Bc, Dc = continuous_matrices(vehicle)
    return discretize_and_augment(Ac, Bc, Dc, Ts, psi_dot_des0)


def estimate_future_windows(xi, ltv: LtvMatrices, init_controls, ctrl_state: ControllerState,
                            Dd_seq=None):
    """Feature windows for every prediction row, as ``(Zn (N, 4N), Zc (N, N))``.

    Row ``j`` (0-based) needs the states and increments of steps
    ``k+j+1-N .. k+j``. Steps before ``k`` come from the history buffers,
    later steps from a nominal rollout under ``init_controls``.
    """
    N = ctrl_state.N
    if not ctrl_state.warmed_up:
        raise ValueError("controller history holds fewer than N entries")
    xi = np.asarray(xi, dtype=float).ravel()
    inc = expand_increments(init_controls, N)
    if Dd_seq is None:
        Dd_seq = [ltv.Dd.ravel()] * N
    Ad, Bd = ltv.Ad, ltv.Bd.ravel()

    pred = np.empty((N - 1, NY))
    x = xi.copy()
    for i in range(N - 1):
        x = Ad @ x + Bd * inc[i] + Dd_seq[i]
        pred[i] = x[:NY]
    states = np.vstack([np.array(ctrl_state.states), pred])  # steps k-N+1 .. k+N-1
    incs = np.concatenate([ctrl_state.past_increments(), inc])  # steps k-N+1 .. k+N-1
    Zn = np.lib.stride_tricks.sliding_window_view(states, (N, NY))[:, 0].reshape(N, NY * N)
    Zc = np.lib.stride_tricks.sliding_window_view(incs, N)
    return Zn.copy(), Zc.copy()


def future_windows(xi, ltv, init_controls, ctrl_state, Dd_seq=None) -> list[FeatureWindow]:
    Zn, Zc = estimate_future_windows(xi, ltv, init_controls, ctrl_state, Dd_seq)
    return [FeatureWindow(a, b) for a, b in zip(Zn, Zc)]


class Controller:
    """Stateful wrapper around :func:`control_step`."""

    def __init__(self, cfg: ControllerConfig, forest: ResidualForest | None = None, u0: float = 0.0):
        if forest is not None and forest.N != cfg.horizon.N:
            raise ValueError(f"forest window N={forest.N} does not match horizon N={cfg.horizon.N}")
        self.cfg = cfg
        self.forest = forest
        self.state = ControllerState(cfg.horizon.N, u0)

    def step(self, err, psi_dot_des):
        return control_step(err, psi_dot_des, self.forest, self.cfg, self.state)


def control_step(err, psi_dot_des, forest, cfg: ControllerConfig, st: ControllerState):
    """One receding-horizon step.

    ``err`` is the measured error state (array or ErrorState) and
    ``psi_dot_des`` the desired yaw rate for each of the N prediction rows.
    Returns ``(steering command, ControlDiagnostics)`` and updates ``st``.
    """
    t0 = time.perf_counter()
    h, b = cfg.horizon, cfg.bounds
    N, Nc = h.N, h.Nc
    err = err.as_array() if hasattr(err, "as_array") else np.asarray(err, dtype=float).ravel()
    if not np.all(np.isfinite(err)):
        raise ValueError("non-finite error state")
    psi_dot_des = np.broadcast_to(np.asarray(psi_dot_des, dtype=float), (N,))
    xi = np.append(err, st.u_prev)
    st.states.append(err.copy())

    init = warm_start_shift(st.prev_plan, Nc)
    Dd_seq = affine_terms(cfg.vehicle, h.Ts, psi_dot_des)
    ltv = ltv_for(cfg.vehicle, h.Ts, psi_dot_des[0])
    nom = build_nominal(ltv, h, Dd_seq)

    diag = ControlDiagnostics()
    if forest is not None and st.warmed_up:
        Zn, _ = estimate_future_windows(xi, ltv, init, st, Dd_seq)
        leaves = forest.route(Zn)
        thetas = forest.coefficients(leaves).mean(axis=0)
        aug = build_augmented(nom, thetas, st.past_increments())
        diag.leaves = leaves
        diag.used_forest = True
    else:
        aug = AugmentedEvolution.from_nominal(nom)

    prob = condense_qp(aug, xi, cfg.weights, b)
    settings = qpsolver.QpSettings(eps_abs=cfg.qp_eps, eps_rel=cfg.qp_eps, max_iter=cfg.qp_max_iter,
                                   warm_start_z=np.append(init, 0.0),
                                   warm_start_duals=st.prev_duals)
    tq = time.perf_counter()
    sol = qpsolver.solve(prob, settings)
    diag.qp_ms = 1e3 * (time.perf_counter() - tq)
    diag.status, diag.iterations, diag.qp = sol.status, sol.iterations, prob

    if sol.status == qpsolver.SOLVED:
        plan = sol.z[:Nc].copy()
        diag.slack = float(max(sol.z[Nc], 0.0))
        st.prev_duals = sol.duals
        diag.kkt_max = max(qpsolver.kkt_residuals(prob, sol.z, sol.duals).values())
    elif sol.status == qpsolver.MAX_ITER:
        plan = init
        diag.fallback = "max_iter: shifted previous plan"
        st.prev_duals = None
    else:
        plan = np.zeros(Nc)
        diag.fallback = "infeasible: zero increment"
        st.prev_duals = None

    u_cmd = float(np.clip(st.u_prev + np.clip(plan[0], b.du_lo, b.du_hi), b.u_lo, b.u_hi))
    du = u_cmd - st.u_prev
    if aug.dPhi is not None:
        eps = aug.dPhi @ plan + aug.dgamma
        diag.eps_pred = eps.reshape(N, NX)[:, :NY]
    else:
        diag.eps_pred = np.zeros((N, NY))
    diag.du = du

    st.increments.append(du)
    st.prev_plan = plan
    st.u_prev = u_cmd
    diag.step_ms = 1e3 * (time.perf_counter() - t0)
    return u_cmd, diag
