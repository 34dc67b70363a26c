"""Closed-loop simulation, residual collection and tracking metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .controller import Controller, ControllerConfig
from .dynamics import (PlantParams, PlantState, errors_from_projection, nominal_ltv, plant_step,
                       project)
from .paths import ReferencePath
from .residual_learning import ResidualDataset, build_samples, fit_metrics

LOG_COLUMNS = ["t", "X", "Y", "psi", "vy", "r", "e1", "e1d", "e2", "e2d", "du", "u", "sigma",
               "qp_status", "qp_iters", "step_ms", "eps_pred_0", "eps_pred_1", "eps_pred_2",
               "eps_pred_3"]


@dataclass
class SimSettings:
    """Run-time knobs of a closed-loop experiment."""

    offset: float = 0.0        # initial lateral offset (m, left positive)
    heading_offset: float = 0.0
    corridor: float = 2.0
    end_margin: float = 1.0
    max_steps: int = 50000
    excitation: float = 0.0    # std of random steering increments added on top of the MPC (rad)
    seed: int = 0


@dataclass
class SimLog:
    """Per-step telemetry. ``columns`` holds the CSV columns; the rest is in-memory only."""

    columns: dict
    psi_dot_des: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    qp_ms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt_max: np.ndarray = field(default_factory=lambda: np.zeros(0))
    status: str = "completed"

    def __len__(self):
        return len(self.columns["t"])

    def __getitem__(self, key):
        return self.columns[key]

    @property
    def err(self) -> np.ndarray:
        return np.column_stack([self["e1"], self["e1d"], self["e2"], self["e2d"]])


def run_closed_loop(path: ReferencePath, ctrl_cfg: ControllerConfig, plant: PlantParams,
                    sim: SimSettings | None = None, forest=None) -> SimLog:
    """Track ``path`` with the MPC (nominal when ``forest`` is None).

    The loop stops at the end of the path or when the vehicle leaves the
    corridor; the latter is recorded in ``SimLog.status``.
    """
    sim = sim or SimSettings()
    Ts, N = ctrl_cfg.horizon.Ts, ctrl_cfg.horizon.N
    vx = ctrl_cfg.vehicle.vx
    rng = np.random.default_rng(sim.seed)

    X0, Y0, psi0 = path.X[0], path.Y[0], path.psi[0]
    state = PlantState(X0 - sim.offset * math.sin(psi0), Y0 + sim.offset * math.cos(psi0),
                       psi0 + sim.heading_offset, 0.0, 0.0, vx, 0.0)
    ctrl = Controller(ctrl_cfg, forest)
    rows = {c: [] for c in LOG_COLUMNS}
    pdd, s_log, qp_ms, kkt = [], [], [], []
    preview = vx * Ts * np.arange(N)
    hint = None
    status = "completed"
    b = ctrl_cfg.bounds
    for k in range(sim.max_steps):
        try:
            proj = project(state, path, hint=hint, corridor=sim.corridor)
        except ValueError as exc:
            status = f"corridor exit at step {k}: {exc}"
            break
        hint = proj.index
        if proj.s >= path.length - sim.end_margin:
            break
        err = errors_from_projection(state, proj)
        psi_dot_des = vx * path.kappa_at(proj.s + preview)
        psi_dot_des[0] = vx * proj.kappa
        u_prev = ctrl.state.u_prev
        u, diag = ctrl.step(err, psi_dot_des)
        if sim.excitation > 0:
            extra = float(rng.normal(0.0, sim.excitation))
            u = float(np.clip(u + extra, max(b.u_lo, u_prev + b.du_lo), min(b.u_hi, u_prev + b.du_hi)))
            ctrl.state.u_prev = u
            ctrl.state.increments[-1] = u - u_prev

        e = err.as_array()
        vals = dict(t=k * Ts, X=state.X, Y=state.Y, psi=state.psi, vy=state.vy, r=state.r,
                    e1=e[0], e1d=e[1], e2=e[2], e2d=e[3], du=u - u_prev, u=u, sigma=diag.slack,
                    qp_status=diag.status, qp_iters=diag.iterations, step_ms=diag.step_ms)
        for i in range(4):
            vals[f"eps_pred_{i}"] = float(diag.eps_pred[0, i]) if len(diag.eps_pred) else 0.0
        for c in LOG_COLUMNS:
            rows[c].append(vals[c])
        pdd.append(psi_dot_des[0])
        s_log.append(proj.s)
        qp_ms.append(diag.qp_ms)
        kkt.append(diag.kkt_max)
        state = plant_step(state, u, Ts, plant)

    cols = {c: np.array(v, dtype=float) for c, v in rows.items() if c != "qp_status"}
    cols["qp_status"] = np.array(rows["qp_status"], dtype=object)
    cols = {c: cols[c] for c in LOG_COLUMNS}
    return SimLog(cols, np.array(pdd), np.array(s_log), np.array(qp_ms), np.array(kkt, dtype=float),
                  status)


def residual_dataset(log: SimLog, ctrl_cfg: ControllerConfig) -> ResidualDataset:
    """One-step residues of a logged run against the nominal model."""
    v, Ts = ctrl_cfg.vehicle, ctrl_cfg.horizon.Ts
    return build_samples(log.err, log["du"], log["u"],
                         lambda k: nominal_ltv(v, Ts, log.psi_dot_des[k]), ctrl_cfg.horizon.N)


def evaluate(log, baseline=None) -> dict:
    """Lateral/heading error metrics, PE against a baseline and timing."""
    if len(log) == 0:
        raise ValueError("cannot evaluate an empty log")
    out = {"e1": fit_metrics(log["e1"], np.zeros(len(log))),
           "e2": fit_metrics(log["e2"], np.zeros(len(log)))}
    out["pe_percent"] = None
    if baseline is not None:
        if len(baseline) == 0:
            raise ValueError("cannot compare against an empty baseline log")
        base_mae = fit_metrics(baseline["e1"], np.zeros(len(baseline)))["mae"]
        out["pe_percent"] = percent_improvement(base_mae, out["e1"]["mae"])
    ms = np.asarray(log["step_ms"], dtype=float)
    out["timing"] = {"mean_ms": float(ms.mean()), "max_ms": float(ms.max())}
    return out


def percent_improvement(base_mae: float, mae: float) -> float:
    if base_mae == 0:
        return 0.0 if mae == 0 else -math.inf
    return 100.0 * (base_mae - mae) / base_mae


def pooled(logs) -> dict:
    """Concatenate the CSV columns of several logs (for pooled metrics)."""
    return {c: np.concatenate([np.asarray(l[c]) for l in logs]) for c in LOG_COLUMNS}


class _Columns(dict):
    def __len__(self):
        return len(self["t"])


def pooled_log(logs):
    return _Columns(pooled(logs))


def save_log(log, path, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for i in range(len(log)):
            row = []
            for c in LOG_COLUMNS:
                v = log[c][i]
                if c == "qp_status":
                    row.append(str(v))
                elif c == "qp_iters":
                    row.append(str(int(v)))
                elif c == "step_ms" and not timing:
                    row.append("0.0")
                else:
                    row.append(repr(float(v)))
            w.writerow(row)


def load_log(path) -> _Columns:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty log file")
    header, body = rows[0], rows[1:]
    if header != LOG_COLUMNS:
        raise ValueError(f"{path}: unexpected log header")
    if not body:
        raise ValueError(f"{path}: log has no rows")
    cols = _Columns()
    for j, c in enumerate(LOG_COLUMNS):
        if c == "qp_status":
            cols[c] = np.array([r[j] for r in body], dtype=object)
        else:
            cols[c] = np.array([float(r[j]) for r in body])
    return cols
