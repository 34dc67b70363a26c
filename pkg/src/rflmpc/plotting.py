"""Offline figures rendered from logs and datasets.

Figures are built on bare ``matplotlib.figure.Figure`` objects (Agg canvas),
so nothing here touches pyplot state or needs a display.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

CHANNELS = ("e1", "e1d", "e2", "e2d")
_STYLE = {"nominal": dict(color="0.45", lw=1.2), "rfl": dict(color="tab:red", lw=1.2)}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    return path


def _style(name: str) -> dict:
    return _STYLE.get(name, {})


def plot_trajectory(path, logs: dict, out, title: str = "") -> Path:
    """Reference path and the driven trajectories, one trace per log."""
    fig = Figure(figsize=(5.5, 5.0), layout="constrained")
    ax = fig.add_subplot()
    ax.plot(path.X, path.Y, color="k", lw=0.8, ls="--", label="reference")
    for name, log in logs.items():
        ax.plot(log["X"], log["Y"], label=name, **_style(name))
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("X [m]")
    ax.set_ylabel("Y [m]")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", frameon=False)
    return _save(fig, out)


def plot_errors(logs: dict, out, title: str = "") -> Path:
    """Lateral error, heading error and steering angle against time."""
    fig = Figure(figsize=(7.0, 6.0), layout="constrained")
    axes = fig.subplots(3, 1, sharex=True)
    for name, log in logs.items():
        t = np.asarray(log["t"])
        axes[0].plot(t, 100.0 * np.asarray(log["e1"]), label=name, **_style(name))
        axes[1].plot(t, np.degrees(log["e2"]), **_style(name))
        axes[2].plot(t, np.degrees(log["u"]), **_style(name))
    axes[0].set_ylabel("e1 [cm]")
    axes[1].set_ylabel("e2 [deg]")
    axes[2].set_ylabel("steering [deg]")
    axes[2].set_xlabel("t [s]")
    for ax in axes:
        ax.axhline(0.0, color="k", lw=0.5)
    axes[0].legend(loc="best", frameon=False)
    if title:
        axes[0].set_title(title)
    return _save(fig, out)


def plot_residue_fit(eps, predictions: dict, out, channel: int = 0) -> Path:
    """Measured one-step residue of one channel against model predictions."""
    eps = np.asarray(eps, dtype=float)
    k = np.arange(len(eps))
    fig = Figure(figsize=(7.0, 3.6), layout="constrained")
    ax = fig.add_subplot()
    ax.plot(k, eps[:, channel], color="k", lw=1.0, label="measured")
    for name, pred in predictions.items():
        ax.plot(k, np.asarray(pred)[:, channel], lw=0.9, label=name)
    ax.set_xlabel("test sample")
    ax.set_ylabel(f"residue {CHANNELS[channel]}")
    ax.legend(loc="best", frameon=False, ncol=len(predictions) + 1)
    return _save(fig, out)


def plot_mae_bars(rows: list, out) -> Path:
    """Grouped bars of baseline vs candidate lateral MAE per comparison row."""
    names = [r["name"] for r in rows]
    base = [100.0 * r["base_mae"] for r in rows]
    cand = [100.0 * r["mae"] for r in rows]
    x = np.arange(len(rows))
    fig = Figure(figsize=(1.6 * len(rows) + 2.5, 3.6), layout="constrained")
    ax = fig.add_subplot()
    ax.bar(x - 0.2, base, width=0.4, color="0.6", label="baseline")
    ax.bar(x + 0.2, cand, width=0.4, color="tab:red", label="candidate")
    for xi, r in zip(x, rows):
        ax.annotate(f"{r['pe_percent']:+.1f}%", (xi, max(base[xi], cand[xi])),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xticks(x, names)
    ax.set_ylabel("lateral MAE [cm]")
    ax.legend(loc="best", frameon=False)
    return _save(fig, out)
