import numpy as np

from rflmpc import plotting
from rflmpc.controller import ControllerConfig
from rflmpc.dynamics import PlantParams
from rflmpc.paths import PathSpec, generate_path
from rflmpc.simulate import SimSettings, run_closed_loop

PNG = b"\x89PNG\r\n\x1a\n"


def _is_png(p):
    return p.is_file() and p.read_bytes()[:8] == PNG


def test_figures_are_written(tmp_path):
    path = generate_path(PathSpec.parse("S20, L25:45, S10"))
    log = run_closed_loop(path, ControllerConfig(), PlantParams(), SimSettings(offset=0.1))
    logs = {"nominal": log, "rfl": log}
    assert _is_png(plotting.plot_trajectory(path, logs, tmp_path / "a" / "traj.png", title="t"))
    assert _is_png(plotting.plot_errors(logs, tmp_path / "err.png"))
    eps = np.random.default_rng(0).standard_normal((30, 4))
    assert _is_png(plotting.plot_residue_fit(eps, {"RF": eps * 0.5}, tmp_path / "fit.png", channel=2))
    rows = [{"name": "x", "base_mae": 0.02, "mae": 0.015, "pe_percent": 25.0}]
    assert _is_png(plotting.plot_mae_bars(rows, tmp_path / "bars.png"))
