"""Acceptance criteria A1-A10.

Each test records one ``A<n> PASS|FAIL ...`` line; the lines are printed
immediately and again in the terminal summary (see conftest.py).
"""
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import record_acceptance
from oracles import direct_residues, enumerate_box_qp, random_box_qp, random_ltv, rollout
from rflmpc import cli, experiment, qp
from rflmpc.config import ExperimentConfig
from rflmpc.controller import Controller
from rflmpc.dynamics import VehicleParams, nominal_ltv
from rflmpc.paths import EVAL_PATHS
from rflmpc.prediction import (Bounds, HorizonConfig, QpWeights, build_augmented, build_nominal,
                               condense_qp, tracking_objective)
from rflmpc.residual_learning import ResidualForest, fit_forest, fit_metrics, load_dataset, load_forest
from rflmpc.simulate import LOG_COLUMNS

pytestmark = pytest.mark.slow

CFG = ExperimentConfig()


def _report(tag, ok, detail):
    record_acceptance(f"{tag} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    """Two complete default pipeline runs; the first one is timed."""
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    assert cli.main(["pipeline", "--out", str(root / "a"), "--deterministic"]) == 0
    elapsed = time.perf_counter() - t0
    assert cli.main(["pipeline", "--out", str(root / "b"), "--deterministic", "--no-figures"]) == 0
    return root / "a", root / "b", elapsed


@pytest.fixture(scope="module")
def closed_loops(pipelines):
    """Nominal and learned closed loops on the evaluation paths (in-memory logs)."""
    forest = load_forest(pipelines[0] / "model.json")
    return {name: (experiment.run(CFG, name), experiment.run(CFG, name, forest)) for name in EVAL_PATHS}


def test_a1_tracking_improvement(pipelines):
    out, _, elapsed = pipelines
    summary = json.loads((out / "summary.json").read_text())
    rows = (out / "compare.csv").read_text().strip().splitlines()
    per_path = ", ".join(f"{r.split(',')[0]} {float(r.split(',')[3]):.2f}%" for r in rows[1:-1])
    pe = summary["pooled_pe_percent"]
    ok = pe >= 10.0 and elapsed < 300.0
    _report("A1", ok, f"pooled PE {pe:.2f}% (need >= 10%); {per_path}; pipeline {elapsed:.1f} s (< 300 s)")
    assert elapsed < 300.0
    assert pe >= 10.0


def test_a2_leaf_linear_beats_leaf_mean(pipelines):
    ratios = json.loads((pipelines[0] / "summary.json").read_text())["leaf_linear_ratio_e1"]
    ok = all(v <= 0.5 for v in ratios.values())
    _report("A2", ok, f"e1 test RMSE RTL/RT {ratios['RTL/RT']:.3f}, RFL/RF {ratios['RFL/RF']:.3f} (need <= 0.5)")
    assert ratios["RTL/RT"] <= 0.5
    assert ratios["RFL/RF"] <= 0.5


def test_a3_forest_beats_single_tree(pipelines):
    ds = load_dataset(pipelines[0] / "dataset.csv")
    tr, te = ds.split_chronological(CFG.collect.train_fraction)
    wins = 0
    for seed in range(10):
        fc = replace(CFG.forest_config(), seed=seed)
        assert fc.n_trees == 20
        models = experiment.fit_models(tr, fc)
        pred = experiment.predictions(models, te)
        rf = fit_metrics(te.Eps[:, 0], pred["RFL"][:, 0])["rmse"]
        rt = fit_metrics(te.Eps[:, 0], pred["RTL"][:, 0])["rmse"]
        wins += rf <= rt
    _report("A3", wins >= 8, f"T=20 forest <= single tree (e1 test RMSE) in {wins}/10 seeds (need >= 8)")
    assert wins >= 8


def _step_ms(forest, log, steps=300):
    """Mean controller step latency (ms) on a replayed error sequence."""
    N = CFG.horizon.N
    err, pdd = log.err, log.psi_dot_des
    c = Controller(CFG.controller(), forest)
    ts = []
    for k in range(min(steps, len(log))):
        t = time.perf_counter()
        c.step(err[k], np.full(N, pdd[k]))
        ts.append(time.perf_counter() - t)
    return 1e3 * float(np.mean(ts[N:]))


def _paired_step_ms(forests, log, repeats=5):
    # interleaved repeats so machine-load drift hits both forests alike; min rejects outliers
    runs = [[_step_ms(f, log) for f in forests] for _ in range(repeats)]
    return [min(r[i] for r in runs) for i in range(len(forests))]


def test_a4_latency_independent_of_training_size(pipelines, closed_loops):
    ds = load_dataset(pipelines[0] / "dataset.csv")
    tr, _ = ds.split_chronological(CFG.collect.train_fraction)
    small = tr.subset(np.arange(len(tr) // 8))
    fc = CFG.forest_config()
    f_small, f_big = fit_forest(small, fc), fit_forest(tr, fc)
    log = closed_loops["mixed"][0]
    a, b = _paired_step_ms([f_small, f_big], log)
    change = abs(b - a) / a
    _report("A4", change < 0.2, f"mean step {a:.3f} ms ({len(small)} samples) vs {b:.3f} ms "
                                f"({len(tr)} samples): change {100 * change:.1f}% (need < 20%)")
    assert change < 0.2


def test_a5_augmented_prediction_exact():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 9))
        Nc = int(rng.integers(1, N + 1))
        ev = build_nominal(random_ltv(rng), HorizonConfig(N, Nc))
        thetas = [rng.standard_normal((N + 1, 4)) for _ in range(N)]
        past = rng.standard_normal(N - 1)
        aug = build_augmented(ev, thetas, past)
        xi, dU = rng.standard_normal(5), rng.standard_normal(Nc)
        diff = (aug.predict(xi, dU) - ev.predict(xi, dU)).reshape(N, 5)
        ref = direct_residues(thetas, past, dU, N)
        worst = max(worst, np.abs(diff[:, :4] - ref).max(), np.abs(diff[:, 4]).max())
    _report("A5", worst <= 1e-12, f"max |augmented - nominal - direct residue| = {worst:.2e} over 100 instances")
    assert worst <= 1e-12


def test_a6_stacked_prediction_exact():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 21))
        Nc = int(rng.integers(1, N + 1))
        ltv = random_ltv(rng)
        ev = build_nominal(ltv, HorizonConfig(N, Nc))
        xi, dU = rng.standard_normal(5), rng.standard_normal(Nc)
        worst = max(worst, np.abs(ev.predict(xi, dU) - rollout(ltv, xi, dU, N)).max())
    _report("A6", worst <= 1e-12, f"max |stacked - rollout| = {worst:.2e} over 100 instances")
    assert worst <= 1e-12


def test_a7_qp_correctness(closed_loops):
    worst_obj = 0.0
    for seed in range(100):
        H, f, lo, hi = random_box_qp(np.random.default_rng(seed))
        p = qp.QpProblem(H, f, np.eye(6), lo, hi)
        sol = qp.solve(p)
        _, best = enumerate_box_qp(H, f, lo, hi)
        worst_obj = max(worst_obj, abs(p.objective(sol.z) - best) if sol.solved else np.inf)
    kkt, n_solved, n_steps = 0.0, 0, 0
    for logs in closed_loops.values():
        for log in logs:
            solved = log["qp_status"] == qp.SOLVED
            n_steps += len(log)
            n_solved += int(solved.sum())
            if solved.any():
                kkt = max(kkt, float(np.max(log.kkt_max[solved])))
    ok = worst_obj <= 1e-6 and kkt <= 1e-6
    _report("A7", ok, f"objective gap vs enumeration {worst_obj:.2e} (100 QPs); max KKT residual "
                      f"{kkt:.2e} on {n_solved}/{n_steps} Solved closed-loop steps")
    assert worst_obj <= 1e-6
    assert kkt <= 1e-6


def test_a8_zero_residue_reproduces_nominal(closed_loops):
    nominal = closed_loops["mixed"][0]
    zero = experiment.run(CFG, "mixed", ResidualForest.zeros(CFG.horizon.N, n_trees=CFG.forest.n_trees))
    same_len = len(zero) == len(nominal)
    worst = 0.0
    if same_len:
        for c in LOG_COLUMNS:
            if c in ("step_ms", "qp_status"):
                continue
            worst = max(worst, float(np.abs(np.asarray(zero[c]) - np.asarray(nominal[c])).max()))
    ok = same_len and worst <= 1e-12
    _report("A8", ok, f"zero-Theta vs nominal closed loop: {len(zero)} vs {len(nominal)} steps, "
                      f"max per-step difference {worst:.2e}")
    assert same_len and worst <= 1e-12


def test_a9_gradient_check():
    rng = np.random.default_rng(9)
    worst = 0.0
    h = 1e-6
    for _ in range(50):
        N = int(rng.integers(2, 13))
        Nc = int(rng.integers(1, N + 1))
        ev = build_nominal(nominal_ltv(VehicleParams(), 0.02, rng.uniform(-0.3, 0.3)), HorizonConfig(N, Nc))
        thetas = [0.01 * rng.standard_normal((N + 1, 4)) for _ in range(N)]
        aug = build_augmented(ev, thetas, rng.uniform(-0.01, 0.01, N - 1))
        xi = np.append(rng.uniform(-0.3, 0.3, 4) * [1, 0.5, 0.5, 0.5], rng.uniform(-0.1, 0.1))
        w = QpWeights(Q1=tuple(rng.uniform(0.5, 50, 4)), Q2=rng.uniform(1, 500), lam=rng.uniform(1, 1000))
        p = condense_qp(aug, xi, w, Bounds())
        z = np.append(rng.uniform(-0.02, 0.02, Nc), rng.uniform(0, 0.1))
        grad = p.H @ z + p.f
        fd = np.empty_like(z)
        for i in range(len(z)):
            e = np.zeros_like(z)
            e[i] = h
            fd[i] = (tracking_objective(aug, xi, w, (z + e)[:-1], (z + e)[-1])
                     - tracking_objective(aug, xi, w, (z - e)[:-1], (z - e)[-1])) / (2 * h)
        worst = max(worst, np.abs(grad - fd).max() / np.abs(grad).max())
    _report("A9", worst <= 1e-6, f"max relative gradient error {worst:.2e} over 50 instances (need <= 1e-6)")
    assert worst <= 1e-6


def test_a10_determinism(pipelines):
    a, b, _ = pipelines
    files = ["config.toml", "dataset.csv", "model.json", "train_report.json", "compare.csv", "summary.json"]
    files += sorted(str(p.relative_to(a)) for p in (a / "logs").glob("*.csv"))
    diff = [f for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    _report("A10", not diff, f"{len(files) - len(diff)}/{len(files)} artifacts byte-identical across two runs"
                             + (f"; differing: {', '.join(diff)}" if diff else ""))
    assert len(files) >= 12 and not diff
