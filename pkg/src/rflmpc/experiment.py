"""Experiment orchestration shared by the command line and the acceptance tests.

collect -> train -> run -> compare, each step a pure function of the
configuration and its seed.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import ExperimentConfig
from .paths import EVAL_PATHS, ReferencePath, generate_path, preset
from .residual_learning import ForestConfig, ResidualDataset, ResidualForest, fit_forest, fit_metrics
from .simulate import SimLog, evaluate, percent_improvement, pooled_log, residual_dataset, run_closed_loop

CHANNELS = ("e1", "e1d", "e2", "e2d")
MODEL_NAMES = ("RT", "RF", "RTL", "RFL")


def build_path(cfg: ExperimentConfig, name: str) -> ReferencePath:
    """Preset name (``train``, ``uturn``, ...) or an inline spec like ``"S20, L25:90"``."""
    return generate_path(preset(name), ds=cfg.paths.ds, kappa_max=cfg.paths.kappa_max)


def path_label(name: str, index: int = 0) -> str:
    return name if name == "train" or name in EVAL_PATHS else f"path{index}"


def collect(cfg: ExperimentConfig) -> tuple[ResidualDataset, SimLog]:
    """Run the nominal MPC on the training path and extract one-step residues."""
    log = run_closed_loop(build_path(cfg, cfg.paths.train), cfg.controller(), cfg.plant_params(),
                          cfg.sim_settings(cfg.collect.excitation))
    if len(log) < cfg.horizon.N + 1:
        raise RuntimeError(f"collection run stopped after {len(log)} steps ({log.status})")
    return residual_dataset(log, cfg.controller()), log


def single_tree_config(fc: ForestConfig) -> ForestConfig:
    """Plain CART: one tree, no bootstrap, all features at every split."""
    return replace(fc, n_trees=1, bootstrap=False, feature_fraction=1.0)


def fit_models(train: ResidualDataset, fc: ForestConfig) -> dict:
    """Single tree and forest fitted on the same data.

    RT/RTL share the single tree and RF/RFL share the forest; the ``L``
    variants use the leaf-linear models, the others the leaf means.
    """
    tree = fit_forest(train, single_tree_config(fc))
    forest = fit_forest(train, fc)
    return {"tree": tree, "forest": forest}


def predictions(models: dict, ds: ResidualDataset) -> dict:
    tree, forest = models["tree"], models["forest"]
    return {"RT": tree.predict_mean(ds.Zn), "RF": forest.predict_mean(ds.Zn),
            "RTL": tree.predict(ds.Zn, ds.Zc), "RFL": forest.predict(ds.Zn, ds.Zc)}


def heldout_predictions(ds: ResidualDataset, cfg: ExperimentConfig, forest: ResidualForest):
    """Held-out split and all four model predictions on it (for plotting)."""
    tr, te = ds.split_chronological(cfg.collect.train_fraction)
    tree = fit_forest(tr, single_tree_config(forest.config))
    return te, predictions({"tree": tree, "forest": forest}, te)


def fit_report(models: dict, train: ResidualDataset, test: ResidualDataset) -> dict:
    """Per-model, per-split, per-channel RMSE/ME/MAE of the residue predictions."""
    out = {"n_train": len(train), "n_test": len(test), "models": {}}
    for split, ds in (("train", train), ("test", test)):
        for name, pred in predictions(models, ds).items():
            entry = out["models"].setdefault(name, {})
            entry[split] = {ch: fit_metrics(ds.Eps[:, i], pred[:, i]) for i, ch in enumerate(CHANNELS)}
    return out


def train(ds: ResidualDataset, cfg: ExperimentConfig, n_trees: int | None = None,
          max_depth: int | None = None) -> tuple[ResidualForest, dict]:
    """Fit on the chronological training split; report on both splits.

    The returned forest is the one the report describes (fitted on the
    training split only).
    """
    fc = cfg.forest_config()
    if n_trees is not None:
        fc = replace(fc, n_trees=n_trees)
    if max_depth is not None:
        fc = replace(fc, max_depth=max_depth)
    tr, te = ds.split_chronological(cfg.collect.train_fraction)
    if len(te) == 0:
        raise ValueError("dataset too small for a train/test split")
    models = fit_models(tr, fc)
    report = fit_report(models, tr, te)
    report["forest"] = {"n_trees": fc.n_trees, "max_depth": fc.max_depth, "min_leaf": fc.min_leaf,
                        "feature_fraction": fc.feature_fraction, "ridge": fc.ridge, "seed": fc.seed}
    return models["forest"], report


def run(cfg: ExperimentConfig, path_name: str, forest: ResidualForest | None = None) -> SimLog:
    return run_closed_loop(build_path(cfg, path_name), cfg.controller(), cfg.plant_params(),
                           cfg.sim_settings(), forest=forest)


def compare_rows(pairs) -> list[dict]:
    """Comparison table rows for ``(name, baseline_log, candidate_log)`` triples.

    With more than one pair a final ``pooled`` row concatenates all logs.
    """
    pairs = list(pairs)
    rows = []
    for name, base, cand in pairs:
        rows.append(_row(name, base, cand))
    if len(pairs) > 1:
        rows.append(_row("pooled", pooled_log([p[1] for p in pairs]), pooled_log([p[2] for p in pairs])))
    return rows


def _row(name, base, cand) -> dict:
    mb = evaluate(base)["e1"]
    mc = evaluate(cand)["e1"]
    return {"name": name, "base_mae": mb["mae"], "mae": mc["mae"],
            "pe_percent": percent_improvement(mb["mae"], mc["mae"]),
            "base_rmse": mb["rmse"], "rmse": mc["rmse"], "base_me": mb["me"], "me": mc["me"],
            "base_steps": len(base), "steps": len(cand)}


COMPARE_COLUMNS = ("name", "base_mae", "mae", "pe_percent", "base_rmse", "rmse", "base_me", "me",
                   "base_steps", "steps")


def leaf_linear_ratios(report: dict, channel: str = "e1") -> dict:
    """Test RMSE of leaf-linear over leaf-mean models for one channel."""
    m = report["models"]
    rmse = {k: m[k]["test"][channel]["rmse"] for k in MODEL_NAMES}
    return {"RTL/RT": rmse["RTL"] / rmse["RT"], "RFL/RF": rmse["RFL"] / rmse["RF"]}


def status_summary(log: SimLog) -> dict:
    st = np.asarray(log["qp_status"])
    values, counts = np.unique(st, return_counts=True)
    return {str(v): int(c) for v, c in zip(values, counts)}
