"""Switched-linear residual model: CART/random-forest routing on state
features, ridge-regularised linear models of the steering increments in the
leaves."""
from .forest import (ForestConfig, ResidualForest, fit_forest, load_forest, predict_leaf,
                     predict_residue, save_forest)
from .metrics import fit_metrics
from .samples import (FeatureWindow, ResidualDataset, ResidualSample, build_samples, load_dataset,
                      save_dataset)
from .trees import RegressionTree, fit_leaf_linear, fit_tree, grow_tree

__all__ = [
    "ForestConfig", "ResidualForest", "fit_forest", "load_forest", "predict_leaf", "predict_residue",
    "save_forest", "fit_metrics", "FeatureWindow", "ResidualDataset", "ResidualSample",
    "build_samples", "load_dataset", "save_dataset", "RegressionTree", "fit_leaf_linear", "fit_tree",
    "grow_tree",
]
