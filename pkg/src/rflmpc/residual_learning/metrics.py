import numpy as np


def fit_metrics(y, y_hat) -> dict:
    """RMSE, max absolute error (``me``) and MAE of ``y - y_hat``."""
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("fit_metrics needs at least one sample")
    if y.size != y_hat.size:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    e = y - y_hat
    return {"rmse": float(np.sqrt(np.mean(e * e))), "me": float(np.max(np.abs(e))),
            "mae": float(np.mean(np.abs(e)))}
