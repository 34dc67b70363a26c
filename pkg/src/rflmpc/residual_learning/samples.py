"""Residual training samples and the dataset CSV format."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

NY = 4


@dataclass(frozen=True)
class FeatureWindow:
    """``zn``: N error states flattened oldest first; ``zc``: N increments."""

    zn: np.ndarray
    zc: np.ndarray

    def __post_init__(self):
        zn = np.asarray(self.zn, dtype=float).ravel()
        zc = np.asarray(self.zc, dtype=float).ravel()
        if zn.size != NY * zc.size:
            raise ValueError(f"zn has {zn.size} entries, expected {NY * zc.size}")
        if not (np.all(np.isfinite(zn)) and np.all(np.isfinite(zc))):
            raise ValueError("feature window must be finite")
        object.__setattr__(self, "zn", zn)
        object.__setattr__(self, "zc", zc)

    @property
    def N(self) -> int:
        return self.zc.size


@dataclass(frozen=True)
class ResidualSample:
    window: FeatureWindow
    eps: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float).ravel()
        if eps.size != NY or not np.all(np.isfinite(eps)):
            raise ValueError("residue label must be a finite 4-vector")
        object.__setattr__(self, "eps", eps)


@dataclass
class ResidualDataset:
    """Column-stacked samples: ``Zn (n, 4N)``, ``Zc (n, N)``, ``Eps (n, 4)``."""

    k: np.ndarray
    Zn: np.ndarray
    Zc: np.ndarray
    Eps: np.ndarray

    def __len__(self):
        return len(self.k)

    @property
    def N(self) -> int:
        return self.Zc.shape[1]

    def samples(self) -> list[ResidualSample]:
        return [ResidualSample(FeatureWindow(zn, zc), e)
                for zn, zc, e in zip(self.Zn, self.Zc, self.Eps)]

    @classmethod
    def from_samples(cls, samples: Sequence[ResidualSample], k=None) -> "ResidualDataset":
        if not samples:
            raise ValueError("no samples")
        k = np.arange(len(samples)) if k is None else np.asarray(k)
        return cls(np.asarray(k, dtype=np.int64),
                   np.array([s.window.zn for s in samples]),
                   np.array([s.window.zc for s in samples]),
                   np.array([s.eps for s in samples]))

    def subset(self, idx) -> "ResidualDataset":
        return ResidualDataset(self.k[idx], self.Zn[idx], self.Zc[idx], self.Eps[idx])

    def concat(self, other: "ResidualDataset") -> "ResidualDataset":
        return ResidualDataset(np.concatenate([self.k, other.k]), np.vstack([self.Zn, other.Zn]),
                               np.vstack([self.Zc, other.Zc]), np.vstack([self.Eps, other.Eps]))

    def split_chronological(self, train_fraction: float = 0.8):
        cut = int(round(train_fraction * len(self)))
        return self.subset(slice(0, cut)), self.subset(slice(cut, None))


def build_samples(err, du, u, ltv_at: Callable[[int], object] | Sequence, N: int) -> ResidualDataset:
    """One-step residues of a closed-loop log against the nominal model.

    ``err[k]`` are the measured error states, ``du[k]`` the increment applied
    at step ``k`` and ``u[k] = u[k-1] + du[k]`` the absolute steering. The
    label for step ``k`` is ``err[k+1] - (Ad x_k + Bd du_k + Dd)[:4]`` with
    ``x_k = [err[k], u[k] - du[k]]``; its window covers steps ``k-N+1..k``.
    """
    err = np.asarray(err, dtype=float)
    du = np.asarray(du, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    L = len(err)
    if L < N + 1:
        raise ValueError(f"log has {L} steps, need at least N+1={N + 1}")
    get = ltv_at if callable(ltv_at) else ltv_at.__getitem__

    ks = np.arange(N - 1, L - 1)
    Zn = np.empty((ks.size, NY * N))
    Zc = np.empty((ks.size, N))
    Eps = np.empty((ks.size, NY))
    for row, k in enumerate(ks):
        ltv = get(int(k))
        x = np.append(err[k], u[k] - du[k])
        pred = ltv.Ad @ x + ltv.Bd.ravel() * du[k] + ltv.Dd.ravel()
        Eps[row] = err[k + 1] - pred[:NY]
        Zn[row] = err[k - N + 1:k + 1].ravel()
        Zc[row] = du[k - N + 1:k + 1]
    return ResidualDataset(ks.astype(np.int64), Zn, Zc, Eps)


def _header(N: int) -> list[str]:
    return (["k"] + [f"zn_{i}" for i in range(NY * N)] + [f"zc_{i}" for i in range(N)]
            + [f"eps_{i}" for i in range(NY)])


def save_dataset(ds: ResidualDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(ds.N))
        for k, zn, zc, e in zip(ds.k, ds.Zn, ds.Zc, ds.Eps):
            w.writerow([int(k)] + [repr(float(v)) for v in np.concatenate([zn, zc, e])])


def load_dataset(path) -> ResidualDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header, body = rows[0], rows[1:]
    n_zc = sum(1 for h in header if h.startswith("zc_"))
    if header != _header(n_zc):
        raise ValueError(f"{path}: unexpected dataset header")
    if not body:
        raise ValueError(f"{path}: dataset has no rows")
    data = np.array([[float(v) for v in r] for r in body])
    N = n_zc
    return ResidualDataset(data[:, 0].astype(np.int64), data[:, 1:1 + NY * N],
                           data[:, 1 + NY * N:1 + 5 * N], data[:, 1 + 5 * N:])
