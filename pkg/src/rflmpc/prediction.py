"""Stacked N-step prediction operators and MPC condensation.

The stacked prediction over the horizon reads

    X = Psi @ xi + Phi @ dU + gamma,     eta = C @ X

with ``xi`` the augmented state (four error states plus previous steering)
and ``dU`` the steering increments. The learned residue adds per-row terms
to ``Phi`` and ``gamma`` without re-propagating them through ``Ad``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import LtvMatrices
from .qp import QpProblem

NX = 5
NY = 4


@dataclass(frozen=True)
class HorizonConfig:
    N: int = 16
    Nc: int = 16
    Ts: float = 0.02

    def __post_init__(self):
        if not (1 <= self.Nc <= self.N):
            raise ValueError(f"need 1 <= Nc <= N, got N={self.N}, Nc={self.Nc}")
        if self.Ts <= 0:
            raise ValueError("Ts must be positive")


@dataclass(frozen=True)
class QpWeights:
    Q1: tuple = (50.0, 1.0, 10.0, 1.0)
    Q2: float = 500.0
    lam: float = 1000.0

    def __post_init__(self):
        if len(self.Q1) != NY:
            raise ValueError("Q1 needs one weight per error state")
        if min(self.Q1) < 0 or self.Q2 < 0 or self.lam < 0:
            raise ValueError("weights must be non-negative")
        if max(self.Q1) <= 0:
            raise ValueError("at least one state weight must be positive")


@dataclass(frozen=True)
class Bounds:
    du_lo: float = -0.015
    du_hi: float = 0.015
    u_lo: float = -0.5
    u_hi: float = 0.5
    eta_lo: tuple = (-0.5, -np.inf, -0.25, -np.inf)
    eta_hi: tuple = (0.5, np.inf, 0.25, np.inf)

    def __post_init__(self):
        if self.du_lo > self.du_hi or self.u_lo > self.u_hi:
            raise ValueError("lower bounds must not exceed upper bounds")
        if len(self.eta_lo) != NY or len(self.eta_hi) != NY:
            raise ValueError("eta bounds need one entry per error state")
        if any(lo > hi for lo, hi in zip(self.eta_lo, self.eta_hi)):
            raise ValueError("eta_lo must not exceed eta_hi")


@dataclass
class EvolutionMatrices:
    Psi: np.ndarray
    Phi: np.ndarray
    gamma: np.ndarray
    C: np.ndarray
    N: int = field(default=0)
    Nc: int = field(default=0)

    def predict(self, xi, dU) -> np.ndarray:
        return self.Psi @ np.asarray(xi, float) + self.Phi @ np.asarray(dU, float) + self.gamma


@dataclass
class AugmentedEvolution:
    Psi_hat: np.ndarray
    Phi_hat: np.ndarray
    gamma_hat: np.ndarray
    C: np.ndarray
    N: int = 0
    Nc: int = 0
    dPhi: np.ndarray | None = None
    dgamma: np.ndarray | None = None

    def predict(self, xi, dU) -> np.ndarray:
        return self.Psi_hat @ np.asarray(xi, float) + self.Phi_hat @ np.asarray(dU, float) + self.gamma_hat

    @classmethod
    def from_nominal(cls, nom: EvolutionMatrices) -> "AugmentedEvolution":
        return cls(nom.Psi, nom.Phi, nom.gamma, nom.C, nom.N, nom.Nc)


def expand_increments(dU, N: int) -> np.ndarray:
    """Extend an Nc-long increment plan to N steps by repeating the last entry."""
    dU = np.asarray(dU, dtype=float).ravel()
    if dU.size >= N:
        return dU[:N].copy()
    return np.concatenate([dU, np.full(N - dU.size, dU[-1])])


def output_selector(N: int) -> np.ndarray:
    return np.kron(np.eye(N), np.hstack([np.eye(NY), np.zeros((NY, NX - NY))]))


def build_nominal(ltv: LtvMatrices, hcfg: HorizonConfig, Dd_seq=None) -> EvolutionMatrices:
    """Stack the N-step prediction.

    ``Dd_seq`` optionally gives a different affine term per prediction step
    (curvature preview); by default ``ltv.Dd`` is used for every step.
    Increments beyond the control horizon repeat the last decision variable,
    so their influence accumulates into the last column of ``Phi``.
    """
    N, Nc = hcfg.N, hcfg.Nc
    Ad, Bd = ltv.Ad, ltv.Bd.ravel()
    if Dd_seq is None:
        Dd_seq = [ltv.Dd.ravel()] * N
    Dd_seq = [np.asarray(d, float).ravel() for d in Dd_seq]
    if len(Dd_seq) != N:
        raise ValueError(f"need {N} affine terms, got {len(Dd_seq)}")

    Psi = np.zeros((NX * N, NX))
    Phi = np.zeros((NX * N, Nc))
    gamma = np.zeros(NX * N)
    P = np.eye(NX)
    Phi_row = np.zeros((NX, Nc))
    g = np.zeros(NX)
    for j in range(N):
        P = Ad @ P
        Phi_row = Ad @ Phi_row
        Phi_row[:, min(j, Nc - 1)] += Bd
        g = Ad @ g + Dd_seq[j]
        rows = slice(NX * j, NX * (j + 1))
        Psi[rows] = P
        Phi[rows] = Phi_row
        gamma[rows] = g
    return EvolutionMatrices(Psi, Phi, gamma, output_selector(N), N, Nc)


def build_augmented(nom: EvolutionMatrices, thetas, past_increments) -> AugmentedEvolution:
    """Add the leaf-linear residue of every prediction row.

    ``thetas[j]`` is the ``(N+1) x 4`` coefficient matrix for row ``j``
    (0-based), intercept first, then one row per increment of the window
    covering steps ``k+j+1-N .. k+j`` oldest first. ``past_increments`` holds
    the last ``N-1`` applied increments, oldest first.
    """
    N, Nc = nom.N, nom.Nc
    thetas = list(thetas)
    if len(thetas) != N:
        raise ValueError(f"expected {N} coefficient matrices, got {len(thetas)}")
    past = np.asarray(past_increments, dtype=float).ravel()
    if past.size != N - 1:
        raise ValueError(f"expected {N - 1} past increments, got {past.size}")

    dPhi = np.zeros_like(nom.Phi)
    dgamma = np.zeros_like(nom.gamma)
    for j, theta in enumerate(thetas):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (N + 1, NY):
            raise ValueError(f"coefficient matrix {j} has shape {theta.shape}, expected {(N + 1, NY)}")
        rows = slice(NX * j, NX * j + NY)
        acc = theta[0].copy()
        for p in range(N):
            step = j + 1 - N + p  # increment index relative to the current step
            if step < 0:
                acc += theta[1 + p] * past[N - 1 + step]
            else:
                dPhi[rows, min(step, Nc - 1)] += theta[1 + p]
        dgamma[rows] = acc
    return AugmentedEvolution(nom.Psi, nom.Phi + dPhi, nom.gamma + dgamma, nom.C, N, Nc, dPhi, dgamma)


def condense_qp(aug, xi, w: QpWeights, b: Bounds, eta_ref=None) -> QpProblem:
    """Condense the soft-constrained tracking MPC into ``QpProblem``.

    Decision vector ``[dU (Nc), sigma]``. ``H`` and ``f`` are scaled so that
    ``1/2 z'Hz + f'z`` equals the tracking objective up to a constant.
    """
    if isinstance(aug, EvolutionMatrices):
        aug = AugmentedEvolution.from_nominal(aug)
    N, Nc = aug.N, aug.Nc
    xi = np.asarray(xi, dtype=float).ravel()
    u_prev = xi[NX - 1]
    eta_ref = np.zeros(NY * N) if eta_ref is None else np.asarray(eta_ref, float).ravel()

    M = aug.C @ aug.Phi_hat
    free = aug.C @ (aug.Psi_hat @ xi + aug.gamma_hat)
    q1 = np.tile(np.asarray(w.Q1, float), N)

    n = Nc + 1
    H = np.zeros((n, n))
    H[:Nc, :Nc] = 2.0 * (M.T @ (q1[:, None] * M) + w.Q2 * np.eye(Nc))
    H[Nc, Nc] = 2.0 * w.lam
    H = 0.5 * (H + H.T)
    f = np.zeros(n)
    f[:Nc] = 2.0 * M.T @ (q1 * (free - eta_ref))

    G_rows, lbs, ubs = [], [], []
    G_rows.append(np.hstack([np.eye(Nc), np.zeros((Nc, 1))]))
    lbs.append(np.full(Nc, b.du_lo))
    ubs.append(np.full(Nc, b.du_hi))
    G_rows.append(np.hstack([np.tril(np.ones((Nc, Nc))), np.zeros((Nc, 1))]))
    lbs.append(np.full(Nc, b.u_lo - u_prev))
    ubs.append(np.full(Nc, b.u_hi - u_prev))
    G_rows.append(np.eye(1, n, Nc))
    lbs.append([0.0])
    ubs.append([np.inf])

    lo = np.tile(np.asarray(b.eta_lo, float), N)
    hi = np.tile(np.asarray(b.eta_hi, float), N)
    up = np.isfinite(hi)
    if up.any():
        G_rows.append(np.hstack([M[up], -np.ones((up.sum(), 1))]))
        lbs.append(np.full(up.sum(), -np.inf))
        ubs.append(hi[up] - free[up])
    dn = np.isfinite(lo)
    if dn.any():
        G_rows.append(np.hstack([M[dn], np.ones((dn.sum(), 1))]))
        lbs.append(lo[dn] - free[dn])
        ubs.append(np.full(dn.sum(), np.inf))

    return QpProblem(H, f, np.vstack(G_rows), np.concatenate(lbs), np.concatenate(ubs))


def tracking_objective(aug, xi, w: QpWeights, dU, sigma, eta_ref=None) -> float:
    """Expanded objective: weighted output error + increment cost + slack cost."""
    if isinstance(aug, EvolutionMatrices):
        aug = AugmentedEvolution.from_nominal(aug)
    N = aug.N
    eta = aug.C @ aug.predict(xi, dU)
    eta_ref = np.zeros(NY * N) if eta_ref is None else np.asarray(eta_ref, float).ravel()
    err = eta - eta_ref
    q1 = np.tile(np.asarray(w.Q1, float), N)
    dU = np.asarray(dU, float)
    return float(err @ (q1 * err) + w.Q2 * dU @ dU + w.lam * sigma ** 2)
