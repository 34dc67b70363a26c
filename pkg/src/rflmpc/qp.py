"""Dense convex QP solver for small condensed MPC problems.

Solves

    minimize    1/2 z' H z + f' z
    subject to  lb <= G z <= ub

with an operator-splitting (ADMM) iteration in the style of OSQP: Ruiz
equilibration, a fixed step-size vector, over-relaxation, and a final
active-set polish that solves the KKT system on the guessed active set.
Everything is dense numpy; problems of a few dozen variables are the target.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

SOLVED = "Solved"
MAX_ITER = "MaxIter"
PRIMAL_INFEASIBLE = "PrimalInfeasible"

INF = np.inf
RHO_EQ_FACTOR = 1e3
RHO_MIN = 1e-6


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        m = self.G.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.lb.size != m or self.ub.size != m:
            raise ValueError("lb/ub must have one entry per row of G")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-12 * max(1.0, np.abs(self.H).max(initial=0.0)):
            raise ValueError("H must be symmetric")

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_pinf: float = 1e-5
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    check_every: int = 5
    polish: bool = True
    polish_refine: int = 3
    polish_fixes: int = 3      # active-set corrections tried by the early-exit polish
    warm_start_z: Optional[np.ndarray] = None
    warm_start_duals: Optional[np.ndarray] = None


@dataclass
class QpSolution:
    z: np.ndarray
    duals: np.ndarray
    status: str
    iterations: int
    r_prim: float = INF
    r_dual: float = INF
    polished: bool = False
    pre_polish_objective: float = field(default=INF)

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def kkt_residuals(p: QpProblem, z, duals) -> dict:
    """Primal, dual and complementarity residuals (infinity norms).

    ``duals`` follow the convention ``H z + f + G' y = 0`` with ``y > 0`` on
    active upper bounds and ``y < 0`` on active lower bounds.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(duals, dtype=float)
    g = p.G @ z
    r_prim = np.max(np.abs(np.clip(g, p.lb, p.ub) - g), initial=0.0)
    r_dual = np.max(np.abs(p.H @ z + p.f + p.G.T @ y), initial=0.0)
    y_up = np.maximum(y, 0.0)
    y_lo = np.maximum(-y, 0.0)
    with np.errstate(invalid="ignore"):
        gap_up = np.maximum(p.ub - g, 0.0)
        gap_lo = np.maximum(g - p.lb, 0.0)
    comp = np.maximum(np.minimum(y_up, gap_up), np.minimum(y_lo, gap_lo))
    r_comp = np.max(comp, initial=0.0)
    return {"r_prim": float(r_prim), "r_dual": float(r_dual), "r_comp": float(r_comp)}


class _Scaled:
    """Ruiz-equilibrated copy of a problem."""

    def __init__(self, p: QpProblem, iters: int):
        n, m = p.n, p.m
        D = np.ones(n)
        E = np.ones(m)
        H = p.H.copy()
        G = p.G.copy()
        f = p.f.copy()
        c = 1.0
        for _ in range(iters):
            col = np.maximum(np.abs(H).max(axis=0), np.abs(G).max(axis=0, initial=0.0))
            d = 1.0 / np.sqrt(_safe(col))
            e = 1.0 / np.sqrt(_safe(np.abs(G).max(axis=1, initial=0.0))) if m else np.ones(0)
            H = d[:, None] * H * d[None, :]
            G = e[:, None] * G * d[None, :]
            f = d * f
            D *= d
            E *= e
            gamma = 1.0 / _safe(np.array([max(np.abs(H).max(axis=0).mean(), np.abs(f).max(initial=0.0))]))[0]
            H *= gamma
            f *= gamma
            c *= gamma
        self.H, self.G, self.f = H, G, f
        self.lb = E * p.lb
        self.ub = E * p.ub
        self.D, self.E, self.c = D, E, c


def _safe(v):
    v = np.asarray(v, dtype=float)
    out = np.where(v < 1e-4, 1.0, v)
    return np.minimum(out, 1e4)


def solve(p: QpProblem, settings: QpSettings | None = None) -> QpSolution:
    s = settings or QpSettings()
    n, m = p.n, p.m
    for arr in (p.H, p.f, p.G):
        if not np.all(np.isfinite(arr)):
            raise ValueError("QP data must be finite")
    if np.any(np.isnan(p.lb)) or np.any(np.isnan(p.ub)):
        raise ValueError("QP bounds must not be NaN")
    if np.any(p.lb > p.ub):
        return QpSolution(np.zeros(n), np.zeros(m), PRIMAL_INFEASIBLE, 0)

    sc = _Scaled(p, s.scaling_iter)
    H, G, f, lb, ub = sc.H, sc.G, sc.f, sc.lb, sc.ub

    rho = np.full(m, s.rho)
    eq = np.abs(ub - lb) < 1e-12
    rho[eq] *= RHO_EQ_FACTOR
    rho[np.isinf(lb) & np.isinf(ub)] = RHO_MIN
    K = H + s.sigma * np.eye(n) + G.T @ (rho[:, None] * G)
    factor = cho_factor(K)

    # iterates in scaled space
    if s.warm_start_z is not None:
        x = np.asarray(s.warm_start_z, dtype=float) / sc.D
    else:
        x = np.zeros(n)
    if s.warm_start_duals is not None:
        y = sc.c * np.asarray(s.warm_start_duals, dtype=float) / sc.E
    else:
        y = np.zeros(m)
    zc = np.clip(G @ x, lb, ub)

    alpha, sigma = s.alpha, s.sigma
    status = MAX_ITER
    it = 0
    y_prev = y.copy()
    best = None
    for it in range(1, s.max_iter + 1):
        y_prev[:] = y
        rhs = sigma * x - f + G.T @ (rho * zc - y)
        xt = cho_solve(factor, rhs)
        zt = G @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * zc
        z_new = np.clip(zr + y / rho, lb, ub)
        y = y + rho * (zr - z_new)
        zc = z_new

        if it % s.check_every and it != s.max_iter:
            continue
        xu, yu, zu = sc.D * x, sc.E * y / sc.c, zc / sc.E
        Gx = p.G @ xu
        Hx = p.H @ xu
        Gty = p.G.T @ yu
        r_prim = np.max(np.abs(Gx - zu), initial=0.0)
        r_dual = np.max(np.abs(Hx + p.f + Gty), initial=0.0)
        eps_prim = s.eps_abs + s.eps_rel * max(np.max(np.abs(Gx), initial=0.0), np.max(np.abs(zu), initial=0.0))
        eps_dual = s.eps_abs + s.eps_rel * max(np.max(np.abs(Hx), initial=0.0),
                                               np.max(np.abs(Gty), initial=0.0),
                                               np.max(np.abs(p.f), initial=0.0))
        best = (xu, yu, r_prim, r_dual)
        if r_prim <= eps_prim and r_dual <= eps_dual:
            status = SOLVED
            break
        if _infeasible(p, sc.E * (y - y_prev) / sc.c, s.eps_pinf):
            return QpSolution(xu, yu, PRIMAL_INFEASIBLE, it, r_prim, r_dual)
        if s.polish:
            # early exit when the active set is already identified
            pol = _polish(p, xu, yu, zu, s, s.polish_fixes)
            if pol is not None and _kkt_ok(p, pol[0], pol[1], s):
                sol = QpSolution(pol[0], pol[1], SOLVED, it, polished=True,
                                 pre_polish_objective=p.objective(xu))
                sol.r_prim, sol.r_dual = _prim_dual(p, sol.z, sol.duals)
                return sol

    xu, yu, r_prim, r_dual = best
    sol = QpSolution(xu, yu, status, it, r_prim, r_dual, pre_polish_objective=p.objective(xu))
    if status == SOLVED and s.polish:
        pol = _polish(p, xu, yu, p.G @ xu, s)
        if pol is not None and _kkt_ok(p, pol[0], pol[1], s) and \
                p.objective(pol[0]) <= p.objective(xu) + 1e-10 * max(1.0, abs(p.objective(xu))):
            sol.z, sol.duals, sol.polished = pol[0], pol[1], True
            sol.r_prim, sol.r_dual = _prim_dual(p, sol.z, sol.duals)
    elif status == MAX_ITER and s.polish:
        # a repaired active set that passes the KKT check is a solution
        pol = _polish(p, xu, yu, p.G @ xu, s, p.n + p.m)
        if pol is not None and _kkt_ok(p, pol[0], pol[1], s):
            sol.z, sol.duals, sol.polished, sol.status = pol[0], pol[1], True, SOLVED
            sol.r_prim, sol.r_dual = _prim_dual(p, sol.z, sol.duals)
    return sol


def _prim_dual(p, z, y):
    r = kkt_residuals(p, z, y)
    return r["r_prim"], r["r_dual"]


def _kkt_ok(p: QpProblem, z, y, s: QpSettings) -> bool:
    r = kkt_residuals(p, z, y)
    scale_dual = max(np.max(np.abs(p.H @ z), initial=0.0), np.max(np.abs(p.f), initial=0.0),
                     np.max(np.abs(p.G.T @ y), initial=0.0))
    tol_dual = s.eps_abs + s.eps_rel * scale_dual
    tol_prim = s.eps_abs + s.eps_rel * np.max(np.abs(p.G @ z), initial=0.0)
    return r["r_prim"] <= tol_prim and r["r_dual"] <= tol_dual and r["r_comp"] <= tol_prim


def _infeasible(p: QpProblem, dy, eps) -> bool:
    norm = np.max(np.abs(dy), initial=0.0)
    if norm < 1e-12:
        return False
    if np.max(np.abs(p.G.T @ dy), initial=0.0) > eps * norm:
        return False
    pos, neg = dy > 0, dy < 0
    if np.any(np.isinf(p.ub[pos])) or np.any(np.isinf(p.lb[neg])):
        return False
    support = p.ub[pos] @ dy[pos] + p.lb[neg] @ dy[neg]
    return support < -eps * norm


def _polish(p: QpProblem, z, y, g, s: QpSettings, fixes: int = 0):
    """Solve the equality-constrained KKT system on the guessed active set.

    If the result fails the KKT check, up to ``fixes`` single-row
    corrections follow: drop the row with the worst wrong-sign multiplier,
    otherwise add the most violated row. This repairs degenerate guesses
    (more active rows than the vertex needs) that ADMM with a fixed penalty
    would take very long to shed.
    """
    side = np.zeros(p.m, dtype=int)
    side[(g - p.lb < -y) & np.isfinite(p.lb)] = -1
    side[(p.ub - g < y) & np.isfinite(p.ub)] = 1
    free_sign = np.abs(p.ub - p.lb) < 1e-12
    out = None
    for _ in range(fixes + 1):
        out = _polish_on(p, side, s)
        if out is None or _kkt_ok(p, out[0], out[1], s):
            return out
        yp = out[1]
        wrong = np.where(free_sign, 0.0, np.where(side < 0, yp, np.where(side > 0, -yp, 0.0)))
        gp = p.G @ out[0]
        with np.errstate(invalid="ignore"):
            viol = np.where(side == 0, np.maximum(p.lb - gp, gp - p.ub), 0.0)
        if wrong.max(initial=0.0) > 0.0:
            side[int(np.argmax(wrong))] = 0
        elif viol.max(initial=0.0) > 0.0:
            i = int(np.argmax(viol))
            side[i] = -1 if gp[i] < p.lb[i] else 1
        else:
            break
    return out


def _polish_on(p: QpProblem, side, s: QpSettings):
    act = np.flatnonzero(side)
    b = np.where(side > 0, p.ub, p.lb)[act]
    A = p.G[act]
    n, k = p.n, act.size
    delta = 1e-9
    Kreg = np.zeros((n + k, n + k))
    Kreg[:n, :n] = p.H + delta * np.eye(n)
    Kreg[:n, n:] = A.T
    Kreg[n:, :n] = A
    Kreg[n:, n:] = -delta * np.eye(k)
    Kex = Kreg.copy()
    Kex[:n, :n] = p.H
    Kex[n:, n:] = 0.0
    rhs = np.concatenate([-p.f, b])
    try:
        lu = np.linalg.inv(Kreg)
    except np.linalg.LinAlgError:
        return None
    sol = lu @ rhs
    for _ in range(s.polish_refine):
        sol = sol + lu @ (rhs - Kex @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    duals = np.zeros(p.m)
    duals[act] = sol[n:]
    return sol[:n], duals
