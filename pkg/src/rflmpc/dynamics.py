"""Error-state bicycle model and the nonlinear plant used as ground truth.

The nominal model is the linear lateral error-state model with linear tire
forces, discretized with forward Euler and augmented with the previous
steering angle so that the optimizer works on steering increments.

The plant is a nonlinear single-track model with saturating (tanh) tires,
optional first-order steering lag and an optional constant yaw moment
disturbance. It is integrated with one RK4 step per control period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

MIN_SPEED = 0.5
GRAVITY = 9.81


@dataclass(frozen=True)
class VehicleParams:
    """Single-track vehicle parameters (SI units)."""

    m: float = 1723.0
    Iz: float = 4175.0
    lf: float = 1.232
    lr: float = 1.468
    Caf: float = 66900.0
    Car: float = 66900.0
    vx: float = 10.0

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "Caf", "Car", "vx"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and positive, got {value}")
        if self.vx < MIN_SPEED:
            raise ValueError(f"vx must be >= {MIN_SPEED} m/s, got {self.vx}")


@dataclass(frozen=True)
class ErrorState:
    e1: float = 0.0
    e1_dot: float = 0.0
    e2: float = 0.0
    e2_dot: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("error state must be finite")
        if abs(self.e2) >= np.pi:
            raise ValueError(f"heading error must lie in (-pi, pi), got {self.e2}")

    def as_array(self) -> np.ndarray:
        return np.array([self.e1, self.e1_dot, self.e2, self.e2_dot])

    @classmethod
    def from_array(cls, x) -> "ErrorState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class AugmentedState:
    """Error state plus the previously applied steering angle."""

    error: ErrorState
    u_prev: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.append(self.error.as_array(), self.u_prev)

    def check(self, u_limit: float) -> None:
        if abs(self.u_prev) > u_limit + 1e-12:
            raise ValueError(f"|u_prev|={abs(self.u_prev)} exceeds steering limit {u_limit}")


@dataclass(frozen=True)
class PlantState:
    """Global pose and body velocities of the plant.

    ``delta`` is the steering angle actually present at the wheels; it only
    differs from the commanded angle when the plant has a steering lag.
    """

    X: float = 0.0
    Y: float = 0.0
    psi: float = 0.0
    vy: float = 0.0
    r: float = 0.0
    vx: float = 10.0
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.psi, self.vy, self.r, self.vx, self.delta])

    @classmethod
    def from_array(cls, a) -> "PlantState":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class PlantParams:
    """Truth-model settings: nominal vehicle plus the mismatch knobs."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    stiffness_scale: float = 0.8
    saturation: bool = True
    mu: float = 0.9
    steer_lag: float = 0.05
    yaw_moment: float = 0.0
    max_steer: float = 0.6

    def __post_init__(self):
        if self.stiffness_scale <= 0 or self.mu <= 0:
            raise ValueError("stiffness_scale and mu must be positive")
        if self.steer_lag < 0:
            raise ValueError("steer_lag must be non-negative")

    def axle_force_limits(self) -> tuple[float, float]:
        v = self.vehicle
        L = v.lf + v.lr
        Fz_f = v.m * GRAVITY * v.lr / L
        Fz_r = v.m * GRAVITY * v.lf / L
        return self.mu * Fz_f, self.mu * Fz_r

    @classmethod
    def exact(cls, vehicle: VehicleParams, **kw) -> "PlantParams":
        """Plant that coincides with the nominal model to first order."""
        return cls(vehicle=vehicle, stiffness_scale=1.0, saturation=False,
                   steer_lag=0.0, yaw_moment=0.0, **kw)


@dataclass(frozen=True)
class LtvMatrices:
    """Discrete augmented matrices ``x+ = Ad x + Bd du + Dd``."""

    Ad: np.ndarray
    Bd: np.ndarray
    Dd: np.ndarray


def continuous_matrices(params: VehicleParams):
    """Return ``(Ac, Bc, Dc)`` of the lateral error dynamics.

    ``Dc`` multiplies the desired yaw rate, so the affine term of the
    continuous model is ``Dc * psi_dot_des``.
    """
    if params.vx < MIN_SPEED:
        raise ValueError(f"vx must be >= {MIN_SPEED} m/s")
    m, Iz, lf, lr, vx = params.m, params.Iz, params.lf, params.lr, params.vx
    Cf, Cr = 2.0 * params.Caf, 2.0 * params.Car

    Ac = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -(Cf + Cr) / (m * vx), (Cf + Cr) / m, (-Cf * lf + Cr * lr) / (m * vx)],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -(Cf * lf - Cr * lr) / (Iz * vx), (Cf * lf - Cr * lr) / Iz,
         -(Cf * lf ** 2 + Cr * lr ** 2) / (Iz * vx)],
    ])
    Bc = np.array([[0.0], [Cf / m], [0.0], [Cf * lf / Iz]])
    Dc = np.array([[0.0], [-(Cf * lf - Cr * lr) / (m * vx) - vx], [0.0],
                   [-(Cf * lf ** 2 + Cr * lr ** 2) / (Iz * vx)]])
    return Ac, Bc, Dc


def discretize_and_augment(Ac, Bc, Dc, Ts: float, psi_dot_des: float) -> LtvMatrices:
    if Ts < 0:
        raise ValueError("Ts must be non-negative")
    A4 = np.eye(4) + Ts * Ac
    B4 = Ts * Bc
    D4 = Ts * Dc * psi_dot_des

    Ad = np.zeros((5, 5))
    Ad[:4, :4] = A4
    Ad[:4, 4:] = B4
    Ad[4, 4] = 1.0
    Bd = np.vstack([B4, [[1.0]]])
    Dd = np.vstack([D4, [[0.0]]])
    return LtvMatrices(Ad, Bd, Dd)


def nominal_ltv(params: VehicleParams, Ts: float, psi_dot_des: float = 0.0) -> LtvMatrices:
    return discretize_and_augment(*continuous_matrices(params), Ts, psi_dot_des)


def _tire_force(C: float, alpha, Fmax: float, saturation: bool):
    if not saturation:
        return C * alpha
    return Fmax * np.tanh(C * alpha / Fmax)


def tire_forces(x, delta: float, pp: PlantParams):
    """Front and rear lateral axle forces for plant state array ``x``."""
    v = pp.vehicle
    vx, vy, r = x[5], x[3], x[4]
    alpha_f = delta - np.arctan2(vy + v.lf * r, vx)
    alpha_r = -np.arctan2(vy - v.lr * r, vx)
    Fmax_f, Fmax_r = pp.axle_force_limits()
    Cf = 2.0 * v.Caf * pp.stiffness_scale
    Cr = 2.0 * v.Car * pp.stiffness_scale
    return (_tire_force(Cf, alpha_f, Fmax_f, pp.saturation),
            _tire_force(Cr, alpha_r, Fmax_r, pp.saturation))


def plant_derivative(x: np.ndarray, delta_cmd: float, pp: PlantParams) -> np.ndarray:
    """Time derivative of the plant state array (constant speed)."""
    v = pp.vehicle
    X, Y, psi, vy, r, vx, delta = x
    if pp.steer_lag > 0:
        delta_rate = (delta_cmd - delta) / pp.steer_lag
        delta_eff = delta
    else:
        delta_rate = 0.0
        delta_eff = delta_cmd
    Fyf, Fyr = tire_forces(x, delta_eff, pp)
    cd = np.cos(delta_eff)
    return np.array([
        vx * np.cos(psi) - vy * np.sin(psi),
        vx * np.sin(psi) + vy * np.cos(psi),
        r,
        (Fyf * cd + Fyr) / v.m - vx * r,
        (v.lf * Fyf * cd - v.lr * Fyr + pp.yaw_moment) / v.Iz,
        0.0,
        delta_rate,
    ])


def plant_step(state: PlantState, delta: float, Ts: float, pp: PlantParams) -> PlantState:
    """Advance the plant by one RK4 step with the commanded steering held."""
    if abs(delta) > pp.max_steer + 1e-12:
        raise ValueError(f"|delta|={abs(delta)} exceeds physical limit {pp.max_steer}")
    x = state.as_array()
    if not np.all(np.isfinite(x)) or not np.isfinite(delta):
        raise ValueError("non-finite plant state or steering command")
    k1 = plant_derivative(x, delta, pp)
    k2 = plant_derivative(x + 0.5 * Ts * k1, delta, pp)
    k3 = plant_derivative(x + 0.5 * Ts * k2, delta, pp)
    k4 = plant_derivative(x + Ts * k3, delta, pp)
    x_next = x + Ts / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if pp.steer_lag == 0:
        x_next[6] = delta
    if not np.all(np.isfinite(x_next)):
        raise ValueError("plant integration produced non-finite state")
    return PlantState.from_array(x_next)


def with_speed(params: VehicleParams, vx: float) -> VehicleParams:
    return replace(params, vx=vx)


@dataclass(frozen=True)
class Projection:
    """Foot point of the vehicle on the reference path."""

    index: int
    s: float
    e1: float
    psi_des: float
    kappa: float


def project(plant: PlantState, path, hint: int | None = None, window: float = 10.0,
            corridor: float = 2.0) -> Projection:
    """Project the plant position onto ``path`` using the local curvature.

    ``hint`` restricts the nearest-point search to ``+-window`` metres of arc
    length around a previous index.
    """
    n = len(path.s)
    if hint is None:
        lo, hi = 0, n
    else:
        lo = int(np.searchsorted(path.s, path.s[hint] - window))
        hi = int(np.searchsorted(path.s, path.s[hint] + window, side="right"))
    dx = path.X[lo:hi] - plant.X
    dy = path.Y[lo:hi] - plant.Y
    d2 = dx * dx + dy * dy
    j = int(np.argmin(d2))
    if d2[j] >= corridor ** 2:
        raise ValueError(f"vehicle is {np.sqrt(d2[j]):.3f} m from the path, outside the corridor")
    close = np.flatnonzero(d2 < corridor ** 2)
    if np.any(np.diff(close) > 1):
        raise ValueError("ambiguous projection: path passes the vehicle more than once")
    i = lo + j

    c, s_ = np.cos(path.psi[i]), np.sin(path.psi[i])
    ox, oy = plant.X - path.X[i], plant.Y - path.Y[i]
    lon = c * ox + s_ * oy
    lat = -s_ * ox + c * oy
    if (lon >= 0 and i < n - 1) or i == 0:
        kappa = path.kappa[i]
    else:
        kappa = path.kappa[i - 1]

    if abs(kappa) < 1e-12:
        e1, dpsi, ds = lat, 0.0, lon
    else:
        R = 1.0 / kappa
        rho = np.hypot(lon, lat - R)
        e1 = np.sign(R) * (abs(R) - rho)
        dpsi = np.arctan2(R * lon, R * (R - lat))
        ds = R * dpsi
    return Projection(i, float(path.s[i] + ds), float(e1), float(path.psi[i] + dpsi), float(kappa))


def error_state(plant: PlantState, path, hint: int | None = None, corridor: float = 2.0):
    """Lateral/heading errors of the plant w.r.t. ``path``.

    Left of the path is positive. Returns ``(ErrorState, nearest_index)``.
    """
    proj = project(plant, path, hint=hint, corridor=corridor)
    return errors_from_projection(plant, proj), proj.index


def errors_from_projection(plant: PlantState, proj: Projection) -> ErrorState:
    psi_dot_des = plant.vx * proj.kappa
    e2 = math.remainder(plant.psi - proj.psi_des, 2.0 * math.pi)
    if e2 == -math.pi:
        e2 = math.pi
    return ErrorState(proj.e1, plant.vy + plant.vx * e2, e2, plant.r - psi_dot_des)
