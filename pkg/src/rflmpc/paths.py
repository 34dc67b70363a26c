"""Synthetic reference paths built from straight and circular segments."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

DEFAULT_DS = 0.1
DEFAULT_KAPPA_MAX = 0.2


@dataclass(frozen=True)
class Straight:
    length: float
    heading: float | None = None  # optional absolute heading, checked for continuity


@dataclass(frozen=True)
class Arc:
    radius: float
    angle: float
    direction: str = "left"


Segment = Union[Straight, Arc]


@dataclass(frozen=True)
class PathSpec:
    segments: tuple
    x0: float = 0.0
    y0: float = 0.0
    psi0: float = 0.0

    @classmethod
    def parse(cls, text: str, **kw) -> "PathSpec":
        """Parse ``"S50, L20:90, R15:180"`` (lengths in m, angles in degrees)."""
        segs = []
        for tok in text.replace(";", ",").split(","):
            tok = tok.strip()
            if not tok:
                continue
            kind, rest = tok[0].upper(), tok[1:]
            if kind == "S":
                segs.append(Straight(float(rest)))
            elif kind in "LR":
                radius, angle = rest.split(":")
                segs.append(Arc(float(radius), math.radians(float(angle)),
                                "left" if kind == "L" else "right"))
            else:
                raise ValueError(f"unknown path segment {tok!r}")
        if not segs:
            raise ValueError("empty path spec")
        return cls(tuple(segs), **kw)


class ReferencePath:
    """Arc-length parameterised polyline with per-interval curvature.

    ``kappa[i]`` is the curvature of the interval starting at point ``i``.
    """

    def __init__(self, s, X, Y, psi, kappa):
        self.s = np.asarray(s, dtype=float)
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("arc length must be strictly increasing")

    def __len__(self):
        return len(self.s)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def psi_dot_des(self, vx: float) -> np.ndarray:
        return vx * self.kappa

    def kappa_at(self, s_query) -> np.ndarray:
        idx = np.searchsorted(self.s, s_query, side="right") - 1
        return self.kappa[np.clip(idx, 0, len(self.s) - 1)]

    def resample(self, ds: float) -> "ReferencePath":
        """Exact re-evaluation at spacing ``ds`` using the stored curvature."""
        n = int(math.ceil(self.length / ds))
        s_new = np.linspace(0.0, self.length, n + 1)
        pts = [self.pose_at(v) for v in s_new]
        X, Y, psi = (np.array(c) for c in zip(*pts))
        return ReferencePath(s_new, X, Y, psi, self.kappa_at(s_new))

    def pose_at(self, s_query: float):
        i = int(np.clip(np.searchsorted(self.s, s_query, side="right") - 1, 0, len(self.s) - 1))
        return _advance(self.X[i], self.Y[i], self.psi[i], self.kappa[i], s_query - self.s[i])


def _advance(x, y, psi, kappa, ds):
    if abs(kappa) < 1e-12:
        return x + ds * math.cos(psi), y + ds * math.sin(psi), psi
    dpsi = kappa * ds
    x_new = x + (math.sin(psi + dpsi) - math.sin(psi)) / kappa
    y_new = y - (math.cos(psi + dpsi) - math.cos(psi)) / kappa
    return x_new, y_new, psi + dpsi


def generate_path(spec: PathSpec, ds: float = DEFAULT_DS,
                  kappa_max: float = DEFAULT_KAPPA_MAX) -> ReferencePath:
    if ds <= 0:
        raise ValueError("ds must be positive")
    x, y, psi = spec.x0, spec.y0, spec.psi0
    s_pts, X, Y, P, K = [0.0], [x], [y], [psi], []
    s = 0.0
    for seg in spec.segments:
        if isinstance(seg, Straight):
            if seg.length <= 0:
                raise ValueError("straight length must be positive")
            if seg.heading is not None and abs(_wrap(seg.heading - psi)) > 1e-9:
                raise ValueError("discontinuous tangent between segments")
            length, kappa = seg.length, 0.0
        elif isinstance(seg, Arc):
            if seg.radius <= 0 or seg.angle <= 0:
                raise ValueError("arc radius and angle must be positive")
            if 1.0 / seg.radius > kappa_max + 1e-12:
                raise ValueError(f"arc radius {seg.radius} below minimum {1 / kappa_max}")
            if seg.direction not in ("left", "right"):
                raise ValueError(f"arc direction must be left or right, got {seg.direction!r}")
            length = seg.radius * seg.angle
            kappa = (1.0 if seg.direction == "left" else -1.0) / seg.radius
        else:
            raise TypeError(f"unknown segment {seg!r}")
        n = int(math.ceil(length / ds - 1e-9))
        x0, y0, psi0 = x, y, psi
        for k in range(1, n + 1):
            x, y, psi = _advance(x0, y0, psi0, kappa, length * k / n)
            s_pts.append(s + length * k / n)
            X.append(x)
            Y.append(y)
            P.append(psi)
            K.append(kappa)
        s += length
    K.append(K[-1])
    return ReferencePath(s_pts, X, Y, P, K)


def _wrap(a):
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


wrap_angle = _wrap


# Preset geometries. The training path and the held-out paths differ in radii
# and turn order.
TRAIN_PATH = "S30, L30:90, S20, R25:90, S20, L22:180, S25, R35:120, S20, L28:60, S30"
EVAL_PATHS = {
    "straight_turn": "S40, R26:90, S40",
    "uturn": "S30, L20:180, S30",
    "mixed": "S25, L24:75, S15, R32:110, S15, L40:35, S25",
}


def preset(name: str) -> PathSpec:
    if name == "train":
        return PathSpec.parse(TRAIN_PATH)
    if name in EVAL_PATHS:
        return PathSpec.parse(EVAL_PATHS[name])
    return PathSpec.parse(name)


def path_from_segments(segments: Sequence[Segment], **kw) -> ReferencePath:
    return generate_path(PathSpec(tuple(segments)), **kw)
