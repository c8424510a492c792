"""Discretized open curves in R^3 and their square-root velocity functions.

Conventions used throughout the package:

* a curve of ``n`` points is sampled on a uniform grid of ``[0, 1]``, so it
  has ``T = n - 1`` segments;
* the SRVF of that curve is a ``(T, 3)`` array, one value per segment,
  located at the segment midpoints ``(k + 1/2) / T``;
* L2 quantities use left-Riemann weights ``1/T``, which makes
  ``from_srvf(to_srvf(c))`` exact up to translation;
* a warp is ``gamma`` sampled at the ``T + 1`` segment endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_VEL = 1e-10


class CurveError(ValueError):
    pass


class DegenerateCurve(CurveError):
    pass


class ZeroNorm(CurveError):
    pass


class GridMismatch(CurveError):
    pass


class NotUnitNorm(CurveError):
    pass


class InvalidRotation(CurveError):
    pass


class InvalidWarp(CurveError):
    pass


@dataclass(frozen=True)
class Curve:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise CurveError(f"curve points must have shape (n, 3), got {pts.shape}")
        if len(pts) < 2:
            raise CurveError("a curve needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise CurveError("curve coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def translated(self, offset) -> "Curve":
        return Curve(self.points + np.asarray(offset, dtype=float))

    def centered(self) -> "Curve":
        return Curve(self.points - self.points.mean(axis=0))

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True)
class Srvf:
    values: np.ndarray

    def __post_init__(self):
        q = np.array(self.values, dtype=float)
        if q.ndim != 2 or q.shape[1] != 3 or len(q) < 1:
            raise CurveError(f"SRVF values must have shape (T, 3), got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise CurveError("SRVF values must be finite")
        q.setflags(write=False)
        object.__setattr__(self, "values", q)

    @property
    def grid_size(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return float(np.sqrt(inner(self, self)))

    def __mul__(self, c: float) -> "Srvf":
        return Srvf(self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Srvf":
        return Srvf(-self.values)


@dataclass(frozen=True)
class Warp:
    values: np.ndarray

    def __post_init__(self):
        g = np.array(self.values, dtype=float)
        if g.ndim != 1 or len(g) < 2:
            raise InvalidWarp("warp must be a 1-d array with at least 2 samples")
        if not np.all(np.isfinite(g)):
            raise InvalidWarp("warp values must be finite")
        if g[0] != 0.0 or g[-1] != 1.0:
            raise InvalidWarp(f"warp must fix the endpoints, got {g[0]!r}, {g[-1]!r}")
        if np.any(np.diff(g) < 0) or g.min() < 0 or g.max() > 1:
            raise InvalidWarp("warp must be nondecreasing with values in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "values", g)

    @classmethod
    def identity(cls, T: int) -> "Warp":
        return cls(np.linspace(0.0, 1.0, T + 1))

    @classmethod
    def from_function(cls, fn, T: int) -> "Warp":
        t = np.linspace(0.0, 1.0, T + 1)
        g = np.asarray(fn(t), dtype=float)
        g = np.maximum.accumulate(np.clip(g, 0.0, 1.0))
        g[0], g[-1] = 0.0, 1.0
        return cls(g)

    @property
    def grid_size(self) -> int:
        return len(self.values) - 1

    def roughness(self) -> float:
        g = self.values
        return float(np.sum((g[2:] - 2 * g[1:-1] + g[:-2]) ** 2))


@dataclass(frozen=True)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        O = np.array(self.matrix, dtype=float)
        if O.shape != (3, 3):
            raise InvalidRotation(f"rotation must be 3x3, got {O.shape}")
        if not np.allclose(O.T @ O, np.eye(3), atol=1e-9, rtol=0):
            raise InvalidRotation("rotation matrix is not orthogonal")
        if abs(np.linalg.det(O) - 1.0) > 1e-9:
            raise InvalidRotation("rotation matrix must have determinant +1")
        O.setflags(write=False)
        object.__setattr__(self, "matrix", O)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis, angle: float) -> "Rotation":
        k = np.asarray(axis, dtype=float)
        k = k / np.linalg.norm(k)
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        return cls(np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        # QR of a Gaussian matrix with sign fix gives Haar-distributed O(3)
        Q, R = np.linalg.qr(rng.standard_normal((3, 3)))
        Q = Q * np.sign(np.diag(R))
        if np.linalg.det(Q) < 0:
            Q[:, 0] = -Q[:, 0]
        return cls(Q)


def to_srvf(curve: Curve) -> Srvf:
    """Square-root velocity function of ``curve`` (not normalized).

    Segments whose speed falls below ``EPS_VEL`` map to zero.
    """
    pts = curve.points if isinstance(curve, Curve) else Curve(curve).points
    T = len(pts) - 1
    vel = np.diff(pts, axis=0) * T
    speed = np.linalg.norm(vel, axis=1)
    moving = speed >= EPS_VEL
    if not moving.any():
        raise DegenerateCurve("every segment of the curve has zero velocity")
    q = np.zeros_like(vel)
    q[moving] = vel[moving] / np.sqrt(speed[moving])[:, None]
    return Srvf(q)


def from_srvf(q: Srvf, origin=(0.0, 0.0, 0.0)) -> Curve:
    v = q.values
    T = len(v)
    steps = v * np.linalg.norm(v, axis=1, keepdims=True) / T
    pts = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    return Curve(pts + np.asarray(origin, dtype=float))


def inner(q1: Srvf, q2: Srvf) -> float:
    if q1.grid_size != q2.grid_size:
        raise GridMismatch(f"grid sizes differ: {q1.grid_size} vs {q2.grid_size}")
    return float(np.sum(q1.values * q2.values) / q1.grid_size)


def l2_cost(q1: Srvf, q2: Srvf) -> float:
    """Squared discrete L2 distance ``||q1 - q2||^2``."""
    if q1.grid_size != q2.grid_size:
        raise GridMismatch(f"grid sizes differ: {q1.grid_size} vs {q2.grid_size}")
    return float(np.sum((q1.values - q2.values) ** 2) / q1.grid_size)


def normalize_preshape(q: Srvf) -> Srvf:
    nrm = q.norm()
    if not nrm > 0:
        raise ZeroNorm("cannot normalize an SRVF of zero norm")
    return Srvf(q.values / nrm)


def curve_to_preshape(curve: Curve) -> Srvf:
    return normalize_preshape(to_srvf(curve))


def midpoints(T: int) -> np.ndarray:
    return (np.arange(T) + 0.5) / T


def sample_srvf(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of SRVF samples at parameter values ``s``.

    Outside the first/last midpoint the boundary value is held constant.
    """
    T = len(q)
    m = midpoints(T)
    return np.stack([np.interp(s, m, q[:, d]) for d in range(q.shape[1])], axis=1)


def apply_warp(q: Srvf, g: Warp) -> Srvf:
    """Reparameterize: ``(q o gamma) * sqrt(gamma')``.

    ``gamma`` and its derivative are evaluated at the segment midpoints; the
    derivative there is the centered difference of the endpoint samples.
    """
    T = q.grid_size
    if g.grid_size != T:
        raise GridMismatch(f"warp grid {g.grid_size} does not match SRVF grid {T}")
    gv = g.values
    at = 0.5 * (gv[1:] + gv[:-1])
    slope = np.diff(gv) * T
    return Srvf(sample_srvf(q.values, at) * np.sqrt(slope)[:, None])


def apply_rotation(q: Srvf, O) -> Srvf:
    if not isinstance(O, Rotation):
        O = Rotation(O)
    return Srvf(q.values @ O.matrix.T)


def _check_unit(q: Srvf, tol: float):
    if abs(q.norm() - 1.0) > tol:
        raise NotUnitNorm(f"expected a unit-norm SRVF, got norm {q.norm():.6g}")


def preshape_distance(q1: Srvf, q2: Srvf, tol: float = 1e-6) -> float:
    _check_unit(q1, tol)
    _check_unit(q2, tol)
    return float(np.arccos(np.clip(inner(q1, q2), -1.0, 1.0)))


def compose_warps(g1: Warp, g2: Warp) -> Warp:
    """``g1 o g2`` on the common grid."""
    t = np.linspace(0.0, 1.0, g1.grid_size + 1)
    g = np.interp(g2.values, t, g1.values)
    g[0], g[-1] = 0.0, 1.0
    return Warp(np.maximum.accumulate(g))


def invert_warp(g: Warp) -> Warp:
    t = np.linspace(0.0, 1.0, g.grid_size + 1)
    inv = np.interp(t, g.values, t)
    inv[0], inv[-1] = 0.0, 1.0
    return Warp(np.maximum.accumulate(inv))
