"""Rotation and reparameterization alignment of SRVFs.

Rotations come from an SVD of the cross-covariance (Kabsch with the
determinant correction); warps come from dynamic programming over monotone
lattice paths.  ``register`` alternates the two exact sub-solvers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .curve import (
    GridMismatch,
    Rotation,
    Srvf,
    Warp,
    apply_rotation,
    apply_warp,
    inner,
    l2_cost,
    midpoints,
    preshape_distance,
    sample_srvf,
)

TIE_TOL = 1e-12


class RegistrationError(ValueError):
    pass


class NoPath(RegistrationError):
    pass


class AntipodalPair(RegistrationError):
    pass


class DegenerateCrossCovariance(UserWarning):
    """The optimal rotation is not unique; an arbitrary maximizer was returned."""


def default_steps(max_step: int = 3) -> tuple:
    return tuple(
        (a, b)
        for a in range(1, max_step + 1)
        for b in range(1, max_step + 1)
        if math.gcd(a, b) == 1
    )


@dataclass(frozen=True)
class DpGrid:
    grid_size: int = 50
    allowed_steps: tuple = field(default_factory=default_steps)

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("DP grid size must be positive")
        steps = tuple(sorted({(int(a), int(b)) for a, b in self.allowed_steps}))
        if not steps:
            raise ValueError("at least one DP step is required")
        if any(a < 1 or b < 1 for a, b in steps):
            raise ValueError("DP steps must advance both coordinates")
        reduced = [(a // math.gcd(a, b), b // math.gcd(a, b)) for a, b in steps]
        if len(set(reduced)) != len(reduced):
            raise ValueError("DP steps must be distinct after reduction by gcd")
        object.__setattr__(self, "allowed_steps", steps)


@dataclass
class RegistrationResult:
    rotation: Rotation
    warp: Warp
    q2_star: Srvf
    cost: float
    theta: float
    iterations: int
    cost_history: list = field(default_factory=list)


def optimal_rotation(q1: Srvf, q2: Srvf) -> Rotation:
    """Rotation ``O`` minimizing ``||q1 - O q2||^2``."""
    if q1.grid_size != q2.grid_size:
        raise GridMismatch(f"grid sizes differ: {q1.grid_size} vs {q2.grid_size}")
    A = q1.values.T @ q2.values / q1.grid_size
    U, s, Vt = np.linalg.svd(A)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        warnings.warn(
            "cross-covariance has rank < 2; optimal rotation is not unique",
            DegenerateCrossCovariance,
            stacklevel=2,
        )
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    O = U @ np.diag([1.0, 1.0, d]) @ Vt
    # re-orthonormalize away rounding so Rotation's 1e-9 checks always hold
    u, _, vt = np.linalg.svd(O)
    O = u @ vt
    if np.linalg.det(O) < 0:
        O = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return Rotation(O)


def _segment_owner(T: int, n: int) -> np.ndarray:
    """Index of the DP lattice interval containing each SRVF midpoint."""
    return np.minimum((midpoints(T) * n).astype(int), n - 1)


def edge_costs(q1: Srvf, q2: Srvf, grid: DpGrid) -> dict:
    """Cost of every lattice edge, keyed by step.

    ``costs[(di, dj)][i, j]`` is the discretized objective on
    ``[i/n, (i+di)/n]`` when gamma maps it linearly onto ``[j/n, (j+dj)/n]``.
    Edges leaving the lattice are ``inf``.
    """
    if q1.grid_size != q2.grid_size:
        raise GridMismatch(f"grid sizes differ: {q1.grid_size} vs {q2.grid_size}")
    T, n = q1.grid_size, grid.grid_size
    a, b = q1.values, q2.values
    m = midpoints(T)
    owner = _segment_owner(T, n)
    starts = np.searchsorted(owner, np.arange(n + 1))
    out = {}
    for di, dj in grid.allowed_steps:
        cost = np.full((n + 1, n + 1), np.inf)
        slope = dj / di
        j = np.arange(0, n - dj + 1)
        for i in range(0, n - di + 1):
            ks = np.arange(starts[i], starts[i + di])
            if len(ks) == 0:
                cost[i, j] = 0.0
                continue
            # gamma on this edge, evaluated at each sample midpoint, per j
            s = j[:, None] / n + slope * (m[ks][None, :] - i / n)
            vals = np.stack([np.interp(s, m, b[:, d]) for d in range(3)], axis=-1)
            diff = a[ks][None, :, :] - math.sqrt(slope) * vals
            cost[i, j] = np.sum(diff**2, axis=(1, 2)) / T
        out[(di, dj)] = cost
    return out


@lru_cache(maxsize=32)
def _deviation_tables(n: int, steps: tuple) -> dict:
    """Deviation of each edge from the diagonal, summed over the lattice
    columns it covers (excluding its start)."""
    i = np.arange(n + 1)[:, None, None]
    j = np.arange(n + 1)[None, :, None]
    tables = {}
    for di, dj in steps:
        k = np.arange(1, di + 1)[None, None, :]
        tables[(di, dj)] = np.sum(np.abs(j + dj * k / di - (i + k)), axis=2) / n
    return tables


def path_to_warp(path, grid_size: int, T: int) -> Warp:
    nodes = np.asarray(path, dtype=float) / grid_size
    t = np.linspace(0.0, 1.0, T + 1)
    g = np.interp(t, nodes[:, 0], nodes[:, 1])
    g[0], g[-1] = 0.0, 1.0
    return Warp(np.clip(g, 0.0, 1.0))


def dp_warp(q1: Srvf, q2: Srvf, grid: DpGrid | None = None, *, return_path: bool = False):
    """Globally optimal lattice warp of ``q2`` onto ``q1``.

    Returns ``(warp, cost)``; with ``return_path`` the lattice vertices are
    appended.  Among paths whose costs agree to ``TIE_TOL`` the one with the
    smallest total deviation from the diagonal wins.
    """
    grid = grid or DpGrid()
    n = grid.grid_size
    costs = edge_costs(q1, q2, grid)
    D = np.full((n + 1, n + 1), np.inf)
    dev = np.full((n + 1, n + 1), np.inf)
    back = np.full((n + 1, n + 1, 2), -1, dtype=int)
    D[0, 0] = 0.0
    dev[0, 0] = 0.0
    devtab = _deviation_tables(n, grid.allowed_steps)
    for i2 in range(1, n + 1):
        for di, dj in grid.allowed_steps:
            i = i2 - di
            if i < 0:
                continue
            j = np.arange(0, n + 1 - dj)
            with np.errstate(invalid="ignore"):
                cand = D[i, j] + costs[(di, dj)][i, j]
            cdev = dev[i, j] + devtab[(di, dj)][i, j]
            j2 = j + dj
            cur, curdev = D[i2, j2], dev[i2, j2]
            better = cand < cur - TIE_TOL
            with np.errstate(invalid="ignore"):
                tie = (np.abs(cand - cur) <= TIE_TOL) & (cdev < curdev)
            upd = np.isfinite(cand) & (better | tie)
            D[i2, j2[upd]] = cand[upd]
            dev[i2, j2[upd]] = cdev[upd]
            back[i2, j2[upd]] = np.stack([np.full(upd.sum(), i), j[upd]], axis=1)
    if not np.isfinite(D[n, n]):
        raise NoPath(f"allowed steps {grid.allowed_steps} cannot reach ({n}, {n})")
    path = [(n, n)]
    while path[-1] != (0, 0):
        i, j = path[-1]
        path.append(tuple(back[i, j]))
    path = path[::-1]
    warp = path_to_warp(path, n, q1.grid_size)
    cost = float(D[n, n])
    if return_path:
        return warp, cost, path
    return warp, cost


def _cos_angle(q1: Srvf, q2: Srvf) -> float:
    # discrete warps shrink or stretch the norm slightly; measure the angle
    # to the preshape projection of q2
    return inner(q1, q2) / max(q2.norm(), 1e-300)


def register(
    q1: Srvf,
    q2: Srvf,
    grid: DpGrid | None = None,
    max_iters: int = 20,
    tol: float = 1e-8,
) -> RegistrationResult:
    """Alternate optimal rotation and DP warp, starting from the identity warp.

    A step is kept only if it lowers the objective without raising the
    angle, so both sequences are monotone.
    """
    grid = grid or DpGrid()
    if q1.grid_size != q2.grid_size:
        raise GridMismatch(f"grid sizes differ: {q1.grid_size} vs {q2.grid_size}")
    T = q1.grid_size
    warp = Warp.identity(T)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateCrossCovariance)
        O = optimal_rotation(q1, q2)
    q2_star = apply_rotation(q2, O)
    cost = l2_cost(q1, q2_star)
    history = [cost]
    iters = 0
    for iters in range(1, max_iters + 1):
        rotated = apply_rotation(q2, O)
        new_warp, _ = dp_warp(q1, rotated, grid)
        warped = apply_warp(q2, new_warp)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCrossCovariance)
            new_O = optimal_rotation(q1, warped)
        cand = apply_rotation(warped, new_O)
        new_cost = l2_cost(q1, cand)
        if new_cost > cost or _cos_angle(q1, cand) < _cos_angle(q1, q2_star):
            break
        improvement = cost - new_cost
        warp, O, q2_star, cost = new_warp, new_O, cand, new_cost
        history.append(cost)
        if improvement < tol:
            break
    theta = float(np.arccos(np.clip(_cos_angle(q1, q2_star), -1.0, 1.0)))
    return RegistrationResult(O, warp, q2_star, cost, theta, iters, history)


def shape_distance(q1: Srvf, q2: Srvf, grid: DpGrid | None = None, symmetric: bool = False, **kw) -> float:
    d = register(q1, q2, grid, **kw).theta
    if symmetric:
        d = 0.5 * (d + register(q2, q1, grid, **kw).theta)
    return d


def slerp(a: np.ndarray, b: np.ndarray, steps: int, theta: float | None = None) -> list:
    """Great-circle samples between two unit vectors (any shape, flat inner)."""
    if steps < 2:
        raise ValueError("a geodesic needs at least 2 steps")
    if theta is None:
        theta = float(np.arccos(np.clip(np.sum(a * b), -1.0, 1.0)))
    if theta > math.pi - 1e-6:
        raise AntipodalPair("endpoints are antipodal; the geodesic is not unique")
    taus = np.linspace(0.0, 1.0, steps)
    if theta < 1e-6:
        return [a.copy() for _ in taus]
    s = math.sin(theta)
    out = [(math.sin((1 - tau) * theta) * a + math.sin(tau * theta) * b) / s for tau in taus]
    out[0], out[-1] = a.copy(), b.copy()
    return out


def geodesic_path(q1: Srvf, q2_star: Srvf, steps: int) -> list:
    preshape_distance(q1, q2_star)  # validates unit norm
    T = q1.grid_size
    theta = float(np.arccos(np.clip(inner(q1, q2_star), -1.0, 1.0)))
    # slerp with the 1/T-weighted inner product: scale to Euclidean unit vectors
    a = q1.values / math.sqrt(T)
    b = q2_star.values / math.sqrt(T)
    path = slerp(a, b, steps, theta)
    if theta < 1e-6:
        return [q1 for _ in path]
    out = [Srvf(v * math.sqrt(T)) for v in path]
    out[0], out[-1] = q1, q2_star
    return out


def distance_matrix(qs: list, method: str = "dp", **kw) -> np.ndarray:
    """Pairwise shape distances; ``method`` is ``dp``, ``resnet`` or ``preshape``."""
    n = len(qs)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if method == "preshape":
                D[i, j] = preshape_distance(qs[i], qs[j])
            elif method == "dp":
                D[i, j] = register(qs[i], qs[j], **kw).theta
            elif method == "resnet":
                from .resnet_warp import resnet_distance

                D[i, j] = resnet_distance(qs[i], qs[j], **kw)
            else:
                raise ValueError(f"unknown distance method {method!r}")
    return D
