import numpy as np
import pytest

from protshape.curve import Curve, Rotation, Srvf, Warp


def tangent_curve(T: int, rng: np.random.Generator, K: int = 3, scale: float = 2.0) -> Curve:
    """Constant-speed smooth random curve with T segments.

    The unit tangent is a smooth random field, so the SRVF is smooth and
    bounded away from zero.
    """
    t = np.linspace(0.0, 1.0, T + 1)
    d = np.stack(
        [
            rng.normal() * 0.5
            + sum(rng.normal() * scale * np.sin((k + 1) * np.pi * t + rng.uniform(0, 6)) / (k + 1) for k in range(K))
            for _ in range(3)
        ],
        axis=1,
    )
    d += np.array([2.0, 0.0, 0.0])
    u = d / np.linalg.norm(d, axis=1, keepdims=True)
    return Curve(np.vstack([np.zeros(3), np.cumsum(u[:-1] / T, axis=0)]))


def unit_srvf(T: int, rng: np.random.Generator, **kw) -> Srvf:
    from protshape.curve import normalize_preshape, to_srvf

    return normalize_preshape(to_srvf(tangent_curve(T, rng, **kw)))


def random_srvf(T: int, rng: np.random.Generator) -> Srvf:
    from protshape.curve import normalize_preshape

    return normalize_preshape(Srvf(rng.standard_normal((T, 3))))


def lattice_warp(n: int, T: int, rng: np.random.Generator, steps=((1, 2), (2, 1), (2, 3), (3, 2)), p_diag=0.6) -> Warp:
    """Random piecewise-linear warp whose vertices lie on the n x n DP lattice."""
    from protshape.registration import path_to_warp

    for _ in range(1000):
        i = j = 0
        path = [(0, 0)]
        while i < n and j < n:
            if rng.uniform() < p_diag:
                di, dj = 1, 1
            else:
                di, dj = steps[rng.integers(len(steps))]
            if i + di > n or j + dj > n:
                di, dj = 1, 1
            i, j = i + di, j + dj
            path.append((i, j))
        if (i, j) == (n, n):
            return path_to_warp(path, n, T)
    raise RuntimeError("could not draw a lattice warp")


def smooth_warp(T: int, a: float = 1.0) -> Warp:
    """gamma(t) = (exp(a t) - 1) / (exp(a) - 1); a = 0 would be the identity."""
    t = np.linspace(0.0, 1.0, T + 1)
    g = np.expm1(a * t) / np.expm1(a)
    g[0], g[-1] = 0.0, 1.0
    return Warp(g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_rotation():
    def make(rng):
        return Rotation.random(rng)

    return make


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
