"""Exhaustive lattice-path enumeration, independent of the DP tables."""

import numpy as np

from protshape.curve import apply_warp, l2_cost
from protshape.registration import path_to_warp


def all_paths(n, steps):
    out = []

    def rec(path):
        i, j = path[-1]
        if (i, j) == (n, n):
            out.append(list(path))
            return
        for di, dj in steps:
            if i + di <= n and j + dj <= n:
                path.append((i + di, j + dj))
                rec(path)
                path.pop()

    rec([(0, 0)])
    return out


def path_cost(q1, q2, path, n):
    return l2_cost(q1, apply_warp(q2, path_to_warp(path, n, q1.grid_size)))


def path_deviation(path, n):
    p = np.asarray(path, dtype=float)
    cols = np.arange(1, n + 1)
    return float(np.sum(np.abs(np.interp(cols, p[:, 0], p[:, 1]) - cols)) / n)


def brute_force(q1, q2, n, steps, tie_tol=1e-12):
    """Lexicographic optimum: lowest cost, then smallest deviation from the
    diagonal among paths within ``tie_tol`` of that cost."""
    paths = all_paths(n, steps)
    costs = np.array([path_cost(q1, q2, p, n) for p in paths])
    best = costs.min()
    near = [k for k in range(len(paths)) if costs[k] <= best + tie_tol]
    k = min(near, key=lambda k: (path_deviation(paths[k], n), costs[k]))
    return paths[k], costs[k], len(paths)
