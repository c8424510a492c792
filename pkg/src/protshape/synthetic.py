"""Synthetic protein-like backbones built from backbone torsions.

Chains are grown atom by atom (natural extension reference frame) with
ideal bond lengths and angles, mixing helix, strand and loop segments.
They stand in for PDB data in tests and desk-scale experiments.
"""

from __future__ import annotations

import numpy as np

from .curve import Curve

BOND = {"N-CA": 1.458, "CA-C": 1.525, "C-N": 1.329}
ANGLE = {"N-CA-C": 111.2, "CA-C-N": 116.2, "C-N-CA": 121.7}

# (phi, psi, sd) in degrees
HELIX = (-57.0, -47.0, 6.0)
STRAND = (-120.0, 130.0, 10.0)
LOOP_BASINS = [(-75.0, 145.0), (-90.0, 0.0), (60.0, 45.0), (-65.0, -40.0)]


def place_atom(a, b, c, bond: float, angle_deg: float, torsion_deg: float) -> np.ndarray:
    """Position of atom ``d`` bonded to ``c`` with angle b-c-d and torsion a-b-c-d."""
    theta = np.radians(angle_deg)
    phi = np.radians(torsion_deg)
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    M = np.stack([bc, np.cross(n, bc), n], axis=1)
    d = np.array([-bond * np.cos(theta), bond * np.sin(theta) * np.cos(phi), bond * np.sin(theta) * np.sin(phi)])
    return c + M @ d


def backbone_from_torsions(phi, psi, omega=None) -> np.ndarray:
    """N, CA, C coordinates (3 * n_res, 3) for the given torsions (degrees).

    ``phi[0]`` and ``psi[-1]`` are unused.
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n = len(phi)
    omega = np.full(n, 180.0) if omega is None else np.asarray(omega, dtype=float)
    N = np.array([0.0, 0.0, 0.0])
    CA = np.array([BOND["N-CA"], 0.0, 0.0])
    t = np.radians(180.0 - ANGLE["N-CA-C"])
    C = CA + BOND["CA-C"] * np.array([np.cos(t), np.sin(t), 0.0])
    atoms = [N, CA, C]
    for i in range(1, n):
        N = place_atom(atoms[-3], atoms[-2], atoms[-1], BOND["C-N"], ANGLE["CA-C-N"], psi[i - 1])
        CA = place_atom(atoms[-2], atoms[-1], N, BOND["N-CA"], ANGLE["C-N-CA"], omega[i - 1])
        C = place_atom(atoms[-1], N, CA, BOND["CA-C"], ANGLE["N-CA-C"], phi[i])
        atoms.extend([N, CA, C])
    return np.array(atoms)


def random_torsions(n_res: int, rng: np.random.Generator, kinds=("H", "E", "L")):
    """Torsion angles for a chain of mixed secondary-structure segments.

    Returns ``(phi, psi, ss)`` where ``ss`` is a string of H/E/L labels.
    """
    phi, psi, ss = [], [], []
    while len(ss) < n_res:
        kind = kinds[rng.integers(len(kinds))]
        if kind == "H":
            length, (p0, s0, sd) = rng.integers(8, 21), HELIX
        elif kind == "E":
            length, (p0, s0, sd) = rng.integers(4, 11), STRAND
        else:
            length = rng.integers(2, 7)
            basin = LOOP_BASINS[rng.integers(len(LOOP_BASINS))]
            p0, s0, sd = basin[0], basin[1], 20.0
        for _ in range(length):
            if kind == "L":
                p0, s0 = LOOP_BASINS[rng.integers(len(LOOP_BASINS))]
            phi.append(p0 + sd * rng.standard_normal())
            psi.append(s0 + sd * rng.standard_normal())
            ss.append(kind)
    return np.array(phi[:n_res]), np.array(psi[:n_res]), "".join(ss[:n_res])


def synthetic_backbone(n_res: int, rng: np.random.Generator, kinds=("H", "E", "L")) -> np.ndarray:
    phi, psi, _ = random_torsions(n_res, rng, kinds)
    return backbone_from_torsions(phi, psi)


def synthetic_fragments(n: int, rng: np.random.Generator, n_res: int = 48, kinds=("H", "E", "L")) -> list:
    """``n`` independent ``n_res``-residue fragments as curves."""
    return [Curve(synthetic_backbone(n_res, rng, kinds)) for _ in range(n)]


def helix_curve(n_points: int = 200, radius: float = 1.0, pitch: float = 0.5, turns: float = 3.0) -> Curve:
    """Circular helix sampled uniformly in its parameter."""
    s = np.linspace(0.0, 1.0, n_points)
    a = 2 * np.pi * turns * s
    return Curve(np.stack([radius * np.cos(a), radius * np.sin(a), pitch * turns * s], axis=1))
