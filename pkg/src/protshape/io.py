"""Readers and writers for the package's interchange formats."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .curve import Curve, Srvf

BACKBONE_NAMES = ("N", "CA", "C")


def write_points_csv(path, points) -> None:
    points = np.asarray(points, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "z"])
        for i, (x, y, z) in enumerate(points):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(z))])


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["index", "x", "y", "z"]:
        raise ValueError(f"{path}: expected header 'index,x,y,z'")
    data = np.array([[float(v) for v in r[1:4]] for r in rows[1:] if r], dtype=float)
    return data.reshape(-1, 3)


def write_curve_csv(path, curve: Curve) -> None:
    write_points_csv(path, curve.points)


def read_curve_csv(path) -> Curve:
    return Curve(read_points_csv(path))


def write_srvf_csv(path, q: Srvf) -> None:
    write_points_csv(path, q.values)


def read_srvf_csv(path) -> Srvf:
    return Srvf(read_points_csv(path))


def write_matrix_csv(path, labels, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, np.asarray(matrix)):
            w.writerow([lab] + [repr(float(v)) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    return labels, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def backbone_pdb(points, chain: str = "A", res_name: str = "GLY") -> str:
    """Backbone-only PDB text: residues 1..n, atoms N/CA/C, occupancy 1.00,
    B-factor 0.00."""
    points = np.asarray(points, dtype=float)
    if len(points) % 3:
        raise ValueError("backbone point count must be a multiple of 3")
    lines = []
    for i, (x, y, z) in enumerate(points):
        name = BACKBONE_NAMES[i % 3]
        res = i // 3 + 1
        lines.append(
            f"ATOM  {i + 1:5d}  {name:<3} {res_name:>3} {chain}{res:4d}    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{0.0:6.2f}           {name[0]}"
        )
    lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
