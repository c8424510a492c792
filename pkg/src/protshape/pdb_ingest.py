"""Fixed-column PDB parsing, backbone extraction and fragmenting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .curve import Curve

BACKBONE = ("N", "CA", "C")


class PdbError(ValueError):
    pass


class MalformedRecord(PdbError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


class ChainNotFound(PdbError):
    pass


class EmptyBackbone(PdbError):
    pass


class FragmentTooLong(UserWarning):
    pass


@dataclass(frozen=True)
class AtomRecord:
    atom_name: str
    alt_loc: str
    res_name: str
    chain_id: str
    res_seq: int
    insertion_code: str
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not self.atom_name.strip():
            raise PdbError("atom name is empty")
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise PdbError("atom coordinates must be finite")

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def to_line(self, serial: int = 1) -> str:
        name = self.atom_name
        # four-character names start in column 13, shorter ones in column 14
        name_field = name.ljust(4) if len(name) == 4 else (" " + name).ljust(4)
        element = name.strip()[0]
        return (
            f"ATOM  {serial:5d} {name_field}{self.alt_loc or ' ':1}{self.res_name:>3} "
            f"{self.chain_id or ' ':1}{self.res_seq:4d}{self.insertion_code or ' ':1}   "
            f"{self.x:8.3f}{self.y:8.3f}{self.z:8.3f}{1.0:6.2f}{0.0:6.2f}          {element:>2}"
        )


@dataclass
class BackboneChain:
    chain_id: str
    residues: list  # [(res_seq, icode, res_name, (3, 3) array of N, CA, C)]
    dropped: int = 0

    @property
    def coords(self) -> np.ndarray:
        if not self.residues:
            return np.zeros((0, 3))
        return np.concatenate([r[3] for r in self.residues], axis=0)

    def __len__(self):
        return 3 * len(self.residues)


def parse_pdb(text: str) -> list:
    """ATOM records with blank or 'A' altLoc from the first model."""
    records = []
    seen_model = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        rec = line[:6]
        if rec.startswith("MODEL"):
            if seen_model:
                break
            seen_model = True
            continue
        if rec.startswith("ENDMDL"):
            break
        if rec != "ATOM  " and not (rec.startswith("ATOM") and rec[4:].strip() == ""):
            continue
        if len(line) < 54:
            raise MalformedRecord(lineno, f"ATOM record too short ({len(line)} columns)")
        alt = line[16]
        if alt not in (" ", "A"):
            continue
        try:
            x, y, z = float(line[30:38]), float(line[38:46]), float(line[46:54])
        except ValueError as exc:
            raise MalformedRecord(lineno, "unparseable coordinates") from exc
        try:
            res_seq = int(line[22:26])
        except ValueError as exc:
            raise MalformedRecord(lineno, "unparseable residue number") from exc
        name = line[12:16].strip()
        if not name:
            raise MalformedRecord(lineno, "empty atom name")
        try:
            records.append(
                AtomRecord(
                    atom_name=name,
                    alt_loc=alt.strip(),
                    res_name=line[17:20].strip(),
                    chain_id=line[21].strip(),
                    res_seq=res_seq,
                    insertion_code=line[26].strip(),
                    x=x,
                    y=y,
                    z=z,
                )
            )
        except PdbError as exc:
            raise MalformedRecord(lineno, str(exc)) from exc
    return records


def chains_in(records) -> list:
    out = []
    for r in records:
        if r.chain_id not in out:
            out.append(r.chain_id)
    return out


def extract_backbone(records, chain: str) -> BackboneChain:
    chain = chain.strip()
    mine = [r for r in records if r.chain_id == chain]
    if not mine:
        raise ChainNotFound(f"chain {chain!r} not present")
    groups = {}
    for r in mine:
        key = (r.res_seq, r.insertion_code)
        entry = groups.setdefault(key, {"res_name": r.res_name, "atoms": {}})
        if r.atom_name in BACKBONE and r.atom_name not in entry["atoms"]:
            entry["atoms"][r.atom_name] = r.xyz
    residues, dropped = [], 0
    for key in sorted(groups):
        atoms = groups[key]["atoms"]
        if all(a in atoms for a in BACKBONE):
            residues.append((key[0], key[1], groups[key]["res_name"], np.stack([atoms[a] for a in BACKBONE])))
        else:
            dropped += 1
    if not residues:
        raise EmptyBackbone(f"chain {chain!r} has no complete N/CA/C residue")
    return BackboneChain(chain, residues, dropped)


def fragment_windows(chain: BackboneChain, atoms_per_fragment: int, stride: int) -> list:
    """Start offsets (in atoms) of every window that fits in the chain."""
    if atoms_per_fragment < 3 or atoms_per_fragment % 3:
        raise ValueError("atoms_per_fragment must be a positive multiple of 3")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    n = len(chain)
    if atoms_per_fragment > n:
        warnings.warn(
            f"chain {chain.chain_id!r} has {n} atoms, shorter than a {atoms_per_fragment}-atom fragment",
            FragmentTooLong,
            stacklevel=2,
        )
        return []
    return list(range(0, n - atoms_per_fragment + 1, stride))


def fragment(chain: BackboneChain, atoms_per_fragment: int = 144, stride: int = 3) -> list:
    coords = chain.coords
    return [Curve(coords[s : s + atoms_per_fragment]) for s in fragment_windows(chain, atoms_per_fragment, stride)]


@dataclass
class FragmentInfo:
    fragment_id: str
    source: str
    chain: str
    first_residue: str
    last_residue: str
    start_atom: int
    curve: Curve = field(repr=False)

    def manifest_entry(self) -> dict:
        return {
            "source": self.source,
            "chain": self.chain,
            "residues": [self.first_residue, self.last_residue],
            "start_atom": self.start_atom,
        }


def fragments_with_info(chain: BackboneChain, source: str, atoms_per_fragment: int = 144, stride: int = 3, stem: str = "frag") -> list:
    coords = chain.coords
    out = []
    for s in fragment_windows(chain, atoms_per_fragment, stride):
        r0 = chain.residues[s // 3]
        r1 = chain.residues[(s + atoms_per_fragment - 1) // 3]
        out.append(
            FragmentInfo(
                fragment_id=f"{stem}_{chain.chain_id or '_'}_{s:05d}",
                source=source,
                chain=chain.chain_id,
                first_residue=f"{r0[0]}{r0[1]}",
                last_residue=f"{r1[0]}{r1[1]}",
                start_atom=s,
                curve=Curve(coords[s : s + atoms_per_fragment]),
            )
        )
    return out
