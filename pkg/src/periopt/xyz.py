"""Extended-XYZ reading and writing.

Line 1: atom count. Line 2: key=value pairs including
Lattice="a1x a1y a1z a2x a2y a2z a3x a3y a3z" (angstroms, row-major).
Remaining lines: `Symbol x y z`. The reader tolerates coordinates outside
the cell.
"""

from __future__ import annotations

import re
import shlex

import numpy as np

from .crystal import DEFAULT_SPECIES, Lattice, Species, Structure

__all__ = ["read_xyz", "write_xyz", "parse_comment_line"]


def parse_comment_line(line: str) -> dict:
    """Split an extended-XYZ comment line into a key -> string dict."""
    out = {}
    for token in shlex.split(line):
        if "=" not in token:
            continue
        key, value = token.split("=", 1)
        out[key] = value
    return out


def _species_table(symbols, table):
    uniq = sorted(set(symbols))
    species = []
    for sym in uniq:
        if sym not in table:
            raise KeyError(f"unknown species {sym!r}; provide parameters for it")
        species.append(table[sym])
    index = {sym: i for i, sym in enumerate(uniq)}
    return tuple(species), np.array([index[sym] for sym in symbols], dtype=int)


def read_xyz(path, species_table: dict | None = None) -> Structure:
    table = dict(DEFAULT_SPECIES) if species_table is None else dict(species_table)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: not an xyz file")
    natoms = int(lines[0].strip())
    fields = parse_comment_line(lines[1])
    if "Lattice" not in fields:
        raise ValueError(f"{path}: missing Lattice=\"...\" on line 2")
    cell = np.fromstring(fields["Lattice"], sep=" ")
    if cell.size != 9:
        raise ValueError(f"{path}: Lattice needs 9 numbers")
    lattice = Lattice(cell.reshape(3, 3))

    symbols = []
    positions = np.empty((natoms, 3))
    for i in range(natoms):
        parts = lines[2 + i].split()
        symbols.append(parts[0])
        positions[i] = [float(x) for x in parts[1:4]]
    species, index = _species_table(symbols, table)
    return Structure(lattice, species, index, positions)


def write_xyz(path, s: Structure, comment_extra: dict | None = None) -> None:
    cell = " ".join(f"{x:.12f}" for x in s.lattice.matrix.ravel())
    extras = ""
    for key, value in (comment_extra or {}).items():
        if re.search(r"\s", str(value)):
            extras += f' {key}="{value}"'
        else:
            extras += f" {key}={value}"
    with open(path, "w") as fh:
        fh.write(f"{len(s)}\n")
        fh.write(f'Lattice="{cell}" Properties=species:S:1:pos:R:3{extras}\n')
        for sym, pos in zip(s.symbols, s.positions):
            fh.write(f"{sym} {pos[0]:.12f} {pos[1]:.12f} {pos[2]:.12f}\n")
