"""Energy/force calculators and the built-in smooth periodic Lennard-Jones.

The built-in potential is a force-shifted LJ lattice sum: both the pair
energy and its derivative go to zero at the cutoff, so analytic forces match
finite differences of the energy. Cross-species parameters follow
Lorentz-Berthelot mixing.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .crystal import Species, Structure, _shell_offsets

__all__ = [
    "CalcResult",
    "CalculatorStats",
    "Calculator",
    "AtomicOverlapError",
    "pair_energy",
    "LennardJonesCalculator",
    "load_species_params",
    "write_species_params",
]

OVERLAP_DISTANCE = 1e-6  # A


class AtomicOverlapError(RuntimeError):
    pass


@dataclass
class CalcResult:
    energy: float  # eV, total per unit cell
    forces: np.ndarray  # (N, 3) eV/A
    call_count_delta: int = 1


@dataclass
class CalculatorStats:
    total_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, delta: int = 1) -> None:
        with self._lock:
            self.total_calls += delta


class Calculator:
    """Base interface: evaluate(structure) -> CalcResult, with a call counter."""

    def __init__(self):
        self.stats = CalculatorStats()

    def evaluate(self, s: Structure) -> CalcResult:
        raise NotImplementedError


def _lj(r, sigma, epsilon):
    sr6 = (sigma / r) ** 6
    return 4.0 * epsilon * (sr6 * sr6 - sr6)


def _lj_deriv(r, sigma, epsilon):
    sr6 = (sigma / r) ** 6
    return 4.0 * epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r


def pair_energy(r, sigma, epsilon, r_c):
    """Force-shifted LJ pair energy: V(r) - V(r_c) - (r - r_c) V'(r_c), 0 beyond r_c."""
    r = np.asarray(r, dtype=float)
    inside = r < r_c
    out = np.zeros_like(r)
    if np.any(inside):
        ri = np.where(inside, r, r_c)
        out = np.where(
            inside,
            _lj(ri, sigma, epsilon)
            - _lj(r_c, sigma, epsilon)
            - (ri - r_c) * _lj_deriv(r_c, sigma, epsilon),
            0.0,
        )
    return out if out.ndim else float(out)


def _pair_deriv(r, sigma, epsilon, r_c):
    return _lj_deriv(r, sigma, epsilon) - _lj_deriv(r_c, sigma, epsilon)


class LennardJonesCalculator(Calculator):
    """Periodic force-shifted LJ lattice sum over all image pairs within cutoff.

    If r_c is not given it defaults to 2.5 times the largest sigma among the
    species present in the evaluated structure.
    """

    def __init__(self, r_c: float | None = None):
        super().__init__()
        self.r_c = r_c

    def cutoff_for(self, s: Structure) -> float:
        if self.r_c is not None:
            return self.r_c
        sigmas = [s.species[i].lj_sigma for i in set(s.species_index.tolist())]
        return 2.5 * max(sigmas)

    def evaluate(self, s: Structure) -> CalcResult:
        r_c = self.cutoff_for(s)
        lat = s.lattice
        n = len(s)

        frac = lat.to_fractional(s.positions)
        frac -= np.floor(frac)
        frac[frac >= 1.0] -= 1.0
        cart = lat.to_cartesian(frac)

        n_shell = int(np.ceil(r_c / lat.min_width())) + 1
        offs = np.concatenate([_shell_offsets(m) for m in range(n_shell + 1)])
        trans = offs @ lat.matrix

        sigma = np.array([sp.lj_sigma for sp in s.species])[s.species_index]
        epsilon = np.array([sp.lj_epsilon for sp in s.species])[s.species_index]
        sig_ij = 0.5 * (sigma[:, None] + sigma[None, :])
        eps_ij = np.sqrt(epsilon[:, None] * epsilon[None, :])

        # diff[i, j, m] = position of image m of atom j, relative to atom i
        diff = cart[None, :, None, :] + trans[None, None, :, :] - cart[:, None, None, :]
        dist = np.sqrt(np.einsum("ijmx,ijmx->ijm", diff, diff))

        self_zero = np.zeros(dist.shape, dtype=bool)
        zero_off = (offs == 0).all(axis=1)
        self_zero[np.arange(n), np.arange(n), :] = zero_off[None, :]

        if np.any((dist < OVERLAP_DISTANCE) & ~self_zero):
            raise AtomicOverlapError("atomic overlap")

        in_range = (dist < r_c) & ~self_zero
        energy = 0.0
        forces = np.zeros((n, 3))
        ii, jj, mm = np.nonzero(in_range)
        if ii.size:
            r = dist[ii, jj, mm]
            sg = sig_ij[ii, jj]
            ep = eps_ij[ii, jj]
            # every directed pair appears once each way; halve the energy
            energy = 0.5 * float(np.sum(pair_energy(r, sg, ep, r_c)))
            fmag = _pair_deriv(r, sg, ep, r_c) / r  # dV/dr / r
            contrib = fmag[:, None] * diff[ii, jj, mm]
            np.add.at(forces, ii, contrib)

        self.stats.bump(1)
        return CalcResult(energy=energy, forces=forces, call_count_delta=1)


def load_species_params(path) -> dict:
    """Read a species parameter file.

    One species per non-comment line: `symbol sigma epsilon covalent_radius`
    (angstrom, eV, angstrom). Lines starting with # are ignored.
    """
    table = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'symbol sigma epsilon covalent_radius'")
            sym = parts[0]
            sigma, epsilon, r_cov = (float(x) for x in parts[1:])
            table[sym] = Species(sym, covalent_radius=r_cov,
                                 lj_sigma=sigma, lj_epsilon=epsilon)
    return table


def write_species_params(path, table: dict) -> None:
    with open(path, "w") as fh:
        fh.write("# symbol sigma(A) epsilon(eV) covalent_radius(A)\n")
        for sym in sorted(table):
            sp = table[sym]
            fh.write(f"{sym} {sp.lj_sigma} {sp.lj_epsilon} {sp.covalent_radius}\n")
