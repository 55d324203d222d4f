"""Independent brute-force oracles used by the test suite.

Everything here deliberately avoids the library's own shell-expansion search:
neighbor lists and lattice sums are computed by exhaustive supercell
enumeration, forces by central finite differences of the energy.
"""

import numpy as np

from periopt.crystal import Structure
from periopt.potential import pair_energy


def supercell_offsets(reach):
    rng = np.arange(-reach, reach + 1)
    return np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)


def brute_force_neighbors(s: Structure, k: int, reach: int = 5):
    """k nearest periodic neighbors of every atom by exhaustive image scan.

    Ties broken by (distance, lexicographic image offset, atom index), on
    wrapped coordinates, matching the library convention.
    """
    lat = s.lattice
    frac = lat.to_fractional(s.positions)
    frac -= np.floor(frac)
    frac[frac >= 1.0] -= 1.0
    cart = lat.to_cartesian(frac)
    offs = supercell_offsets(reach)
    trans = offs @ lat.matrix
    n = len(s)
    nbr = np.empty((n, k), dtype=int)
    vec = np.empty((n, k, 3))
    dst = np.empty((n, k))
    for i in range(n):
        rows = []
        for j in range(n):
            diffs = cart[j] + trans - cart[i]
            ds = np.linalg.norm(diffs, axis=1)
            for m in range(len(offs)):
                if j == i and (offs[m] == 0).all():
                    continue
                rows.append((ds[m], tuple(offs[m]), j, diffs[m]))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for q in range(k):
            dst[i, q], _, nbr[i, q], vec[i, q] = rows[q]
    return nbr, vec, dst


def brute_force_min_distance(s: Structure, i: int, j: int, reach: int = 3):
    lat = s.lattice
    offs = supercell_offsets(reach)
    diffs = s.positions[j] + offs @ lat.matrix - s.positions[i]
    ds = np.linalg.norm(diffs, axis=1)
    if i == j:
        ds = ds[~(offs == 0).all(axis=1)]
    return float(ds.min())


def brute_force_lj_energy(s: Structure, r_c: float, reach: int = 4):
    """Direct image-sum of the force-shifted LJ energy over a supercell scan."""
    lat = s.lattice
    offs = supercell_offsets(reach)
    trans = offs @ lat.matrix
    sigma = np.array([sp.lj_sigma for sp in s.species])[s.species_index]
    eps = np.array([sp.lj_epsilon for sp in s.species])[s.species_index]
    n = len(s)
    energy = 0.0
    for i in range(n):
        for j in range(n):
            sg = 0.5 * (sigma[i] + sigma[j])
            ep = np.sqrt(eps[i] * eps[j])
            diffs = s.positions[j] + trans - s.positions[i]
            ds = np.linalg.norm(diffs, axis=1)
            for m in range(len(offs)):
                if j == i and (offs[m] == 0).all():
                    continue
                if ds[m] < r_c:
                    energy += 0.5 * pair_energy(ds[m], sg, ep, r_c)
    return energy


def finite_difference_forces(calc, s: Structure, h: float = 1e-4):
    """Central finite differences of the energy, one coordinate at a time."""
    n = len(s)
    forces = np.zeros((n, 3))
    for i in range(n):
        for ax in range(3):
            plus = s.positions.copy()
            plus[i, ax] += h
            minus = s.positions.copy()
            minus[i, ax] -= h
            ep = calc.evaluate(s.with_positions(plus)).energy
            em = calc.evaluate(s.with_positions(minus)).energy
            forces[i, ax] = -(ep - em) / (2.0 * h)
    return forces


def fcc_structure(species, a: float, reps=1):
    """Conventional FCC cell of one species, optionally replicated."""
    from periopt.crystal import Lattice

    base = np.array(
        [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]
    )
    if isinstance(reps, int):
        reps = (reps, reps, reps)
    cells = [
        (base + np.array([ix, iy, iz])) / np.array(reps)
        for ix in range(reps[0])
        for iy in range(reps[1])
        for iz in range(reps[2])
    ]
    frac = np.vstack(cells)
    lat = Lattice(np.diag([a * r for r in reps]))
    n = len(frac)
    return Structure(lat, (species,), np.zeros(n, dtype=int), frac @ lat.matrix)


class QuadraticCalculator:
    """Synthetic quadratic energy surface E = 1/2 (x - x*)' A (x - x*)."""

    def __init__(self, hessian, x_star):
        from periopt.potential import CalculatorStats

        self.hessian = np.asarray(hessian, dtype=float)
        self.x_star = np.asarray(x_star, dtype=float).ravel()
        self.stats = CalculatorStats()

    def evaluate(self, s):
        from periopt.potential import CalcResult

        dx = s.positions.ravel() - self.x_star
        grad = self.hessian @ dx
        self.stats.bump(1)
        return CalcResult(
            energy=0.5 * float(dx @ grad),
            forces=(-grad).reshape(-1, 3),
        )
