"""Periodic crystal structures: lattice math, neighbor lists, random generation.

Positions are stored in Cartesian angstroms and are not required to lie
inside the unit cell; fractional coordinates are always derived on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Lattice",
    "Species",
    "Structure",
    "NeighborList",
    "DegenerateLatticeError",
    "PackingInfeasibleError",
    "wrap_into_cell",
    "k_nearest",
    "min_periodic_distance",
    "random_structure",
    "DEFAULT_SPECIES",
]

MIN_VOLUME = 1e-6  # A^3


class DegenerateLatticeError(ValueError):
    pass


class PackingInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Lattice:
    """Row-matrix unit cell: rows are the lattice vectors a1, a2, a3 in angstroms."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"lattice matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("lattice matrix has non-finite entries")
        object.__setattr__(self, "matrix", m)
        det = float(np.linalg.det(m))
        if det <= MIN_VOLUME:
            raise DegenerateLatticeError(
                f"lattice must be right-handed with volume > {MIN_VOLUME} A^3 (det={det:g})"
            )

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def to_fractional(self, cart: np.ndarray) -> np.ndarray:
        return np.asarray(cart, dtype=float) @ self.inverse

    def to_cartesian(self, frac: np.ndarray) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.matrix

    def min_width(self) -> float:
        """Smallest distance between opposite faces of the cell.

        Any lattice translation m.L with |m|_inf = n has length >= n * min_width;
        this is the bound that terminates expanding-shell image searches.
        """
        m = self.matrix
        v = abs(self.volume)
        widths = [
            v / np.linalg.norm(np.cross(m[(i + 1) % 3], m[(i + 2) % 3]))
            for i in range(3)
        ]
        return float(min(widths))

    @staticmethod
    def from_parameters(a, b, c, alpha, beta, gamma) -> "Lattice":
        """Build a lattice from lengths (A) and angles (degrees).

        a1 is placed along x, a2 in the xy plane.
        """
        al, be, ga = np.radians([alpha, beta, gamma])
        cx = c * np.cos(be)
        cy = c * (np.cos(al) - np.cos(be) * np.cos(ga)) / np.sin(ga)
        cz_sq = c * c - cx * cx - cy * cy
        if cz_sq <= 0:
            raise DegenerateLatticeError("incompatible cell angles")
        rows = np.array(
            [
                [a, 0.0, 0.0],
                [b * np.cos(ga), b * np.sin(ga), 0.0],
                [cx, cy, np.sqrt(cz_sq)],
            ]
        )
        return Lattice(rows)


@dataclass(frozen=True)
class Species:
    symbol: str
    covalent_radius: float  # A
    lj_sigma: float  # A
    lj_epsilon: float  # eV

    def __post_init__(self):
        if self.covalent_radius <= 0 or self.lj_sigma <= 0 or self.lj_epsilon <= 0:
            raise ValueError(f"species {self.symbol}: all parameters must be positive")


# Repo constants: an argon-like species plus two synthetic ones for
# multi-species tests. Not fitted to anything.
DEFAULT_SPECIES = {
    "Ar": Species("Ar", covalent_radius=1.06, lj_sigma=3.40, lj_epsilon=0.0104),
    "Xa": Species("Xa", covalent_radius=0.80, lj_sigma=2.50, lj_epsilon=0.0200),
    "Xb": Species("Xb", covalent_radius=1.20, lj_sigma=3.00, lj_epsilon=0.0150),
}


@dataclass
class Structure:
    """A periodic structure: lattice, per-atom species, Cartesian positions (A)."""

    lattice: Lattice
    species: tuple  # tuple[Species, ...], the species table
    species_index: np.ndarray  # (N,) int, index into `species`
    positions: np.ndarray  # (N, 3) float, Cartesian A

    def __post_init__(self):
        self.species = tuple(self.species)
        self.species_index = np.asarray(self.species_index, dtype=int)
        self.positions = np.array(self.positions, dtype=float)
        n = len(self.species_index)
        if n < 1:
            raise ValueError("structure needs at least one atom")
        if self.positions.shape != (n, 3):
            raise ValueError(
                f"positions shape {self.positions.shape} != ({n}, 3)"
            )
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite atomic positions")
        if self.species_index.min() < 0 or self.species_index.max() >= len(self.species):
            raise ValueError("species_index out of range")

    def __len__(self) -> int:
        return len(self.species_index)

    @property
    def symbols(self) -> list:
        return [self.species[i].symbol for i in self.species_index]

    def atom_species(self, i: int) -> Species:
        return self.species[self.species_index[i]]

    def copy(self) -> "Structure":
        return Structure(self.lattice, self.species, self.species_index.copy(),
                         self.positions.copy())

    def with_positions(self, positions: np.ndarray) -> "Structure":
        return Structure(self.lattice, self.species, self.species_index.copy(),
                         positions)


@dataclass
class NeighborList:
    """Per-atom ordered k nearest periodic neighbors.

    neighbor_atom[i, m] is the index of the m-th closest atom (image) to atom i,
    rel_vec[i, m] the Cartesian vector from i to that image, dist[i, m] its length.
    Entries are ordered by (distance, image offset, atom index).
    """

    neighbor_atom: np.ndarray  # (N, k) int
    rel_vec: np.ndarray  # (N, k, 3) float
    dist: np.ndarray  # (N, k) float

    @property
    def k(self) -> int:
        return self.dist.shape[1]


def _shell_offsets(n: int) -> np.ndarray:
    """All integer (h, k, l) with max-norm exactly n, in lexicographic order."""
    rng = np.arange(-n, n + 1)
    grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    if n == 0:
        return grid
    mask = np.abs(grid).max(axis=1) == n
    return grid[mask]


def wrap_into_cell(s: Structure) -> Structure:
    """Return a copy with all fractional coordinates wrapped into [0, 1)."""
    frac = s.lattice.to_fractional(s.positions)
    frac -= np.floor(frac)
    # floor can round f=-1e-18 to frac=1.0 exactly; fold that back
    frac[frac >= 1.0] -= 1.0
    return s.with_positions(s.lattice.to_cartesian(frac))


def k_nearest(s: Structure, k: int) -> NeighborList:
    """k globally nearest periodic images of all atoms, per atom.

    The zero-distance self-image is excluded; self-images at lattice
    translations count as neighbors. Exact ties are broken by
    (distance, lexicographic image offset, atom index). The result does not
    depend on whether input positions are wrapped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n_atoms = len(s)
    lat = s.lattice
    w_min = lat.min_width()
    frac = lat.to_fractional(s.positions)
    frac -= np.floor(frac)
    frac[frac >= 1.0] -= 1.0
    cart = lat.to_cartesian(frac)

    cand_d2 = [[] for _ in range(n_atoms)]
    cand_vec = [[] for _ in range(n_atoms)]
    cand_off = [[] for _ in range(n_atoms)]
    cand_j = [[] for _ in range(n_atoms)]

    shell = 0
    while True:
        offs = _shell_offsets(shell)
        trans = offs @ lat.matrix  # (M, 3)
        # diff[i, j, m] = cart[j] + trans[m] - cart[i]
        diff = cart[None, :, None, :] + trans[None, None, :, :] - cart[:, None, None, :]
        d2 = np.einsum("ijmx,ijmx->ijm", diff, diff)
        for i in range(n_atoms):
            jj, mm = np.nonzero(np.ones_like(d2[i], dtype=bool))
            if shell == 0:
                # drop the zero-distance self-image (i itself at offset 0)
                sel = ~((jj == i) & (offs[mm] == 0).all(axis=1))
                jj, mm = jj[sel], mm[sel]
            cand_d2[i].append(d2[i][jj, mm])
            cand_vec[i].append(diff[i][jj, mm])
            cand_off[i].append(offs[mm])
            cand_j[i].append(jj)

        # entries from shells beyond `shell` are at distance >= shell * w_min
        have = min(sum(len(a) for a in cand_d2[i]) for i in range(n_atoms))
        if have >= k:
            bound = shell * w_min
            worst_kth = 0.0
            done = True
            for i in range(n_atoms):
                d = np.concatenate(cand_d2[i])
                kth = np.sqrt(np.partition(d, k - 1)[k - 1])
                worst_kth = max(worst_kth, kth)
                if kth > bound:
                    done = False
            if done:
                break
        shell += 1
        if shell > 200:  # pathological cell; should never trigger
            raise RuntimeError("neighbor search failed to converge")

    nbr = np.empty((n_atoms, k), dtype=int)
    vec = np.empty((n_atoms, k, 3))
    dst = np.empty((n_atoms, k))
    for i in range(n_atoms):
        d = np.sqrt(np.concatenate(cand_d2[i]))
        v = np.concatenate(cand_vec[i])
        o = np.concatenate(cand_off[i])
        j = np.concatenate(cand_j[i])
        order = np.lexsort((j, o[:, 2], o[:, 1], o[:, 0], d))[:k]
        nbr[i] = j[order]
        vec[i] = v[order]
        dst[i] = d[order]
    return NeighborList(neighbor_atom=nbr, rel_vec=vec, dist=dst)


def min_periodic_distance(s: Structure, i: int, j: int) -> float:
    """Minimum over periodic images of the i-j distance.

    For i == j the (0, 0, 0) image is excluded, so the result is the
    shortest self-image distance.
    """
    lat = s.lattice
    w_min = lat.min_width()
    dfrac = lat.to_fractional(s.positions[j] - s.positions[i])
    dfrac -= np.round(dfrac)
    best = np.inf
    shell = 0
    while True:
        offs = _shell_offsets(shell)
        vecs = (dfrac + offs) @ lat.matrix
        d = np.linalg.norm(vecs, axis=1)
        if i == j and shell == 0:
            d = d[~(offs == 0).all(axis=1)]
        if d.size:
            best = min(best, float(d.min()))
        # anything in shell n is at distance >= (n - 1) * w_min
        if best <= shell * w_min:
            return best
        shell += 1
        if shell > 200:
            raise RuntimeError("distance search failed to converge")


def _pairwise_min_dists_ok(lat: Lattice, frac_new: np.ndarray,
                           frac_placed: np.ndarray, min_dist: float,
                           offsets: np.ndarray) -> bool:
    if len(frac_placed) == 0:
        return True
    dfrac = frac_placed - frac_new
    dfrac -= np.round(dfrac)
    vecs = (dfrac[:, None, :] + offsets[None, :, :]) @ lat.matrix
    d = np.linalg.norm(vecs, axis=2)
    return bool(d.min() >= min_dist)


def _shortest_translation(lat: Lattice) -> float:
    offs = np.concatenate([_shell_offsets(1), _shell_offsets(2)])
    return float(np.linalg.norm(offs @ lat.matrix, axis=1).min())


def random_structure(species_counts: dict, target_volume: float, min_dist: float,
                     rng, species_table: dict | None = None,
                     max_attempts: int = 5000) -> Structure:
    """Generate a pseudo-random periodic structure.

    The cell volume is uniform in [0.95, 1.05] * target_volume; cell lengths are
    drawn uniform in [0.7, 1.3] times the cubic edge of the target volume and
    angles uniform in [60, 120] degrees before isotropic rescaling. Atoms are
    placed sequentially with rejection so that every periodic pair distance
    (self-images included) is at least min_dist.
    """
    if target_volume <= 0 or min_dist <= 0:
        raise ValueError("target_volume and min_dist must be positive")
    rng = np.random.default_rng(rng)
    table = dict(DEFAULT_SPECIES) if species_table is None else dict(species_table)

    symbols = sorted(species_counts)
    total = sum(species_counts[sym] for sym in symbols)
    if total < 1:
        raise ValueError("need at least one atom")
    species = tuple(table[sym] for sym in symbols)
    species_index = np.concatenate(
        [np.full(species_counts[sym], idx, dtype=int)
         for idx, sym in enumerate(symbols)]
    )

    volume = rng.uniform(0.95 * target_volume, 1.05 * target_volume)
    edge = target_volume ** (1.0 / 3.0)
    lat = None
    for _ in range(200):
        lengths = rng.uniform(0.7, 1.3, size=3) * edge
        angles = rng.uniform(60.0, 120.0, size=3)
        try:
            trial = Lattice.from_parameters(*lengths, *angles)
        except DegenerateLatticeError:
            continue
        scale = (volume / trial.volume) ** (1.0 / 3.0)
        trial = Lattice(trial.matrix * scale)
        if _shortest_translation(trial) >= min_dist:
            lat = trial
            break
    if lat is None:
        raise PackingInfeasibleError("packing infeasible")

    # enough image shells to see every pair within min_dist
    n_shell = int(np.ceil(min_dist / lat.min_width())) + 1
    offsets = np.concatenate([_shell_offsets(n) for n in range(n_shell + 1)])

    placed = np.empty((0, 3))
    for _ in range(total):
        ok = False
        for _ in range(max_attempts):
            frac = rng.uniform(0.0, 1.0, size=3)
            if _pairwise_min_dists_ok(lat, frac, placed, min_dist, offsets):
                placed = np.vstack([placed, frac])
                ok = True
                break
        if not ok:
            raise PackingInfeasibleError("packing infeasible")

    return Structure(lat, species, species_index, lat.to_cartesian(placed))
