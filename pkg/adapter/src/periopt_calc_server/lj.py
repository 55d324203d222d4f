"""Self-contained force-shifted Lennard-Jones backend.

Deliberately written as plain scalar loops with the standard library only, so
it is an independent cross-check of any vectorized client-side implementation
sharing the same conventions: Lorentz-Berthelot mixing, force-shifted energy
(zero value and zero slope at the cutoff), cutoff 2.5x the largest sigma
present, energies in eV and forces in eV/A.
"""

import math

# symbol -> (sigma A, epsilon eV)
SPECIES = {
    "Ar": (3.40, 0.0104),
    "Xa": (2.50, 0.02),
    "Xb": (3.00, 0.015),
}

CUTOFF_FACTOR = 2.5
OVERLAP_DISTANCE = 1e-6


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _pair(r, sigma, epsilon, r_c):
    """Force-shifted LJ energy and its radial derivative at distance r."""
    def v(x):
        s6 = (sigma / x) ** 6
        return 4.0 * epsilon * (s6 * s6 - s6)

    def dv(x):
        s6 = (sigma / x) ** 6
        return 4.0 * epsilon * (-12.0 * s6 * s6 + 6.0 * s6) / x

    e = v(r) - v(r_c) - (r - r_c) * dv(r_c)
    de = dv(r) - dv(r_c)
    return e, de


def evaluate(lattice, symbols, positions):
    """Energy and forces for one periodic configuration.

    lattice: 9 floats, row-major lattice vectors; positions: 3N floats.
    Returns (energy, forces list of 3N floats).
    """
    n = len(symbols)
    if len(positions) != 3 * n:
        raise ValueError("positions must hold 3 numbers per atom")
    rows = [tuple(lattice[3 * i:3 * i + 3]) for i in range(3)]
    volume = _dot(rows[0], _cross(rows[1], rows[2]))
    if abs(volume) < 1e-9:
        raise ValueError("degenerate lattice")

    params = []
    for sym in symbols:
        if sym not in SPECIES:
            raise ValueError(f"unknown species {sym!r}")
        params.append(SPECIES[sym])
    r_c = CUTOFF_FACTOR * max(p[0] for p in params)

    # how many periodic repeats can fall inside the cutoff along each axis
    reach = []
    for i in range(3):
        face = _cross(rows[(i + 1) % 3], rows[(i + 2) % 3])
        height = abs(volume) / math.sqrt(_dot(face, face))
        reach.append(int(math.ceil(r_c / height)) + 1)

    pos = [tuple(positions[3 * i:3 * i + 3]) for i in range(n)]
    energy = 0.0
    forces = [[0.0, 0.0, 0.0] for _ in range(n)]
    for i in range(n):
        si, ei = params[i]
        for j in range(n):
            sij = 0.5 * (si + params[j][0])
            eij = math.sqrt(ei * params[j][1])
            for ha in range(-reach[0], reach[0] + 1):
                for hb in range(-reach[1], reach[1] + 1):
                    for hc in range(-reach[2], reach[2] + 1):
                        if i == j and ha == 0 and hb == 0 and hc == 0:
                            continue
                        dx = [
                            pos[j][q] - pos[i][q]
                            + ha * rows[0][q] + hb * rows[1][q]
                            + hc * rows[2][q]
                            for q in range(3)
                        ]
                        r = math.sqrt(dx[0] ** 2 + dx[1] ** 2 + dx[2] ** 2)
                        if r < OVERLAP_DISTANCE:
                            raise ValueError("atomic overlap")
                        if r >= r_c:
                            continue
                        e, de = _pair(r, sij, eij, r_c)
                        energy += 0.5 * e
                        for q in range(3):
                            # F_i = dV/dr * (r_j - r_i)/r
                            forces[i][q] += de * dx[q] / r
    flat = [c for row in forces for c in row]
    return energy, flat
