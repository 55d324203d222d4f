"""periopt: periodic crystal geometry optimization toolkit.

Classical geometry optimizers, a multi-agent RL optimizer trained with
soft actor-critic, a built-in periodic Lennard-Jones potential, an external
calculator bridge, and a benchmarking harness.
"""

__version__ = "0.1.0"

from .crystal import (
    DEFAULT_SPECIES,
    Lattice,
    NeighborList,
    Species,
    Structure,
    k_nearest,
    min_periodic_distance,
    random_structure,
    wrap_into_cell,
)
from .potential import CalcResult, Calculator, LennardJonesCalculator
