"""Diamond lattice sites around an NV center and their C3v orbits.

Sites are stored as integer crystal coordinates in units of a quarter of the
cubic lattice constant. The vacancy sits at the origin and the nitrogen at
``(1, 1, 1)``, so the NV axis is the crystal ``[111]`` direction. Positions
returned in meters are expressed in the NV frame (rows of ``NV_FRAME``).

The six permutations of the crystal coordinates fix the ``[111]`` axis and
map the lattice onto itself; they are the C3v operations used to group
equivalent site sets.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from itertools import permutations
from typing import Optional

import numpy as np
import numpy.typing as npt
from scipy.spatial import cKDTree

from nanonmr2d.spins import ANGSTROM, POINT_DIPOLE_FLOOR

logger = logging.getLogger(__name__)

LATTICE_CONSTANT = 3.567 * ANGSTROM
QUARTER = LATTICE_CONSTANT / 4.0
MAX_RADIUS = 3e-9
NITROGEN_SITE = (1, 1, 1)

Site = tuple[int, int, int]

_EX = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
_EZ = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
NV_FRAME = np.vstack([_EX, np.cross(_EZ, _EX), _EZ])

C3V_PERMUTATIONS = tuple(permutations(range(3)))


def is_lattice_site(site: Sequence[int]) -> bool:
    """Diamond = FCC sublattice A plus A shifted by ``(1, 1, 1)``."""
    n = np.asarray(site, dtype=int)
    if np.all(n % 2 == 0):
        return int(n.sum()) % 4 == 0
    m = n - 1
    return bool(np.all(m % 2 == 0) and int(m.sum()) % 4 == 0)


def site_positions(sites: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """NV-frame positions (meters) of crystal-coordinate sites, shape ``(k, 3)``."""
    return (np.asarray(sites, dtype=float).reshape(-1, 3) * QUARTER) @ NV_FRAME.T


def enumerate_sites(radius: float, min_distance: float = POINT_DIPOLE_FLOOR) -> npt.NDArray[np.int64]:
    """All carbon sites with ``min_distance <= |r| <= radius`` from the vacancy.

    The vacancy and nitrogen sites are excluded. Sites are returned in
    lexicographic order of their crystal coordinates.

    Raises:
        ValueError: If ``radius`` is not in ``(0, 3 nm]``.
    """
    if not 0 < radius <= MAX_RADIUS:
        raise ValueError("radius must lie in (0, 3 nm]")
    m = math.ceil(radius / QUARTER)
    axis = np.arange(-m, m + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    even = np.all(grid % 2 == 0, axis=1) & (grid.sum(axis=1) % 4 == 0)
    shifted = grid - 1
    odd = np.all(shifted % 2 == 0, axis=1) & (shifted.sum(axis=1) % 4 == 0)
    sites = grid[even | odd]
    dist = np.linalg.norm(sites * QUARTER, axis=1)
    keep = (dist >= min_distance) & (dist <= radius)
    keep &= ~np.all(sites == NITROGEN_SITE, axis=1)
    sites = sites[keep]
    order = np.lexsort(sites.T[::-1])
    logger.debug("enumerated %d sites within %.2f nm", len(sites), radius * 1e9)
    return sites[order]


def site_pairs(sites: npt.NDArray[np.int64], max_distance: Optional[float] = None) -> npt.NDArray[np.int64]:
    """Index pairs ``(i, j)``, ``i < j``, one per row in lexicographic order.

    ``None`` keeps every pair; otherwise only sites no farther apart than
    ``max_distance`` are paired.
    """
    if max_distance is None:
        i, j = np.triu_indices(len(sites), k=1)
        return np.column_stack([i, j]).astype(np.int64)
    tree = cKDTree(site_positions(sites))
    pairs = tree.query_pairs(max_distance * (1 + 1e-12), output_type="ndarray")
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.int64)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))].astype(np.int64)


def apply_permutation(site: Sequence[int], perm: Sequence[int]) -> Site:
    return (int(site[perm[0]]), int(site[perm[1]]), int(site[perm[2]]))


def orbit(sites: Iterable[Sequence[int]]) -> list[tuple[Site, ...]]:
    """Distinct images of a site set under C3v, each sorted."""
    sites = [tuple(int(c) for c in s) for s in sites]
    images = {tuple(sorted(apply_permutation(s, p) for s in sites)) for p in C3V_PERMUTATIONS}
    return sorted(images)


def class_key(sites: Iterable[Sequence[int]]) -> tuple[Site, ...]:
    """Canonical representative of the C3v orbit of a site set."""
    return orbit(sites)[0]
