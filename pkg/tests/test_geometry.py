"""Tests for nanonmr2d.geometry: superposition, ordering and branch-and-prune."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from nanonmr2d.errors import InfeasibleOrderError, NoSolutionError
from nanonmr2d.geometry import (
    Conformation,
    CouplingFit,
    DistanceConstraint,
    branch_and_prune,
    conformation_to_xyz,
    couplings_to_distances,
    dmdgp_order,
    kabsch_rmsd,
    noisy_distances,
)
from nanonmr2d.spins import ANGSTROM

TETRAHEDRON = {
    0: np.array([0.0, 0.0, 0.0]) * ANGSTROM,
    1: np.array([1.5, 0.0, 0.0]) * ANGSTROM,
    2: np.array([0.4, 1.4, 0.0]) * ANGSTROM,
    3: np.array([0.5, 0.6, 1.2]) * ANGSTROM,
}


def _cluster(n: int, seed: int = 11) -> dict[int, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {k: rng.uniform(0.0, 6.0, 3) * ANGSTROM for k in range(n)}


def _fragment(n: int, seed: int, half_width: float = 6.0, min_separation: float = 1.4) -> dict[int, np.ndarray]:
    """Uniform points in a +-half_width Angstrom box, no two closer than min_separation."""
    rng = np.random.default_rng(seed)
    points: list[np.ndarray] = []
    while len(points) < n:
        p = rng.uniform(-half_width, half_width, 3)
        if all(np.linalg.norm(p - q) >= min_separation for q in points):
            points.append(p)
    return {k: p * ANGSTROM for k, p in enumerate(points)}


# -----------------------------
# Alignment
# -----------------------------
def test_kabsch_rmsd_ignores_rigid_motion() -> None:
    """A rotated and shifted copy superposes exactly."""
    a = np.array(list(TETRAHEDRON.values()))
    b = Rotation.from_euler("zyx", [0.3, -1.1, 2.0]).apply(a) + 4.0 * ANGSTROM
    assert kabsch_rmsd(a, b) == pytest.approx(0.0, abs=1e-15)


def test_kabsch_rmsd_reflection_switch() -> None:
    """A mirror image matches only when reflections are allowed."""
    a = np.array(list(TETRAHEDRON.values()))
    mirrored = a * np.array([-1.0, 1.0, 1.0])
    assert kabsch_rmsd(a, mirrored) == pytest.approx(0.0, abs=1e-15)
    assert kabsch_rmsd(a, mirrored, allow_reflection=False) > 0.05 * ANGSTROM


def test_kabsch_rmsd_in_meters() -> None:
    """Angstrom-sized sets given in meters are compared, not treated as zero."""
    a = np.array(list(TETRAHEDRON.values()))
    assert kabsch_rmsd(a, 3.0 * a) > 0.5 * ANGSTROM
    shifted = a.copy()
    shifted[3] += np.array([0.0, 0.0, 0.4]) * ANGSTROM
    assert 0.05 * ANGSTROM < kabsch_rmsd(a, shifted) < 0.4 * ANGSTROM


def test_kabsch_rmsd_of_collapsed_set() -> None:
    """A set collapsed to one point is as far as its partner's spread."""
    a = np.array(list(TETRAHEDRON.values()))
    centred = a - a.mean(axis=0)
    expected = np.sqrt(np.mean(np.sum(centred**2, axis=1)))
    assert kabsch_rmsd(a, np.zeros_like(a)) == pytest.approx(expected)
    assert kabsch_rmsd(np.zeros((4, 3)), np.zeros((4, 3))) == 0.0


def test_kabsch_rmsd_shape_mismatch() -> None:
    """Point sets of different shape are rejected."""
    with pytest.raises(ValueError, match="shape"):
        kabsch_rmsd(np.zeros((3, 3)), np.zeros((4, 3)))


def test_distance_constraint_validation() -> None:
    """Self-loops and non-positive distances raise ValueError."""
    with pytest.raises(ValueError, match="differ"):
        DistanceConstraint(1, 1, 1e-10)
    with pytest.raises(ValueError, match="distance"):
        DistanceConstraint(0, 1, 0.0)


# -----------------------------
# Ordering
# -----------------------------
def test_dmdgp_order_starts_with_smallest_triangle() -> None:
    """A complete graph is ordered by label."""
    constraints = noisy_distances(_cluster(5), sigma=0.0)
    assert dmdgp_order(constraints, list(range(5))) == [0, 1, 2, 3, 4]


def test_dmdgp_order_names_unplaceable_vertex() -> None:
    """A vertex with a single neighbour cannot be ordered."""
    constraints = [
        DistanceConstraint(0, 1, 2e-10),
        DistanceConstraint(0, 2, 2e-10),
        DistanceConstraint(1, 2, 2e-10),
        DistanceConstraint(0, 3, 2e-10),
    ]
    with pytest.raises(InfeasibleOrderError) as info:
        dmdgp_order(constraints, [0, 1, 2, 3])
    assert info.value.vertex == 3


def test_dmdgp_order_without_triangle() -> None:
    """A path graph has no starting triangle."""
    constraints = [DistanceConstraint(0, 1, 2e-10), DistanceConstraint(1, 2, 2e-10)]
    with pytest.raises(InfeasibleOrderError) as info:
        dmdgp_order(constraints, [0, 1, 2])
    assert info.value.vertex == 2


def test_dmdgp_order_unknown_label() -> None:
    """Constraints on labels outside the set are rejected."""
    with pytest.raises(ValueError, match="unknown label"):
        dmdgp_order([DistanceConstraint(0, 9, 2e-10)], [0, 1, 2])


# -----------------------------
# Branch and prune
# -----------------------------
def test_exact_tetrahedron_has_one_solution_class() -> None:
    """Exact distances give the reference up to reflection."""
    constraints = noisy_distances(TETRAHEDRON, sigma=0.0)
    order = dmdgp_order(constraints, list(TETRAHEDRON))
    result = branch_and_prune(constraints, order, reference=TETRAHEDRON)
    assert len(result) == 1
    assert result[0].rmsd_to_reference == pytest.approx(0.0, abs=1e-4 * ANGSTROM)
    assert result[0].constraint_rmse == pytest.approx(0.0, abs=1e-4 * ANGSTROM)
    assert "reflection_ambiguous" in result[0].flags


def test_noisy_cluster_is_recovered() -> None:
    """Small distance noise keeps the best conformation close to the reference."""
    cluster = _cluster(6)
    constraints = noisy_distances(cluster, sigma=0.05 * ANGSTROM, seed=2, tolerance=0.3 * ANGSTROM)
    order = dmdgp_order(constraints, list(cluster))
    result = branch_and_prune(constraints, order, tolerance=0.3 * ANGSTROM, reference=cluster)
    assert result
    assert min(c.rmsd_to_reference for c in result) < 0.3 * ANGSTROM


@pytest.mark.parametrize("seed", range(20))
def test_noisy_ten_label_fragment(seed: int) -> None:
    """With 0.3 A distance noise a 10-spin fragment comes back within 1 A aligned RMSD."""
    fragment = _fragment(10, seed=100 + seed)
    constraints = noisy_distances(fragment, sigma=0.3 * ANGSTROM, seed=seed)
    order = dmdgp_order(constraints, list(fragment))
    result = branch_and_prune(constraints, order, reference=fragment)
    assert result
    assert min(c.rmsd_to_reference for c in result) <= 1.0 * ANGSTROM


def test_inconsistent_distances_have_no_solution() -> None:
    """A distance longer than any path through the triangle is pruned."""
    constraints = [
        DistanceConstraint(0, 1, 2e-10),
        DistanceConstraint(0, 2, 2e-10),
        DistanceConstraint(1, 2, 2e-10),
        DistanceConstraint(0, 3, 2e-10),
        DistanceConstraint(1, 3, 2e-10),
        DistanceConstraint(2, 3, 5e-10),
    ]
    order = dmdgp_order(constraints, [0, 1, 2, 3])
    with pytest.raises(NoSolutionError):
        branch_and_prune(constraints, order)


def test_branch_and_prune_rejects_zero_tolerance() -> None:
    """Tolerance must be positive."""
    constraints = noisy_distances(TETRAHEDRON, sigma=0.0)
    with pytest.raises(ValueError, match="tolerance"):
        branch_and_prune(constraints, [0, 1, 2, 3], tolerance=0.0)


# -----------------------------
# Couplings and test data
# -----------------------------
def test_couplings_to_distances_uses_floor() -> None:
    """A 13C pair coupling maps to the C-C bond with at least the floor tolerance."""
    (constraint,) = couplings_to_distances([CouplingFit("a", "b", 2063.0)])
    assert constraint.distance == pytest.approx(1.544 * ANGSTROM, rel=1e-3)
    assert constraint.tolerance == pytest.approx(0.1 * ANGSTROM)


def test_couplings_to_distances_propagates_sigma() -> None:
    """A large sigma_d widens the tolerance beyond the floor."""
    (constraint,) = couplings_to_distances([CouplingFit(0, 1, 2063.0, sigma_d=600.0)])
    assert constraint.tolerance == pytest.approx(constraint.distance * 600.0 / (3 * 2063.0))


def test_noisy_distances_are_seeded() -> None:
    """Equal seeds give equal constraints, one per pair."""
    a = noisy_distances(TETRAHEDRON, sigma=0.1 * ANGSTROM, seed=5)
    b = noisy_distances(TETRAHEDRON, sigma=0.1 * ANGSTROM, seed=5)
    assert a == b
    assert len(a) == 6
    assert a[0].tolerance == pytest.approx(0.3 * ANGSTROM)


def test_conformation_to_xyz() -> None:
    """The xyz block lists the bare element, Angstrom coordinates and the label."""
    conf = Conformation({0: (0.0, 0.0, 0.0), 1: (1.5 * ANGSTROM, 0.0, 0.0)})
    text = conformation_to_xyz(conf, {0: "13C"}, comment="pair")
    assert text.splitlines() == ["2", "pair", "C 0.000000 0.000000 0.000000 0", "X 1.500000 0.000000 0.000000 1"]
