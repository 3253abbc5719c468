"""Coordinates of a labelled spin set from pairwise distances.

The solver follows the discretizable distance-geometry scheme: find a vertex
order in which every vertex after the third has at least three already placed
neighbours, fix the first three vertices canonically, and place each further
vertex on one of the (at most two) intersection points of three spheres.
Branches that violate a constraint are pruned. Solutions are unique up to a
rigid motion and a global reflection; duplicates are removed after optimal
superposition.

Internally lengths are in Angstrom; the public API uses meters.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from nanonmr2d.errors import InfeasibleOrderError, NoSolutionError
from nanonmr2d.inversion import bond_length_from_dipolar
from nanonmr2d.spins import ANGSTROM, DEFAULT_SPECIES, SpinSpecies

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e8
DEFAULT_TOLERANCE_FLOOR = 0.1 * ANGSTROM

Label = Hashable


# -----------------------------
# Models
# -----------------------------
@dataclass(frozen=True)
class DistanceConstraint:
    """Distance between spins ``i`` and ``j`` (meters) with an allowed deviation."""

    i: Label
    j: Label
    distance: float
    tolerance: float = 0.0

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ValueError("constraint endpoints must differ")
        if not self.distance > 0:
            raise ValueError("distance must be > 0")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")


@dataclass(frozen=True)
class CouplingFit:
    """A fitted dipolar constant ``d`` (Hz) for one labelled pair."""

    i: Label
    j: Label
    d: float
    sigma_d: float = 0.0
    species: tuple[SpinSpecies, SpinSpecies] = (DEFAULT_SPECIES["13C"], DEFAULT_SPECIES["13C"])


@dataclass(frozen=True, eq=False)
class Conformation:
    """One reconstructed conformation.

    Attributes:
        coordinates: Position per label, meters.
        constraint_rmse: RMS constraint violation, meters.
        rmsd_to_reference: Aligned RMSD to a reference, if one was given.
        flags: ``reflection_ambiguous`` always; ``ambiguous_placement`` when a
            sphere intersection was ill-conditioned without a fourth neighbour.
    """

    coordinates: Mapping[Label, tuple[float, float, float]]
    constraint_rmse: float = 0.0
    rmsd_to_reference: Optional[float] = None
    flags: tuple[str, ...] = field(default_factory=tuple)

    def array(self, labels: Sequence[Label]) -> npt.NDArray[np.float64]:
        return np.array([self.coordinates[label] for label in labels])


# -----------------------------
# Alignment
# -----------------------------
def kabsch_rmsd(a: npt.ArrayLike, b: npt.ArrayLike, allow_reflection: bool = True) -> float:
    """RMSD between two point sets after optimal rigid superposition.

    With ``allow_reflection`` the mirror image of ``b`` is also tried.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("point sets must both have shape (n, 3)")
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    # meter-scale inputs sit below any absolute tolerance, so compare in units of the extent
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    a = a / scale
    candidates = [b / scale]
    if allow_reflection:
        candidates.append(candidates[0] * np.array([1.0, 1.0, -1.0]))
    best = math.inf
    for c in candidates:
        if not np.any(a) or not np.any(c):
            # a collapsed set has no orientation to fit
            best = min(best, float(np.sqrt(np.mean(np.sum((a - c) ** 2, axis=1)))))
            continue
        rotation, _ = Rotation.align_vectors(a, c)
        best = min(best, float(np.sqrt(np.mean(np.sum((a - rotation.apply(c)) ** 2, axis=1)))))
    return best * scale


# -----------------------------
# Ordering
# -----------------------------
def _adjacency(constraints: Iterable[DistanceConstraint], labels: Sequence[Label]) -> dict[Label, set[Label]]:
    adj: dict[Label, set[Label]] = {label: set() for label in labels}
    for c in constraints:
        if c.i not in adj or c.j not in adj:
            raise ValueError(f"constraint ({c.i}, {c.j}) references an unknown label")
        adj[c.i].add(c.j)
        adj[c.j].add(c.i)
    return adj


def dmdgp_order(constraints: Sequence[DistanceConstraint], labels: Sequence[Label]) -> list[Label]:
    """A vertex order in which every vertex after the third has >= 3 placed neighbours.

    The first three vertices are the lexicographically smallest triangle; each
    next vertex is the smallest label with three placed neighbours.

    Raises:
        InfeasibleOrderError: Naming the first vertex that cannot be placed.
    """
    ordered = sorted(labels)
    if len(set(ordered)) != len(ordered):
        raise ValueError("labels must be unique")
    adj = _adjacency(constraints, ordered)
    if len(ordered) <= 2:
        if len(ordered) == 2 and ordered[1] not in adj[ordered[0]]:
            raise InfeasibleOrderError(ordered[1])
        return ordered
    triangle = next(
        (
            [a, b, c]
            for ia, a in enumerate(ordered)
            for ib, b in enumerate(ordered[ia + 1 :], ia + 1)
            if b in adj[a]
            for c in ordered[ib + 1 :]
            if c in adj[a] and c in adj[b]
        ),
        None,
    )
    if triangle is None:
        edge = next(([a, b] for a in ordered for b in ordered if a < b and b in adj[a]), ordered[:1])
        raise InfeasibleOrderError(next(label for label in ordered if label not in edge))
    order = list(triangle)
    placed = set(order)
    while len(order) < len(ordered):
        nxt = next((v for v in ordered if v not in placed and len(adj[v] & placed) >= 3), None)
        if nxt is None:
            raise InfeasibleOrderError(next(v for v in ordered if v not in placed))
        order.append(nxt)
        placed.add(nxt)
    return order


# -----------------------------
# Branch and prune
# -----------------------------
class _Problem:
    """Distances in Angstrom keyed by label pair."""

    def __init__(self, constraints: Sequence[DistanceConstraint], tolerance: float) -> None:
        self.global_tol = tolerance / ANGSTROM
        self.pairs: dict[tuple[Label, Label], tuple[float, float]] = {}
        for c in constraints:
            entry = (c.distance / ANGSTROM, max(c.tolerance / ANGSTROM, self.global_tol))
            self.pairs[(c.i, c.j)] = entry
            self.pairs[(c.j, c.i)] = entry

    def known(self, v: Label, placed: Sequence[Label]) -> list[Label]:
        return [u for u in placed if (v, u) in self.pairs]

    def violation(self, coords: Mapping[Label, npt.NDArray[np.float64]], v: Label) -> float:
        """Largest excess over tolerance for constraints between ``v`` and placed vertices."""
        worst = 0.0
        for u, pos in coords.items():
            if u == v or (v, u) not in self.pairs:
                continue
            d, tol = self.pairs[(v, u)]
            worst = max(worst, abs(float(np.linalg.norm(coords[v] - pos)) - d) - tol)
        return worst


def _trilaterate(
    refs: Sequence[npt.NDArray[np.float64]], radii: Sequence[float]
) -> tuple[list[npt.NDArray[np.float64]], bool]:
    """Sphere intersections; second value tells whether the references are ill-conditioned.

    Spheres that miss each other yield their closest point; the caller's
    refinement and pruning decide whether it is acceptable.
    """
    p1, p2, p3 = refs
    basis = np.vstack([p2 - p1, p3 - p1])
    sv = np.linalg.svd(basis, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > CONDITION_LIMIT:
        return [], True
    d = float(np.linalg.norm(p2 - p1))
    ex = (p2 - p1) / d
    i = float(ex @ (p3 - p1))
    ey = p3 - p1 - i * ex
    ey /= np.linalg.norm(ey)
    ez = np.cross(ex, ey)
    j = float(ey @ (p3 - p1))
    r1, r2, r3 = radii
    x = (r1**2 - r2**2 + d**2) / (2 * d)
    y = (r1**2 - r3**2 + i**2 + j**2) / (2 * j) - i * x / j
    z2 = max(r1**2 - x**2 - y**2, 0.0)
    base = p1 + x * ex + y * ey
    z = math.sqrt(z2)
    if z == 0.0:
        return [base], False
    return [base + z * ez, base - z * ez], False


def _multilaterate(refs: Sequence[npt.NDArray[np.float64]], radii: Sequence[float]) -> npt.NDArray[np.float64]:
    """Linearized least-squares position from four or more spheres."""
    p0, r0 = refs[0], radii[0]
    a = np.array([2 * (p - p0) for p in refs[1:]])
    b = np.array([r0**2 - r**2 + p @ p - p0 @ p0 for p, r in zip(refs[1:], radii[1:])])
    return np.linalg.lstsq(a, b, rcond=None)[0]


def _refine_vertex(
    problem: _Problem, coords: Mapping[Label, npt.NDArray[np.float64]], v: Label, start: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    neighbours = problem.known(v, [u for u in coords if u != v])
    if len(neighbours) < 3:
        return start
    pos = np.array([coords[u] for u in neighbours])
    targets = np.array([problem.pairs[(v, u)] for u in neighbours])

    def fn(x: np.ndarray) -> np.ndarray:
        return (np.linalg.norm(pos - x, axis=1) - targets[:, 0]) / targets[:, 1]

    return least_squares(fn, start).x


def _best_triple(state: Mapping[Label, npt.NDArray[np.float64]], known: Sequence[Label]) -> list[Label]:
    """The placed neighbours spanning the largest triangle, among the latest eight."""
    pool = list(known[-8:])
    return list(
        max(
            itertools.combinations(pool, 3),
            key=lambda t: float(np.linalg.norm(np.cross(state[t[1]] - state[t[0]], state[t[2]] - state[t[0]]))),
        )
    )


def _canonical_start(problem: _Problem, order: Sequence[Label]) -> dict[Label, npt.NDArray[np.float64]]:
    coords: dict[Label, npt.NDArray[np.float64]] = {order[0]: np.zeros(3)}
    if len(order) > 1:
        if (order[0], order[1]) not in problem.pairs:
            raise ValueError("first two vertices of the order must share a constraint")
        coords[order[1]] = np.array([problem.pairs[(order[0], order[1])][0], 0.0, 0.0])
    if len(order) > 2:
        try:
            d01 = problem.pairs[(order[0], order[1])][0]
            d02 = problem.pairs[(order[0], order[2])][0]
            d12 = problem.pairs[(order[1], order[2])][0]
        except KeyError:
            raise ValueError("first three vertices of the order must form a triangle") from None
        x = (d01**2 + d02**2 - d12**2) / (2 * d01)
        y2 = d02**2 - x**2
        slack = problem.pairs[(order[1], order[2])][1]
        if y2 < 0 and math.sqrt(-y2) > slack:
            raise NoSolutionError("first three distances violate the triangle inequality")
        coords[order[2]] = np.array([x, math.sqrt(max(y2, 0.0)), 0.0])
    return coords


def _refine_all(problem: _Problem, order: Sequence[Label], coords: Mapping[Label, npt.NDArray[np.float64]]):
    """Weighted least-squares polish of every vertex in ``order`` over the constraints among them."""
    index = {label: k for k, label in enumerate(order)}
    edges = [
        (index[a], index[b], d, tol)
        for (a, b), (d, tol) in problem.pairs.items()
        if a in index and b in index and index[a] < index[b]
    ]
    if not edges:
        return dict(coords)
    e = np.array(edges)
    ia, ib = e[:, 0].astype(int), e[:, 1].astype(int)

    def fn(x: np.ndarray) -> np.ndarray:
        p = x.reshape(-1, 3)
        return (np.linalg.norm(p[ia] - p[ib], axis=1) - e[:, 2]) / e[:, 3]

    x0 = np.concatenate([coords[label] for label in order])
    x = least_squares(fn, x0).x.reshape(-1, 3)
    return {label: x[k] for k, label in enumerate(order)}


def _rmse(problem: _Problem, coords: Mapping[Label, npt.NDArray[np.float64]]) -> float:
    errs = [
        float(np.linalg.norm(coords[a] - coords[b])) - d for (a, b), (d, _) in problem.pairs.items() if a in coords and b in coords
    ]
    return float(np.sqrt(np.mean(np.square(errs)))) if errs else 0.0


def branch_and_prune(
    constraints: Sequence[DistanceConstraint],
    order: Sequence[Label],
    tolerance: float = DEFAULT_TOLERANCE_FLOOR,
    reference: Optional[Mapping[Label, Sequence[float]]] = None,
    max_branches: int = 4096,
) -> list[Conformation]:
    """All conformations consistent with ``constraints`` modulo rigid motion and reflection.

    Args:
        constraints: Pairwise distances in meters.
        order: Output of ``dmdgp_order``.
        tolerance: Global pruning tolerance (meters); each constraint uses the
            larger of its own tolerance and this one.
        reference: Optional ground truth, used to fill ``rmsd_to_reference``.
        max_branches: Cap on complete leaves explored.

    Raises:
        NoSolutionError: If every branch is pruned.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    problem = _Problem(constraints, tolerance)
    labels = list(order)
    coords = _canonical_start(problem, labels)
    if max(problem.violation(coords, v) for v in coords) > 0:
        raise NoSolutionError("initial triangle violates its constraints")

    leaves: list[tuple[dict[Label, npt.NDArray[np.float64]], bool]] = []

    def extend(state: dict[Label, npt.NDArray[np.float64]], k: int, ambiguous: bool) -> None:
        if len(leaves) >= max_branches:
            return
        if k == len(labels):
            leaves.append((state, ambiguous))
            return
        v = labels[k]
        known = problem.known(v, labels[:k])
        if len(known) < 3:
            raise InfeasibleOrderError(v)
        refs = _best_triple(state, known)
        radii = [problem.pairs[(v, u)][0] for u in refs]
        candidates, ill = _trilaterate([state[u] for u in refs], radii)
        if ill:
            if len(known) >= 4:
                candidates = [_multilaterate([state[u] for u in known], [problem.pairs[(v, u)][0] for u in known])]
            else:
                ambiguous = True
                candidates = _trilaterate([state[u] + 1e-6 * np.eye(3)[n] for n, u in enumerate(refs)], radii)[0]
        placed = labels[: k + 1]
        tried: list[npt.NDArray[np.float64]] = []
        for point in candidates:
            refined = _refine_vertex(problem, state, v, point)
            # both branches can relax onto the same point
            if any(np.linalg.norm(refined - t) < 1e-3 * problem.global_tol for t in tried):
                continue
            tried.append(refined)
            nxt = dict(state)
            nxt[v] = refined
            if problem.violation(nxt, v) > 0:
                # errors from earlier placements accumulate; relax the whole partial structure once
                nxt = _refine_all(problem, placed, nxt)
                if max(problem.violation(nxt, u) for u in placed) > 0:
                    continue
            extend(nxt, k + 1, ambiguous)

    extend(coords, min(3, len(labels)), False)

    solutions: list[tuple[float, dict[Label, npt.NDArray[np.float64]], bool]] = []
    for leaf, ambiguous in leaves:
        refined = _refine_all(problem, labels, leaf)
        if max((problem.violation(refined, v) for v in labels), default=0.0) > 1e-9:
            # least squares can trade one constraint against the rest; the pruned leaf is feasible
            if max((problem.violation(leaf, v) for v in labels), default=0.0) > 1e-9:
                continue
            refined = leaf
        solutions.append((_rmse(problem, refined), refined, ambiguous))
    if not solutions:
        raise NoSolutionError(f"no conformation satisfies the constraints within {tolerance / ANGSTROM:.3f} A")

    solutions.sort(key=lambda s: (s[0], tuple(np.round(np.concatenate([s[1][v] for v in labels]), 9))))
    unique: list[tuple[float, dict[Label, npt.NDArray[np.float64]], bool]] = []
    for sol in solutions:
        arr = np.array([sol[1][v] for v in labels])
        if all(kabsch_rmsd(np.array([u[1][v] for v in labels]), arr) >= problem.global_tol for u in unique):
            unique.append(sol)

    ref = None if reference is None else np.array([reference[v] for v in labels], dtype=float)
    result = []
    for rmse, sol, ambiguous in unique:
        arr = np.array([sol[v] for v in labels]) * ANGSTROM
        flags = ("reflection_ambiguous",) + (("ambiguous_placement",) if ambiguous else ())
        result.append(
            Conformation(
                coordinates={v: tuple(float(c) for c in arr[k]) for k, v in enumerate(labels)},
                constraint_rmse=rmse * ANGSTROM,
                rmsd_to_reference=None if ref is None else kabsch_rmsd(ref, arr),
                flags=flags,
            )
        )
    logger.info("branch and prune: %d leaves, %d solution classes", len(leaves), len(result))
    return result


# -----------------------------
# Couplings and test data
# -----------------------------
def couplings_to_distances(
    fits: Sequence[CouplingFit], tolerance_floor: float = DEFAULT_TOLERANCE_FLOOR
) -> list[DistanceConstraint]:
    """Distance constraints from fitted dipolar constants.

    Tolerance is the propagated ``sigma_r = r sigma_d / (3 d)``, floored at
    ``tolerance_floor`` (meters).

    Raises:
        ValueError: If a fitted ``d`` is not positive.
    """
    out = []
    for fit in fits:
        r, sigma_r = bond_length_from_dipolar(fit.d, fit.species, fit.sigma_d)
        out.append(DistanceConstraint(fit.i, fit.j, r, max(sigma_r, tolerance_floor)))
    return out


def noisy_distances(
    coordinates: Mapping[Label, Sequence[float]],
    sigma: float,
    seed: int = 0,
    tolerance: Optional[float] = None,
) -> list[DistanceConstraint]:
    """All pairwise distances with Gaussian noise ``sigma`` (meters).

    Tolerance defaults to ``3 sigma`` (or the 0.1 Angstrom floor if larger).
    """
    labels = sorted(coordinates)
    rng = np.random.default_rng(seed)
    tol = max(3.0 * sigma, DEFAULT_TOLERANCE_FLOOR) if tolerance is None else tolerance
    out = []
    for a_idx, a in enumerate(labels):
        for b in labels[a_idx + 1 :]:
            d = float(np.linalg.norm(np.asarray(coordinates[a], dtype=float) - np.asarray(coordinates[b], dtype=float)))
            noisy = d + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
            out.append(DistanceConstraint(a, b, max(noisy, 1e-3 * d), tol))
    return out


def conformation_to_xyz(conformation: Conformation, symbols: Optional[Mapping[Label, str]] = None, comment: str = "") -> str:
    """Minimal xyz block (Angstrom) for external viewers.

    The first column is the bare element (``13C`` is written as ``C``); the
    spin label follows the coordinates as a trailing column.
    """
    lines = [str(len(conformation.coordinates)), comment]
    for label, pos in conformation.coordinates.items():
        symbol = symbols.get(label, "X") if symbols else "X"
        element = symbol.lstrip("0123456789") or "X"
        x, y, z = (c / ANGSTROM for c in pos)
        lines.append(f"{element} {x:.6f} {y:.6f} {z:.6f} {label}")
    return "\n".join(lines) + "\n"
