"""Recover couplings and structure from picked peaks.

- ``estimate_hyperfine``: assign lines to the ``m_s=0`` or ``m_s=-1``
  manifold by their distance to the Larmor frequency.
- ``estimate_jzz_fit``: fit A_par (and optionally A_perp) of two spins plus
  their secular coupling to measured line positions by exact
  diagonalization, with a profile-likelihood uncertainty on the coupling.
- ``bond_length_from_dipolar``: invert the point-dipole constant.
- ``lattice_search``: rank diamond-lattice site pairs against the estimates
  and group them into C3v classes.
- ``fit_dipolar_tensor``: coupling constant and pair axis from a sweep of the
  field polar angle.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np
import numpy.typing as npt
from scipy.optimize import least_squares

from nanonmr2d import lattice
from nanonmr2d.errors import AmbiguousAssignmentError, NoFitError
from nanonmr2d.parallel import map_ordered
from nanonmr2d.spectra import PeakTable
from nanonmr2d.spins import (
    ANGSTROM,
    DEFAULT_SPECIES,
    ELECTRON,
    MU0_OVER_4PI,
    PLANCK,
    DipolarTensor,
    SpinSpecies,
    SpinSystem,
    field_direction,
    manifold_hamiltonian,
    manifold_transitions,
    secular_jzz,
)

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-9
SIGN_TIE_CHI2 = 1.0


# -----------------------------
# Models
# -----------------------------
@dataclass(frozen=True)
class CouplingEstimate:
    """Estimated couplings with one-sigma uncertainties (Hz).

    Attributes:
        a_parallel: A_par per identified spin.
        a_parallel_sigma: Uncertainty per spin.
        j_zz: Secular nucleus-nucleus coupling, if estimated.
        j_zz_sigma: Its uncertainty.
        source: Indices of the peaks used.
        flags: Degeneracy markers (``sign_ambiguous``, ``unidentifiable``).
    """

    a_parallel: tuple[float, ...]
    a_parallel_sigma: tuple[float, ...]
    j_zz: Optional[float] = None
    j_zz_sigma: Optional[float] = None
    source: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.a_parallel) != len(self.a_parallel_sigma):
            raise ValueError("one sigma per A_par value is required")
        sigmas = list(self.a_parallel_sigma) + ([self.j_zz_sigma] if self.j_zz is not None else [])
        if any(s is None or not s > 0 for s in sigmas):
            raise ValueError("uncertainties must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "a_parallel_hz": list(self.a_parallel),
            "a_parallel_sigma_hz": list(self.a_parallel_sigma),
            "j_zz_hz": self.j_zz,
            "j_zz_sigma_hz": self.j_zz_sigma,
            "source": list(self.source),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class StructureHypothesis:
    """Candidate lattice sites for the measured spins.

    Attributes:
        sites: Crystal coordinates (quarter lattice units), one per spin.
        positions: NV-frame positions in meters.
        predicted: Predicted ``a_parallel`` (per spin) and ``j_zz``, Hz.
        residual: Chi-square against the measurement.
        class_key: Canonical C3v representative.
        symmetry_class: Dense rank of the class by residual (1 = best).
    """

    sites: tuple[lattice.Site, ...]
    positions: tuple[tuple[float, float, float], ...]
    predicted: Mapping[str, Any]
    residual: float
    class_key: tuple[lattice.Site, ...]
    symmetry_class: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "sites": [list(s) for s in self.sites],
            "positions_angstrom": [[c / ANGSTROM for c in p] for p in self.positions],
            "predicted": dict(self.predicted),
            "chi2": self.residual,
            "class_key": [list(s) for s in self.class_key],
            "symmetry_class": self.symmetry_class,
        }


@dataclass(frozen=True)
class SymmetryClass:
    key: tuple[lattice.Site, ...]
    rank: int
    residual: float
    members: tuple[StructureHypothesis, ...]


@dataclass(frozen=True)
class LatticeSearchResult:
    """Ranked hypotheses; empty when nothing passes ``max_chi2``.

    Attributes:
        best_residual: Smallest chi-square over all candidates, passing or not.
    """

    hypotheses: tuple[StructureHypothesis, ...]
    classes: tuple[SymmetryClass, ...]
    best_residual: float
    n_candidates: int


@dataclass(frozen=True)
class FitTemplate:
    """Fixed and free parameters of a two-spin line fit.

    Attributes:
        larmors: Signed Larmor frequency per spin, Hz.
        a_parallel: Starting A_par per spin, Hz.
        a_perp: A_perp per spin (fixed unless ``fit_a_perp``), Hz.
        field_polar_angle: Field angle in radians.
        line_sigma: Uncertainty of a measured line position, Hz.
        j_zz_guess: Start magnitude and preferred sign when both signs fit.
        fit_a_perp: Free A_perp within ``|A_perp| <= 5 |A_par|``.
        m_s: Manifold the measured lines belong to.
    """

    larmors: tuple[float, float]
    a_parallel: tuple[float, float]
    a_perp: tuple[float, float] = (0.0, 0.0)
    field_polar_angle: float = 0.0
    line_sigma: float = 250.0
    j_zz_guess: Optional[float] = None
    fit_a_perp: bool = False
    m_s: int = -1

    def __post_init__(self) -> None:
        if self.line_sigma <= 0:
            raise ValueError("line_sigma must be > 0")
        if self.m_s not in (0, -1):
            raise ValueError("m_s must be 0 or -1")


@dataclass(frozen=True)
class TensorFit:
    """Result of ``fit_dipolar_tensor``.

    Attributes:
        d: Coupling constant, Hz (0 when flagged ``zero_coupling``).
        d_sigma: Propagated uncertainty.
        axis: Unit pair axis in the NV frame (sign arbitrary), ``None`` if undefined.
        mirror_axis: The ``y -> -y`` alternative, identical in every prediction.
        residual: Weighted sum of squared residuals.
        flags: ``zero_coupling``, ``constant_sweep``, ``mirror_ambiguous``.
    """

    d: float
    d_sigma: float
    axis: Optional[tuple[float, float, float]]
    mirror_axis: Optional[tuple[float, float, float]]
    residual: float
    flags: tuple[str, ...] = field(default_factory=tuple)


# -----------------------------
# Hyperfine assignment
# -----------------------------
def _lines(peaks: Union[PeakTable, Sequence[float]], resolution: Optional[float]) -> tuple[list[float], float]:
    if isinstance(peaks, PeakTable):
        freqs = [sum(p.frequency) / len(p.frequency) for p in peaks.peaks if p.kind in ("peak", "diagonal")]
        return freqs, resolution if resolution is not None else max(peaks.resolution)
    if resolution is None:
        raise ValueError("resolution is required when passing bare frequencies")
    return [float(f) for f in peaks], resolution


def estimate_hyperfine(
    peaks: Union[PeakTable, Sequence[float]],
    larmor: float,
    resolution: Optional[float] = None,
) -> CouplingEstimate:
    """A_par per ``m_s=-1`` line, ``A_par = larmor - f``.

    Lines within one bin of ``larmor`` are ``m_s=0``; lines two or more bins
    away are ``m_s=-1``. Uncertainty is half a bin. A table with no
    displaced line gives ``A_par = 0``.

    Raises:
        ValueError: If there are no peaks.
        AmbiguousAssignmentError: If a line sits between one and two bins from ``larmor``.
    """
    freqs, bin_width = _lines(peaks, resolution)
    if not freqs:
        raise ValueError("no peaks to assign")
    if bin_width <= 0:
        raise ValueError("resolution must be > 0")
    values, source = [], []
    for k, f in enumerate(freqs):
        offset = abs(f - larmor)
        if offset <= bin_width:
            continue
        if offset < 2 * bin_width:
            raise AmbiguousAssignmentError(
                f"line at {f:.1f} Hz is {offset / bin_width:.2f} bins from the Larmor frequency"
            )
        values.append(larmor - f)
        source.append(k)
    if not values:
        return CouplingEstimate((0.0,), (bin_width / 2,), source=())
    return CouplingEstimate(tuple(values), (bin_width / 2,) * len(values), source=tuple(source))


# -----------------------------
# Coupling fit
# -----------------------------
def _predicted_lines(template: FitTemplate, a_par: Sequence[float], a_perp: Sequence[float], j_zz: float) -> np.ndarray:
    rows = [(a_perp[0], 0.0, a_par[0]), (a_perp[1], 0.0, a_par[1])]
    h = manifold_hamiltonian(
        template.larmors,
        field_direction(template.field_polar_angle),
        rows,
        {(0, 1): DipolarTensor.axial(j_zz).components},
        template.m_s,
    )
    freqs, _ = manifold_transitions(h, 2)
    return freqs


def _unpack(template: FitTemplate, x: np.ndarray, j_zz: Optional[float] = None) -> tuple[list[float], list[float], float]:
    a_par = [x[0], x[1]]
    rest = list(x[2:])
    if j_zz is None:
        j_zz = rest.pop(0)
    a_perp = rest[:2] if template.fit_a_perp else list(template.a_perp)
    return a_par, a_perp, j_zz


def _residuals(measured: np.ndarray, template: FitTemplate, fixed_j: Optional[float] = None):
    def fn(x: np.ndarray) -> np.ndarray:
        a_par, a_perp, j_zz = _unpack(template, x, fixed_j)
        predicted = _predicted_lines(template, a_par, a_perp, j_zz)
        if predicted.size == 0:
            return np.full(measured.size, 1e6)
        nearest = np.abs(measured[:, None] - predicted[None, :]).argmin(axis=1)
        return (measured - predicted[nearest]) / template.line_sigma

    return fn


def _bounds(template: FitTemplate, with_j: bool) -> tuple[list[float], list[float]]:
    lo, hi = [-np.inf, -np.inf], [np.inf, np.inf]
    if with_j:
        lo.append(-np.inf)
        hi.append(np.inf)
    if template.fit_a_perp:
        for a in template.a_parallel:
            cap = max(5.0 * abs(a), 1.0)
            lo.append(-cap)
            hi.append(cap)
    return lo, hi


def _start(template: FitTemplate, j0: Optional[float]) -> np.ndarray:
    x = list(template.a_parallel)
    if j0 is not None:
        x.append(j0)
    if template.fit_a_perp:
        lo, hi = _bounds(template, False)
        x.extend(float(np.clip(a, lo[2 + k], hi[2 + k])) for k, a in enumerate(template.a_perp))
    return np.asarray(x, dtype=float)


def _chi2_at(measured: np.ndarray, template: FitTemplate, x_best: np.ndarray, j_zz: float) -> float:
    """Chi-square with the coupling fixed and the other parameters re-optimized."""
    x0 = np.delete(x_best, 2)
    result = least_squares(_residuals(measured, template, fixed_j=j_zz), x0, bounds=_bounds(template, False))
    return float(2.0 * result.cost)


def _profile_sigma(
    measured: np.ndarray, template: FitTemplate, x_best: np.ndarray, chi2_best: float
) -> tuple[float, bool]:
    """Half-width of the Delta chi2 = 1 interval of the coupling, and whether it was reached."""
    j_best = float(x_best[2])
    cap = 10.0 * abs(j_best) + 100.0 * template.line_sigma
    widths = []
    for direction in (1.0, -1.0):
        step, inside = template.line_sigma / 10.0, 0.0
        crossed = None
        while step <= cap:
            if _chi2_at(measured, template, x_best, j_best + direction * step) - chi2_best >= 1.0:
                crossed = step
                break
            inside, step = step, step * 2.0
        if crossed is None:
            widths.append(cap)
            continue
        lo, hi = inside, crossed
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            if _chi2_at(measured, template, x_best, j_best + direction * mid) - chi2_best >= 1.0:
                hi = mid
            else:
                lo = mid
        widths.append(0.5 * (lo + hi))
    identified = all(w < cap for w in widths)
    return float(np.mean(widths)), identified


def estimate_jzz_fit(
    peaks: Union[PeakTable, Sequence[float]],
    template: FitTemplate,
    max_nfev: int = 2000,
) -> CouplingEstimate:
    """Least-squares fit of exact-diagonalization line positions to measured lines.

    Each measured line is compared with the nearest predicted line of the
    template's manifold. Starts are tried with both signs of the coupling;
    when both signs fit equally well (Delta chi2 < 1) the estimate is flagged
    ``sign_ambiguous`` and the sign of ``j_zz_guess`` is kept.

    Raises:
        ValueError: If fewer than two lines are given.
        NoFitError: If no start converges.
    """
    if isinstance(peaks, PeakTable):
        measured = np.array(_lines(peaks, None)[0])
    else:
        measured = np.asarray(peaks, dtype=float)
    if measured.size < 2:
        raise ValueError("need at least two measured lines")
    magnitude = abs(template.j_zz_guess) if template.j_zz_guess else 1e3
    fits = []
    best_residual = math.inf
    for sign in (-1.0, 1.0):
        try:
            result = least_squares(
                _residuals(measured, template),
                _start(template, sign * magnitude),
                bounds=_bounds(template, True),
                max_nfev=max_nfev,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("start with sign %+.0f failed: %s", sign, exc)
            continue
        chi2 = float(2.0 * result.cost)
        best_residual = min(best_residual, chi2)
        if result.status > 0 and np.isfinite(chi2):
            fits.append((chi2, result.x))
    if not fits:
        raise NoFitError("coupling fit did not converge", best_residual=best_residual)
    fits.sort(key=lambda f: f[0])
    flags = []
    chosen = fits[0]
    opposite = [f for f in fits if np.sign(f[1][2]) != np.sign(chosen[1][2])]
    if opposite and opposite[0][0] - chosen[0] < SIGN_TIE_CHI2:
        flags.append("sign_ambiguous")
        preferred = -1.0 if template.j_zz_guess is None else np.sign(template.j_zz_guess) or -1.0
        if np.sign(chosen[1][2]) != preferred:
            chosen = opposite[0]
    chi2_best, x_best = chosen
    sigma, identified = _profile_sigma(measured, template, x_best, chi2_best)
    if not identified:
        flags.append("unidentifiable")
    a_sigma = template.line_sigma / math.sqrt(max(measured.size / 2.0, 1.0))
    logger.info("coupling fit: j_zz=%.1f Hz +/- %.1f, chi2=%.3g", x_best[2], sigma, chi2_best)
    return CouplingEstimate(
        a_parallel=(float(x_best[0]), float(x_best[1])),
        a_parallel_sigma=(a_sigma, a_sigma),
        j_zz=float(x_best[2]),
        j_zz_sigma=sigma,
        source=tuple(range(measured.size)),
        flags=tuple(flags),
    )


# -----------------------------
# Bond length
# -----------------------------
def bond_length_from_dipolar(
    d: float,
    species: tuple[SpinSpecies, SpinSpecies] = (DEFAULT_SPECIES["13C"], DEFAULT_SPECIES["13C"]),
    sigma_d: float = 0.0,
) -> tuple[float, float]:
    """Distance (m) and its uncertainty from a coupling constant ``d`` (Hz).

    Raises:
        ValueError: If ``d <= 0``.
    """
    if d <= 0:
        raise ValueError("d must be > 0")
    g = abs(species[0].gyromagnetic_ratio * species[1].gyromagnetic_ratio)
    r = (MU0_OVER_4PI * PLANCK * g / d) ** (1.0 / 3.0)
    return r, r * sigma_d / (3.0 * d)


# -----------------------------
# Lattice search
# -----------------------------
def _dipolar_prefactor(s1: SpinSpecies, s2: SpinSpecies) -> float:
    return MU0_OVER_4PI * PLANCK * s1.gyromagnetic_ratio * s2.gyromagnetic_ratio


def predicted_a_parallel(positions: npt.NDArray[np.float64], species: SpinSpecies) -> npt.NDArray[np.float64]:
    """Point-dipole A_par (zz in the NV frame) for each row of ``positions``."""
    r = np.linalg.norm(positions, axis=1)
    cos2 = (positions[:, 2] / r) ** 2
    return _dipolar_prefactor(ELECTRON, species) / r**3 * (1.0 - 3.0 * cos2)


def predicted_jzz(
    p1: npt.NDArray[np.float64], p2: npt.NDArray[np.float64], species: SpinSpecies, direction: Sequence[float]
) -> npt.NDArray[np.float64]:
    """Secular coupling along ``direction`` for row-paired positions."""
    sep = np.atleast_2d(p2) - np.atleast_2d(p1)
    r = np.linalg.norm(sep, axis=1)
    b = np.asarray(direction, dtype=float)
    cos2 = (sep @ b / (r * np.linalg.norm(b))) ** 2
    return _dipolar_prefactor(species, species) / r**3 * (1.0 - 3.0 * cos2)


def lattice_search(
    measured: CouplingEstimate,
    radius: float,
    field_polar_angle: float = 0.0,
    species: SpinSpecies = DEFAULT_SPECIES["13C"],
    max_pair_distance: Optional[float] = None,
    max_chi2: float = 25.0,
    workers: Optional[int] = None,
) -> LatticeSearchResult:
    """Score every site (one spin) or site pair (two spins) within ``radius``.

    The pair score is ``min`` over the two spin-to-site assignments of the
    A_par terms plus the ``j_zz`` term when present. Hypotheses above
    ``max_chi2`` are dropped; classes are dense-ranked by residual. Every
    pair of sites is scored unless ``max_pair_distance`` narrows the search.

    Raises:
        ValueError: If ``radius`` exceeds 3 nm or the estimate has more than two spins.
    """
    n_spins = len(measured.a_parallel)
    if n_spins not in (1, 2):
        raise ValueError("lattice search handles one or two spins")
    if radius > lattice.MAX_RADIUS:
        raise ValueError("radius must be <= 3 nm")
    sites = lattice.enumerate_sites(radius)
    if len(sites) == 0:
        return LatticeSearchResult((), (), math.inf, 0)
    positions = lattice.site_positions(sites)
    a_pred = predicted_a_parallel(positions, species)
    a_meas = np.asarray(measured.a_parallel)
    a_sig = np.asarray(measured.a_parallel_sigma)
    direction = field_direction(field_polar_angle)

    if n_spins == 1:
        groups = np.arange(len(sites))[:, None]
        chi2 = ((a_pred - a_meas[0]) / a_sig[0]) ** 2
        j_pred = np.full(len(sites), np.nan)
    else:
        idx = lattice.site_pairs(sites, max_pair_distance)
        if len(idx) == 0:
            return LatticeSearchResult((), (), math.inf, 0)
        a1, a2 = a_pred[idx[:, 0]], a_pred[idx[:, 1]]
        direct = ((a1 - a_meas[0]) / a_sig[0]) ** 2 + ((a2 - a_meas[1]) / a_sig[1]) ** 2
        swapped = ((a2 - a_meas[0]) / a_sig[0]) ** 2 + ((a1 - a_meas[1]) / a_sig[1]) ** 2
        chi2 = np.minimum(direct, swapped)
        j_pred = predicted_jzz(positions[idx[:, 0]], positions[idx[:, 1]], species, direction)
        if measured.j_zz is not None:
            chi2 = chi2 + ((j_pred - measured.j_zz) / measured.j_zz_sigma) ** 2
        groups = idx

    best = float(chi2.min())
    passing = np.flatnonzero(chi2 <= max_chi2)

    def build(k: int) -> StructureHypothesis:
        members = [int(m) for m in groups[k]]
        site_set = tuple(tuple(int(c) for c in sites[m]) for m in members)
        predicted: dict[str, Any] = {"a_parallel_hz": [float(a_pred[m]) for m in members]}
        if n_spins == 2:
            predicted["j_zz_hz"] = float(j_pred[k])
        return StructureHypothesis(
            sites=site_set,
            positions=tuple(tuple(float(c) for c in positions[m]) for m in members),
            predicted=predicted,
            residual=float(chi2[k]),
            class_key=lattice.class_key(site_set),
        )

    hypotheses = map_ordered(build, passing.tolist(), workers)
    hypotheses.sort(key=lambda h: (h.residual, h.class_key, h.sites))
    classes = _rank_classes(hypotheses)
    rank_of = {c.key: c.rank for c in classes}
    ranked = tuple(
        StructureHypothesis(h.sites, h.positions, h.predicted, h.residual, h.class_key, rank_of[h.class_key])
        for h in hypotheses
    )
    logger.info(
        "lattice search: %d candidates, %d pass chi2<=%.3g, %d classes", len(groups), len(ranked), max_chi2, len(classes)
    )
    return LatticeSearchResult(ranked, classes, best, len(groups))


def _rank_classes(hypotheses: Sequence[StructureHypothesis]) -> tuple[SymmetryClass, ...]:
    grouped: dict[tuple[lattice.Site, ...], list[StructureHypothesis]] = {}
    for h in hypotheses:
        grouped.setdefault(h.class_key, []).append(h)
    ordered = sorted(grouped.items(), key=lambda kv: (min(m.residual for m in kv[1]), kv[0]))
    classes = []
    rank, previous = 0, None
    for key, members in ordered:
        residual = min(m.residual for m in members)
        if previous is None or residual - previous > TIE_TOLERANCE * max(1.0, abs(previous)):
            rank += 1
            previous = residual
        classes.append(SymmetryClass(key, rank, residual, tuple(members)))
    return tuple(classes)


# -----------------------------
# Field-angle sweep
# -----------------------------
def field_angle_sweep(system: SpinSystem, pair: tuple[int, int], angles: Sequence[float]) -> list[tuple[float, float]]:
    """Forward model: secular coupling of ``pair`` at each field polar angle (radians)."""
    key = (min(pair), max(pair))
    if key not in system.pair_couplings:
        raise ValueError(f"no coupling for pair {pair}")
    tensor = system.pair_couplings[key]
    return [(float(theta), secular_jzz(tensor, field_direction(theta))) for theta in angles]


def fit_dipolar_tensor(
    sweep: Sequence[tuple[float, float]],
    sigmas: Optional[Sequence[float]] = None,
    sign: int = 1,
) -> TensorFit:
    """Coupling constant and pair axis from ``(angle, j_zz)`` measurements.

    ``j_zz(theta) = b^T M b`` with ``b = (sin, 0, cos)`` is linear in the xz
    block of ``M = d (1 - 3 e e^T)``. The eigenvalues of that block are ``d``
    and ``d (1 - 3 s)`` with ``s`` the squared in-plane length of ``e``;
    ``sign`` selects whether ``d`` is the larger (positive product of
    gyromagnetic ratios) or the smaller eigenvalue.

    Raises:
        ValueError: On fewer than 3 distinct angles or a rank-deficient design.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    angles = np.array([a for a, _ in sweep], dtype=float)
    values = np.array([v for _, v in sweep], dtype=float)
    if len(np.unique(np.round(angles, 12))) < 3:
        raise ValueError("need at least 3 distinct angles")
    weights = np.ones_like(values) if sigmas is None else 1.0 / np.asarray(sigmas, dtype=float)
    design = np.column_stack([np.sin(angles) ** 2, 2 * np.sin(angles) * np.cos(angles), np.cos(angles) ** 2])
    weighted = design * weights[:, None]
    if np.linalg.matrix_rank(weighted, tol=1e-10) < 3:
        raise ValueError("rank-deficient angle sweep")
    params, *_ = np.linalg.lstsq(weighted, values * weights, rcond=None)
    residual = float(np.sum(((design @ params - values) * weights) ** 2))
    scale = np.abs(values).max(initial=0.0)
    if scale == 0.0 or np.abs(params).max() <= 1e-12 * max(scale, 1.0):
        return TensorFit(0.0, 0.0, None, None, residual, ("zero_coupling",))

    block = np.array([[params[0], params[1]], [params[1], params[2]]])
    evals, evecs = np.linalg.eigh(block)
    d_index = 1 if sign > 0 else 0
    d, other = float(evals[d_index]), float(evals[1 - d_index])
    in_plane = evecs[:, 1 - d_index]
    flags = []
    if abs(evals[1] - evals[0]) <= 1e-6 * abs(d):
        flags.append("constant_sweep")
    s = float(np.clip((1.0 - other / d) / 3.0, 0.0, 1.0))
    ey = math.sqrt(1.0 - s)
    axis = np.array([math.sqrt(s) * in_plane[0], ey, math.sqrt(s) * in_plane[1]])
    axis /= np.linalg.norm(axis)
    mirror = axis * np.array([1.0, -1.0, 1.0])
    if 1e-9 < s < 1 - 1e-9:
        flags.append("mirror_ambiguous")

    grad = np.array([evecs[0, d_index] ** 2, 2 * evecs[0, d_index] * evecs[1, d_index], evecs[1, d_index] ** 2])
    dof = max(len(values) - 3, 1)
    cov = np.linalg.pinv(weighted.T @ weighted)
    if sigmas is None:
        cov = cov * residual / dof
    d_sigma = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    return TensorFit(d, d_sigma, tuple(axis.tolist()), tuple(mirror.tolist()), residual, tuple(flags))
