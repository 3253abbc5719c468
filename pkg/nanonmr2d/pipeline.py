"""Config-driven runs: simulate, transform, pick, check, invert, reconstruct.

``run_pipeline`` executes one configuration and writes every artifact under
``<output_dir>/<UTC timestamp>-<hash8>/``:

- ``signal.tsv`` / ``signal.npz``: the simulated time signal.
- ``spectrum.tsv``: the processed spectrum (not for DD scans).
- ``peaks.tsv``: picked peaks (DD scans: coherence dips).
- ``hypotheses.json``: coupling estimates and lattice hypotheses.
- ``conformations.xyz``: reconstructed geometries (geometry stage only).
- ``report.json``: parameters, versions, seed, summary and checks.
- ``timing.json``: wall time per stage (kept apart so reports stay reproducible).

``verify`` re-runs the bundled configurations and compares their peak tables
with stored goldens.
"""

from __future__ import annotations

import itertools
import logging
import math
import shutil
import tempfile
import time
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
import scipy

from nanonmr2d import __version__
from nanonmr2d.config import ExperimentConfig, build_system, load_experiment_config
from nanonmr2d.errors import PipelineError
from nanonmr2d.experiments import (
    DDBlock,
    TimeSignal1D,
    TimeSignal2D,
    correlation_scan,
    cosy_2d,
    dd_scan,
    hetero_2d,
)
from nanonmr2d.geometry import Conformation, CouplingFit, branch_and_prune, couplings_to_distances, dmdgp_order
from nanonmr2d.inversion import (
    CouplingEstimate,
    FitTemplate,
    bond_length_from_dipolar,
    estimate_hyperfine,
    estimate_jzz_fit,
    field_angle_sweep,
    fit_dipolar_tensor,
    lattice_search,
)
from nanonmr2d.outputs import (
    config_hash,
    read_peak_table,
    write_conformations,
    write_json,
    write_peak_table,
    write_signal,
    write_spectrum,
)
from nanonmr2d.parallel import worker_count
from nanonmr2d.spectra import (
    PeakTable,
    Spectrum1D,
    Spectrum2D,
    cross_peak_ratio,
    diagonal_lines,
    fft_1d,
    fft_2d,
    fold_frequency,
    pick_dips,
    pick_peaks,
    unfold_frequency,
)
from nanonmr2d.spins import ANGSTROM, DEFAULT_SPECIES, SpinSpecies, SpinSystem

logger = logging.getLogger(__name__)

BUNDLED_CONFIGS = Path(__file__).resolve().parent / "configs"
FREQUENCY_TOLERANCE_BINS = 1.0
AMPLITUDE_TOLERANCE_REL = 0.05
HINT_TOLERANCE_BINS = 1.5
MAX_REPORTED_HYPOTHESES = 50


@dataclass(frozen=True)
class RunReport:
    """Outcome of one run.

    Attributes:
        run_dir: Directory holding the artifacts.
        report: Content of ``report.json``.
        peaks: Picked peak table.
        passed: All ``[expect]`` checks passed.
    """

    run_dir: Path
    report: Mapping[str, Any]
    peaks: PeakTable
    passed: bool


@dataclass(frozen=True)
class VerifyReport:
    passed: bool
    compared: tuple[str, ...] = ()
    deviations: tuple[str, ...] = ()
    updated: tuple[str, ...] = field(default_factory=tuple)


@contextmanager
def _stage(name: str, timings: dict[str, float], clock: Callable[[], float]) -> Iterator[None]:
    """Time a stage and turn any failure into a ``PipelineError`` naming it."""
    start = clock()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        logger.error("stage %s failed: %s", name, exc)
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
    finally:
        timings[name] = clock() - start


def _utc_compact(now: Optional[datetime] = None) -> str:
    return (now or datetime.now(timezone.utc)).strftime("%Y%m%dT%H%M%SZ")


def _make_run_dir(root: Path, chash: str, now: Optional[datetime]) -> Path:
    stamp = f"{_utc_compact(now)}-{chash[:8]}"
    for attempt in range(10000):
        run_dir = root / (stamp if attempt == 0 else f"{stamp}_{attempt:04d}")
        if run_dir.exists():
            continue
        run_dir.mkdir(parents=True, exist_ok=False)
        return run_dir
    raise PipelineError("output", f"unable to allocate a fresh run directory under {root}")


# -----------------------------
# Stages
# -----------------------------
def _simulate(config: ExperimentConfig, system: SpinSystem, workers: int) -> Union[TimeSignal1D, TimeSignal2D]:
    e = config.experiment
    common = {"noise_sigma": e.noise_sigma, "seed": config.run.seed, "workers": workers}
    if e.kind == "ddscan":
        return dd_scan(system, e.n_pulses, (e.spacing_min_s, e.spacing_max_s), e.n_samples, e.phase_pattern, **common)
    if e.kind == "hetero2d":
        return hetero_2d(
            system,
            e.species_pair,
            (e.t1_min_s, e.t1_max_s),
            (e.t2_min_s, e.t2_max_s),
            e.n1,
            e.n2,
            e.block_time_s,
            **common,
        )
    block = DDBlock(e.n_pulses, e.block_frequency_hz, e.block_spacing_s, e.phase_pattern)
    if e.kind == "corr":
        return correlation_scan(system, block, (e.tc_min_s, e.tc_max_s), e.n_samples, **common)
    return cosy_2d(
        system,
        block,
        e.mixing_pulses,
        (e.t1_min_s, e.t1_max_s),
        (e.t2_min_s, e.t2_max_s),
        e.n1,
        e.n2,
        e.mixing,
        **common,
    )


def _process(
    config: ExperimentConfig, sig: Union[TimeSignal1D, TimeSignal2D]
) -> tuple[Optional[Union[Spectrum1D, Spectrum2D]], PeakTable]:
    p = config.processing
    if config.experiment.kind == "ddscan":
        return None, pick_dips(sig, p.threshold_rel, p.min_separation_bins)
    if isinstance(sig, TimeSignal1D):
        spectrum: Union[Spectrum1D, Spectrum2D] = fft_1d(sig, p.window, p.pad_factor)
    else:
        spectrum = fft_2d(sig, p.window, p.pad_factor)
    return spectrum, pick_peaks(spectrum, p.threshold_rel, p.min_separation_bins, p.mode, p.multiplet_hz)


def _summary(
    spectrum: Optional[Union[Spectrum1D, Spectrum2D]], peaks: PeakTable, multiplet_hz: float = 0.0
) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "n_peaks": len(peaks),
        "resolution_hz": list(peaks.resolution),
        "peaks_hz": [list(p.frequency) for p in peaks.peaks],
    }
    if isinstance(spectrum, Spectrum2D):
        diagonal = diagonal_lines(peaks, multiplet_hz)
        search = 2 + math.ceil(multiplet_hz / (2.0 * max(peaks.resolution)))
        summary["diagonal_lines_hz"] = diagonal
        summary["n_diagonal"] = len(peaks.of_kind("diagonal"))
        summary["n_cross"] = len(peaks.of_kind("cross"))
        summary["cross_ratio"] = cross_peak_ratio(spectrum, diagonal, search) if len(diagonal) >= 2 else 0.0
    return summary


def _checks(config: ExperimentConfig, summary: Mapping[str, Any]) -> list[dict[str, Any]]:
    checks = []
    expect = config.expect
    if expect.min_cross_peaks is not None:
        value = summary.get("n_cross", 0)
        checks.append(
            {"name": "min_cross_peaks", "value": value, "limit": expect.min_cross_peaks, "passed": value >= expect.min_cross_peaks}
        )
    if expect.max_cross_ratio is not None:
        value = summary.get("cross_ratio", 0.0)
        checks.append(
            {"name": "max_cross_ratio", "value": value, "limit": expect.max_cross_ratio, "passed": value <= expect.max_cross_ratio}
        )
    return checks


def _sampling_rate(sig: Union[TimeSignal1D, TimeSignal2D]) -> float:
    axis = sig.axis if isinstance(sig, TimeSignal1D) else sig.axis1
    return 1.0 / float(np.mean(np.diff(axis)))


def _line_frequencies(peaks: PeakTable, multiplet_hz: float) -> list[float]:
    if len(peaks.resolution) == 2:
        return diagonal_lines(peaks, multiplet_hz)
    return [p.frequency[0] for p in peaks.peaks]


def _hint_line(peaks: PeakTable, target: float, half_width: float) -> Optional[float]:
    """Center of the peaks whose every coordinate lies within ``half_width`` of ``target``.

    Any kind counts, so a multiplet whose components were labelled
    ``other`` still yields its line.
    """
    coords = [c for p in peaks.peaks if all(abs(c - target) <= half_width for c in p.frequency) for c in p.frequency]
    if not coords:
        return None
    return 0.5 * (min(coords) + max(coords))


def _invert(
    config: ExperimentConfig,
    system: SpinSystem,
    species_table: Mapping[str, SpinSpecies],
    sig: Union[TimeSignal1D, TimeSignal2D],
    peaks: PeakTable,
    workers: int,
) -> dict[str, Any]:
    inv = config.inversion
    if config.experiment.kind == "ddscan":
        raise ValueError("inversion needs a spectrum; ddscan runs give dip positions only")
    if inv.species not in species_table:
        raise ValueError(f"Unknown species '{inv.species}' in inversion.species")
    larmor = abs(species_table[inv.species].gyromagnetic_ratio) * system.field_magnitude
    resolution = max(peaks.resolution)
    multiplet = config.processing.multiplet_hz if isinstance(sig, TimeSignal2D) else 0.0
    lines = _line_frequencies(peaks, multiplet)
    if inv.line_hints_hz:
        fs = _sampling_rate(sig)
        unfolded = []
        for hint in inv.line_hints_hz:
            match = _hint_line(peaks, fold_frequency(hint, fs), multiplet / 2 + HINT_TOLERANCE_BINS * resolution)
            if match is not None:
                unfolded.append(unfold_frequency(match, fs, hint))
            else:
                logger.warning("no peak near the folded position of the %.1f Hz hint", hint)
        lines = unfolded
    estimate = estimate_hyperfine(lines, larmor, resolution)
    record: dict[str, Any] = {"larmor_hz": larmor, "lines_hz": lines, "hyperfine": estimate.to_dict()}

    if inv.fit_jzz and len(estimate.a_parallel) >= 2 and estimate.source:
        measured = [lines[k] for k in estimate.source]
        template = FitTemplate(
            larmors=(larmor, larmor),
            a_parallel=(estimate.a_parallel[0], estimate.a_parallel[1]),
            field_polar_angle=system.field_polar_angle,
            line_sigma=resolution / 2,
        )
        fit = estimate_jzz_fit(measured, template)
        record["coupling_fit"] = fit.to_dict()
        estimate = CouplingEstimate(
            estimate.a_parallel[:2], estimate.a_parallel_sigma[:2], fit.j_zz, fit.j_zz_sigma, estimate.source[:2], fit.flags
        )

    if inv.lattice_search:
        result = lattice_search(
            CouplingEstimate(estimate.a_parallel[:2], estimate.a_parallel_sigma[:2], estimate.j_zz, estimate.j_zz_sigma),
            inv.radius_nm * 1e-9,
            system.field_polar_angle,
            species_table[inv.species],
            None if inv.max_pair_distance_angstrom is None else inv.max_pair_distance_angstrom * ANGSTROM,
            inv.max_chi2,
            workers,
        )
        record["lattice"] = {
            "n_candidates": result.n_candidates,
            "best_chi2": result.best_residual,
            "n_classes": len(result.classes),
            "classes": [
                {"rank": c.rank, "chi2": c.residual, "key": [list(s) for s in c.key], "size": len(c.members)}
                for c in result.classes[:MAX_REPORTED_HYPOTHESES]
            ],
            "hypotheses": [h.to_dict() for h in result.hypotheses[:MAX_REPORTED_HYPOTHESES]],
        }
    return record


def _pair_sweep(config: ExperimentConfig, system: SpinSystem, pair: tuple[int, int]) -> list[tuple[float, float]]:
    """Secular couplings of ``pair`` over the configured field angles, with seeded noise."""
    geo = config.geometry
    sweep = field_angle_sweep(system, pair, np.radians(geo.field_angles_deg))
    if geo.jzz_noise_hz <= 0:
        return sweep
    noise = np.random.default_rng([config.run.seed, *pair]).normal(0.0, geo.jzz_noise_hz, len(sweep))
    return [(angle, value + float(n)) for (angle, value), n in zip(sweep, noise)]


def _reconstruct(config: ExperimentConfig, system: SpinSystem) -> tuple[list[Conformation], list[dict[str, Any]]]:
    """Sweep, tensor fit and bond length per pair, then branch-and-prune on the distances."""
    geo = config.geometry
    nuclei = system.nuclei
    fits, bonds = [], []
    for i, j in itertools.combinations(range(len(nuclei)), 2):
        species = (nuclei[i].species, nuclei[j].species)
        sign = 1 if species[0].gyromagnetic_ratio * species[1].gyromagnetic_ratio > 0 else -1
        sweep = _pair_sweep(config, system, (i, j))
        sigmas = [geo.jzz_noise_hz] * len(sweep) if geo.jzz_noise_hz > 0 else None
        tensor = fit_dipolar_tensor(sweep, sigmas, sign)
        if "zero_coupling" in tensor.flags:
            raise ValueError(f"pair ({i}, {j}) shows no coupling over the field sweep")
        fit = CouplingFit(i, j, abs(tensor.d), tensor.d_sigma, species)
        r, sigma_r = bond_length_from_dipolar(fit.d, species, fit.sigma_d)
        fits.append(fit)
        bonds.append(
            {
                "pair": [i, j],
                "d_hz": tensor.d,
                "d_sigma_hz": tensor.d_sigma,
                "distance_angstrom": r / ANGSTROM,
                "sigma_angstrom": sigma_r / ANGSTROM,
                "flags": list(tensor.flags),
            }
        )
    constraints = couplings_to_distances(fits, geo.tolerance_floor_angstrom * ANGSTROM)
    labels = list(range(len(nuclei)))
    order = dmdgp_order(constraints, labels)
    reference = {k: nuc.position for k, nuc in enumerate(nuclei)}
    return branch_and_prune(constraints, order, geo.tolerance_angstrom * ANGSTROM, reference=reference), bonds


# -----------------------------
# Public API
# -----------------------------
def run_pipeline(
    config: ExperimentConfig,
    species_table: Mapping[str, SpinSpecies] = DEFAULT_SPECIES,
    output_root: Optional[Path] = None,
    workers: Optional[int] = None,
    now: Optional[datetime] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> RunReport:
    """Execute the chain selected by ``config`` and write its artifacts.

    Raises:
        PipelineError: Naming the failed stage. A failed ``[expect]`` check
            raises after all artifacts, including the report, are written.
    """
    timings: dict[str, float] = {}
    chash = config_hash(config.raw)
    n_workers = worker_count(workers if workers is not None else config.run.workers)
    with _stage("output", timings, clock):
        run_dir = _make_run_dir(output_root or config.run.output_dir, chash, now)
    logger.info("run %s -> %s", config.run.name, run_dir)

    with _stage("system", timings, clock):
        system = build_system(config.system, species_table)
    with _stage("simulate", timings, clock):
        sig = _simulate(config, system, n_workers)
    with _stage("process", timings, clock):
        spectrum, peaks = _process(config, sig)
        summary = _summary(spectrum, peaks, config.processing.multiplet_hz)
    checks = _checks(config, summary)

    files: list[str] = []
    with _stage("write", timings, clock):
        files += write_signal(run_dir, sig, chash)
        if spectrum is not None:
            files += write_spectrum(run_dir, spectrum, chash)
        write_peak_table(run_dir / "peaks.tsv", peaks, chash)
        files.append("peaks.tsv")

    hypotheses: dict[str, Any] = {}
    if config.inversion.enabled:
        with _stage("inversion", timings, clock):
            hypotheses = _invert(config, system, species_table, sig, peaks, n_workers)
    write_json(run_dir / "hypotheses.json", {"inversion": hypotheses or None}, chash)
    files.append("hypotheses.json")

    if config.geometry.enabled:
        with _stage("geometry", timings, clock):
            conformations, bonds = _reconstruct(config, system)
            symbols = {k: nuc.species.name for k, nuc in enumerate(system.nuclei)}
            write_conformations(run_dir / "conformations.xyz", conformations, chash, symbols)
        files.append("conformations.xyz")
        summary["bond_lengths"] = bonds
        summary["n_conformations"] = len(conformations)
        summary["rmsd_to_reference_angstrom"] = [
            c.rmsd_to_reference / ANGSTROM for c in conformations if c.rmsd_to_reference is not None
        ]

    passed = all(c["passed"] for c in checks)
    report = {
        "name": config.run.name,
        "seed": config.run.seed,
        "experiment": config.experiment.kind,
        "parameters": dict(config.raw),
        "versions": {"nanonmr2d": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "summary": summary,
        "checks": checks,
        "passed": passed,
        "files": sorted(files + ["report.json", "timing.json"]),
    }
    write_json(run_dir / "report.json", report, chash)
    write_json(run_dir / "timing.json", {"started_utc": _utc_compact(now), "wall_time_s": timings, "workers": n_workers}, chash)
    if not passed:
        failed = ", ".join(c["name"] for c in checks if not c["passed"])
        raise PipelineError("expect", f"failed checks: {failed} (report in {run_dir})")
    return RunReport(run_dir, report, peaks, passed)


def _compare_peaks(name: str, golden: PeakTable, current: PeakTable) -> list[str]:
    deviations = []
    if len(golden) != len(current):
        deviations.append(f"{name}: {len(current)} peaks, golden has {len(golden)}")
    bins = np.asarray(golden.resolution or current.resolution, dtype=float)
    for k, ref in enumerate(golden.peaks):
        candidates = [p for p in current.peaks if p.kind == ref.kind]
        if not candidates:
            deviations.append(f"{name}: peak {k} ({ref.kind} at {ref.frequency}) missing")
            continue
        best = min(candidates, key=lambda p: float(np.max(np.abs(np.subtract(p.frequency, ref.frequency)) / bins)))
        shift = np.abs(np.subtract(best.frequency, ref.frequency)) / bins
        if np.max(shift) > FREQUENCY_TOLERANCE_BINS:
            deviations.append(f"{name}: peak {k} ({ref.kind} at {ref.frequency}) shifted by {np.max(shift):.2f} bins")
        elif abs(best.amplitude - ref.amplitude) > AMPLITUDE_TOLERANCE_REL * abs(ref.amplitude):
            deviations.append(f"{name}: peak {k} ({ref.kind} at {ref.frequency}) amplitude {best.amplitude:.6g} vs {ref.amplitude:.6g}")
    return deviations


def verify(
    golden_dir: Path,
    configs: Optional[Sequence[Path]] = None,
    update: bool = False,
    species_table: Mapping[str, SpinSpecies] = DEFAULT_SPECIES,
    workers: Optional[int] = None,
) -> VerifyReport:
    """Re-run configurations and compare peak tables with ``<golden_dir>/<name>.peaks.tsv``.

    Tolerances: one bin in frequency, 5% relative in amplitude. With
    ``update`` the goldens are (re)written instead of compared.
    """
    paths = sorted(configs) if configs is not None else sorted(BUNDLED_CONFIGS.glob("*.toml"))
    compared, deviations, updated = [], [], []
    if update:
        golden_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="nanonmr2d-verify-") as scratch:
        for path in paths:
            config = load_experiment_config(path)
            name = config.run.name
            try:
                result = run_pipeline(config, species_table, Path(scratch), workers)
                run_dir = result.run_dir
            except PipelineError as exc:
                deviations.append(f"{name}: run failed in stage '{exc.stage}': {exc.detail}")
                continue
            golden = golden_dir / f"{name}.peaks.tsv"
            if update:
                shutil.copyfile(run_dir / "peaks.tsv", golden)
                updated.append(name)
                continue
            if not golden.exists():
                deviations.append(f"{name}: golden file missing ({golden})")
                continue
            compared.append(name)
            deviations.extend(_compare_peaks(name, read_peak_table(golden), read_peak_table(run_dir / "peaks.tsv")))
    for line in deviations:
        logger.warning("verify: %s", line)
    return VerifyReport(not deviations, tuple(compared), tuple(deviations), tuple(updated))
