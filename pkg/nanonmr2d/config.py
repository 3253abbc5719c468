"""Load the species table and run configurations from TOML files.

Two kinds of files are read here:

- ``config.toml`` at the repository root: the gyromagnetic-ratio table
  (``[species.<name>]``) and processing defaults (``[processing]``).
- A run configuration: one self-describing file per run with the sections
  ``[run]``, ``[system]`` (plus ``[[system.nuclei]]``), ``[experiment]``,
  ``[processing]``, ``[expect]``, ``[inversion]`` and ``[geometry]``.

Every key is checked against ``CONFIG_SCHEMA``; unknown keys are rejected
with their dotted path so a typo never silently falls back to a default.

Example:
    Run file ``coupled_pair.toml``::

        schema_version = 1

        [run]
        name = "coupled_pair"
        seed = 7

        [system]
        field_t = 0.18

        [[system.nuclei]]
        species = "13C"
        position_angstrom = [0.0, 0.0, 5.0]
        hyperfine_hz = [30e3, 0.0, -60e3]

        [experiment]
        kind = "cosy2d"

    Usage::

        from pathlib import Path
        from nanonmr2d.config import build_system, load_experiment_config

        cfg = load_experiment_config(Path("coupled_pair.toml"))
        system = build_system(cfg.system)
"""

from __future__ import annotations

import copy
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import toml

from nanonmr2d.spins import (
    ANGSTROM,
    DEFAULT_SPECIES,
    SCHEMA_VERSION,
    HyperfineTensor,
    NuclearSpin,
    SpinSpecies,
    SpinSystem,
)

EXPERIMENT_KINDS = ("ddscan", "corr", "cosy2d", "hetero2d")

# section -> key -> (type, default, description); ``...`` marks a required key.
CONFIG_SCHEMA: dict[str, dict[str, tuple[str, Any, str]]] = {
    "run": {
        "name": ("str", ..., "Run name used in reports."),
        "seed": ("int", 0, "Seed for noise streams."),
        "output_dir": ("str", "runs", "Parent of the per-run directories (relative to the config file)."),
        "workers": ("int", None, "Worker threads; defaults to NANONMR2D_WORKERS or 1."),
    },
    "system": {
        "field_t": ("float", ..., "Field magnitude in Tesla."),
        "field_polar_angle_deg": ("float", 0.0, "Angle between field and NV axis."),
        "gradient_t_per_m": ("float", 0.0, "Field gradient along the NV axis."),
        "couple_pairs": ("bool", True, "False zeroes every nucleus-nucleus coupling."),
        "nuclei": ("list", ..., "Array of [[system.nuclei]] tables."),
    },
    "system.nuclei": {
        "species": ("str", ..., "Species name from the species table."),
        "position_angstrom": ("vector", ..., "Position in the NV frame."),
        "hyperfine_hz": ("vector|matrix", None, "Explicit hyperfine: z row [A_zx, A_zy, A_zz] or 3x3; point-dipole if absent."),
    },
    "experiment": {
        "kind": ("str", ..., "One of ddscan, corr, cosy2d, hetero2d."),
        "n_pulses": ("int", 32, "DD pulses per block (ddscan: per train)."),
        "phase_pattern": ("str", "XY8", "XY8 or CPMG."),
        "block_frequency_hz": ("float", None, "Resonance target of the DD block."),
        "block_spacing_s": ("float", None, "Explicit DD spacing (overrides block_frequency_hz)."),
        "spacing_min_s": ("float", None, "ddscan: first spacing."),
        "spacing_max_s": ("float", None, "ddscan: last spacing."),
        "n_samples": ("int", 200, "ddscan/corr: number of samples."),
        "tc_min_s": ("float", 4e-6, "corr: first free-evolution time."),
        "tc_max_s": ("float", 0.9e-3, "corr: last free-evolution time."),
        "t1_min_s": ("float", 4e-6, "2D: first t1."),
        "t1_max_s": ("float", 0.9e-3, "2D: last t1."),
        "n1": ("int", 50, "2D: t1 samples."),
        "t2_min_s": ("float", 4e-6, "2D: first t2."),
        "t2_max_s": ("float", 0.9e-3, "2D: last t2."),
        "n2": ("int", 50, "2D: t2 samples."),
        "mixing": ("str", "dd", "cosy2d mixing: dd or nuclear."),
        "mixing_pulses": ("int", 40, "cosy2d: pulses in the DD mixing train."),
        "species_pair": ("list", ["13C", "15N"], "hetero2d: the two species."),
        "block_time_s": ("float", 20e-6, "hetero2d: non-periodic block length."),
        "noise_sigma": ("float", 0.0, "Gaussian readout noise per sample."),
    },
    "processing": {
        "window": ("str", "hann", "hann or none."),
        "pad_factor": ("int", 4, "Zero-padding factor (power of two)."),
        "mode": ("str", "magnitude", "Peak picking on magnitude or real part."),
        "threshold_rel": ("float", 0.1, "Peak threshold relative to the maximum, in (0, 1)."),
        "min_separation_bins": ("float", 2.0, "Peaks closer than this merge."),
        "multiplet_hz": ("float", 0.0, "2D: widest coupling multiplet; components within it group into one line."),
    },
    "expect": {
        "min_cross_peaks": ("int", None, "Report fails if fewer cross peaks are found."),
        "max_cross_ratio": ("float", None, "Report fails if the cross/diagonal ratio exceeds this."),
    },
    "inversion": {
        "enabled": ("bool", False, "Assign lines and estimate couplings."),
        "species": ("str", "13C", "Species whose Larmor frequency anchors the assignment."),
        "line_hints_hz": ("list", [], "Approximate true line positions used to unfold aliased peaks."),
        "fit_jzz": ("bool", False, "Fit the nucleus-nucleus coupling from the m_s=-1 lines."),
        "lattice_search": ("bool", False, "Rank diamond lattice pairs against the estimates."),
        "radius_nm": ("float", 1.5, "Lattice search radius (at most 3 nm)."),
        "max_pair_distance_angstrom": ("float", None, "Optional cut on site separation; every pair in the radius if absent."),
        "max_chi2": ("float", 25.0, "Hypotheses above this chi-square are dropped."),
    },
    "geometry": {
        "enabled": ("bool", False, "Reconstruct positions from pairwise couplings."),
        "field_angles_deg": ("list", [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0], "Field polar angles of the coupling sweep."),
        "jzz_noise_hz": ("float", 0.0, "Gaussian noise on each swept secular coupling."),
        "tolerance_floor_angstrom": ("float", 0.1, "Smallest distance tolerance."),
        "tolerance_angstrom": ("float", 0.3, "Global pruning tolerance."),
    },
}


# -----------------------------
# Models
# -----------------------------
@dataclass(frozen=True)
class NucleusConfig:
    """One ``[[system.nuclei]]`` entry.

    Attributes:
        species: Species name.
        position_angstrom: NV-frame position.
        hyperfine_hz: Explicit 3x3 tensor, or ``None``.
    """

    species: str
    position_angstrom: tuple[float, float, float]
    hyperfine_hz: Optional[tuple[tuple[float, ...], ...]] = None


@dataclass(frozen=True)
class RunConfig:
    name: str
    seed: int = 0
    output_dir: Path = Path("runs")
    workers: Optional[int] = None


@dataclass(frozen=True)
class SystemConfig:
    field_t: float
    nuclei: tuple[NucleusConfig, ...]
    field_polar_angle_deg: float = 0.0
    gradient_t_per_m: float = 0.0
    couple_pairs: bool = True


@dataclass(frozen=True)
class ExperimentSettings:
    """The ``[experiment]`` section; keys not used by ``kind`` keep their defaults."""

    kind: str
    n_pulses: int = 32
    phase_pattern: str = "XY8"
    block_frequency_hz: Optional[float] = None
    block_spacing_s: Optional[float] = None
    spacing_min_s: Optional[float] = None
    spacing_max_s: Optional[float] = None
    n_samples: int = 200
    tc_min_s: float = 4e-6
    tc_max_s: float = 0.9e-3
    t1_min_s: float = 4e-6
    t1_max_s: float = 0.9e-3
    n1: int = 50
    t2_min_s: float = 4e-6
    t2_max_s: float = 0.9e-3
    n2: int = 50
    mixing: str = "dd"
    mixing_pulses: int = 40
    species_pair: tuple[str, ...] = ("13C", "15N")
    block_time_s: float = 20e-6
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class ProcessingConfig:
    window: str = "hann"
    pad_factor: int = 4
    mode: str = "magnitude"
    threshold_rel: float = 0.1
    min_separation_bins: float = 2.0
    multiplet_hz: float = 0.0


@dataclass(frozen=True)
class ExpectConfig:
    min_cross_peaks: Optional[int] = None
    max_cross_ratio: Optional[float] = None


@dataclass(frozen=True)
class InversionConfig:
    enabled: bool = False
    species: str = "13C"
    line_hints_hz: tuple[float, ...] = ()
    fit_jzz: bool = False
    lattice_search: bool = False
    radius_nm: float = 1.5
    max_pair_distance_angstrom: Optional[float] = None
    max_chi2: float = 25.0


@dataclass(frozen=True)
class GeometryConfig:
    enabled: bool = False
    field_angles_deg: tuple[float, ...] = (0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0)
    jzz_noise_hz: float = 0.0
    tolerance_floor_angstrom: float = 0.1
    tolerance_angstrom: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated run configuration.

    Attributes:
        source: File the configuration was read from (``None`` if built in memory).
        raw: Parsed TOML document; the config hash is computed from it.
    """

    run: RunConfig
    system: SystemConfig
    experiment: ExperimentSettings
    processing: ProcessingConfig
    expect: ExpectConfig
    inversion: InversionConfig
    geometry: GeometryConfig
    raw: Mapping[str, Any]
    source: Optional[Path] = None


# -----------------------------
# Field helpers
# -----------------------------
def _require_str(d: Mapping[str, Any], key: str, where: str) -> str:
    """Extract a required non-empty string.

    Raises:
        ValueError: If the key is missing, not a string, or empty.
    """
    v = d.get(key)
    if not isinstance(v, str) or not v.strip():
        raise ValueError(f"Invalid or missing '{where}.{key}' (expected non-empty string).")
    return v.strip()


def _require_float(d: Mapping[str, Any], key: str, where: str) -> float:
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"Invalid or missing '{where}.{key}' (expected number).")
    return float(v)


def _optional_float(d: Mapping[str, Any], key: str, where: str, default: Optional[float]) -> Optional[float]:
    if d.get(key) is None:
        return default
    return _require_float(d, key, where)


def _optional_int(d: Mapping[str, Any], key: str, where: str, default: Optional[int]) -> Optional[int]:
    """Extract an optional positive int.

    Raises:
        ValueError: If the value is present but not a positive int.
    """
    v = d.get(key)
    if v is None:
        return default
    if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
        raise ValueError(f"Invalid '{where}.{key}' (expected positive int).")
    return v


def _optional_bool(d: Mapping[str, Any], key: str, where: str, default: bool) -> bool:
    v = d.get(key)
    if v is None:
        return default
    if not isinstance(v, bool):
        raise ValueError(f"Invalid '{where}.{key}' (expected true or false).")
    return v


def _optional_str(d: Mapping[str, Any], key: str, where: str, default: str, choices: tuple[str, ...] = ()) -> str:
    v = d.get(key)
    if v is None:
        return default
    if not isinstance(v, str):
        raise ValueError(f"Invalid '{where}.{key}' (expected string).")
    if choices and v not in choices:
        raise ValueError(f"Invalid '{where}.{key}'='{v}' (expected one of {', '.join(choices)}).")
    return v


def _vector(v: Any, where: str) -> tuple[float, float, float]:
    if not isinstance(v, list) or len(v) != 3 or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ValueError(f"Invalid '{where}' (expected 3 numbers).")
    return (float(v[0]), float(v[1]), float(v[2]))


def _hyperfine(v: Any, where: str) -> tuple[tuple[float, ...], ...]:
    """Accept a z row ``[A_zx, A_zy, A_zz]`` or a full 3x3 tensor."""
    if isinstance(v, list) and len(v) == 3 and all(isinstance(row, list) for row in v):
        return tuple(_vector(row, f"{where}[{k}]") for k, row in enumerate(v))
    zx, zy, zz = _vector(v, where)
    return ((0.0, 0.0, zx), (0.0, 0.0, zy), (zx, zy, zz))


def _check_keys(d: Mapping[str, Any], section: str) -> None:
    unknown = sorted(set(d) - set(CONFIG_SCHEMA[section]))
    if unknown:
        raise ValueError(f"Unknown key '{section}.{unknown[0]}'")


def _section(data: Mapping[str, Any], name: str, required: bool = False) -> dict[str, Any]:
    value = data.get(name)
    if value is None:
        if required:
            raise ValueError(f"Missing [{name}] section in config.")
        return {}
    if not isinstance(value, dict):
        raise ValueError(f"Invalid [{name}] section (expected a table).")
    _check_keys(value, name)
    return value


# -----------------------------
# Section parsers
# -----------------------------
def _parse_run(d: dict[str, Any], base_dir: Path) -> RunConfig:
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValueError("Invalid 'run.seed' (expected non-negative int).")
    output_dir = Path(_optional_str(d, "output_dir", "run", "runs"))
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir
    return RunConfig(
        name=_require_str(d, "name", "run"),
        seed=seed,
        output_dir=output_dir,
        workers=_optional_int(d, "workers", "run", None),
    )


def _parse_system(d: dict[str, Any]) -> SystemConfig:
    raw_nuclei = d.get("nuclei")
    if not isinstance(raw_nuclei, list):
        raise ValueError("Invalid or missing 'system.nuclei' (expected [[system.nuclei]] tables).")
    nuclei = []
    for k, rec in enumerate(raw_nuclei):
        where = f"system.nuclei[{k}]"
        if not isinstance(rec, dict):
            raise ValueError(f"Invalid '{where}' (expected a table).")
        unknown = sorted(set(rec) - set(CONFIG_SCHEMA["system.nuclei"]))
        if unknown:
            raise ValueError(f"Unknown key '{where}.{unknown[0]}'")
        hf = rec.get("hyperfine_hz")
        nuclei.append(
            NucleusConfig(
                species=_require_str(rec, "species", where),
                position_angstrom=_vector(rec.get("position_angstrom"), f"{where}.position_angstrom"),
                hyperfine_hz=_hyperfine(hf, f"{where}.hyperfine_hz") if hf is not None else None,
            )
        )
    return SystemConfig(
        field_t=_require_float(d, "field_t", "system"),
        nuclei=tuple(nuclei),
        field_polar_angle_deg=_optional_float(d, "field_polar_angle_deg", "system", 0.0),
        gradient_t_per_m=_optional_float(d, "gradient_t_per_m", "system", 0.0),
        couple_pairs=_optional_bool(d, "couple_pairs", "system", True),
    )


def _parse_experiment(d: dict[str, Any]) -> ExperimentSettings:
    w = "experiment"
    kind = _optional_str(d, "kind", w, "", EXPERIMENT_KINDS)
    if not kind:
        raise ValueError("Invalid or missing 'experiment.kind' (expected one of ddscan, corr, cosy2d, hetero2d).")
    pair = d.get("species_pair", ["13C", "15N"])
    if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(s, str) for s in pair):
        raise ValueError("Invalid 'experiment.species_pair' (expected two species names).")
    floats = {
        key: _optional_float(d, key, w, CONFIG_SCHEMA[w][key][1])
        for key in (
            "block_frequency_hz",
            "block_spacing_s",
            "spacing_min_s",
            "spacing_max_s",
            "tc_min_s",
            "tc_max_s",
            "t1_min_s",
            "t1_max_s",
            "t2_min_s",
            "t2_max_s",
            "block_time_s",
            "noise_sigma",
        )
    }
    ints = {key: _optional_int(d, key, w, CONFIG_SCHEMA[w][key][1]) for key in ("n_pulses", "n_samples", "n1", "n2", "mixing_pulses")}
    settings = ExperimentSettings(
        kind=kind,
        phase_pattern=_optional_str(d, "phase_pattern", w, "XY8", ("XY8", "CPMG")),
        mixing=_optional_str(d, "mixing", w, "dd", ("dd", "nuclear")),
        species_pair=tuple(pair),
        **floats,
        **ints,
    )
    if kind == "ddscan" and (settings.spacing_min_s is None or settings.spacing_max_s is None):
        raise ValueError("Missing 'experiment.spacing_min_s' or 'experiment.spacing_max_s' for ddscan.")
    if kind in ("corr", "cosy2d") and settings.block_frequency_hz is None and settings.block_spacing_s is None:
        raise ValueError(f"Missing 'experiment.block_frequency_hz' (or block_spacing_s) for {kind}.")
    return settings


def _parse_processing(d: Mapping[str, Any], defaults: ProcessingConfig) -> ProcessingConfig:
    w = "processing"
    threshold = _optional_float(d, "threshold_rel", w, defaults.threshold_rel)
    if not 0.0 < threshold < 1.0:
        raise ValueError("Invalid 'processing.threshold_rel' (expected a value in (0, 1)).")
    pad = _optional_int(d, "pad_factor", w, defaults.pad_factor)
    if pad & (pad - 1):
        raise ValueError("Invalid 'processing.pad_factor' (expected a power of two).")
    multiplet = _optional_float(d, "multiplet_hz", w, defaults.multiplet_hz)
    if multiplet < 0:
        raise ValueError("Invalid 'processing.multiplet_hz' (expected a value >= 0).")
    return ProcessingConfig(
        window=_optional_str(d, "window", w, defaults.window, ("hann", "none")),
        pad_factor=pad,
        mode=_optional_str(d, "mode", w, defaults.mode, ("magnitude", "real")),
        threshold_rel=threshold,
        min_separation_bins=_optional_float(d, "min_separation_bins", w, defaults.min_separation_bins),
        multiplet_hz=multiplet,
    )


def _parse_inversion(d: dict[str, Any]) -> InversionConfig:
    w = "inversion"
    hints = d.get("line_hints_hz", [])
    if not isinstance(hints, list) or any(isinstance(h, bool) or not isinstance(h, (int, float)) for h in hints):
        raise ValueError("Invalid 'inversion.line_hints_hz' (expected a list of numbers).")
    radius = _optional_float(d, "radius_nm", w, 1.5)
    if not 0.0 < radius <= 3.0:
        raise ValueError("Invalid 'inversion.radius_nm' (expected a value in (0, 3]).")
    return InversionConfig(
        enabled=_optional_bool(d, "enabled", w, False),
        species=_optional_str(d, "species", w, "13C"),
        line_hints_hz=tuple(float(h) for h in hints),
        fit_jzz=_optional_bool(d, "fit_jzz", w, False),
        lattice_search=_optional_bool(d, "lattice_search", w, False),
        radius_nm=radius,
        max_pair_distance_angstrom=_optional_float(d, "max_pair_distance_angstrom", w, None),
        max_chi2=_optional_float(d, "max_chi2", w, 25.0),
    )


def _parse_geometry(d: dict[str, Any]) -> GeometryConfig:
    w = "geometry"
    angles = d.get("field_angles_deg", list(GeometryConfig.field_angles_deg))
    if not isinstance(angles, list) or any(isinstance(a, bool) or not isinstance(a, (int, float)) for a in angles):
        raise ValueError("Invalid 'geometry.field_angles_deg' (expected a list of numbers).")
    if len(set(angles)) < 3:
        raise ValueError("Invalid 'geometry.field_angles_deg' (expected at least 3 distinct angles).")
    noise = _optional_float(d, "jzz_noise_hz", w, 0.0)
    if noise < 0:
        raise ValueError("Invalid 'geometry.jzz_noise_hz' (expected a value >= 0).")
    return GeometryConfig(
        enabled=_optional_bool(d, "enabled", w, False),
        field_angles_deg=tuple(float(a) for a in angles),
        jzz_noise_hz=noise,
        tolerance_floor_angstrom=_optional_float(d, "tolerance_floor_angstrom", w, 0.1),
        tolerance_angstrom=_optional_float(d, "tolerance_angstrom", w, 0.3),
    )


# -----------------------------
# Public API
# -----------------------------
def parse_experiment_config(
    data: Mapping[str, Any],
    base_dir: Path = Path("."),
    processing_defaults: ProcessingConfig = ProcessingConfig(),
    source: Optional[Path] = None,
) -> ExperimentConfig:
    """Validate a parsed run document.

    Raises:
        ValueError: On a missing section, an unknown key, a wrong schema
            version, or an invalid value; the message names the dotted key.
    """
    if not isinstance(data, Mapping) or not data:
        raise ValueError("Config root must be a non-empty TOML table.")
    unknown = sorted(set(data) - {"schema_version", *CONFIG_SCHEMA})
    if unknown:
        raise ValueError(f"Unknown key '{unknown[0]}'")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"Invalid or missing 'schema_version' (expected {SCHEMA_VERSION}).")
    return ExperimentConfig(
        run=_parse_run(_section(data, "run", required=True), base_dir),
        system=_parse_system(_section(data, "system", required=True)),
        experiment=_parse_experiment(_section(data, "experiment", required=True)),
        processing=_parse_processing(_section(data, "processing"), processing_defaults),
        expect=ExpectConfig(
            min_cross_peaks=_optional_int(_section(data, "expect"), "min_cross_peaks", "expect", None),
            max_cross_ratio=_optional_float(_section(data, "expect"), "max_cross_ratio", "expect", None),
        ),
        inversion=_parse_inversion(_section(data, "inversion")),
        geometry=_parse_geometry(_section(data, "geometry")),
        raw=copy.deepcopy(dict(data)),
        source=source,
    )


def load_experiment_config(path: Path, processing_defaults: ProcessingConfig = ProcessingConfig()) -> ExperimentConfig:
    """Load and validate a run configuration file.

    Relative ``run.output_dir`` values resolve against the file's directory.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ValueError: If the file is not valid TOML or fails validation.
    """
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        data = toml.loads(path.read_text(encoding="utf-8"))
    except toml.TomlDecodeError as exc:
        raise ValueError(f"Invalid TOML in {path}: {exc}") from exc
    return parse_experiment_config(data, path.parent, processing_defaults, source=path)


def load_species_table(path: Path) -> dict[str, SpinSpecies]:
    """Read ``[species.<name>]`` tables into ``SpinSpecies`` records.

    Each table needs ``gyromagnetic_ratio_hz_per_t``; ``spin`` is optional
    and must be 0.5 when given.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ValueError: If the ``[species]`` section is missing or an entry is invalid.
    """
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    data = toml.loads(path.read_text(encoding="utf-8"))
    species = data.get("species")
    if not isinstance(species, dict) or not species:
        raise ValueError("Missing [species] section in config.")
    table = {}
    for name, rec in species.items():
        where = f"species.{name}"
        if not isinstance(rec, dict):
            raise ValueError(f"Invalid '{where}' (expected a table).")
        unknown = sorted(set(rec) - {"gyromagnetic_ratio_hz_per_t", "spin"})
        if unknown:
            raise ValueError(f"Unknown key '{where}.{unknown[0]}'")
        table[name] = SpinSpecies(
            name,
            _require_float(rec, "gyromagnetic_ratio_hz_per_t", where),
            _optional_float(rec, "spin", where, 0.5),
        )
    return table


def load_processing_defaults(path: Path) -> ProcessingConfig:
    """``[processing]`` section of the repository config (all keys optional)."""
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    data = toml.loads(path.read_text(encoding="utf-8"))
    section = data.get("processing", {})
    if not isinstance(section, dict):
        raise ValueError("Invalid [processing] section (expected a table).")
    _check_keys(section, "processing")
    return _parse_processing(section, ProcessingConfig())


def build_system(cfg: SystemConfig, species_table: Mapping[str, SpinSpecies] = DEFAULT_SPECIES) -> SpinSystem:
    """Turn a ``[system]`` section into a ``SpinSystem``.

    Raises:
        ValueError: If a species is not in the table.
    """
    nuclei = []
    for k, nuc in enumerate(cfg.nuclei):
        if nuc.species not in species_table:
            raise ValueError(f"Unknown species '{nuc.species}' in system.nuclei[{k}]")
        nuclei.append(
            NuclearSpin(
                species=species_table[nuc.species],
                position=np.asarray(nuc.position_angstrom) * ANGSTROM,
                hyperfine=HyperfineTensor(np.asarray(nuc.hyperfine_hz)) if nuc.hyperfine_hz is not None else None,
                label=k,
            )
        )
    system = SpinSystem(
        field_magnitude=cfg.field_t,
        nuclei=tuple(nuclei),
        field_polar_angle=float(np.deg2rad(cfg.field_polar_angle_deg)),
        gradient=cfg.gradient_t_per_m,
    )
    return system if cfg.couple_pairs else system.with_pair_couplings_zeroed()


def config_schema() -> dict[str, Any]:
    """The run-file schema as plain data (printed by the ``schema`` command)."""
    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    for section, keys in CONFIG_SCHEMA.items():
        out[section] = {
            key: {
                "type": typ,
                "required": default is ...,
                "default": None if default is ... else default,
                "doc": doc,
            }
            for key, (typ, default, doc) in keys.items()
        }
    return out
