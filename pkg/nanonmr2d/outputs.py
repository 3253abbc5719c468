"""Result files: delimited tables, NumPy archives, JSON records, xyz blocks.

Every file carries the run's config hash and schema version: as ``# key=value``
comment lines at the top of text tables, as keys of JSON records, and as
metadata entries of ``.npz`` archives. Numbers are written with fixed
formats so identical results give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any, Union

import numpy as np

from nanonmr2d.experiments import TimeSignal1D, TimeSignal2D
from nanonmr2d.geometry import Conformation, conformation_to_xyz
from nanonmr2d.spectra import Peak, PeakTable, Spectrum1D, Spectrum2D
from nanonmr2d.spins import SCHEMA_VERSION

FLOAT_FORMAT = "{:.9g}"


def canonical_json_bytes(obj: Any) -> bytes:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def config_hash(raw: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a parsed config document."""
    return hashlib.sha256(canonical_json_bytes(raw)).hexdigest()


def _jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def write_json(path: Path, obj: Mapping[str, Any], chash: str) -> None:
    record = {"config_hash": chash, "schema_version": SCHEMA_VERSION, **obj}
    path.write_text(json.dumps(_jsonable(record), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(value: float) -> str:
    return FLOAT_FORMAT.format(float(value))


def _header(chash: str, extra: Mapping[str, Any]) -> list[str]:
    lines = [f"# config_hash={chash}", f"# schema_version={SCHEMA_VERSION}"]
    lines.extend(f"# {k}={v}" for k, v in extra.items())
    return lines


def write_table(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]], chash: str, **meta: Any) -> None:
    """Tab-separated table with a comment header."""
    lines = _header(chash, meta)
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_table(path: Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Inverse of ``write_table``: header metadata and rows keyed by column name.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ValueError: If the column line is missing.
    """
    if not path.exists():
        raise FileNotFoundError(f"Table not found: {path}")
    meta: dict[str, str] = {}
    columns: list[str] = []
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif not columns:
            columns = line.split("\t")
        elif line:
            rows.append(dict(zip(columns, line.split("\t"))))
    if not columns:
        raise ValueError(f"Table without a column line: {path}")
    return meta, rows


# -----------------------------
# Signals and spectra
# -----------------------------
def write_signal(directory: Path, sig: Union[TimeSignal1D, TimeSignal2D], chash: str) -> list[str]:
    """``signal.tsv`` (long format) and ``signal.npz``; returns the file names."""
    meta = {"experiment": sig.metadata.get("experiment", "")}
    if isinstance(sig, TimeSignal1D):
        rows = [(t, v) for t, v in zip(sig.axis, sig.values)]
        write_table(directory / "signal.tsv", ["t_s", "value"], rows, chash, **meta)
        arrays = {"axis": sig.axis, "values": sig.values}
    else:
        rows = [(t1, t2, sig.values[i, j]) for i, t1 in enumerate(sig.axis1) for j, t2 in enumerate(sig.axis2)]
        write_table(directory / "signal.tsv", ["t1_s", "t2_s", "value"], rows, chash, **meta)
        arrays = {"axis1": sig.axis1, "axis2": sig.axis2, "values": sig.values}
    np.savez(
        directory / "signal.npz",
        config_hash=np.array(chash),
        schema_version=np.array(SCHEMA_VERSION),
        metadata=np.array(json.dumps(_jsonable(dict(sig.metadata)), sort_keys=True)),
        **arrays,
    )
    return ["signal.tsv", "signal.npz"]


def load_signal(path: Path) -> Union[TimeSignal1D, TimeSignal2D]:
    """Read a ``signal.npz`` archive back into a signal."""
    with np.load(path) as data:
        metadata = json.loads(str(data["metadata"]))
        if "axis" in data.files:
            return TimeSignal1D(data["axis"], data["values"], metadata)
        return TimeSignal2D(data["axis1"], data["axis2"], data["values"], metadata)


def write_spectrum(directory: Path, spectrum: Union[Spectrum1D, Spectrum2D], chash: str) -> list[str]:
    """``spectrum.tsv``: frequency, real, imaginary and magnitude columns."""
    path = directory / "spectrum.tsv"
    if isinstance(spectrum, Spectrum1D):
        rows = [(f, v.real, v.imag, abs(v)) for f, v in zip(spectrum.frequencies, spectrum.values)]
        write_table(path, ["frequency_hz", "real", "imag", "magnitude"], rows, chash, resolution_hz=_fmt(spectrum.resolution))
    else:
        rows = [
            (f1, f2, spectrum.values[i, j].real, spectrum.values[i, j].imag, abs(spectrum.values[i, j]))
            for i, f1 in enumerate(spectrum.frequencies1)
            for j, f2 in enumerate(spectrum.frequencies2)
        ]
        write_table(
            path,
            ["f1_hz", "f2_hz", "real", "imag", "magnitude"],
            rows,
            chash,
            resolution_hz=",".join(_fmt(r) for r in spectrum.resolution),
        )
    return ["spectrum.tsv"]


def write_peak_table(path: Path, table: PeakTable, chash: str) -> None:
    two_d = len(table.resolution) == 2
    if two_d:
        columns = ["f1_hz", "f2_hz", "amplitude", "width1_hz", "width2_hz", "kind"]
        rows = [(*p.frequency, p.amplitude, *p.width, p.kind) for p in table.peaks]
    else:
        columns = ["frequency_hz", "amplitude", "width_hz", "kind"]
        rows = [(p.frequency[0], p.amplitude, p.width[0], p.kind) for p in table.peaks]
    write_table(path, columns, rows, chash, mode=table.mode, resolution_hz=",".join(_fmt(r) for r in table.resolution))


def read_peak_table(path: Path) -> PeakTable:
    """Inverse of ``write_peak_table`` (values as written, 9 significant digits)."""
    meta, rows = read_table(path)
    resolution = tuple(float(r) for r in meta.get("resolution_hz", "").split(",") if r)
    peaks = []
    for row in rows:
        if "f1_hz" in row:
            peaks.append(
                Peak(
                    (float(row["f1_hz"]), float(row["f2_hz"])),
                    float(row["amplitude"]),
                    (float(row["width1_hz"]), float(row["width2_hz"])),
                    row["kind"],
                )
            )
        else:
            peaks.append(Peak((float(row["frequency_hz"]),), float(row["amplitude"]), (float(row["width_hz"]),), row["kind"]))
    return PeakTable(tuple(peaks), resolution, meta.get("mode", "magnitude"))


def write_conformations(path: Path, conformations: Sequence[Conformation], chash: str, symbols: Mapping[Any, str]) -> None:
    """Concatenated xyz blocks; each comment line carries the hash and schema version."""
    blocks = []
    for k, conf in enumerate(conformations):
        comment = f"config_hash={chash} schema_version={SCHEMA_VERSION} solution={k} rmse_m={_fmt(conf.constraint_rmse)}"
        if conf.rmsd_to_reference is not None:
            comment += f" rmsd_to_reference_m={_fmt(conf.rmsd_to_reference)}"
        blocks.append(conformation_to_xyz(conf, symbols, comment))
    path.write_text("".join(blocks), encoding="utf-8")
