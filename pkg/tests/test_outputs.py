"""Tests for nanonmr2d.outputs: hashes, tables and archives."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from nanonmr2d.experiments import TimeSignal1D, TimeSignal2D
from nanonmr2d.geometry import Conformation
from nanonmr2d.outputs import (
    canonical_json_bytes,
    config_hash,
    load_signal,
    read_peak_table,
    read_table,
    write_conformations,
    write_json,
    write_peak_table,
    write_signal,
    write_table,
)
from nanonmr2d.spectra import Peak, PeakTable
from nanonmr2d.spins import ANGSTROM

HASH = "ab" * 32


def test_config_hash_ignores_key_order() -> None:
    """Equal documents hash equally regardless of key order."""
    a = {"run": {"name": "x", "seed": 1}, "schema_version": 1}
    b = {"schema_version": 1, "run": {"seed": 1, "name": "x"}}
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 64
    assert config_hash(a) != config_hash({**a, "schema_version": 2})


def test_canonical_json_maps_non_finite_to_null() -> None:
    """NaN and infinities serialize as null; NumPy scalars become plain numbers."""
    data = json.loads(canonical_json_bytes({"a": float("nan"), "b": np.float64(np.inf), "c": np.int64(3), "d": (1, 2)}))
    assert data == {"a": None, "b": None, "c": 3, "d": [1, 2]}


def test_write_json_stamps_hash(tmp_path: Path) -> None:
    """JSON records carry config_hash and schema_version."""
    path = tmp_path / "report.json"
    write_json(path, {"passed": True}, HASH)
    record = json.loads(path.read_text(encoding="utf-8"))
    assert record == {"config_hash": HASH, "schema_version": 1, "passed": True}


def test_table_header_and_rows(tmp_path: Path) -> None:
    """Tables start with the hash header and read back by column."""
    path = tmp_path / "t.tsv"
    write_table(path, ["x", "label"], [(0.1, "a"), (2.0, "b")], HASH, note="demo")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[:3] == [f"# config_hash={HASH}", "# schema_version=1", "# note=demo"]
    meta, rows = read_table(path)
    assert meta["note"] == "demo"
    assert rows == [{"x": "0.1", "label": "a"}, {"x": "2", "label": "b"}]


def test_read_table_missing_file(tmp_path: Path) -> None:
    """A missing table raises FileNotFoundError."""
    with pytest.raises(FileNotFoundError):
        read_table(tmp_path / "absent.tsv")


def test_peak_table_round_trip_2d(tmp_path: Path) -> None:
    """2D peak tables keep frequencies, widths, kinds and resolution."""
    table = PeakTable(
        (
            Peak((12.5e3, 12.5e3), 1.0, (2e3, 2e3), "diagonal"),
            Peak((12.5e3, 47.5e3), 0.25, (2e3, 2.5e3), "cross"),
        ),
        (976.5625, 976.5625),
    )
    path = tmp_path / "peaks.tsv"
    write_peak_table(path, table, HASH)
    back = read_peak_table(path)
    assert back == table


def test_peak_table_round_trip_1d(tmp_path: Path) -> None:
    """1D tables use a single frequency column."""
    table = PeakTable((Peak((2e6,), 0.5, (1e4,), "dip"),), (5e3,), "dip")
    path = tmp_path / "peaks.tsv"
    write_peak_table(path, table, HASH)
    assert "frequency_hz" in path.read_text(encoding="utf-8")
    assert read_peak_table(path) == table


def test_signal_archive_round_trip(tmp_path: Path) -> None:
    """signal.npz restores axes, values and metadata."""
    sig = TimeSignal2D(np.arange(1.0, 4.0), np.arange(1.0, 3.0), np.zeros((3, 2)), {"experiment": "cosy2d"})
    names = write_signal(tmp_path, sig, HASH)
    assert names == ["signal.tsv", "signal.npz"]
    back = load_signal(tmp_path / "signal.npz")
    assert isinstance(back, TimeSignal2D)
    assert np.array_equal(back.values, sig.values)
    assert back.metadata["experiment"] == "cosy2d"
    _, rows = read_table(tmp_path / "signal.tsv")
    assert len(rows) == 6


def test_signal_archive_1d(tmp_path: Path) -> None:
    """A 1D signal reloads as TimeSignal1D."""
    write_signal(tmp_path, TimeSignal1D(np.arange(1.0, 5.0), np.full(4, 0.5), {"experiment": "corr"}), HASH)
    back = load_signal(tmp_path / "signal.npz")
    assert isinstance(back, TimeSignal1D)
    assert np.allclose(back.values, 0.5)


def test_conformations_file(tmp_path: Path) -> None:
    """Each xyz block carries the hash in its comment line."""
    conf = Conformation({0: (0.0, 0.0, 0.0), 1: (1.5 * ANGSTROM, 0.0, 0.0)}, rmsd_to_reference=0.0)
    path = tmp_path / "conformations.xyz"
    write_conformations(path, [conf, conf], HASH, {0: "C", 1: "C"})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 8
    assert lines[1].startswith(f"config_hash={HASH} schema_version=1 solution=0")
    assert "rmsd_to_reference_m=0" in lines[1]
