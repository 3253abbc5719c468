"""Tests for nanonmr2d.pipeline: run directories, artifacts, checks and verify."""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pytest
from nanonmr2d.config import load_experiment_config
from nanonmr2d.errors import PipelineError
from nanonmr2d.outputs import config_hash
from nanonmr2d.pipeline import BUNDLED_CONFIGS, run_pipeline, verify

NOW = datetime(2026, 1, 2, 3, 4, 5, tzinfo=timezone.utc)
GOLDEN = Path(__file__).resolve().parent / "golden"

PAIR = """
[system]
field_t = 0.18

[[system.nuclei]]
species = "13C"
position_angstrom = [0.0, 0.0, 5.0]
hyperfine_hz = [30e3, 0.0, -60e3]

[[system.nuclei]]
species = "13C"
position_angstrom = [0.0, 0.0, 6.544]
hyperfine_hz = [25e3, 0.0, -120e3]
"""

SMALL_COSY = (
    """
schema_version = 1

[run]
name = "small"
seed = 3
"""
    + PAIR
    + """
[experiment]
kind = "cosy2d"
n_pulses = 32
block_frequency_hz = 1972.5e3
mixing = "nuclear"
t1_min_s = 4e-6
t1_max_s = 64e-6
n1 = 16
t2_min_s = 4e-6
t2_max_s = 64e-6
n2 = 16
"""
)

DDSCAN = """
schema_version = 1

[run]
name = "tetrahedron"

[system]
field_t = 0.18

[[system.nuclei]]
species = "13C"
position_angstrom = [0.0, 0.0, 5.0]

[[system.nuclei]]
species = "13C"
position_angstrom = [1.5, 0.0, 5.0]

[[system.nuclei]]
species = "13C"
position_angstrom = [0.4, 1.4, 5.0]

[[system.nuclei]]
species = "13C"
position_angstrom = [0.5, 0.6, 6.2]

[experiment]
kind = "ddscan"
n_pulses = 16
spacing_min_s = 0.24e-6
spacing_max_s = 0.27e-6
n_samples = 9

[geometry]
enabled = true
"""


def _config(tmp_path: Path, text: str, name: str = "run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return load_experiment_config(path)


def test_run_writes_artifacts(tmp_path: Path) -> None:
    """A 2D run writes signal, spectrum, peaks, hypotheses, report and timing."""
    cfg = _config(tmp_path, SMALL_COSY)
    result = run_pipeline(cfg, output_root=tmp_path / "out", now=NOW)
    assert result.passed
    assert result.run_dir.name == f"20260102T030405Z-{config_hash(cfg.raw)[:8]}"
    expected = ["hypotheses.json", "peaks.tsv", "report.json", "signal.npz", "signal.tsv", "spectrum.tsv", "timing.json"]
    assert result.report["files"] == expected
    assert sorted(p.name for p in result.run_dir.iterdir()) == expected
    report = json.loads((result.run_dir / "report.json").read_text(encoding="utf-8"))
    assert report["config_hash"] == config_hash(cfg.raw)
    assert report["seed"] == 3
    assert report["experiment"] == "cosy2d"
    assert set(report["versions"]) == {"nanonmr2d", "numpy", "scipy"}
    assert {"n_peaks", "n_diagonal", "n_cross", "cross_ratio"} <= set(report["summary"])
    hypotheses = json.loads((result.run_dir / "hypotheses.json").read_text(encoding="utf-8"))
    assert hypotheses["inversion"] is None


def test_repeated_runs_are_reproducible(tmp_path: Path) -> None:
    """Same config, same report and peaks; the second directory gets a suffix."""
    cfg = _config(tmp_path, SMALL_COSY)
    first = run_pipeline(cfg, output_root=tmp_path / "out", now=NOW)
    second = run_pipeline(cfg, output_root=tmp_path / "out", now=NOW)
    assert second.run_dir.name == first.run_dir.name + "_0001"
    for name in ("report.json", "peaks.tsv", "signal.tsv"):
        assert (first.run_dir / name).read_bytes() == (second.run_dir / name).read_bytes()


def test_timing_is_kept_out_of_report(tmp_path: Path) -> None:
    """Wall times go to timing.json with one entry per stage."""
    result = run_pipeline(_config(tmp_path, SMALL_COSY), output_root=tmp_path / "out", now=NOW)
    timing = json.loads((result.run_dir / "timing.json").read_text(encoding="utf-8"))
    assert {"system", "simulate", "process", "write"} <= set(timing["wall_time_s"])
    assert timing["started_utc"] == "20260102T030405Z"
    assert "wall_time_s" not in result.report


def test_failed_expectation_still_writes_report(tmp_path: Path) -> None:
    """An unmet [expect] check raises in stage 'expect' after the report is written."""
    cfg = _config(tmp_path, SMALL_COSY + "\n[expect]\nmin_cross_peaks = 1000\n")
    out = tmp_path / "out"
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, output_root=out, now=NOW)
    assert info.value.stage == "expect"
    (run_dir,) = list(out.iterdir())
    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    assert report["passed"] is False
    assert report["checks"][0]["name"] == "min_cross_peaks"


def test_unknown_species_fails_in_system_stage(tmp_path: Path) -> None:
    """A species missing from the table is reported by the system stage."""
    cfg = _config(tmp_path, SMALL_COSY)
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, species_table={}, output_root=tmp_path / "out", now=NOW)
    assert info.value.stage == "system"
    assert "Unknown species" in info.value.detail


def test_ddscan_with_geometry(tmp_path: Path) -> None:
    """A DD scan writes no spectrum; the geometry stage recovers the cluster."""
    result = run_pipeline(_config(tmp_path, DDSCAN), output_root=tmp_path / "out", now=NOW)
    assert not (result.run_dir / "spectrum.tsv").exists()
    assert (result.run_dir / "conformations.xyz").exists()
    assert result.peaks.mode == "dip"
    summary = result.report["summary"]
    assert summary["n_conformations"] >= 1
    assert min(summary["rmsd_to_reference_angstrom"]) < 0.05
    assert [b["pair"] for b in summary["bond_lengths"]] == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
    assert summary["bond_lengths"][0]["distance_angstrom"] == pytest.approx(1.5, abs=1e-6)


def test_noisy_field_sweep_recovers_bond_lengths(tmp_path: Path) -> None:
    """20 Hz noise on every swept coupling keeps each fitted distance within 0.03 A."""
    text = DDSCAN.replace("[geometry]\nenabled = true\n", "[geometry]\nenabled = true\njzz_noise_hz = 20.0\n")
    cfg = _config(tmp_path, text)
    result = run_pipeline(cfg, output_root=tmp_path / "out", now=NOW)
    positions = [np.array(n.position_angstrom) for n in cfg.system.nuclei]
    for bond in result.report["summary"]["bond_lengths"]:
        i, j = bond["pair"]
        assert bond["distance_angstrom"] == pytest.approx(np.linalg.norm(positions[i] - positions[j]), abs=0.03)
        assert bond["d_hz"] > 0
    assert min(result.report["summary"]["rmsd_to_reference_angstrom"]) < 0.3


def test_geometry_needs_coupled_pairs(tmp_path: Path) -> None:
    """Zeroed couplings leave nothing to fit, so the geometry stage fails."""
    text = DDSCAN.replace("field_t = 0.18\n", "field_t = 0.18\ncouple_pairs = false\n")
    with pytest.raises(PipelineError) as info:
        run_pipeline(_config(tmp_path, text), output_root=tmp_path / "out", now=NOW)
    assert info.value.stage == "geometry"
    assert "no coupling" in info.value.detail


def test_outputs_identical_across_worker_counts(tmp_path: Path) -> None:
    """One worker and four workers write byte-identical reports, peaks and signals."""
    cfg = _config(tmp_path, SMALL_COSY)
    serial = run_pipeline(cfg, output_root=tmp_path / "serial", workers=1, now=NOW)
    threaded = run_pipeline(cfg, output_root=tmp_path / "threaded", workers=4, now=NOW)
    for name in ("report.json", "peaks.tsv", "signal.tsv", "spectrum.tsv"):
        assert (serial.run_dir / name).read_bytes() == (threaded.run_dir / name).read_bytes()


def test_ddscan_rejects_inversion(tmp_path: Path) -> None:
    """Inversion needs a spectrum, so a DD scan fails in stage 'inversion'."""
    cfg = _config(tmp_path, DDSCAN + "\n[inversion]\nenabled = true\n")
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, output_root=tmp_path / "out", now=NOW)
    assert info.value.stage == "inversion"


def test_bundled_coupled_pair_passes(tmp_path: Path) -> None:
    """The shipped coupled-pair run meets its cross-peak expectation and inverts."""
    cfg = load_experiment_config(BUNDLED_CONFIGS / "coupled_pair.toml")
    result = run_pipeline(cfg, output_root=tmp_path, now=NOW)
    assert result.passed
    hypotheses = json.loads((result.run_dir / "hypotheses.json").read_text(encoding="utf-8"))
    assert hypotheses["inversion"]["larmor_hz"] == pytest.approx(1927.512e3, rel=1e-5)
    lines = hypotheses["inversion"]["lines_hz"]
    assert len(lines) == 3
    assert np.allclose(lines, [1927.512e3, 1973.74e3, 1990.67e3], atol=2.5e3)
    assert result.report["summary"]["n_cross"] >= 2


def test_bundled_isolated_spins_passes(tmp_path: Path) -> None:
    """Without the pair coupling the shipped run stays below its cross-peak ratio limit."""
    cfg = load_experiment_config(BUNDLED_CONFIGS / "isolated_spins.toml")
    result = run_pipeline(cfg, output_root=tmp_path, now=NOW)
    assert result.passed
    assert result.report["summary"]["cross_ratio"] < 0.05


# -----------------------------
# Verify
# -----------------------------
def test_verify_update_then_compare(tmp_path: Path) -> None:
    """Goldens written with update compare cleanly on the next run."""
    path = tmp_path / "small.toml"
    path.write_text(SMALL_COSY, encoding="utf-8")
    golden = tmp_path / "golden"
    written = verify(golden, [path], update=True)
    assert written.updated == ("small",)
    assert (golden / "small.peaks.tsv").exists()
    checked = verify(golden, [path])
    assert checked.passed
    assert checked.compared == ("small",)
    assert checked.deviations == ()


def test_verify_reports_missing_golden(tmp_path: Path) -> None:
    """A config without a golden file is a deviation."""
    path = tmp_path / "small.toml"
    path.write_text(SMALL_COSY, encoding="utf-8")
    result = verify(tmp_path / "empty", [path])
    assert not result.passed
    assert "golden file missing" in result.deviations[0]


def test_verify_detects_shifted_peaks(tmp_path: Path) -> None:
    """A golden with fewer peaks than the run is reported."""
    path = tmp_path / "small.toml"
    path.write_text(SMALL_COSY, encoding="utf-8")
    golden = tmp_path / "golden"
    verify(golden, [path], update=True)
    table = golden / "small.peaks.tsv"
    lines = table.read_text(encoding="utf-8").splitlines()
    body = [k for k, line in enumerate(lines) if line and not line.startswith("#")]
    if len(body) < 2:
        pytest.skip("run produced no peaks to remove")
    del lines[body[-1]]
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    result = verify(golden, [path])
    assert not result.passed
    assert any("peaks, golden has" in d for d in result.deviations)


def test_bundled_configs_round_trip_through_verify(tmp_path: Path) -> None:
    """Goldens written for the shipped configs compare cleanly on a second run."""
    golden = tmp_path / "golden"
    written = verify(golden, update=True)
    assert written.updated == ("coupled_pair", "isolated_spins")
    checked = verify(golden)
    assert checked.passed, checked.deviations
    assert checked.compared == ("coupled_pair", "isolated_spins")


@pytest.mark.skipif(not any(GOLDEN.glob("*.peaks.tsv")), reason="no goldens in tests/golden (nmr2d verify tests/golden --update)")
def test_bundled_configs_match_stored_goldens() -> None:
    """The shipped configs reproduce the peak tables stored under tests/golden."""
    result = verify(GOLDEN)
    assert result.passed, result.deviations
