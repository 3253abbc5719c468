"""Tests for nanonmr2d.sequences: schedules, states and propagation."""

from __future__ import annotations

import numpy as np
import pytest
from nanonmr2d.errors import ScheduleError
from nanonmr2d.sequences import (
    ELECTRON_CHANNEL,
    FREE_CACHE_SIZE,
    XY8_AXES,
    DensityState,
    PulseEvent,
    PulseSchedule,
    Propagator,
    compile_dd,
    compile_nonperiodic,
    dephase_electron,
    electron_frame,
    propagate,
    sensor_coherence,
    with_even_pulse_count,
)
from nanonmr2d.spins import ANGSTROM, DEFAULT_SPECIES, HyperfineTensor, NuclearSpin, SpinSystem, build_hamiltonian

C13 = DEFAULT_SPECIES["13C"]


def _single(a_par: float = -60e3, a_perp: float = 30e3) -> SpinSystem:
    return SpinSystem(
        0.18, (NuclearSpin(C13, np.array([0.0, 0.0, 5.0]) * ANGSTROM, HyperfineTensor.from_parallel(a_par, a_perp)),)
    )


def test_compile_dd_xy8_timing() -> None:
    """XY8 pulses sit at (k - 1/2) tau with the x,y,x,y,y,x,y,x phase cycle."""
    schedule = compile_dd(16, 2e-6)
    assert schedule.total_time == pytest.approx(32e-6)
    assert np.allclose(schedule.times, (np.arange(16) + 0.5) * 2e-6)
    assert tuple(ev.axis for ev in schedule.events[:8]) == XY8_AXES
    assert tuple(ev.axis for ev in schedule.events[8:]) == XY8_AXES


def test_compile_dd_cpmg_uses_x_only() -> None:
    """CPMG trains use x pulses only."""
    assert {ev.axis for ev in compile_dd(8, 1e-6, "CPMG").events} == {"x"}


def test_compile_dd_rejects_spacing_below_gap_floor() -> None:
    """Spacings under the gap floor raise ScheduleError."""
    with pytest.raises(ScheduleError, match="gap floor"):
        compile_dd(8, 1e-9)


def test_compile_dd_rejects_unknown_pattern() -> None:
    """Only XY8 and CPMG are known."""
    with pytest.raises(ValueError, match="phase_pattern"):
        compile_dd(8, 1e-6, "KDD")


def test_schedule_rejects_close_events() -> None:
    """Events closer than the gap floor are rejected."""
    events = (PulseEvent(1e-6), PulseEvent(1e-6 + 1e-9))
    with pytest.raises(ScheduleError):
        PulseSchedule(events, 2e-6)


def test_event_rejects_negative_time() -> None:
    """Negative event times raise ScheduleError."""
    with pytest.raises(ScheduleError):
        PulseEvent(-1e-6)


def test_reversed_schedule_mirrors_times() -> None:
    """Reversing maps t to T - t and reverses the order."""
    schedule = compile_nonperiodic([1e6], 3e-6)
    mirrored = schedule.reversed()
    assert np.allclose(mirrored.times, schedule.total_time - schedule.times[::-1])


def test_timing_table_parses_back() -> None:
    """timing_table output reads back into the same events."""
    schedule = compile_dd(8, 1.5e-6)
    parsed = PulseSchedule.from_timing_table(schedule.timing_table())
    assert parsed.events == schedule.events
    assert parsed.total_time == schedule.total_time


def test_nonperiodic_places_pulses_on_cosine_zeros() -> None:
    """A single frequency gives pulses at (2k + 1) / (4 f)."""
    schedule = compile_nonperiodic([250e3], 10e-6)
    expected = (2 * np.arange(5) + 1) / (4 * 250e3)
    assert np.allclose(schedule.times, expected)


def test_nonperiodic_single_frequency_has_equal_gaps() -> None:
    """One frequency reduces to a periodic train with gaps of 1 / (2 f)."""
    schedule = compile_nonperiodic([317e3], 40e-6)
    gaps = np.diff(schedule.times)
    assert np.allclose(gaps, 1.0 / (2 * 317e3), rtol=0.0, atol=1e-12)


def test_nonperiodic_merges_close_zeros() -> None:
    """Zeros of two frequencies closer than the gap floor collapse to one pulse."""
    schedule = compile_nonperiodic([1e6, 1.0001e6], 1e-6, gap_floor=50e-9)
    assert len(schedule.events) == 2


def test_nonperiodic_rejects_empty_window() -> None:
    """No zero inside the window raises ScheduleError."""
    with pytest.raises(ScheduleError, match="empty"):
        compile_nonperiodic([1e3], 1e-6)


def test_with_even_pulse_count_appends_closing_pulse() -> None:
    """An odd electron pi count gets one closing pulse."""
    odd = compile_nonperiodic([250e3], 6e-6)
    assert len(odd.events) % 2 == 1
    even = with_even_pulse_count(odd)
    assert len(even.events) == len(odd.events) + 1
    assert even.events[-1].channel == ELECTRON_CHANNEL
    assert with_even_pulse_count(even) is even


def test_sensor_plus_state_is_valid() -> None:
    """The initial state has trace 1, is Hermitian and PSD."""
    state = DensityState.sensor_plus(2)
    state.check()
    assert state.dimension == 8
    assert sensor_coherence(state) == pytest.approx(1.0)


def test_dephase_electron_kills_coherence() -> None:
    """Dephasing removes the sensor coherence and keeps the trace."""
    state = dephase_electron(DensityState.sensor_plus(1))
    assert sensor_coherence(state) == pytest.approx(0.0)
    assert state.trace == pytest.approx(1.0)


def test_free_propagator_is_unitary_and_cached() -> None:
    """free(dt) is unitary and the same object is returned for the same dt."""
    prop = Propagator(_single())
    u = prop.free(3e-6)
    assert np.allclose(u @ u.conj().T, np.eye(4))
    assert prop.free(3e-6) is u


def test_free_cache_stays_bounded() -> None:
    """A sweep over more distinct times than the cache holds evicts old entries."""
    prop = Propagator(_single())
    for k in range(FREE_CACHE_SIZE + 20):
        prop.free((k + 1) * 1e-7)
    assert prop.free_cache_info().currsize == FREE_CACHE_SIZE


def _random_system(rng: np.random.Generator) -> SpinSystem:
    species = [DEFAULT_SPECIES["13C"], DEFAULT_SPECIES["15N"]]
    nuclei = []
    for k in range(int(rng.integers(1, 4))):
        m = rng.normal(0.0, 30e3, (3, 3))
        position = np.array([*rng.uniform(-2.0, 2.0, 2), 5.0 + 2.5 * k]) * ANGSTROM
        nuclei.append(NuclearSpin(species[int(rng.integers(2))], position, HyperfineTensor(0.5 * (m + m.T)), k))
    return SpinSystem(float(rng.uniform(0.05, 0.3)), tuple(nuclei), field_polar_angle=float(rng.uniform(0.0, 0.3)))


@pytest.mark.parametrize("seed", range(100))
def test_random_systems_evolve_physically(seed: int) -> None:
    """Random systems give a Hermitian H and unitary DD evolution that keeps trace and purity."""
    rng = np.random.default_rng(seed)
    system = _random_system(rng)
    h = build_hamiltonian(system)
    assert np.allclose(h, h.conj().T, rtol=0.0, atol=1e-6)
    prop = Propagator(system)
    u = prop.schedule_unitary(compile_dd(8, float(rng.uniform(0.2e-6, 1e-6))))
    assert np.allclose(u @ u.conj().T, np.eye(system.dimension), atol=1e-9)
    initial = dephase_electron(DensityState.sensor_plus(system.n_nuclei))
    final = prop.evolve(u, initial)
    final.check()
    assert final.trace == pytest.approx(1.0, abs=1e-9)
    assert final.purity == pytest.approx(initial.purity, abs=1e-9)


def test_time_reversal_returns_initial_state() -> None:
    """Evolving under H and then under -H restores the state."""
    system = _single()
    schedule = compile_dd(8, 1e-6)
    initial = DensityState.sensor_plus(1)
    forward = propagate(system, schedule, initial)
    backward = Propagator(system, -build_hamiltonian(system))
    restored = propagate(system, schedule.reversed(), forward, backward)
    assert np.allclose(restored.matrix, initial.matrix, atol=1e-9)


def test_dd_without_nuclei_keeps_coherence() -> None:
    """A bare sensor under any DD train reads 1 in the pulse frame."""
    system = SpinSystem(0.18, ())
    schedule = compile_dd(8, 1e-6)
    state = propagate(system, schedule, DensityState.sensor_plus(0))
    assert sensor_coherence(state, electron_frame(schedule)) == pytest.approx(1.0)


def test_propagation_preserves_trace_and_purity() -> None:
    """Unitary evolution keeps trace and purity."""
    system = _single()
    initial = DensityState.sensor_plus(1)
    final = propagate(system, compile_dd(16, 0.26e-6), initial)
    final.check()
    assert final.purity == pytest.approx(initial.purity)


def test_propagate_rejects_dimension_mismatch() -> None:
    """A state of the wrong dimension raises ValueError."""
    with pytest.raises(ValueError, match="dimension mismatch"):
        propagate(_single(), compile_dd(8, 1e-6), DensityState.sensor_plus(2))


def test_nuclear_pulse_on_absent_species_fails() -> None:
    """A channel naming an absent species raises ValueError."""
    prop = Propagator(_single())
    with pytest.raises(ValueError, match="selects no nuclei"):
        prop.pulse(PulseEvent(0.0, "nuclear:15N", "pi/2", "x"))


def test_nuclear_rotation_matches_pulse() -> None:
    """An arbitrary-angle rotation at pi/2 equals the ideal pi/2 pulse."""
    prop = Propagator(_single())
    assert np.allclose(prop.nuclear_rotation(np.pi / 2, "x"), prop.pulse(PulseEvent(0.0, "nuclear:all", "pi/2", "x")))
