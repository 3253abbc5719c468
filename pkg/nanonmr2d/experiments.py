"""Signal generators for the four sensing experiments.

- ``dd_scan``: coherence versus DD interpulse spacing (resonance dips).
- ``correlation_scan``: DD block, stored free evolution ``t_c``, DD block.
- ``cosy_2d``: init block, ``t1``, mixing, ``t2``, readout block.
- ``hetero_2d``: the same skeleton with non-periodic blocks and an
  all-nuclear pi/2 mixing pulse.

Nuclei start maximally mixed and the sensor in ``|+>``. For the stored-phase
experiments the sensor phase is moved into populations by an electron pi/2
after the first block; its coherence is dropped there (it decays long before
``t_c`` in practice) and a second pi/2 brings the population back before the
readout block. The readout observable is the sensor ``<sigma_x>``.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from nanonmr2d.parallel import map_ordered
from nanonmr2d.sequences import (
    ALL_NUCLEAR_CHANNEL,
    DEFAULT_GAP_FLOOR,
    ELECTRON_CHANNEL,
    DensityState,
    PulseEvent,
    PulseSchedule,
    Propagator,
    compile_dd,
    compile_nonperiodic,
    dephase_electron,
    electron_frame,
    sensor_coherence,
    with_even_pulse_count,
)
from nanonmr2d.spins import ComplexArray, FloatArray, SpinSystem, pauli

logger = logging.getLogger(__name__)

DEFAULT_SWEEP_S = (4e-6, 0.9e-3)
DEFAULT_SAMPLES = 50
MIN_GRID = 8


# -----------------------------
# Models
# -----------------------------
def _check_axis(axis: FloatArray, name: str) -> None:
    if axis.ndim != 1 or axis.size < 1:
        raise ValueError(f"{name} must be a non-empty 1D axis")
    if axis.size > 1 and np.any(np.diff(axis) <= 0):
        raise ValueError(f"{name} must be strictly increasing")


@dataclass(frozen=True, eq=False)
class TimeSignal1D:
    """Sensor coherence sampled along one time axis.

    Attributes:
        axis: Sample times in seconds.
        values: ``<sigma_x>`` per sample, within [-1, 1].
        metadata: Experiment name and parameters.
    """

    axis: FloatArray
    values: FloatArray
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        axis = np.array(self.axis, dtype=float)
        values = np.array(self.values, dtype=float)
        _check_axis(axis, "axis")
        if values.shape != axis.shape:
            raise ValueError("values must match the axis length")
        if np.abs(values).max(initial=0.0) > 1 + 1e-9:
            raise ValueError("signal values must lie in [-1, 1]")
        axis.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class TimeSignal2D:
    """Sensor coherence on a rectangular ``(t1, t2)`` grid.

    Attributes:
        axis1: ``t1`` samples in seconds.
        axis2: ``t2`` samples in seconds.
        values: Matrix of shape ``(len(axis1), len(axis2))``.
        metadata: Experiment name and parameters.
    """

    axis1: FloatArray
    axis2: FloatArray
    values: FloatArray
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        axis1 = np.array(self.axis1, dtype=float)
        axis2 = np.array(self.axis2, dtype=float)
        values = np.array(self.values, dtype=float)
        _check_axis(axis1, "axis1")
        _check_axis(axis2, "axis2")
        if values.shape != (axis1.size, axis2.size):
            raise ValueError("values must have shape (len(axis1), len(axis2))")
        if np.abs(values).max(initial=0.0) > 1 + 1e-9:
            raise ValueError("signal values must lie in [-1, 1]")
        for arr in (axis1, axis2, values):
            arr.setflags(write=False)
        object.__setattr__(self, "axis1", axis1)
        object.__setattr__(self, "axis2", axis2)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class DDBlock:
    """A DD block used for initialization, readout, or mixing.

    Attributes:
        n_pulses: Pulse count (even for init/readout blocks).
        frequency: Resonance target in Hz; spacing is ``1 / (2 f)``.
        spacing: Explicit interpulse spacing in seconds (overrides frequency).
        phase_pattern: ``"XY8"`` or ``"CPMG"``.
    """

    n_pulses: int = 32
    frequency: Optional[float] = None
    spacing: Optional[float] = None
    phase_pattern: str = "XY8"

    def __post_init__(self) -> None:
        if self.spacing is None and self.frequency is None:
            raise ValueError("DDBlock needs a frequency or a spacing")
        if self.spacing is None and self.frequency is not None and self.frequency <= 0:
            raise ValueError("DDBlock frequency must be > 0")

    @property
    def interpulse_spacing(self) -> float:
        if self.spacing is not None:
            return self.spacing
        return 1.0 / (2.0 * self.frequency)

    def compile(self, gap_floor: float = DEFAULT_GAP_FLOOR) -> PulseSchedule:
        return compile_dd(self.n_pulses, self.interpulse_spacing, self.phase_pattern, gap_floor)


def resonance_spacing(larmor: float, a_parallel: float) -> float:
    """DD spacing of the coherence dip, ``1 / (2 (w_L - A_par / 2))``."""
    return 1.0 / (2.0 * (larmor - 0.5 * a_parallel))


# -----------------------------
# Helpers
# -----------------------------
def _sweep(bounds: Sequence[float], n: int, name: str) -> FloatArray:
    lo, hi = float(bounds[0]), float(bounds[1])
    if n < 2:
        raise ValueError(f"{name} needs at least 2 samples")
    if lo < 0 or hi <= lo:
        raise ValueError(f"Invalid {name} range ({lo}, {hi})")
    return np.linspace(lo, hi, n)


def _noisy(values: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add counter-seeded Gaussian noise: each sample draws from its own stream."""
    if sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if sigma == 0:
        return values
    out = np.array(values, dtype=float)
    for index in np.ndindex(out.shape):
        out[index] += np.random.default_rng([seed, *index]).normal(0.0, sigma)
    return np.clip(out, -1.0, 1.0)


def _require_even(schedule: PulseSchedule) -> None:
    count = sum(1 for ev in schedule.events if ev.channel == ELECTRON_CHANNEL and ev.rotation == "pi")
    if count % 2:
        raise ValueError("stored-phase blocks need an even electron pulse count")


def _stored_phase(prop: Propagator, init: ComplexArray, readout: ComplexArray) -> tuple[ComplexArray, ComplexArray]:
    """State after init + storage, and the readout observable pulled back through storage + readout."""
    n = prop.system.n_nuclei
    store = prop.pulse(PulseEvent(0.0, ELECTRON_CHANNEL, "pi/2", "x"))
    rho = dephase_electron(prop.evolve(store @ init, DensityState.sensor_plus(n)))
    read = readout @ store
    sigma_x = np.kron(pauli("x"), np.eye(2**n))
    return rho.matrix, read.conj().T @ sigma_x @ read


def _species_line(system: SpinSystem, name: str) -> float:
    """Mean DD resonance of one species: halfway between its m_s=0 and m_s=-1 precession."""
    idx = system.species_indices(name)
    if not idx:
        raise ValueError(f"system has no '{name}' nuclei")
    larmors = system.larmor_frequencies()
    direction = system.field_direction
    resonances = [
        0.5 * (abs(larmors[i]) + float(np.linalg.norm(larmors[i] * direction - system.hyperfines[i].components[2])))
        for i in idx
    ]
    return float(np.mean(resonances))


def _expectation(rho: ComplexArray, observable: ComplexArray) -> float:
    return float(np.real(np.sum(rho * observable.T)))


def _correlation_map(
    prop: Propagator,
    rho: ComplexArray,
    observable: ComplexArray,
    mixing: ComplexArray,
    axis1: FloatArray,
    axis2: FloatArray,
    workers: Optional[int],
) -> np.ndarray:
    # tr(U2 r U2^dag O) = sum_ab p_a r_ab conj(p_b) O_ba in the eigenbasis of H, with p = exp(-i E t2)
    observable_t = prop.to_eigenbasis(observable).T
    phases = np.array([prop.phases(t) for t in axis2])

    def row(t1: float) -> np.ndarray:
        u = mixing @ prop.free(t1)
        weights = prop.to_eigenbasis(u @ rho @ u.conj().T) * observable_t
        return np.real(np.sum((phases @ weights) * phases.conj(), axis=1))

    return np.array(map_ordered(row, list(axis1), workers))


# -----------------------------
# Experiments
# -----------------------------
def dd_scan(
    system: SpinSystem,
    n_pulses: int,
    spacing_range: Sequence[float],
    n_samples: int,
    phase_pattern: str = "XY8",
    noise_sigma: float = 0.0,
    seed: int = 0,
    workers: Optional[int] = None,
    gap_floor: float = DEFAULT_GAP_FLOOR,
) -> TimeSignal1D:
    """Coherence versus interpulse spacing for an N-pulse DD train."""
    axis = _sweep(spacing_range, n_samples, "spacing")
    if axis[0] < gap_floor:
        raise ValueError("spacing range starts below the gap floor")
    prop = Propagator(system)
    rho0 = DensityState.sensor_plus(system.n_nuclei)

    def point(spacing: float) -> float:
        schedule = compile_dd(n_pulses, spacing, phase_pattern, gap_floor)
        state = prop.evolve(prop.schedule_unitary(schedule), rho0)
        return sensor_coherence(state, electron_frame(schedule))

    values = _noisy(np.array(map_ordered(point, list(axis), workers)), noise_sigma, seed)
    logger.info("dd_scan: %d spacings, min coherence %.4f", n_samples, float(values.min()))
    meta = {"experiment": "ddscan", "n_pulses": n_pulses, "phase_pattern": phase_pattern, "noise_sigma": noise_sigma}
    return TimeSignal1D(axis, values, meta)


def correlation_scan(
    system: SpinSystem,
    dd_block: DDBlock,
    t_c_range: Sequence[float],
    n_samples: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
    workers: Optional[int] = None,
    gap_floor: float = DEFAULT_GAP_FLOOR,
) -> TimeSignal1D:
    """DD block, stored evolution ``t_c``, DD block; one sample per ``t_c``."""
    axis = _sweep(t_c_range, n_samples, "t_c")
    schedule = dd_block.compile(gap_floor)
    _require_even(schedule)
    prop = Propagator(system)
    block = prop.schedule_unitary(schedule)
    rho, observable = _stored_phase(prop, block, block)

    def point(t: float) -> float:
        u = prop.free(t)
        return _expectation(u @ rho @ u.conj().T, observable)

    values = _noisy(np.array(map_ordered(point, list(axis), workers)), noise_sigma, seed)
    meta = {
        "experiment": "corr",
        "n_pulses": dd_block.n_pulses,
        "spacing": dd_block.interpulse_spacing,
        "noise_sigma": noise_sigma,
    }
    return TimeSignal1D(axis, values, meta)


def cosy_2d(
    system: SpinSystem,
    dd_block: DDBlock,
    mixing_pulses: int = 40,
    t1_range: Sequence[float] = DEFAULT_SWEEP_S,
    t2_range: Sequence[float] = DEFAULT_SWEEP_S,
    n1: int = DEFAULT_SAMPLES,
    n2: int = DEFAULT_SAMPLES,
    mixing: str = "dd",
    noise_sigma: float = 0.0,
    seed: int = 0,
    workers: Optional[int] = None,
    gap_floor: float = DEFAULT_GAP_FLOOR,
) -> TimeSignal2D:
    """Homonuclear COSY map: init block, ``t1``, mixing, ``t2``, readout block.

    Args:
        mixing: ``"dd"`` for a DD train of ``mixing_pulses`` at the block
            spacing, or ``"nuclear"`` for an ideal pi/2 on all nuclei.
    """
    if n1 < MIN_GRID or n2 < MIN_GRID:
        raise ValueError(f"grid too small: need at least {MIN_GRID} samples per axis")
    axis1 = _sweep(t1_range, n1, "t1")
    axis2 = _sweep(t2_range, n2, "t2")
    schedule = dd_block.compile(gap_floor)
    _require_even(schedule)
    prop = Propagator(system)
    block = prop.schedule_unitary(schedule)
    if mixing == "dd":
        mixer = prop.schedule_unitary(
            compile_dd(mixing_pulses, dd_block.interpulse_spacing, dd_block.phase_pattern, gap_floor)
        )
    elif mixing == "nuclear":
        mixer = prop.pulse(PulseEvent(0.0, ALL_NUCLEAR_CHANNEL, "pi/2", "x"))
    else:
        raise ValueError(f"Invalid mixing '{mixing}' (expected dd or nuclear)")
    rho, observable = _stored_phase(prop, block, block)
    values = _correlation_map(prop, rho, observable, mixer, axis1, axis2, workers)
    meta = {
        "experiment": "cosy2d",
        "n_pulses": dd_block.n_pulses,
        "spacing": dd_block.interpulse_spacing,
        "mixing": mixing,
        "mixing_pulses": mixing_pulses,
        "noise_sigma": noise_sigma,
    }
    logger.info("cosy_2d: %dx%d grid, mixing=%s", n1, n2, mixing)
    return TimeSignal2D(axis1, axis2, _noisy(values, noise_sigma, seed), meta)


def hetero_2d(
    system: SpinSystem,
    species_pair: Sequence[str] = ("13C", "15N"),
    t1_range: Sequence[float] = DEFAULT_SWEEP_S,
    t2_range: Sequence[float] = DEFAULT_SWEEP_S,
    n1: int = DEFAULT_SAMPLES,
    n2: int = DEFAULT_SAMPLES,
    block_time: float = 20e-6,
    noise_sigma: float = 0.0,
    seed: int = 0,
    workers: Optional[int] = None,
    gap_floor: float = DEFAULT_GAP_FLOOR,
) -> TimeSignal2D:
    """Heteronuclear map with non-periodic blocks tuned to both species.

    Each species is addressed at the mean over its nuclei of the DD
    resonance ``(f_0 + f_-1) / 2``. Pulses on the union of the zeros of two
    cosines flip the sensor like the product of two square waves, whose
    weight sits at the sum and difference of their frequencies, so the block
    is compiled from the half-sum and half-difference of the two lines.
    """
    if n1 < MIN_GRID or n2 < MIN_GRID:
        raise ValueError(f"grid too small: need at least {MIN_GRID} samples per axis")
    if len(species_pair) != 2:
        raise ValueError("species_pair must name two species")
    lines = [_species_line(system, name) for name in species_pair]
    frequencies = [f for f in (0.5 * (lines[0] + lines[1]), 0.5 * abs(lines[0] - lines[1])) if f > 0]
    axis1 = _sweep(t1_range, n1, "t1")
    axis2 = _sweep(t2_range, n2, "t2")
    schedule = with_even_pulse_count(compile_nonperiodic(frequencies, block_time, gap_floor))
    prop = Propagator(system)
    block = prop.schedule_unitary(schedule)
    mixer = prop.pulse(PulseEvent(0.0, ALL_NUCLEAR_CHANNEL, "pi/2", "x"))
    rho, observable = _stored_phase(prop, block, block)
    values = _correlation_map(prop, rho, observable, mixer, axis1, axis2, workers)
    meta = {
        "experiment": "hetero2d",
        "species_pair": list(species_pair),
        "line_frequencies": lines,
        "block_frequencies": frequencies,
        "block_pulses": len(schedule.events),
        "noise_sigma": noise_sigma,
    }
    return TimeSignal2D(axis1, axis2, _noisy(values, noise_sigma, seed), meta)
