"""Pulse schedules and exact density-matrix propagation.

Pulses are ideal: zero duration and error free. A schedule is an ordered
list of events plus a total time; free evolution fills the gaps. The
``Propagator`` diagonalizes the Hamiltonian once and reuses the
eigendecomposition for every interval, caching one propagator per distinct
interval length.
"""

from __future__ import annotations

import functools
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy import linalg

from nanonmr2d.errors import ScheduleError
from nanonmr2d.spins import ComplexArray, SpinSystem, build_hamiltonian, nuclear_operators, pauli

logger = logging.getLogger(__name__)

DEFAULT_GAP_FLOOR = 10e-9
FREE_CACHE_SIZE = 128
XY8_AXES = ("x", "y", "x", "y", "y", "x", "y", "x")
ROTATIONS = {"pi": np.pi, "pi/2": np.pi / 2}
ELECTRON_CHANNEL = "electron"
ALL_NUCLEAR_CHANNEL = "nuclear:all"


# -----------------------------
# Models
# -----------------------------
@dataclass(frozen=True)
class PulseEvent:
    """An ideal instantaneous rotation.

    Attributes:
        time: Event time in seconds from the schedule start.
        channel: ``"electron"``, ``"nuclear:all"`` or ``"nuclear:<species>"``.
        rotation: ``"pi"`` or ``"pi/2"``.
        axis: ``"x"`` or ``"y"``.
    """

    time: float
    channel: str = ELECTRON_CHANNEL
    rotation: str = "pi"
    axis: str = "x"

    def __post_init__(self) -> None:
        if not np.isfinite(self.time) or self.time < 0:
            raise ScheduleError(f"event time must be >= 0 (got {self.time})")
        if self.channel != ELECTRON_CHANNEL and not self.channel.startswith("nuclear:"):
            raise ValueError(f"Invalid channel '{self.channel}'")
        if self.rotation not in ROTATIONS:
            raise ValueError(f"Invalid rotation '{self.rotation}' (expected pi or pi/2)")
        if self.axis not in ("x", "y"):
            raise ValueError(f"Invalid axis '{self.axis}' (expected x or y)")

    @property
    def angle(self) -> float:
        return ROTATIONS[self.rotation]


@dataclass(frozen=True)
class PulseSchedule:
    """Timed list of control events.

    Attributes:
        events: Events with strictly increasing times.
        total_time: Schedule length in seconds (>= last event time).
        metadata: Generator name and parameters.
        gap_floor: Minimum spacing between consecutive events.
    """

    events: tuple[PulseEvent, ...]
    total_time: float
    metadata: Mapping[str, Any] = field(default_factory=dict)
    gap_floor: float = DEFAULT_GAP_FLOOR

    def __post_init__(self) -> None:
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        if self.total_time < 0:
            raise ScheduleError("total_time must be >= 0")
        times = [ev.time for ev in events]
        for prev, cur in zip(times, times[1:]):
            if cur - prev < self.gap_floor * (1 - 1e-9):
                raise ScheduleError(f"events at {prev:.6g}s and {cur:.6g}s are closer than the gap floor")
        if times and self.total_time < times[-1]:
            raise ScheduleError("total_time must be >= last event time")

    @property
    def times(self) -> np.ndarray:
        return np.array([ev.time for ev in self.events])

    def reversed(self) -> PulseSchedule:
        """Events mirrored in time: an event at ``t`` moves to ``total_time - t``."""
        events = tuple(
            PulseEvent(self.total_time - ev.time, ev.channel, ev.rotation, ev.axis) for ev in reversed(self.events)
        )
        return PulseSchedule(events, self.total_time, dict(self.metadata, reversed=True), self.gap_floor)

    def timing_table(self) -> str:
        """Plain-text table: one ``time channel rotation axis`` row per event."""
        lines = [f"# generator: {self.metadata.get('generator', 'custom')}", f"# total_time_s: {self.total_time!r}"]
        lines.append("time_s\tchannel\trotation\taxis")
        lines.extend(f"{ev.time!r}\t{ev.channel}\t{ev.rotation}\t{ev.axis}" for ev in self.events)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_timing_table(cls, text: str, gap_floor: float = DEFAULT_GAP_FLOOR) -> PulseSchedule:
        """Parse the output of ``timing_table``."""
        meta: dict[str, str] = {}
        events = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line and not line.startswith("time_s"):
                t, channel, rotation, axis = line.split("\t")
                events.append(PulseEvent(float(t), channel, rotation, axis))
        if "total_time_s" not in meta:
            raise ValueError("timing table has no total_time_s header")
        total = float(meta.pop("total_time_s"))
        return cls(tuple(events), total, {"generator": meta.get("generator", "custom")}, gap_floor)


# -----------------------------
# Compilers
# -----------------------------
def compile_dd(
    n_pulses: int,
    interpulse_spacing: float,
    phase_pattern: str = "XY8",
    gap_floor: float = DEFAULT_GAP_FLOOR,
) -> PulseSchedule:
    """Dynamical-decoupling train of electron pi pulses.

    Pulses sit at ``(k - 1/2) * spacing`` for ``k = 1..N``; total time is
    ``N * spacing``. XY8 cycles ``x,y,x,y,y,x,y,x``; CPMG uses ``x`` only.

    Raises:
        ValueError: If ``n_pulses < 1`` or the pattern is unknown.
        ScheduleError: If the spacing is below the gap floor.
    """
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    if interpulse_spacing < gap_floor:
        raise ScheduleError(f"spacing {interpulse_spacing:.3g}s below gap floor {gap_floor:.3g}s")
    pattern = phase_pattern.upper()
    if pattern not in ("XY8", "CPMG"):
        raise ValueError(f"Invalid phase_pattern '{phase_pattern}' (expected XY8 or CPMG)")
    events = tuple(
        PulseEvent(
            (k + 0.5) * interpulse_spacing,
            ELECTRON_CHANNEL,
            "pi",
            XY8_AXES[k % 8] if pattern == "XY8" else "x",
        )
        for k in range(n_pulses)
    )
    meta = {"generator": "dd", "n_pulses": n_pulses, "spacing": interpulse_spacing, "phase_pattern": pattern}
    return PulseSchedule(events, n_pulses * interpulse_spacing, meta, gap_floor)


def compile_nonperiodic(
    frequencies: Sequence[float], total_time: float, gap_floor: float = DEFAULT_GAP_FLOOR
) -> PulseSchedule:
    """Electron pi pulses on the union of zeros of ``cos(2 pi f_i t)``.

    Zeros of all frequencies in ``(0, total_time)`` are merged; runs of zeros
    closer than the gap floor collapse to the midpoint of the run. The
    caller supplies the bracketing pi/2 pulses.

    Raises:
        ValueError: On empty or non-positive frequencies or total time.
        ScheduleError: If no pulse falls inside the window.
    """
    freqs = [float(f) for f in frequencies]
    if not freqs:
        raise ValueError("at least one frequency is required")
    if any(f <= 0 for f in freqs):
        raise ValueError("frequencies must be positive")
    if total_time <= 0:
        raise ValueError("total_time must be > 0")
    zeros = []
    for f in freqs:
        k_max = int(np.ceil(2.0 * f * total_time))
        ks = np.arange(k_max + 1)
        t = (2 * ks + 1) / (4.0 * f)
        zeros.extend(t[t < total_time].tolist())
    zeros.sort()
    merged: list[float] = []
    run: list[float] = []
    for t in zeros:
        if run and t - run[-1] >= gap_floor:
            merged.append(0.5 * (run[0] + run[-1]))
            run = []
        run.append(t)
    if run:
        merged.append(0.5 * (run[0] + run[-1]))
    if not merged:
        raise ScheduleError("non-periodic schedule is empty")
    events = tuple(PulseEvent(t, ELECTRON_CHANNEL, "pi", "x") for t in merged)
    meta = {"generator": "nonperiodic", "frequencies": tuple(freqs), "total_time": total_time}
    return PulseSchedule(events, total_time, meta, gap_floor)


def with_even_pulse_count(schedule: PulseSchedule) -> PulseSchedule:
    """Append a closing electron pi pulse when the electron pi count is odd."""
    count = sum(1 for ev in schedule.events if ev.channel == ELECTRON_CHANNEL and ev.rotation == "pi")
    if count % 2 == 0:
        return schedule
    t_end = schedule.total_time + schedule.gap_floor
    if schedule.events:
        t_end = max(t_end, schedule.events[-1].time + schedule.gap_floor)
    events = schedule.events + (PulseEvent(t_end, ELECTRON_CHANNEL, "pi", "x"),)
    return PulseSchedule(events, t_end, dict(schedule.metadata, closing_pulse=True), schedule.gap_floor)


# -----------------------------
# States
# -----------------------------
@dataclass(frozen=True, eq=False)
class DensityState:
    """Density matrix on the full sensor-nuclear space.

    Attributes:
        matrix: Complex square matrix; trace 1, Hermitian, PSD.
    """

    matrix: ComplexArray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def check(self, trace_tol: float = 1e-9, herm_tol: float = 1e-10, eig_floor: float = -1e-9) -> None:
        """Raise ``ValueError`` unless trace, Hermiticity, and PSD invariants hold."""
        if abs(self.trace - 1.0) > trace_tol:
            raise ValueError(f"trace {self.trace} differs from 1")
        if np.abs(self.matrix - self.matrix.conj().T).max() > herm_tol:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(self.matrix).min() < eig_floor:
            raise ValueError("density matrix has a negative eigenvalue")

    @classmethod
    def sensor_plus(cls, n_nuclei: int) -> DensityState:
        """Sensor in ``|+> = (|0> + |-1>)/sqrt(2)``, nuclei maximally mixed."""
        plus = 0.5 * np.ones((2, 2), dtype=complex)
        return cls(np.kron(plus, np.eye(2**n_nuclei) / 2**n_nuclei))

    @classmethod
    def from_ket(cls, ket: Sequence[complex]) -> DensityState:
        psi = np.asarray(ket, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))


def sensor_coherence(state: DensityState, frame: Optional[ComplexArray] = None) -> float:
    """Sensor ``<sigma_x>``, optionally in the frame of an ideal electron pulse product.

    With ``frame = P`` the observable is ``P sigma_x P^dagger``, so a train
    that leaves the bare sensor in ``P|+>`` reads 1 without nuclei.
    """
    n_nuc = int(np.log2(state.dimension)) - 1
    sx = pauli("x")
    if frame is not None:
        sx = frame @ sx @ frame.conj().T
    observable = np.kron(sx, np.eye(2**n_nuc))
    return float(np.real(np.sum(state.matrix * observable.T)))


def dephase_electron(state: DensityState) -> DensityState:
    """Drop sensor coherences, keeping the two population blocks."""
    half = state.dimension // 2
    m = np.array(state.matrix)
    m[:half, half:] = 0.0
    m[half:, :half] = 0.0
    return DensityState(m)


def electron_frame(schedule: PulseSchedule) -> ComplexArray:
    """Product of the schedule's electron rotations as a 2x2 qubit unitary."""
    frame = np.eye(2, dtype=complex)
    for ev in schedule.events:
        if ev.channel == ELECTRON_CHANNEL:
            frame = _qubit_rotation(ev.angle, ev.axis) @ frame
    return frame


def _qubit_rotation(angle: float, axis: str) -> ComplexArray:
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * pauli(axis)


# -----------------------------
# Propagation
# -----------------------------
class Propagator:
    """Exact propagator for one system.

    The Hamiltonian is diagonalized once; ``free(dt)`` is built from the
    eigendecomposition and kept in a least-recently-used cache of
    ``FREE_CACHE_SIZE`` matrices, so long sweeps at large dimension stay
    bounded in memory.

    Args:
        system: Spin system.
        hamiltonian: Optional override of the assembled Hamiltonian (rad/s),
            e.g. ``-H`` for time-reversal checks.
    """

    def __init__(self, system: SpinSystem, hamiltonian: Optional[ComplexArray] = None) -> None:
        self.system = system
        h = build_hamiltonian(system) if hamiltonian is None else np.asarray(hamiltonian, dtype=complex)
        if h.shape != (system.dimension, system.dimension):
            raise ValueError("dimension mismatch between Hamiltonian and system")
        self._energies, self._vectors = linalg.eigh(h)
        self._cached_free = functools.lru_cache(maxsize=FREE_CACHE_SIZE)(self._build_free)
        self._pulse_cache: dict[tuple[str, str, str], ComplexArray] = {}

    @property
    def dimension(self) -> int:
        return self.system.dimension

    def free(self, dt: float) -> ComplexArray:
        """``exp(-i H dt)``."""
        if dt < 0:
            raise ValueError("free evolution time must be >= 0")
        return self._cached_free(float(dt))

    def free_cache_info(self) -> Any:
        """Hit/miss counters and current size of the free-evolution cache."""
        return self._cached_free.cache_info()

    def _build_free(self, dt: float) -> ComplexArray:
        return (self._vectors * self.phases(dt)) @ self._vectors.conj().T

    def phases(self, dt: float) -> ComplexArray:
        """``exp(-i E dt)`` per eigenvalue of H."""
        return np.exp(-1j * self._energies * dt)

    def to_eigenbasis(self, operator: ComplexArray) -> ComplexArray:
        """``V^dagger A V`` with V the eigenvectors of H."""
        return self._vectors.conj().T @ operator @ self._vectors

    def pulse(self, event: PulseEvent) -> ComplexArray:
        key = (event.channel, event.rotation, event.axis)
        cached = self._pulse_cache.get(key)
        if cached is None:
            cached = self._build_pulse(event)
            self._pulse_cache[key] = cached
        return cached

    def _build_pulse(self, event: PulseEvent) -> ComplexArray:
        n = self.system.n_nuclei
        if event.channel == ELECTRON_CHANNEL:
            return np.kron(_qubit_rotation(event.angle, event.axis), np.eye(2**n))
        target = event.channel.split(":", 1)[1]
        selected = (
            range(n) if target == "all" else [i for i, nuc in enumerate(self.system.nuclei) if nuc.species.name == target]
        )
        selected = set(selected)
        if not selected:
            raise ValueError(f"channel '{event.channel}' selects no nuclei")
        factors = [_qubit_rotation(event.angle, event.axis) if k in selected else np.eye(2) for k in range(n)]
        nuclear = factors[0]
        for f in factors[1:]:
            nuclear = np.kron(nuclear, f)
        return np.kron(np.eye(2), nuclear)

    def nuclear_rotation(self, angle: float, axis: str = "x", species: Optional[str] = None) -> ComplexArray:
        """Rotation of all (or one species of) nuclei by an arbitrary angle."""
        ops = nuclear_operators(self.system.n_nuclei)
        generator = sum(
            ops[i][axis]
            for i, nuc in enumerate(self.system.nuclei)
            if species is None or nuc.species.name == species
        )
        return np.kron(np.eye(2), linalg.expm(-1j * angle * generator))

    def schedule_unitary(self, schedule: PulseSchedule) -> ComplexArray:
        """Unitary of a whole schedule, free evolution interleaved with pulses."""
        u = np.eye(self.dimension, dtype=complex)
        t = 0.0
        for ev in schedule.events:
            u = self.pulse(ev) @ self.free(ev.time - t) @ u
            t = ev.time
        return self.free(schedule.total_time - t) @ u

    def evolve(self, unitary: ComplexArray, state: DensityState) -> DensityState:
        return DensityState(unitary @ state.matrix @ unitary.conj().T)


def propagate(
    system: SpinSystem,
    schedule: PulseSchedule,
    initial: DensityState,
    propagator: Optional[Propagator] = None,
) -> DensityState:
    """Propagate ``initial`` through ``schedule``.

    Raises:
        ValueError: If the state dimension does not match the system.
    """
    if initial.dimension != system.dimension:
        raise ValueError(f"dimension mismatch: state {initial.dimension}, system {system.dimension}")
    prop = propagator if propagator is not None else Propagator(system)
    return prop.evolve(prop.schedule_unitary(schedule), initial)
