"""Spin species, coupling tensors, and the electron-nuclear Hamiltonian.

The sensor is the NV electron restricted to the ``{m_s=0, m_s=-1}`` pair of
levels; nuclei are spin-1/2. All user-facing frequencies are in Hz (cycles);
the conversion to angular frequency happens only in ``build_hamiltonian``.

Frames:
    Positions and tensors live in the NV frame (z along the NV axis). The
    external field lies in the xz plane at ``field_polar_angle`` from z.

Example:
    Two carbon-13 nuclei near an NV center::

        import numpy as np
        from nanonmr2d.spins import DEFAULT_SPECIES, NuclearSpin, SpinSystem

        c13 = DEFAULT_SPECIES["13C"]
        system = SpinSystem(
            field_magnitude=0.18,
            nuclei=(
                NuclearSpin(c13, np.array([0.0, 3e-10, 8e-10]), label=0),
                NuclearSpin(c13, np.array([0.0, 3e-10, 9.544e-10]), label=1),
            ),
        )
        h = build_hamiltonian(system)  # 8x8, rad/s
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import lru_cache, reduce
from pathlib import Path
from types import MappingProxyType
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
import toml

from nanonmr2d.errors import DegenerateGeometryError, ModelValidityError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]

MU0_OVER_4PI = 1e-7  # T m / A
PLANCK = 6.62607015e-34  # J s
ANGSTROM = 1e-10
MAX_NUCLEI = 10
MIN_NUCLEUS_DISTANCE = 0.5 * ANGSTROM
POINT_DIPOLE_FLOOR = 3.0 * ANGSTROM
SCHEMA_VERSION = 1
AXES = ("x", "y", "z")


def _frozen_array(values: Any, shape: tuple[int, ...], what: str) -> FloatArray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite")
    arr.setflags(write=False)
    return arr


# -----------------------------
# Species
# -----------------------------
@dataclass(frozen=True)
class SpinSpecies:
    """A spin species.

    Attributes:
        name: Label used in configs and pulse channels (e.g. ``"13C"``).
        gyromagnetic_ratio: Signed gyromagnetic ratio in Hz/T.
        spin_quantum_number: Fixed to 1/2.
    """

    name: str
    gyromagnetic_ratio: float
    spin_quantum_number: float = 0.5

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("species name must be non-empty")
        if not np.isfinite(self.gyromagnetic_ratio) or self.gyromagnetic_ratio == 0:
            raise ValueError(f"gyromagnetic_ratio of '{self.name}' must be nonzero")
        if self.spin_quantum_number != 0.5:
            raise ModelValidityError(f"'{self.name}': only spin-1/2 species are supported")


ELECTRON = SpinSpecies("e", 28_024.95e6)

DEFAULT_SPECIES: Mapping[str, SpinSpecies] = MappingProxyType(
    {
        "13C": SpinSpecies("13C", 10.7084e6),
        "1H": SpinSpecies("1H", 42.5775e6),
        "15N": SpinSpecies("15N", -4.3163e6),
        "e": ELECTRON,
    }
)


def larmor_frequency(species: SpinSpecies, field: float) -> float:
    """Return the signed Larmor frequency ``gamma * B`` in Hz.

    Raises:
        ValueError: If ``field`` is negative.
    """
    if field < 0:
        raise ValueError("field must be >= 0")
    return species.gyromagnetic_ratio * field


def dipolar_constant(s1: SpinSpecies, s2: SpinSpecies, distance: float) -> float:
    """Signed dipolar coupling constant ``(mu0/4pi) h g1 g2 / r^3`` in Hz."""
    if distance <= 0:
        raise DegenerateGeometryError("distance must be > 0")
    return MU0_OVER_4PI * PLANCK * s1.gyromagnetic_ratio * s2.gyromagnetic_ratio / distance**3


def _dipole_form(d: float, separation: FloatArray) -> FloatArray:
    e = separation / np.linalg.norm(separation)
    return d * (np.eye(3) - 3.0 * np.outer(e, e))


# -----------------------------
# Tensors
# -----------------------------
@dataclass(frozen=True, eq=False)
class HyperfineTensor:
    """Electron-nucleus coupling tensor (Hz, NV frame).

    Attributes:
        components: Symmetric 3x3 tensor.
    """

    components: FloatArray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.components, (3, 3), "hyperfine tensor")
        if np.abs(arr - arr.T).max() > 1e-9 * np.abs(arr).max():
            raise ValueError("hyperfine tensor must be symmetric")
        object.__setattr__(self, "components", arr)

    @property
    def a_parallel(self) -> float:
        return float(self.components[2, 2])

    @property
    def a_perp(self) -> float:
        return float(np.hypot(self.components[2, 0], self.components[2, 1]))

    @classmethod
    def from_parallel(cls, a_parallel: float, a_perp: float = 0.0) -> HyperfineTensor:
        """Tensor whose z row is ``(a_perp, 0, a_parallel)``."""
        comp = np.zeros((3, 3))
        comp[2, 2] = a_parallel
        comp[0, 2] = comp[2, 0] = a_perp
        return cls(comp)


@dataclass(frozen=True, eq=False)
class DipolarTensor:
    """Nucleus-nucleus coupling tensor (Hz, NV frame).

    Attributes:
        components: Symmetric traceless 3x3 tensor.
    """

    components: FloatArray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.components, (3, 3), "dipolar tensor")
        scale = np.abs(arr).max()
        if np.abs(arr - arr.T).max() > 1e-9 * scale:
            raise ValueError("dipolar tensor must be symmetric")
        if abs(np.trace(arr)) > 1e-6 * scale:
            raise ValueError("dipolar tensor must be traceless")
        object.__setattr__(self, "components", arr)

    @property
    def j_zz(self) -> float:
        return float(self.components[2, 2])

    def secular(self, direction: Sequence[float]) -> float:
        """Projection ``b . J . b`` on a quantization direction."""
        b = np.asarray(direction, dtype=float)
        b = b / np.linalg.norm(b)
        return float(b @ self.components @ b)

    @classmethod
    def zero(cls) -> DipolarTensor:
        return cls(np.zeros((3, 3)))

    @classmethod
    def axial(cls, j_zz: float) -> DipolarTensor:
        """Axially symmetric tensor along z with the given zz component."""
        return cls(j_zz * np.diag([-0.5, -0.5, 1.0]))


def dipolar_tensor_from_positions(
    p1: Sequence[float], p2: Sequence[float], s1: SpinSpecies, s2: SpinSpecies
) -> DipolarTensor:
    """Point-dipole coupling tensor between two nuclei.

    Returns ``d (delta_ij - 3 e_i e_j)`` with ``d = (mu0/4pi) h g1 g2 / r^3``.

    Raises:
        DegenerateGeometryError: If the positions coincide.
    """
    sep = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    r = float(np.linalg.norm(sep))
    if r < 1e-15:
        raise DegenerateGeometryError("coincident nuclear positions")
    return DipolarTensor(_dipole_form(dipolar_constant(s1, s2, r), sep))


def hyperfine_point_dipole(
    nv_position: Sequence[float],
    nuc_position: Sequence[float],
    species: SpinSpecies,
    electron: SpinSpecies = ELECTRON,
) -> HyperfineTensor:
    """Point-dipole electron-nucleus tensor, same angular form as the dipolar one.

    Raises:
        ModelValidityError: If the nucleus is closer than 3 Angstrom to the NV.
    """
    sep = np.asarray(nuc_position, dtype=float) - np.asarray(nv_position, dtype=float)
    r = float(np.linalg.norm(sep))
    if r < POINT_DIPOLE_FLOOR:
        raise ModelValidityError(
            f"point-dipole hyperfine needs r >= 3 A (got {r / ANGSTROM:.3f} A); give an explicit tensor"
        )
    return HyperfineTensor(_dipole_form(dipolar_constant(electron, species, r), sep))


def secular_jzz(tensor: DipolarTensor, direction: Sequence[float]) -> float:
    return tensor.secular(direction)


def field_direction(polar_angle: float) -> FloatArray:
    """Unit field vector in the NV frame; the field is tilted within the xz plane."""
    return np.array([np.sin(polar_angle), 0.0, np.cos(polar_angle)])


# -----------------------------
# Spin system
# -----------------------------
@dataclass(frozen=True, eq=False)
class NuclearSpin:
    """A nuclear spin near the sensor.

    Attributes:
        species: Nuclear species.
        position: Position in meters, NV frame.
        hyperfine: Explicit hyperfine tensor, or ``None`` for point-dipole.
        label: Index used in reports and coupling keys.
    """

    species: SpinSpecies
    position: FloatArray
    hyperfine: Optional[HyperfineTensor] = None
    label: int = 0

    def __post_init__(self) -> None:
        pos = _frozen_array(self.position, (3,), "position")
        if np.linalg.norm(pos) <= MIN_NUCLEUS_DISTANCE:
            raise ModelValidityError("nucleus overlaps the NV site (|position| <= 0.5 A)")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Field, sensor, and nuclei: the single source of physical truth.

    Attributes:
        field_magnitude: External field in Tesla.
        nuclei: Nuclear spins; at most ``MAX_NUCLEI``.
        field_polar_angle: Angle between field and NV axis, radians.
        gradient: Field gradient along z in T/m.
        pair_couplings: Coupling per pair ``(i, j)`` with ``i < j``. Pairs not
            given explicitly are derived from positions.
        hyperfines: Resolved hyperfine tensor per nucleus (derived).
    """

    field_magnitude: float
    nuclei: tuple[NuclearSpin, ...] = ()
    field_polar_angle: float = 0.0
    gradient: float = 0.0
    pair_couplings: Optional[Mapping[tuple[int, int], DipolarTensor]] = None
    hyperfines: tuple[HyperfineTensor, ...] = field(init=False)

    def __post_init__(self) -> None:
        nuclei = tuple(self.nuclei)
        if len(nuclei) > MAX_NUCLEI:
            raise ModelValidityError(f"at most {MAX_NUCLEI} nuclei are supported (got {len(nuclei)})")
        if self.field_magnitude < 0:
            raise ValueError("field_magnitude must be >= 0")
        hyperfines = tuple(
            nuc.hyperfine
            if nuc.hyperfine is not None
            else hyperfine_point_dipole((0.0, 0.0, 0.0), nuc.position, nuc.species)
            for nuc in nuclei
        )
        explicit = dict(self.pair_couplings or {})
        couplings: dict[tuple[int, int], DipolarTensor] = {}
        for (i, j), tensor in explicit.items():
            key = (min(i, j), max(i, j))
            if i == j or key[0] < 0 or key[1] >= len(nuclei):
                raise ValueError(f"invalid coupling pair {(i, j)}")
            if key in couplings:
                raise ValueError(f"duplicate coupling pair {key}")
            couplings[key] = tensor
        for i in range(len(nuclei)):
            for j in range(i + 1, len(nuclei)):
                if (i, j) not in couplings:
                    couplings[(i, j)] = dipolar_tensor_from_positions(
                        nuclei[i].position, nuclei[j].position, nuclei[i].species, nuclei[j].species
                    )
        object.__setattr__(self, "nuclei", nuclei)
        object.__setattr__(self, "hyperfines", hyperfines)
        object.__setattr__(self, "pair_couplings", MappingProxyType(dict(sorted(couplings.items()))))

    @property
    def n_nuclei(self) -> int:
        return len(self.nuclei)

    @property
    def dimension(self) -> int:
        return 2 ** (self.n_nuclei + 1)

    @property
    def field_direction(self) -> FloatArray:
        return field_direction(self.field_polar_angle)

    def larmor_frequencies(self) -> FloatArray:
        """Signed Larmor frequency per nucleus including the gradient shift."""
        return np.array(
            [
                nuc.species.gyromagnetic_ratio * (self.field_magnitude + self.gradient * nuc.position[2])
                for nuc in self.nuclei
            ]
        )

    def species_indices(self, name: str) -> list[int]:
        return [i for i, nuc in enumerate(self.nuclei) if nuc.species.name == name]

    def with_pair_couplings_zeroed(self) -> SpinSystem:
        """Same nuclei and hyperfines with every nucleus-nucleus coupling removed."""
        zero = {key: DipolarTensor.zero() for key in self.pair_couplings}
        nuclei = tuple(replace(nuc, hyperfine=hf) for nuc, hf in zip(self.nuclei, self.hyperfines))
        return replace(self, nuclei=nuclei, pair_couplings=zero)

    def with_field_angle(self, polar_angle: float) -> SpinSystem:
        return replace(self, field_polar_angle=polar_angle, pair_couplings=dict(self.pair_couplings))


# -----------------------------
# Operators and Hamiltonian
# -----------------------------
_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_ID2 = np.eye(2, dtype=complex)
# Sensor S_z on the {m_s=0, m_s=-1} qubit.
_SZ = np.diag([0.0, -1.0]).astype(complex)


def pauli(axis: str) -> ComplexArray:
    return _PAULI[axis].copy()


def _kron_all(factors: Sequence[ComplexArray]) -> ComplexArray:
    return reduce(np.kron, factors)


@lru_cache(maxsize=None)
def nuclear_operators(n_nuclei: int) -> tuple[dict[str, ComplexArray], ...]:
    """Spin-1/2 operators ``I_x, I_y, I_z`` per nucleus on the nuclear space."""
    ops = []
    for k in range(n_nuclei):
        per_axis = {}
        for axis in AXES:
            factors = [_ID2] * n_nuclei
            factors[k] = 0.5 * _PAULI[axis]
            op = _kron_all(factors)
            op.setflags(write=False)
            per_axis[axis] = op
        ops.append(per_axis)
    return tuple(ops)


@lru_cache(maxsize=None)
def spin_operators(n_nuclei: int) -> tuple[dict[str, ComplexArray], tuple[dict[str, ComplexArray], ...]]:
    """Sensor and nuclear operators on the full ``2^(n+1)`` space.

    Returns:
        ``(sensor, nuclear)`` where ``sensor`` maps ``"sz"``, ``"x"``, ``"y"``,
        ``"z"`` (qubit Pauli matrices) to embedded operators and ``nuclear``
        holds one ``{"x", "y", "z"}`` dict per nucleus.
    """
    eye_n = np.eye(2**n_nuclei, dtype=complex)
    sensor = {"sz": np.kron(_SZ, eye_n)}
    for axis in AXES:
        sensor[axis] = np.kron(_PAULI[axis], eye_n)
    nuclear = tuple({axis: np.kron(_ID2, op) for axis, op in per.items()} for per in nuclear_operators(n_nuclei))
    for op in list(sensor.values()) + [op for per in nuclear for op in per.values()]:
        op.setflags(write=False)
    return sensor, nuclear


def build_hamiltonian(system: SpinSystem) -> ComplexArray:
    """Assemble the full Hamiltonian in rad/s.

    Terms: nuclear Zeeman along the field direction (gradient-shifted per
    nucleus), electron-secular hyperfine ``S_z (A_zx I_x + A_zy I_y + A_zz I_z)``,
    and the full nucleus-nucleus tensor coupling ``I_i . J . I_j``.
    """
    sensor, nuclear = spin_operators(system.n_nuclei)
    h = np.zeros((system.dimension, system.dimension), dtype=complex)
    direction = system.field_direction
    for i, nu in enumerate(system.larmor_frequencies()):
        ops = nuclear[i]
        h += nu * sum(direction[k] * ops[axis] for k, axis in enumerate(AXES))
        row = system.hyperfines[i].components[2]
        h += sensor["sz"] @ sum(row[k] * ops[axis] for k, axis in enumerate(AXES))
    for (i, j), tensor in system.pair_couplings.items():
        for a, axis_a in enumerate(AXES):
            for b, axis_b in enumerate(AXES):
                c = tensor.components[a, b]
                if c != 0.0:
                    h += c * (nuclear[i][axis_a] @ nuclear[j][axis_b])
    return 2.0 * np.pi * h


def manifold_hamiltonian(
    larmors: Sequence[float],
    direction: Sequence[float],
    hyperfine_rows: Sequence[Sequence[float]],
    couplings: Mapping[tuple[int, int], FloatArray],
    m_s: int,
) -> ComplexArray:
    """Nuclear Hamiltonian (Hz) with the sensor frozen in manifold ``m_s``."""
    n = len(larmors)
    ops = nuclear_operators(n)
    h = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        vec = np.asarray(larmors[i]) * np.asarray(direction, dtype=float) + m_s * np.asarray(
            hyperfine_rows[i], dtype=float
        )
        h += sum(vec[k] * ops[i][axis] for k, axis in enumerate(AXES))
    for (i, j), comp in couplings.items():
        for a, axis_a in enumerate(AXES):
            for b, axis_b in enumerate(AXES):
                if comp[a][b] != 0.0:
                    h += comp[a][b] * (ops[i][axis_a] @ ops[j][axis_b])
    return h


def manifold_transitions(hamiltonian: ComplexArray, n_nuclei: int, min_weight: float = 1e-3) -> tuple[FloatArray, FloatArray]:
    """Transition frequencies (Hz) with single-quantum weights, sorted by frequency.

    Weights are ``|<a|I_x|b>|^2 + |<a|I_y|b>|^2`` summed over nuclei;
    lines below ``min_weight`` times the strongest are dropped and
    degenerate lines are merged.
    """
    if n_nuclei == 0:
        return np.array([]), np.array([])
    energies, vectors = np.linalg.eigh(hamiltonian)
    ops = nuclear_operators(n_nuclei)
    total = {axis: sum(per[axis] for per in ops) for axis in ("x", "y")}
    weights = sum(np.abs(vectors.conj().T @ total[axis] @ vectors) ** 2 for axis in ("x", "y"))
    freqs, amps = [], []
    for a in range(len(energies)):
        for b in range(a + 1, len(energies)):
            freqs.append(abs(energies[b] - energies[a]))
            amps.append(weights[a, b])
    freqs_arr, amps_arr = np.array(freqs), np.array(amps)
    if amps_arr.size == 0 or amps_arr.max() == 0:
        return np.array([]), np.array([])
    keep = (amps_arr > min_weight * amps_arr.max()) & (freqs_arr > 0)
    order = np.argsort(freqs_arr[keep])
    f_sorted, w_sorted = freqs_arr[keep][order], amps_arr[keep][order]
    merged_f: list[float] = []
    merged_w: list[float] = []
    for f, w in zip(f_sorted, w_sorted):
        if merged_f and f - merged_f[-1] < 1e-6:
            merged_w[-1] += w
        else:
            merged_f.append(f)
            merged_w.append(w)
    return np.array(merged_f), np.array(merged_w)


def transition_frequencies(system: SpinSystem, m_s: int = -1, min_weight: float = 1e-3) -> tuple[FloatArray, FloatArray]:
    """Exact-diagonalization nuclear line positions in one sensor manifold."""
    if m_s not in (0, -1):
        raise ValueError("m_s must be 0 or -1")
    if system.n_nuclei == 0:
        return np.array([]), np.array([])
    h = manifold_hamiltonian(
        system.larmor_frequencies(),
        system.field_direction,
        [hf.components[2] for hf in system.hyperfines],
        {key: t.components for key, t in system.pair_couplings.items()},
        m_s,
    )
    return manifold_transitions(h, system.n_nuclei, min_weight)


# -----------------------------
# Serialization
# -----------------------------
_SYSTEM_KEYS = {"schema_version", "field_t", "field_polar_angle_rad", "gradient_t_per_m", "nuclei", "pair_couplings"}
_NUCLEUS_KEYS = {"label", "species", "position_angstrom", "hyperfine_hz"}
_COUPLING_KEYS = {"i", "j", "tensor_hz"}


def system_to_dict(system: SpinSystem) -> dict[str, Any]:
    """Structured record of a system (positions in Angstrom, tensors in Hz)."""
    nuclei = []
    for nuc in system.nuclei:
        rec: dict[str, Any] = {
            "label": nuc.label,
            "species": nuc.species.name,
            "position_angstrom": (nuc.position / ANGSTROM).tolist(),
        }
        if nuc.hyperfine is not None:
            rec["hyperfine_hz"] = nuc.hyperfine.components.tolist()
        nuclei.append(rec)
    return {
        "schema_version": SCHEMA_VERSION,
        "field_t": float(system.field_magnitude),
        "field_polar_angle_rad": float(system.field_polar_angle),
        "gradient_t_per_m": float(system.gradient),
        "nuclei": nuclei,
        "pair_couplings": [
            {"i": i, "j": j, "tensor_hz": t.components.tolist()} for (i, j), t in system.pair_couplings.items()
        ],
    }


def _check_keys(record: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(record) - allowed)
    if unknown:
        raise ValueError(f"Unknown key '{where}.{unknown[0]}'")


def system_from_dict(
    data: Mapping[str, Any], species_table: Mapping[str, SpinSpecies] = DEFAULT_SPECIES
) -> SpinSystem:
    """Inverse of ``system_to_dict``.

    Raises:
        ValueError: On unknown keys, wrong schema version, or unknown species.
    """
    _check_keys(data, _SYSTEM_KEYS, "system")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"Invalid 'schema_version' (expected {SCHEMA_VERSION}).")
    nuclei = []
    for k, rec in enumerate(data.get("nuclei", [])):
        _check_keys(rec, _NUCLEUS_KEYS, f"nuclei[{k}]")
        name = rec.get("species")
        if name not in species_table:
            raise ValueError(f"Unknown species '{name}' in nuclei[{k}]")
        hf = rec.get("hyperfine_hz")
        nuclei.append(
            NuclearSpin(
                species=species_table[name],
                position=np.asarray(rec["position_angstrom"], dtype=float) * ANGSTROM,
                hyperfine=HyperfineTensor(np.asarray(hf)) if hf is not None else None,
                label=int(rec.get("label", k)),
            )
        )
    couplings = {}
    for k, rec in enumerate(data.get("pair_couplings", [])):
        _check_keys(rec, _COUPLING_KEYS, f"pair_couplings[{k}]")
        couplings[(int(rec["i"]), int(rec["j"]))] = DipolarTensor(np.asarray(rec["tensor_hz"]))
    return SpinSystem(
        field_magnitude=float(data["field_t"]),
        nuclei=tuple(nuclei),
        field_polar_angle=float(data.get("field_polar_angle_rad", 0.0)),
        gradient=float(data.get("gradient_t_per_m", 0.0)),
        pair_couplings=couplings,
    )


def dump_system(system: SpinSystem, path: Path) -> None:
    path.write_text(toml.dumps(system_to_dict(system)), encoding="utf-8")


def load_system(path: Path, species_table: Mapping[str, SpinSpecies] = DEFAULT_SPECIES) -> SpinSystem:
    """Read a system written by ``dump_system``.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
    """
    if not path.exists():
        raise FileNotFoundError(f"System file not found: {path}")
    return system_from_dict(toml.loads(path.read_text(encoding="utf-8")), species_table)
