"""Tests for nanonmr2d.spins: species, tensors, systems and the Hamiltonian."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from nanonmr2d.errors import DegenerateGeometryError, ModelValidityError
from nanonmr2d.spins import (
    ANGSTROM,
    DEFAULT_SPECIES,
    DipolarTensor,
    HyperfineTensor,
    NuclearSpin,
    SpinSpecies,
    SpinSystem,
    build_hamiltonian,
    dipolar_constant,
    dipolar_tensor_from_positions,
    dump_system,
    hyperfine_point_dipole,
    larmor_frequency,
    load_system,
    spin_operators,
    system_from_dict,
    system_to_dict,
    transition_frequencies,
)

C13 = DEFAULT_SPECIES["13C"]
FIELD = 0.18


def _pair(couple: bool = True) -> SpinSystem:
    system = SpinSystem(
        field_magnitude=FIELD,
        nuclei=(
            NuclearSpin(C13, np.array([0.0, 0.0, 5.0]) * ANGSTROM, HyperfineTensor.from_parallel(-60e3, 30e3), 0),
            NuclearSpin(C13, np.array([0.0, 0.0, 6.544]) * ANGSTROM, HyperfineTensor.from_parallel(-120e3, 25e3), 1),
        ),
    )
    return system if couple else system.with_pair_couplings_zeroed()


def test_larmor_frequency_of_carbon() -> None:
    """13C at 0.18 T precesses at about 1927.5 kHz."""
    assert larmor_frequency(C13, FIELD) == pytest.approx(1927.5e3, abs=100.0)


def test_larmor_frequency_rejects_negative_field() -> None:
    """Negative field raises ValueError."""
    with pytest.raises(ValueError, match="field"):
        larmor_frequency(C13, -1.0)


def test_dipolar_constant_of_carbon_bond() -> None:
    """Two 13C at 1.544 A couple with d of about 2.063 kHz."""
    assert dipolar_constant(C13, C13, 1.544 * ANGSTROM) == pytest.approx(2063.0, rel=2e-3)


def test_dipolar_constant_rejects_zero_distance() -> None:
    """Zero distance raises DegenerateGeometryError."""
    with pytest.raises(DegenerateGeometryError):
        dipolar_constant(C13, C13, 0.0)


def test_species_must_be_spin_half() -> None:
    """Species with spin other than 1/2 are rejected."""
    with pytest.raises(ModelValidityError, match="spin-1/2"):
        SpinSpecies("14N", 3.077e6, 1.0)


def test_point_dipole_hyperfine_on_axis() -> None:
    """A nucleus 1 nm above the NV gets A_par = -2 d with d ~ 19.88 kHz and no A_perp."""
    system = SpinSystem(FIELD, (NuclearSpin(C13, np.array([0.0, 0.0, 10.0]) * ANGSTROM),))
    d = dipolar_constant(DEFAULT_SPECIES["e"], C13, 1e-9)
    assert d == pytest.approx(19.88e3, rel=1e-3)
    assert system.hyperfines[0].a_parallel == pytest.approx(-2.0 * d)
    assert system.hyperfines[0].a_perp == pytest.approx(0.0, abs=1e-9)


def test_point_dipole_needs_three_angstrom() -> None:
    """A nucleus closer than 3 A without an explicit tensor is rejected."""
    with pytest.raises(ModelValidityError, match="3 A"):
        SpinSystem(FIELD, (NuclearSpin(C13, np.array([0.0, 0.0, 2.0]) * ANGSTROM),))


def test_nucleus_on_nv_site_is_rejected() -> None:
    """A nucleus at the NV position is rejected."""
    with pytest.raises(ModelValidityError):
        NuclearSpin(C13, np.zeros(3))


def test_too_many_nuclei() -> None:
    """More than ten nuclei raise ModelValidityError."""
    nuclei = tuple(
        NuclearSpin(C13, np.array([0.0, 0.0, 5.0 + 2.0 * k]) * ANGSTROM, HyperfineTensor.from_parallel(1e3), k)
        for k in range(11)
    )
    with pytest.raises(ModelValidityError, match="at most 10"):
        SpinSystem(FIELD, nuclei)


def test_hyperfine_tensor_must_be_symmetric() -> None:
    """An asymmetric hyperfine tensor raises ValueError."""
    comp = np.zeros((3, 3))
    comp[2, 0] = 1e3
    with pytest.raises(ValueError, match="symmetric"):
        HyperfineTensor(comp)


def test_dipolar_tensor_must_be_traceless() -> None:
    """A dipolar tensor with nonzero trace raises ValueError."""
    with pytest.raises(ValueError, match="traceless"):
        DipolarTensor(np.eye(3))


def test_dipolar_tensor_along_x() -> None:
    """A bond along x gives diag(-2d, d, d), symmetric and traceless."""
    tensor = dipolar_tensor_from_positions([0.0, 0.0, 0.0], [1.544 * ANGSTROM, 0.0, 0.0], C13, C13)
    d = dipolar_constant(C13, C13, 1.544 * ANGSTROM)
    assert np.allclose(tensor.components, np.diag([-2.0 * d, d, d]))


def test_dipolar_tensor_rejects_coincident_positions() -> None:
    """Two nuclei at the same point raise DegenerateGeometryError."""
    with pytest.raises(DegenerateGeometryError, match="coincident"):
        dipolar_tensor_from_positions([1e-10, 0.0, 0.0], [1e-10, 0.0, 0.0], C13, C13)


def test_point_dipole_hyperfine_off_axis() -> None:
    """At 45 degrees in the xz plane A_par = -d/2 and A_perp = 3d/2."""
    r = 1e-9
    tensor = hyperfine_point_dipole([0.0, 0.0, 0.0], [r / np.sqrt(2.0), 0.0, r / np.sqrt(2.0)], C13)
    d = dipolar_constant(DEFAULT_SPECIES["e"], C13, r)
    assert tensor.a_parallel == pytest.approx(-0.5 * d)
    assert tensor.a_perp == pytest.approx(1.5 * d)


def test_axial_secular_vanishes_at_magic_angle() -> None:
    """b.J.b of an axial tensor follows (3 cos^2 - 1) / 2."""
    tensor = DipolarTensor.axial(2e3)
    magic = np.arccos(1.0 / np.sqrt(3.0))
    assert tensor.secular([0.0, 0.0, 1.0]) == pytest.approx(2e3)
    assert tensor.secular([np.sin(magic), 0.0, np.cos(magic)]) == pytest.approx(0.0, abs=1e-9)


def test_pair_coupling_derived_from_positions() -> None:
    """Pairs without explicit tensors get the point-dipole tensor along their bond."""
    system = _pair()
    d = dipolar_constant(C13, C13, 1.544 * ANGSTROM)
    assert system.pair_couplings[(0, 1)].j_zz == pytest.approx(-2.0 * d, rel=1e-9)


def test_zeroed_couplings_keep_hyperfines() -> None:
    """with_pair_couplings_zeroed removes J and keeps every hyperfine tensor."""
    coupled = _pair()
    isolated = coupled.with_pair_couplings_zeroed()
    assert np.all(isolated.pair_couplings[(0, 1)].components == 0.0)
    for a, b in zip(coupled.hyperfines, isolated.hyperfines):
        assert np.array_equal(a.components, b.components)


def test_duplicate_coupling_pairs_rejected() -> None:
    """(0, 1) and (1, 0) given together are a duplicate."""
    with pytest.raises(ValueError, match="duplicate"):
        SpinSystem(
            FIELD,
            _pair().nuclei,
            pair_couplings={(0, 1): DipolarTensor.zero(), (1, 0): DipolarTensor.zero()},
        )


def test_hamiltonian_is_hermitian_with_right_dimension() -> None:
    """The Hamiltonian of a pair is an 8x8 Hermitian matrix."""
    h = build_hamiltonian(_pair())
    assert h.shape == (8, 8)
    assert np.allclose(h, h.conj().T)


def test_sensor_sz_spans_zero_and_minus_one() -> None:
    """The sensor S_z has eigenvalues 0 and -1."""
    sensor, _ = spin_operators(1)
    assert sorted(np.linalg.eigvalsh(sensor["sz"]).round(12)) == [-1.0, -1.0, 0.0, 0.0]


def test_isolated_lines_follow_hyperfine_shift() -> None:
    """Without J the m_s=-1 lines sit at |(w_L - A_par, -A_perp)| and m_s=0 at w_L."""
    system = _pair(couple=False)
    w = larmor_frequency(C13, FIELD)
    freqs, _ = transition_frequencies(system, m_s=-1)
    expected = sorted([np.hypot(w + 60e3, 30e3), np.hypot(w + 120e3, 25e3)])
    assert np.allclose(freqs, expected, atol=1e-3)
    freqs0, _ = transition_frequencies(system, m_s=0)
    assert np.allclose(freqs0, [w], atol=1e-3)


def test_gradient_splits_stacked_carbons() -> None:
    """Two on-axis 13C 3 A apart: m_s=0 splits by the gradient shift, m_s=-1 by that minus the A_par step."""
    gradient = 1e5
    z = np.array([10.0, 13.0]) * ANGSTROM
    system = SpinSystem(
        FIELD, tuple(NuclearSpin(C13, np.array([0.0, 0.0, zk]), label=k) for k, zk in enumerate(z)), gradient=gradient
    ).with_pair_couplings_zeroed()
    shift = C13.gyromagnetic_ratio * gradient * (z[1] - z[0])
    assert shift == pytest.approx(321.3, abs=0.5)
    a_step = system.hyperfines[1].a_parallel - system.hyperfines[0].a_parallel
    lines0, _ = transition_frequencies(system, m_s=0)
    assert np.diff(lines0) == pytest.approx([shift], rel=1e-6)
    lines1, _ = transition_frequencies(system, m_s=-1)
    assert np.diff(lines1) == pytest.approx([abs(shift - a_step)], abs=1e-3)
    # resolved on a 50-point 4 us to 0.9 ms sweep with 4x padding
    assert np.diff(lines1)[0] > 2 * 54687.5 / 200


def test_coupling_splits_lines() -> None:
    """A nonzero J moves the m_s=-1 lines away from the isolated positions."""
    isolated, _ = transition_frequencies(_pair(couple=False), m_s=-1)
    coupled, _ = transition_frequencies(_pair(), m_s=-1)
    assert len(coupled) > len(isolated)


def test_transition_frequencies_without_nuclei() -> None:
    """A bare sensor has no nuclear lines in either manifold."""
    system = SpinSystem(FIELD, ())
    for m_s in (0, -1):
        freqs, weights = transition_frequencies(system, m_s=m_s)
        assert freqs.size == 0 and weights.size == 0


def test_dipolar_tensor_is_swap_symmetric() -> None:
    """Exchanging the two positions leaves the coupling tensor unchanged."""
    r1 = np.array([0.3, -0.2, 5.0]) * ANGSTROM
    r2 = np.array([1.1, 0.7, 6.1]) * ANGSTROM
    forward = dipolar_tensor_from_positions(r1, r2, C13, C13)
    backward = dipolar_tensor_from_positions(r2, r1, C13, C13)
    assert np.allclose(forward.components, backward.components, rtol=0.0, atol=1e-12)


def test_nucleus_order_does_not_change_lines() -> None:
    """Listing the pair in the opposite order gives the same m_s=-1 lines."""
    a, b = _pair().nuclei
    swapped = SpinSystem(FIELD, (NuclearSpin(b.species, b.position, b.hyperfine, 0), NuclearSpin(a.species, a.position, a.hyperfine, 1)))
    assert np.allclose(transition_frequencies(swapped, m_s=-1)[0], transition_frequencies(_pair(), m_s=-1)[0], atol=1e-6)


def test_transition_frequencies_reject_unknown_manifold() -> None:
    """Only m_s 0 and -1 exist on the sensor qubit."""
    with pytest.raises(ValueError, match="m_s"):
        transition_frequencies(_pair(), m_s=1)


def test_system_dump_and_load(tmp_path: Path) -> None:
    """A dumped system loads back with the same Hamiltonian."""
    system = _pair()
    path = tmp_path / "system.toml"
    dump_system(system, path)
    loaded = load_system(path)
    assert np.allclose(build_hamiltonian(loaded), build_hamiltonian(system))


def test_system_from_dict_rejects_unknown_key() -> None:
    """Unknown keys are named with their path."""
    data = system_to_dict(_pair())
    data["nuclei"][0]["spin"] = 0.5
    with pytest.raises(ValueError, match="Unknown key 'nuclei\\[0\\].spin'"):
        system_from_dict(data)
