import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadtune.spincore import (ARSENIC_75, MAGIC_ANGLE, FieldConfig, PerturbationWarning, SpinSystem,
                               angular_sweep, axial_hamiltonian, build_hamiltonian, central_shift_second,
                               chemical_shift, eigensystem, larmor_frequency, perturbative_shift_first,
                               perturbative_shift_second, spin_operators, transition_frequencies)

spins = st.sampled_from([0.5, 1.0, 1.5, 2.0, 2.5, 3.5, 4.5])


def oracle_axial(I, f0, f_Q, theta):
    """Independent construction: A(3 I_n^2 - I(I+1)) with I_n = sin(t) Ix + cos(t) Iz."""
    dim = int(2 * I + 1)
    m = I - np.arange(dim)
    Ip = np.zeros((dim, dim))
    for k in range(1, dim):
        Ip[k - 1, k] = math.sqrt(I * (I + 1) - m[k] * (m[k] + 1))
    Ix = 0.5 * (Ip + Ip.T)
    Iz = np.diag(m)
    In = math.sin(theta) * Ix + math.cos(theta) * Iz
    A = f_Q / (4 * I * (2 * I - 1))
    return -f0 * Iz + A * (3 * In @ In - I * (I + 1) * np.eye(dim))


@given(spins)
def test_commutation_relations(I):
    Ix, Iy, Iz = spin_operators(I)
    assert np.allclose(Ix @ Iy - Iy @ Ix, 1j * Iz)
    assert np.allclose(Iy @ Iz - Iz @ Iy, 1j * Ix)
    assert np.allclose(Iz @ Ix - Ix @ Iz, 1j * Iy)
    assert np.allclose(np.diag(Iz).real, I - np.arange(int(2 * I + 1)))


@given(spins)
def test_casimir(I):
    Ix, Iy, Iz = spin_operators(I)
    assert np.allclose(Ix @ Ix + Iy @ Iy + Iz @ Iz, I * (I + 1) * np.eye(int(2 * I + 1)))


def test_invalid_spin_rejected():
    with pytest.raises(ValueError):
        spin_operators(0.75)
    with pytest.raises(ValueError):
        SpinSystem(I=0)


def test_larmor_frequency_value():
    # mu_n g_n B0 / h evaluated by hand with CODATA constants
    expected = 5.0507837461e-27 * 0.9558 * 0.35 / 6.62607015e-34
    assert larmor_frequency(ARSENIC_75, 0.35) == pytest.approx(expected, rel=1e-12)
    assert larmor_frequency(ARSENIC_75, FieldConfig(0.35)) == pytest.approx(2.549986e6, abs=1)
    assert larmor_frequency(ARSENIC_75, 0.0) == 0.0
    with pytest.raises(ValueError):
        larmor_frequency(ARSENIC_75, -1.0)


def test_field_axis_must_be_unit():
    with pytest.raises(ValueError):
        FieldConfig(0.35, (1.0, 1.0, 0.0))


def test_chemical_shift():
    assert chemical_shift(0.9558, 0.95965) == pytest.approx(-0.004012, abs=1e-6)


@given(st.floats(0, math.pi), st.floats(-3e5, 3e5), st.floats(1e6, 5e6))
@settings(max_examples=40)
def test_axial_hamiltonian_matches_oracle(theta, f_Q, f0):
    H = axial_hamiltonian(1.5, f0, f_Q, theta)
    assert np.allclose(H.matrix, oracle_axial(1.5, f0, f_Q, theta), atol=1e-6)


@pytest.mark.parametrize("I", [1.0, 2.5, 4.5])
def test_axial_hamiltonian_other_spins(I):
    H = axial_hamiltonian(I, 2e6, 1.3e5, 0.7)
    assert np.allclose(H.matrix, oracle_axial(I, 2e6, 1.3e5, 0.7), atol=1e-6)


def test_build_hamiltonian_matches_axial():
    # EFG along z with principal value V gives f_Q = e q V / h
    k_e, k_h = 1.602176634e-19, 6.62607015e-34
    f_Q = 2.0e5
    V = f_Q * k_h / (k_e * ARSENIC_75.q)
    efg = V * np.diag([-0.5, -0.5, 1.0])
    H = build_hamiltonian(ARSENIC_75, 2.5e6, efg)
    assert np.allclose(H.matrix, axial_hamiltonian(1.5, 2.5e6, f_Q, 0.0).matrix, atol=1e-6)


def test_build_hamiltonian_rejects_bad_efg():
    with pytest.raises(ValueError, match="traceless"):
        build_hamiltonian(ARSENIC_75, 1e6, np.eye(3))
    bad = np.zeros((3, 3))
    bad[0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        build_hamiltonian(ARSENIC_75, 1e6, bad)


@given(st.floats(0, math.pi), st.floats(-3e5, 3e5))
@settings(max_examples=30)
def test_hamiltonian_hermitian_and_traceless(theta, f_Q):
    H = axial_hamiltonian(1.5, 2.55e6, f_Q, theta).matrix
    assert np.allclose(H, H.conj().T)
    assert abs(np.trace(H)) < 1e-6


def test_zero_field_zero_efg_degenerate():
    vals, _ = eigensystem(axial_hamiltonian(1.5, 0.0, 0.0, 0.0))
    assert np.allclose(vals, 0.0)


def test_transitions_axial_theta0():
    f0, f_Q = 2.549986e6, 2.55e5
    table = transition_frequencies(axial_hamiltonian(1.5, f0, f_Q, 0.0))
    assert [t.label for t in table] == ["outer+", "inner", "outer-"]
    assert table.by_label("outer+").frequency == pytest.approx(f0 - f_Q / 2, abs=1e-6)
    assert table.by_label("inner").frequency == pytest.approx(f0, abs=1e-6)
    assert table.by_label("outer-").frequency == pytest.approx(f0 + f_Q / 2, abs=1e-6)
    assert [t.weight for t in table] == pytest.approx([0.75, 1.0, 0.75])
    assert not table.ambiguous


def test_unstrained_transitions_degenerate():
    table = transition_frequencies(axial_hamiltonian(1.5, 2.5e6, 0.0, 0.0))
    assert np.allclose(table.frequencies, 2.5e6)


@given(st.floats(0.0, math.pi / 2), st.sampled_from([0.01, 0.05, 0.1]))
@settings(max_examples=60, deadline=None)
def test_first_order_oracle_bound(theta, ratio):
    f0 = 2.55e6
    f_Q = ratio * f0
    table = transition_frequencies(axial_hamiltonian(1.5, f0, f_Q, theta))
    for t in table:
        exact = t.frequency - f0
        assert abs(exact - perturbative_shift_first(f_Q, theta, t.m_hi)) < 2 * f_Q ** 2 / f0


@given(st.floats(0.0, math.pi / 2), st.sampled_from([0.01, 0.05, 0.1]))
@settings(max_examples=60, deadline=None)
def test_second_order_oracle_bound(theta, ratio):
    f0 = 2.55e6
    f_Q = ratio * f0
    table = transition_frequencies(axial_hamiltonian(1.5, f0, f_Q, theta))
    for t in table:
        approx = perturbative_shift_first(f_Q, theta, t.m_hi) + perturbative_shift_second(f_Q, f0, theta, t.m_hi)
        assert abs(t.frequency - f0 - approx) < 5 * f_Q ** 3 / f0 ** 2


@given(st.floats(0.0, math.pi / 2))
def test_central_closed_form_matches_sum_over_states(theta):
    assert perturbative_shift_second(2.55e5, 2.55e6, theta, 0.5) == pytest.approx(
        central_shift_second(2.55e5, 2.55e6, theta), rel=1e-9, abs=1e-9)


def test_first_order_shift_values():
    assert perturbative_shift_first(2.55e5, 0.0, 1.5) == pytest.approx(-1.275e5)
    assert perturbative_shift_first(2.55e5, 0.0, -0.5) == pytest.approx(1.275e5)
    assert perturbative_shift_first(2.55e5, 0.3, 0.5) == 0.0
    assert perturbative_shift_first(2.55e5, MAGIC_ANGLE, 1.5) == pytest.approx(0.0, abs=1e-9)


def test_second_order_sign_flip_invariance():
    # second order is quadratic in f_Q
    a = perturbative_shift_second(2e5, 2.5e6, 0.4)
    b = perturbative_shift_second(-2e5, 2.5e6, 0.4)
    assert a == pytest.approx(b)


def test_second_order_warns_and_rejects():
    with pytest.warns(PerturbationWarning):
        perturbative_shift_second(1e6, 2e6, 0.5)
    with pytest.raises(ValueError):
        perturbative_shift_second(1e5, 0.0, 0.5)


def test_central_shift_at_90_degrees():
    # nu_Q = f_Q/2 for I = 3/2: -(nu_Q^2 / 16 f0) * 3 * 1 * (-1)
    f_Q, f0 = 2.55e5, 2.55e6
    expected = 3 * (f_Q / 2) ** 2 / (16 * f0)
    assert central_shift_second(f_Q, f0, math.pi / 2) == pytest.approx(expected)
    assert expected == pytest.approx(1195.3125)


def test_angular_sweep_structure_and_zero_coupling():
    sw = angular_sweep(1.5, 2.55e6, 0.0, 11)
    assert sw.theta.shape == (11,)
    for label in ("outer+", "inner", "outer-"):
        assert np.allclose(sw.exact[label], 0.0, atol=1e-6)
        assert np.allclose(sw.perturbative[label], 0.0)
    with pytest.raises(ValueError):
        angular_sweep(1.5, 2.55e6, 1e5, 1)


def test_angular_sweep_agrees_with_perturbation():
    f0, f_Q = 2.55e6, 0.01 * 2.55e6
    sw = angular_sweep(1.5, f0, f_Q, 31)
    for label in sw.exact:
        assert np.max(np.abs(sw.exact[label] - sw.perturbative[label])) < 5 * f_Q ** 3 / f0 ** 2


def test_labels_for_other_spins():
    table = transition_frequencies(axial_hamiltonian(2.5, 3e6, 1e5, 0.2))
    assert [t.label for t in table] == ["5/2<->3/2", "3/2<->1/2", "inner", "-1/2<->-3/2", "-3/2<->-5/2"]


def test_ambiguous_when_quadrupole_dominates():
    table = transition_frequencies(axial_hamiltonian(1.5, 1e3, 1e6, math.pi / 4))
    assert table.ambiguous
    assert len(table) == 3


def test_no_warning_in_regular_regime():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        perturbative_shift_second(2.55e5, 2.55e6, 1.0)
