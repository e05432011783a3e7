import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadtune import dynamics as dyn
from quadtune.dynamics import (AmbiguousCarrierError, DecayCurve, Delay, DensityState, Loop, NoiseModel, Pulse,
                               PulseSequence, QuadratureError, apply_pulse, calibrate_amplitude, coherence_decay,
                               cpmg_filter_function, decoherence_exponent, excitation_profile, free_evolution,
                               run_sequence, t2_extract, t2_versus_pulses)
from quadtune.spincore import axial_hamiltonian

F0, FQ = 2.549986e6, 2.55e5


def strained():
    return axial_hamiltonian(1.5, F0, FQ, 0.0)


@given(st.integers(1, 40), st.floats(0.01, 500.0))
@settings(max_examples=80)
def test_closed_filter_matches_direct_sum(n, x):
    xs = np.array([x])
    assert dyn._filter_closed(n, xs)[0] == pytest.approx(dyn._filter_sum(n, xs)[0], rel=1e-8, abs=1e-10)


def test_filter_near_singular_points():
    # cos(x/2n) = 0 at x = n*pi; closed form falls back to the sum
    for n in (1, 2, 3, 8):
        xs = np.array([n * math.pi, n * math.pi * (1 + 1e-7), 3 * n * math.pi])
        assert np.allclose(dyn._filter_closed(n, xs), dyn._filter_sum(n, xs), rtol=1e-6, atol=1e-9)


@given(st.floats(1e-3, 1e3), st.floats(1e-4, 1e-1))
def test_hahn_filter_closed_form(w, t):
    assert cpmg_filter_function(1, t, w) == pytest.approx(8 * math.sin(w * t / 4) ** 4 / w ** 2, rel=1e-9,
                                                          abs=1e-300)


def test_filter_properties():
    assert cpmg_filter_function(4, 1e-2, 0.0) == 0.0
    w = np.geomspace(1e-2, 1e5, 50)
    assert np.all(cpmg_filter_function(8, 1e-2, w) >= 0)
    with pytest.raises(ValueError):
        cpmg_filter_function(0, 1e-2, 1.0)
    # low-frequency suppression: F ~ w^4 t^4 ... vanishes faster with more pulses
    assert cpmg_filter_function(8, 1.0, 1e-2) < cpmg_filter_function(1, 1.0, 1e-2)


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_white_noise_exponent(n):
    # Parseval: integral of |F|^2 / w^2 over w > 0 equals pi t, so chi = A t / 2 for any n
    noise = NoiseModel(0.0, 3.0, low_cutoff=1e-9, high_cutoff=1e12)
    t = 2e-3
    assert decoherence_exponent(noise, n, t) == pytest.approx(3.0 * t / 2, rel=1e-4)


def test_exponent_power_law_in_time():
    noise = NoiseModel(1.0, 1.0)
    a = decoherence_exponent(noise, 4, 1e-2)
    b = decoherence_exponent(noise, 4, 2e-2)
    assert b / a == pytest.approx(4.0, rel=2e-3)


def test_exponent_edge_cases():
    assert decoherence_exponent(NoiseModel(1.0, 0.0), 1, 1.0) == 0.0
    assert decoherence_exponent(NoiseModel(1.0, 1.0), 1, 0.0) == 0.0


def test_quadrature_error_reports_interval():
    with pytest.raises(QuadratureError) as exc:
        dyn._adaptive(lambda x: np.sin(1e4 * x), np.array([0.0, 10.0]), 1e-14, max_rounds=1)
    assert exc.value.interval == (0.0, 10.0) or len(exc.value.interval) == 2


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(7.0, 1.0)
    with pytest.raises(ValueError):
        NoiseModel(1.0, -1.0)
    with pytest.raises(ValueError):
        NoiseModel(1.0, 1.0, low_cutoff=10.0, high_cutoff=1.0)
    assert NoiseModel(2.0, 4.0).psd(2.0) == pytest.approx(1.0)


@pytest.mark.parametrize("alpha,T2", [(1.0, 44e-3), (2.0, 10e-3)])
def test_calibration(alpha, T2):
    noise = calibrate_amplitude(NoiseModel(alpha, 1.0), T2)
    assert decoherence_exponent(noise, 1, T2) == pytest.approx(1.0, rel=1e-6)


@given(st.floats(1e-3, 1.0), st.floats(0.5, 3.0))
@settings(max_examples=25, deadline=None)
def test_t2_extract_recovers_stretched_exponential(T2, beta):
    t = T2 * np.geomspace(1e-3, 4.0, 30)
    curve = DecayCurve(t, np.exp(-(t / T2) ** beta), 1)
    T2_fit, beta_fit = t2_extract(curve)
    assert T2_fit == pytest.approx(T2, rel=1e-6)
    assert beta_fit == pytest.approx(beta, rel=1e-6)


def test_t2_extract_rejects_bad_curves():
    t = np.linspace(1e-3, 1e-2, 4)
    with pytest.raises(ValueError, match="5 points"):
        t2_extract(DecayCurve(t, np.exp(-t), 1))
    t = np.linspace(1e-3, 1e-2, 10)
    with pytest.raises(ValueError, match="decay range"):
        t2_extract(DecayCurve(t, np.full(10, 0.99), 1))


def test_t2_grows_with_pulses():
    noise = calibrate_amplitude(NoiseModel(2.0, 1.0), 1e-2)
    res = t2_versus_pulses(noise, [1, 2, 4])
    T2s = [r[1] for r in res]
    assert T2s[0] == pytest.approx(1e-2, rel=0.05)
    assert T2s[0] < T2s[1] < T2s[2]
    assert all(isinstance(r[3], DecayCurve) for r in res)


def test_coherence_decay_monotone():
    noise = calibrate_amplitude(NoiseModel(1.0, 1.0), 1e-2)
    c = coherence_decay(noise, 2, np.linspace(1e-3, 3e-2, 12))
    assert np.all(np.diff(c.amplitude) < 0)
    assert np.all((c.amplitude > 0) & (c.amplitude <= 1))


def test_excitation_profile():
    T = 400e-6
    assert excitation_profile(T, 0.0) == pytest.approx(1.0)
    zero = math.sqrt(3) / (2 * T)
    assert zero == pytest.approx(2165.06, abs=0.01)
    assert excitation_profile(T, zero) == pytest.approx(0.0, abs=1e-20)
    d = np.linspace(-5e4, 5e4, 1001)
    p = excitation_profile(T, d)
    assert np.all((p >= 0) & (p <= 1))
    assert np.allclose(p, p[::-1])
    assert excitation_profile(T, 0.0, flip=math.pi / 2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        excitation_profile(0.0, 1.0)


def test_density_state_validation():
    with pytest.raises(ValueError):
        DensityState(np.eye(4))
    with pytest.raises(ValueError):
        DensityState(np.array([[1.5, 0], [0, -0.5]]))
    rho = DensityState.pure(4, 1)
    assert rho.purity == pytest.approx(1.0)
    assert list(rho.populations) == [0, 1, 0, 0]


def test_selective_pi_pulse_swaps_levels():
    H = strained()
    rho = apply_pulse(DensityState.pure(4, 1), Pulse(math.pi, 1e-5, transition="inner"), H)
    assert rho.populations == pytest.approx([0, 0, 1, 0], abs=1e-12)
    rho = apply_pulse(DensityState.pure(4, 0), Pulse(math.pi, 1e-5, transition="outer+"), H)
    assert rho.populations == pytest.approx([0, 1, 0, 0], abs=1e-12)


def test_calibrated_on_scales_angle():
    H = strained()
    p = Pulse(math.pi, 1e-5, transition="outer+", calibrated_on="inner")
    rho = apply_pulse(DensityState.pure(4, 0), p, H)
    angle = math.pi * math.sqrt(0.75)
    assert rho.populations[1] == pytest.approx(math.sin(angle / 2) ** 2, rel=1e-9)


def test_hard_pulse_inverts_all_levels():
    H = strained()
    rho = apply_pulse(DensityState.pure(4, 0), Pulse(math.pi, 1e-6, selective=False), H)
    assert rho.populations == pytest.approx([0, 0, 0, 1], abs=1e-12)


def test_carrier_resolution():
    H = strained()
    rho = apply_pulse(DensityState.pure(4, 1), Pulse(math.pi, 4e-4, carrier=F0 + 50), H)
    assert rho.populations[2] == pytest.approx(1.0)
    unstrained = axial_hamiltonian(1.5, F0, 0.0, 0.0)
    with pytest.raises(AmbiguousCarrierError):
        apply_pulse(DensityState.pure(4, 1), Pulse(math.pi, 4e-4, carrier=F0), unstrained)
    with pytest.raises(ValueError, match="not near"):
        apply_pulse(DensityState.pure(4, 1), Pulse(math.pi, 4e-4, carrier=F0 + 1e6), H)
    with pytest.raises(ValueError):
        apply_pulse(DensityState.pure(4, 1), Pulse(math.pi, 4e-4), H)


@given(st.floats(1e-7, 1e-2), st.floats(0, 2 * math.pi))
@settings(max_examples=25)
def test_spin_echo_refocuses(tau, phase):
    # 90 - tau - 180 - tau - 90 on the inner line returns the initial state
    H = strained()
    seq = PulseSequence((Pulse(math.pi / 2, 1e-5, phase, "inner"), Delay(tau),
                         Pulse(math.pi, 1e-5, phase, "inner"), Delay(tau),
                         Pulse(math.pi / 2, 1e-5, phase, "inner")))
    rho = run_sequence(DensityState.pure(4, 1), seq, H)
    assert rho.populations[1] == pytest.approx(1.0, abs=1e-9)


@given(st.floats(0, 1e-2))
@settings(max_examples=25)
def test_free_evolution_conserves_populations(t):
    H = strained()
    rho = apply_pulse(DensityState.pure(4, 1), Pulse(math.pi / 2, 1e-5, transition="inner"), H)
    out = free_evolution(rho, H, t)
    assert out.populations == pytest.approx(rho.populations, abs=1e-12)
    assert out.purity == pytest.approx(1.0)


def test_sequence_structure():
    body = (Delay(1e-3), Pulse(math.pi, 1e-5, transition="inner"), Delay(1e-3))
    seq = PulseSequence((Pulse(math.pi / 2, 1e-5, transition="inner"), Loop(32, body)), "cpmg")
    flat = seq.flatten()
    assert len(flat) == 1 + 32 * 3
    assert seq.count_pulses() == 33
    assert seq.count_pulses(min_flip=2.0) == 32
    assert seq.duration == pytest.approx(1e-5 + 32 * (2e-3 + 1e-5))
    with pytest.raises(ValueError):
        Loop(0, body)
    with pytest.raises(ValueError):
        Delay(-1.0)
    with pytest.raises(ValueError):
        Pulse(math.pi, 0.0)
