"""Pulse dynamics and pure-dephasing coherence decay under CPMG trains.

Pulses act as ideal selective rotations between two eigenstates of the nuclear
Hamiltonian. Coherence decay uses the filter-function formalism for Gaussian
noise with a power-law spectral density S(w) = A / w**alpha:

    W(t) = exp(-chi),   chi = (1/pi) * integral S(w) * F_n(w, t) dw

where F_n is the CPMG filter with n instantaneous pi pulses at
t*(j - 1/2)/n. With this normalization the Hahn echo filter is
8 sin^4(w t / 4) / w^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import linalg, optimize

from .spincore import NuclearHamiltonian, eigensystem, spin_operators, transition_frequencies

__all__ = [
    "DensityState",
    "Pulse",
    "Delay",
    "Loop",
    "PulseSequence",
    "NoiseModel",
    "DecayCurve",
    "QuadratureError",
    "AmbiguousCarrierError",
    "apply_pulse",
    "free_evolution",
    "run_sequence",
    "excitation_profile",
    "cpmg_filter_function",
    "decoherence_exponent",
    "coherence_decay",
    "calibrate_amplitude",
    "t2_extract",
    "t2_versus_pulses",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed; ``interval`` holds the worst subinterval (rad/s)."""

    def __init__(self, message, interval):
        super().__init__(message)
        self.interval = interval


class AmbiguousCarrierError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityState:
    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=complex)
        if abs(np.trace(M) - 1) > 1e-9:
            raise ValueError(f"density matrix must have unit trace, got {np.trace(M)}")
        if np.max(np.abs(M - M.conj().T)) > 1e-9:
            raise ValueError("density matrix must be Hermitian")
        if np.min(np.linalg.eigvalsh(M)) < -1e-9:
            raise ValueError("density matrix must be positive semidefinite")
        object.__setattr__(self, "matrix", M)

    @classmethod
    def pure(cls, dim: int, index: int) -> "DensityState":
        M = np.zeros((dim, dim), dtype=complex)
        M[index, index] = 1.0
        return cls(M)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


@dataclass(frozen=True)
class Pulse:
    """Selective rf pulse.

    ``transition`` names the target line ("inner", "outer+", "outer-");
    alternatively ``carrier`` (Hz) picks the nearest line. ``calibrated_on``
    names the line on which ``flip`` is the actual rotation angle; on other
    lines the angle scales with the dipole matrix element.
    """

    flip: float
    duration: float
    phase: float = 0.0
    transition: str | None = None
    carrier: float | None = None
    calibrated_on: str | None = None
    selective: bool = True

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be positive")


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("delay duration must be positive")


@dataclass(frozen=True)
class Loop:
    count: int
    body: tuple = ()

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("loop count must be >= 1")


Event = Union[Pulse, Delay, Loop]


@dataclass(frozen=True)
class PulseSequence:
    events: tuple = ()
    name: str = ""

    def flatten(self) -> list:
        out: list = []

        def walk(events):
            for ev in events:
                if isinstance(ev, Loop):
                    for _ in range(ev.count):
                        walk(ev.body)
                else:
                    out.append(ev)

        walk(self.events)
        return out

    @property
    def duration(self) -> float:
        return sum(ev.duration for ev in self.flatten())

    def count_pulses(self, min_flip: float = 0.0) -> int:
        return sum(1 for ev in self.flatten() if isinstance(ev, Pulse) and ev.flip > min_flip)


def _resolve_target(pulse: Pulse, table):
    if pulse.transition is not None:
        return table.by_label(pulse.transition)
    if pulse.carrier is None:
        raise ValueError("pulse needs a target transition or a carrier frequency")
    bandwidth = 1.0 / pulse.duration
    ranked = sorted(table, key=lambda t: abs(t.frequency - pulse.carrier))
    best = ranked[0]
    if len(ranked) > 1 and abs(ranked[1].frequency - pulse.carrier) < bandwidth:
        raise AmbiguousCarrierError(
            f"carrier {pulse.carrier:.6g} Hz is within the pulse bandwidth of both "
            f"{best.label} ({best.frequency:.6g} Hz) and {ranked[1].label} ({ranked[1].frequency:.6g} Hz)")
    if abs(best.frequency - pulse.carrier) > 10 * bandwidth:
        raise ValueError(f"carrier {pulse.carrier:.6g} Hz is not near any transition; "
                         "use selective=False for a hard pulse")
    return best


def _rotation(Ix, Iy, angle, phase):
    return linalg.expm(-1j * angle * (math.cos(phase) * Ix + math.sin(phase) * Iy))


def apply_pulse(rho: DensityState, pulse: Pulse, H: NuclearHamiltonian) -> DensityState:
    """Rotate ``rho`` by an ideal pulse on one transition of ``H``."""
    Ix, Iy, _ = spin_operators(H.I)
    if not pulse.selective:
        U = _rotation(Ix, Iy, pulse.flip, pulse.phase)
        return DensityState(U @ rho.matrix @ U.conj().T)
    table = transition_frequencies(H, Ix)
    target = _resolve_target(pulse, table)
    ref = table.by_label(pulse.calibrated_on) if pulse.calibrated_on else target
    angle = pulse.flip * math.sqrt(target.weight / ref.weight)

    vals, vecs = eigensystem(H)
    m = H.m_values
    overlap = np.abs(vecs) ** 2
    hi = int(np.argmax(overlap[int(np.argmin(np.abs(m - target.m_hi)))]))
    lo = int(np.argmax(overlap[int(np.argmin(np.abs(m - target.m_lo)))]))
    sx = np.array([[0, 1], [1, 0]], dtype=complex) / 2
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
    u2 = _rotation(sx, sy, angle, pulse.phase)
    U_eig = np.eye(H.dim, dtype=complex)
    idx = [hi, lo]
    U_eig[np.ix_(idx, idx)] = u2
    U = vecs @ U_eig @ vecs.conj().T
    return DensityState(U @ rho.matrix @ U.conj().T)


def free_evolution(rho: DensityState, H: NuclearHamiltonian, duration: float) -> DensityState:
    vals, vecs = eigensystem(H)
    U = vecs @ np.diag(np.exp(-2j * np.pi * vals * duration)) @ vecs.conj().T
    return DensityState(U @ rho.matrix @ U.conj().T)


def run_sequence(rho: DensityState, sequence: PulseSequence, H: NuclearHamiltonian) -> DensityState:
    for ev in sequence.flatten():
        if isinstance(ev, Pulse):
            rho = apply_pulse(rho, ev, H)
        else:
            rho = free_evolution(rho, H, ev.duration)
    return rho


def excitation_profile(duration: float, detuning, flip: float = math.pi):
    """Inversion probability of a square pulse against detuning (Hz).

    Rabi formula for a two-level system driven at the Rabi frequency that
    gives rotation ``flip`` on resonance.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rabi = flip / (2 * math.pi * duration)
    d = np.asarray(detuning, dtype=float)
    eff2 = rabi ** 2 + d ** 2
    out = rabi ** 2 / eff2 * np.sin(np.pi * duration * np.sqrt(eff2)) ** 2
    return float(out) if out.ndim == 0 else out


def _filter_sum(n: int, x: np.ndarray) -> np.ndarray:
    """|F(x)|^2 with x = w t, by direct summation over pulse positions."""
    delta = (np.arange(1, n + 1) - 0.5) / n
    signs = (-1.0) ** np.arange(1, n + 1)
    F = 1 + (-1) ** (n + 1) * np.exp(1j * x) + 2 * (signs[:, None] * np.exp(1j * np.outer(delta, x))).sum(0)
    return np.abs(F) ** 2


def _filter_closed(n: int, x: np.ndarray) -> np.ndarray:
    """|F(x)|^2 for n equally spaced CPMG pulses (closed form)."""
    x = np.asarray(x, dtype=float)
    c = np.cos(x / (2 * n))
    outer = np.sin(x / 2) ** 2 if n % 2 == 0 else np.cos(x / 2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 16 * np.sin(x / (4 * n)) ** 4 * outer / c ** 2
    bad = np.abs(c) < 1e-4
    if np.any(bad):
        val = np.where(bad, 0.0, val)
        val[bad] = _filter_sum(n, x[bad])
    return val


def cpmg_filter_function(n: int, total_time: float, omega):
    """CPMG filter |F(wt)|^2 / (2 w^2); n = 1 is the Hahn echo."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    x = w * total_time
    out = np.zeros_like(w)
    nz = w != 0
    out[nz] = _filter_closed(n, x[nz]) / (2 * w[nz] ** 2)
    return float(out[0]) if np.ndim(omega) == 0 else out


@dataclass(frozen=True)
class NoiseModel:
    """Power-law dephasing noise S(w) = amplitude / w**alpha (w in rad/s)."""

    alpha: float
    amplitude: float
    low_cutoff: float = 2 * math.pi * 0.01
    high_cutoff: float = 2 * math.pi * 1e6

    def __post_init__(self):
        if not 0 <= self.alpha <= 6:
            raise ValueError("alpha must lie in [0, 6]")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not 0 < self.low_cutoff < self.high_cutoff:
            raise ValueError("cutoffs must satisfy 0 < low < high")

    def psd(self, omega):
        return self.amplitude * np.asarray(omega, dtype=float) ** (-self.alpha)

    def with_amplitude(self, amplitude: float) -> "NoiseModel":
        return NoiseModel(self.alpha, amplitude, self.low_cutoff, self.high_cutoff)


@dataclass
class DecayCurve:
    t: np.ndarray
    amplitude: np.ndarray
    n: int
    label: str = ""
    meta: dict = field(default_factory=dict)


_GL8 = np.polynomial.legendre.leggauss(8)
_GL16 = np.polynomial.legendre.leggauss(16)
_TAIL_PERIODS = 200


def _panel(f, a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    q8 = (f(mid[:, None] + half[:, None] * _GL8[0]) * _GL8[1]).sum(1) * half
    q16 = (f(mid[:, None] + half[:, None] * _GL16[0]) * _GL16[1]).sum(1) * half
    return q16, np.abs(q16 - q8)


def _adaptive(f, edges: np.ndarray, rtol: float, max_rounds: int = 30):
    """Vectorised adaptive Gauss-Legendre (8 vs 16 point) quadrature over panels."""
    a, b = edges[:-1].copy(), edges[1:].copy()
    done_val = 0.0
    done_err = 0.0
    for _ in range(max_rounds):
        val, err = _panel(f, a, b)
        total = done_val + val.sum()
        budget = rtol * abs(total) + 1e-300
        if done_err + err.sum() <= budget:
            return total, done_err + err.sum()
        # accept panels whose error is well below their share of the budget
        share = budget / (a.size + 1)
        ok = err <= 0.1 * share
        done_val += val[ok].sum()
        done_err += err[ok].sum()
        a, b = a[~ok], b[~ok]
        mid = 0.5 * (a + b)
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
    worst = int(np.argmax(err))
    raise QuadratureError(f"quadrature did not reach rtol={rtol}", (float(a[worst]), float(b[worst])))


def _dimensionless_integral(n: int, alpha: float, x_lo: float, x_hi: float, rtol: float) -> float:
    """integral of x^-alpha |F(x)|^2 / (2 x^2) dx over [x_lo, x_hi]."""

    def f(x):
        return x ** (-alpha - 2) * 0.5 * _filter_closed(n, x)

    x_k = min(x_hi, _TAIL_PERIODS * math.pi * n)
    edges = [x_lo]
    if x_lo < math.pi:
        edges = list(np.geomspace(x_lo, min(math.pi, x_k), max(2, int(math.log2(math.pi / x_lo)) + 2)))
    if x_k > edges[-1]:
        edges += list(np.arange(edges[-1], x_k, math.pi)[1:]) + [x_k]
    total, _ = _adaptive(f, np.asarray(edges), rtol)
    if x_hi > x_k:
        # cross terms average out far above the pass band: <|F|^2> = 4n + 2
        p = alpha + 1
        total += (2 * n + 1) * (x_k ** -p - x_hi ** -p) / p
    return total


def decoherence_exponent(noise: NoiseModel, n: int, t: float, rtol: float = 1e-6) -> float:
    """chi(t) for ``n`` CPMG pulses; W = exp(-chi)."""
    if noise.amplitude == 0 or t == 0:
        return 0.0
    g = _dimensionless_integral(n, noise.alpha, noise.low_cutoff * t, noise.high_cutoff * t, rtol)
    return noise.amplitude / math.pi * t ** (noise.alpha + 1) * g


def coherence_decay(noise: NoiseModel, n: int, t_grid: Iterable[float], rtol: float = 1e-6,
                    label: str = "") -> DecayCurve:
    t = np.asarray(list(t_grid), dtype=float)
    chi = np.array([decoherence_exponent(noise, n, ti, rtol) for ti in t])
    return DecayCurve(t=t, amplitude=np.exp(-chi), n=n, label=label,
                      meta={"alpha": noise.alpha, "amplitude": noise.amplitude})


def calibrate_amplitude(noise: NoiseModel, T2: float, n: int = 1) -> NoiseModel:
    """Return ``noise`` rescaled so that chi(T2) = 1 for ``n`` pulses."""
    chi = decoherence_exponent(noise.with_amplitude(1.0), n, T2)
    return noise.with_amplitude(1.0 / chi)


def _decay_time(noise: NoiseModel, n: int, guess: float) -> float:
    def g(lt):
        return math.log(decoherence_exponent(noise, n, math.exp(lt)))

    lo, hi = math.log(guess) - 1.0, math.log(guess) + 1.0
    while g(lo) > 0:
        lo -= 2.0
    while g(hi) < 0:
        hi += 2.0
    return math.exp(optimize.brentq(g, lo, hi, xtol=1e-10))


def t2_extract(curve: DecayCurve) -> tuple[float, float]:
    """Fit exp(-(t/T2)**beta); returns (T2, beta)."""
    from .estimator import FitProblem, least_squares

    t, W = np.asarray(curve.t, float), np.asarray(curve.amplitude, float)
    if t.size < 5:
        raise ValueError("need at least 5 points to extract T2")
    if W.max() < 0.95 or W.min() > 0.2:
        raise ValueError(f"insufficient decay range: amplitudes span [{W.min():.3g}, {W.max():.3g}], "
                         "need to cover [0.2, 0.95]")
    mid = (W > 0.02) & (W < 0.98) & (t > 0)
    if mid.sum() >= 2:
        slope, icpt = np.polyfit(np.log(t[mid]), np.log(-np.log(W[mid])), 1)
        beta0 = max(slope, 0.1)
        T20 = math.exp(-icpt / beta0)
    else:
        beta0, T20 = 1.0, float(t[np.argmin(np.abs(W - math.exp(-1)))])

    def model(x, p):
        return np.exp(-(np.maximum(x, 0) / p[0]) ** p[1])

    prob = FitProblem(model=model, names=("T2", "beta"), p0=(T20, beta0), x=t, y=W,
                      lower=(1e-12 * T20, 0.05), upper=(np.inf, 20.0), model_id="stretched_exp")
    res = least_squares(prob)
    return float(res.estimates["T2"]), float(res.estimates["beta"])


def t2_versus_pulses(noise: NoiseModel, pulses: Sequence[int], n_grid: int = 16,
                     guess: float = 1e-3) -> list[tuple[int, float, float, DecayCurve]]:
    """For each pulse count: simulate a decay around its 1/e time and fit T2.

    Returns tuples (n, T2, beta, curve).
    """
    out = []
    for n in pulses:
        t_e = _decay_time(noise, n, guess)
        guess = t_e
        grid = t_e * np.geomspace(0.2, 1.8, n_grid)
        curve = coherence_decay(noise, n, grid)
        T2, beta = t2_extract(curve)
        out.append((n, T2, beta, curve))
    return out
