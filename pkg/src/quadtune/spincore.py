"""Spin-I nuclear Hamiltonian with Zeeman and quadrupole terms.

All energies are stored as frequencies (energy / h, in Hz). The laboratory
frame has z along the static field B0, and the spin basis is the I_z
eigenbasis ordered m = I, I-1, ..., -I.

Quadrupole convention
---------------------
The coupling frequency of an electric field gradient with principal value V_n
is ``f_Q = e*q*V_n/h``. For an axial gradient along unit vector n the
quadrupole term reads

    H_Q/h = f_Q / (4I(2I-1)) * (3 I_n^2 - I(I+1))

which is ``f_Q/12 * (3 I_n^2 - 15/4)`` for I = 3/2. The general tensor form
used by :func:`build_hamiltonian` reduces to this expression.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "PhysicalConstants",
    "SpinSystem",
    "FieldConfig",
    "NuclearHamiltonian",
    "Transition",
    "TransitionTable",
    "AngularSweep",
    "ARSENIC_75",
    "DEFAULT_CONSTANTS",
    "spin_operators",
    "larmor_frequency",
    "chemical_shift",
    "build_hamiltonian",
    "axial_coupling_tensor",
    "axial_hamiltonian",
    "eigensystem",
    "transition_frequencies",
    "perturbative_shift_first",
    "perturbative_shift_second",
    "central_shift_second",
    "angular_sweep",
    "MAGIC_ANGLE",
    "PerturbationWarning",
]

MAGIC_ANGLE = math.acos(1.0 / math.sqrt(3.0))


class PerturbationWarning(UserWarning):
    """Raised when f_Q/f0 is too large for the perturbative shift formulas."""


@dataclass(frozen=True)
class PhysicalConstants:
    h: float = 6.62607015e-34
    mu_n: float = 5.0507837461e-27
    e: float = 1.602176634e-19

    def __post_init__(self):
        if min(self.h, self.mu_n, self.e) <= 0:
            raise ValueError("physical constants must be strictly positive")


DEFAULT_CONSTANTS = PhysicalConstants()


def _check_spin(I: float) -> int:
    dim = 2 * I + 1
    n = int(round(dim))
    if abs(dim - n) > 1e-12 or n < 2:
        raise ValueError(f"spin quantum number must be a positive half-integer, got {I!r}")
    return n


@dataclass(frozen=True)
class SpinSystem:
    """Nuclear species: spin, g-factor, quadrupole moment (m^2)."""

    I: float = 1.5
    g_n: float = 0.9558
    q: float = 3.14e-29
    g_n_free: float = 0.95965

    def __post_init__(self):
        _check_spin(self.I)

    @property
    def dim(self) -> int:
        return int(round(2 * self.I + 1))


ARSENIC_75 = SpinSystem()


@dataclass(frozen=True)
class FieldConfig:
    """Static field magnitude (T) and direction (unit 3-vector, crystal frame)."""

    B0: float
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.B0 < 0:
            raise ValueError("B0 must be non-negative")
        norm = float(np.linalg.norm(self.axis))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"field axis must have unit norm, got |axis| = {norm}")


def spin_operators(I: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (I_x, I_y, I_z) in the basis m = I, I-1, ..., -I."""
    dim = _check_spin(I)
    m = I - np.arange(dim)
    # <m+1|I+|m> sits one row above the diagonal because m decreases downward
    ladder = np.sqrt(I * (I + 1) - m[1:] * (m[1:] + 1))
    Ip = np.diag(ladder, k=1).astype(complex)
    Im = Ip.conj().T
    Ix = 0.5 * (Ip + Im)
    Iy = -0.5j * (Ip - Im)
    Iz = np.diag(m).astype(complex)
    return Ix, Iy, Iz


def larmor_frequency(sys: SpinSystem, field: FieldConfig | float,
                     k: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Nuclear Larmor frequency mu_n * g_n * B0 / h in Hz."""
    B0 = field.B0 if isinstance(field, FieldConfig) else float(field)
    if B0 < 0:
        raise ValueError("B0 must be non-negative")
    return k.mu_n * sys.g_n * B0 / k.h


def chemical_shift(g_n: float, g_n_free: float) -> float:
    """Fractional g-factor deviation from the free-nucleus reference."""
    return g_n / g_n_free - 1.0


@dataclass(frozen=True, eq=False)
class NuclearHamiltonian:
    """Hermitian Hamiltonian in Hz on the I_z basis (m descending)."""

    matrix: np.ndarray
    I: float
    f0: float = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def m_values(self) -> np.ndarray:
        return self.I - np.arange(self.dim)


def _coupling_matrix(efg) -> np.ndarray:
    V = np.asarray(getattr(efg, "matrix", efg), dtype=float)
    if V.shape != (3, 3):
        raise ValueError("EFG must be a 3x3 tensor")
    return V


def _quadrupole_term(I: float, W: np.ndarray) -> np.ndarray:
    """Quadrupole Hamiltonian (Hz) for coupling tensor W = e*q*V/h (Hz)."""
    ops = spin_operators(I)
    dim = ops[0].shape[0]
    if I < 1:
        return np.zeros((dim, dim), dtype=complex)
    scale = 1.0 / (6.0 * I * (2 * I - 1))
    I2 = I * (I + 1) * np.eye(dim)
    H = np.zeros((dim, dim), dtype=complex)
    for i in range(3):
        for j in range(3):
            if W[i, j] == 0.0:
                continue
            term = 1.5 * (ops[i] @ ops[j] + ops[j] @ ops[i])
            if i == j:
                term = term - I2
            H += W[i, j] * term
    return scale * H


def _check_traceless(W: np.ndarray, what: str = "EFG") -> None:
    norm = np.linalg.norm(W)
    if abs(np.trace(W)) > 1e-9 * norm:
        raise ValueError(f"{what} must be traceless (trace {np.trace(W):.3e}, norm {norm:.3e})")
    if np.max(np.abs(W - W.T)) > 1e-9 * max(norm, 1e-300):
        raise ValueError(f"{what} must be symmetric")


def build_hamiltonian(sys: SpinSystem, f0: float, efg,
                      k: PhysicalConstants = DEFAULT_CONSTANTS) -> NuclearHamiltonian:
    """Assemble ``-f0*I_z + H_Q`` for a laboratory-frame EFG tensor in V/m^2.

    ``efg`` is a 3x3 array (or an object with a ``matrix`` attribute) expressed
    in the frame where z is along B0.
    """
    V = _coupling_matrix(efg)
    _check_traceless(V)
    W = V * (k.e * sys.q / k.h)
    _, _, Iz = spin_operators(sys.I)
    H = -f0 * Iz + _quadrupole_term(sys.I, W)
    return NuclearHamiltonian(matrix=H, I=sys.I, f0=f0)


def axial_coupling_tensor(f_Q: float, theta: float, phi: float = 0.0) -> np.ndarray:
    """Traceless axial tensor (Hz) with principal value f_Q along (theta, phi)."""
    n = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    return f_Q * (1.5 * np.outer(n, n) - 0.5 * np.eye(3))


def axial_hamiltonian(I: float, f0: float, f_Q: float, theta: float,
                      phi: float = 0.0) -> NuclearHamiltonian:
    """Hamiltonian for an axial quadrupole coupling f_Q tilted by theta from B0."""
    _, _, Iz = spin_operators(I)
    W = axial_coupling_tensor(f_Q, theta, phi)
    H = -f0 * Iz + _quadrupole_term(I, W)
    return NuclearHamiltonian(matrix=H, I=I, f0=f0)


def eigensystem(H: NuclearHamiltonian | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues (Hz) and the unitary matrix of column eigenvectors."""
    M = H.matrix if isinstance(H, NuclearHamiltonian) else np.asarray(H)
    return np.linalg.eigh(M)


class Transition(NamedTuple):
    m_hi: float
    m_lo: float
    frequency: float
    weight: float
    label: str


@dataclass(frozen=True)
class TransitionTable:
    transitions: tuple[Transition, ...]
    ambiguous: bool = False
    min_overlap: float = 1.0

    def __iter__(self):
        return iter(self.transitions)

    def __len__(self):
        return len(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]

    def by_label(self, label: str) -> Transition:
        for t in self.transitions:
            if t.label == label:
                return t
        raise KeyError(label)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.frequency for t in self.transitions])


def _label(I: float, m_hi: float) -> str:
    if abs(m_hi - 0.5) < 1e-9 and I >= 0.5:
        return "inner" if I > 0.5 else "nmr"
    if abs(I - 1.5) < 1e-9:
        return "outer+" if m_hi > 0 else "outer-"
    return f"{_fmt_m(m_hi)}<->{_fmt_m(m_hi - 1)}"


def _fmt_m(m: float) -> str:
    twice = int(round(2 * m))
    return f"{twice}/2" if twice % 2 else str(twice // 2)


def transition_frequencies(H: NuclearHamiltonian, Ix: np.ndarray | None = None) -> TransitionTable:
    """Allowed (delta m = +-1) transitions labelled by dominant I_z character.

    Eigenstates are assigned to the m value with the largest overlap. When
    that overlap falls below 0.6 anywhere, or the assignment is not one-to-one,
    the table falls back to sorted-eigenvalue adjacency and is flagged
    ``ambiguous``.
    """
    if Ix is None:
        Ix = spin_operators(H.I)[0]
    vals, vecs = eigensystem(H)
    dim = H.dim
    m = H.m_values
    overlap = np.abs(vecs) ** 2  # rows: m index, columns: eigenstate
    best = np.argmax(overlap, axis=0)
    min_overlap = float(np.min(overlap[best, np.arange(dim)]))
    ambiguous = min_overlap < 0.6 or len(set(best.tolist())) != dim
    if ambiguous:
        # for f0 > 0 the energy rises as m decreases
        order = np.arange(dim) if H.f0 >= 0 else np.arange(dim)[::-1]
        state_of_m = order
    else:
        state_of_m = np.empty(dim, dtype=int)
        state_of_m[best] = np.arange(dim)
    Ix_eig = vecs.conj().T @ Ix @ vecs
    out = []
    for i in range(dim - 1):
        a, b = state_of_m[i], state_of_m[i + 1]
        freq = float(vals[b] - vals[a])
        weight = float(abs(Ix_eig[b, a]) ** 2)
        out.append(Transition(float(m[i]), float(m[i + 1]), freq, weight, _label(H.I, m[i])))
    return TransitionTable(tuple(out), ambiguous=ambiguous, min_overlap=min_overlap)


def perturbative_shift_first(f_Q: float, theta: float, m_hi: float, I: float = 1.5) -> float:
    """First-order quadrupole shift of the m_hi <-> m_hi-1 line for an axial EFG."""
    _check_spin(I)
    p2 = 0.5 * (3.0 * math.cos(theta) ** 2 - 1.0)
    return -3.0 * f_Q / (4.0 * I * (2 * I - 1)) * (2 * m_hi - 1) * p2


def _ladder(I: float, m: float) -> float:
    val = I * (I + 1) - m * (m + 1)
    return math.sqrt(val) if val > 0 else 0.0


def _second_order_energy(I: float, A: float, f0: float, theta: float, m: float) -> float:
    s, c = math.sin(theta), math.cos(theta)

    def h1(mm):
        return A * 1.5 * s * c * (2 * mm + 1) * _ladder(I, mm)

    def h2(mm):
        return A * 0.75 * s * s * _ladder(I, mm) * _ladder(I, mm + 1)

    return (h1(m) ** 2 - h1(m - 1) ** 2) / f0 + (h2(m) ** 2 - h2(m - 2) ** 2) / (2 * f0)


def perturbative_shift_second(f_Q: float, f0: float, theta: float, m_hi: float = 0.5,
                              I: float = 1.5) -> float:
    """Second-order shift of the m_hi <-> m_hi-1 line (axial EFG, Hz).

    Sum-over-states result with the Zeeman levels as the unperturbed spectrum.
    For the central line this equals :func:`central_shift_second`.
    """
    _check_spin(I)
    if f0 == 0:
        raise ValueError("second-order shift undefined at f0 = 0")
    if abs(f_Q / f0) > 0.3:
        warnings.warn(f"f_Q/f0 = {f_Q / f0:.3g} exceeds 0.3; perturbative shift unreliable",
                      PerturbationWarning, stacklevel=2)
    if I < 1:
        return 0.0
    A = f_Q / (4.0 * I * (2 * I - 1))
    return (_second_order_energy(I, A, f0, theta, m_hi - 1)
            - _second_order_energy(I, A, f0, theta, m_hi))


def central_shift_second(f_Q: float, f0: float, theta: float, I: float = 1.5) -> float:
    """Closed-form second-order shift of the 1/2 <-> -1/2 line."""
    nu_q = 3.0 * f_Q / (2.0 * I * (2 * I - 1))
    c2 = math.cos(theta) ** 2
    return -(nu_q ** 2) / (16.0 * f0) * (I * (I + 1) - 0.75) * (1.0 - c2) * (9.0 * c2 - 1.0)


@dataclass
class AngularSweep:
    theta: np.ndarray
    exact: dict[str, np.ndarray] = field(default_factory=dict)
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    ambiguous: np.ndarray | None = None

    @property
    def perturbative(self) -> dict[str, np.ndarray]:
        return {k: self.first[k] + self.second[k] for k in self.first}


def angular_sweep(I: float, f0: float, f_Q: float, n_points: int, theta_min: float = 0.0,
                  theta_max: float = math.pi / 2, phi: float = 0.0) -> AngularSweep:
    """Exact and perturbative line shifts (relative to f0) against tilt angle."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    thetas = np.linspace(theta_min, theta_max, n_points)
    sweep = AngularSweep(theta=thetas, ambiguous=np.zeros(n_points, dtype=bool))
    Ix = spin_operators(I)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbationWarning)
        for idx, th in enumerate(thetas):
            table = transition_frequencies(axial_hamiltonian(I, f0, f_Q, th, phi), Ix)
            sweep.ambiguous[idx] = table.ambiguous
            for t in table:
                sweep.exact.setdefault(t.label, np.zeros(n_points))[idx] = t.frequency - f0
                sweep.first.setdefault(t.label, np.zeros(n_points))[idx] = \
                    perturbative_shift_first(f_Q, th, t.m_hi, I)
                second = perturbative_shift_second(f_Q, f0, th, t.m_hi, I) if f0 else 0.0
                sweep.second.setdefault(t.label, np.zeros(n_points))[idx] = second
    return sweep
