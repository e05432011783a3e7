"""Strain in thermally mismatched silicon stacks and the strain -> EFG map.

Tensors are 3x3 arrays in the cubic crystal frame. The gradient-elastic map of
a cubic crystal has two independent components S11 and S44; S12 = -S11/2 so
that hydrostatic strain produces no field gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .spincore import (ARSENIC_75, DEFAULT_CONSTANTS, PhysicalConstants, SpinSystem,
                       perturbative_shift_first)

__all__ = [
    "StiffnessConstants",
    "SILICON",
    "StrainTensor",
    "GradientElasticTensor",
    "REFERENCE_S",
    "EFGTensor",
    "Coupling",
    "STACK_NORMALS",
    "biaxial_thermal_strain",
    "perpendicular_ratio",
    "uniaxial_strain",
    "efg_from_strain",
    "coupling_fq",
    "extract_S",
    "strain_for_geometry",
    "piezo_shift_forecast",
    "rotate_to_field_frame",
]

STACK_NORMALS = {
    "100": np.array([0.0, 0.0, 1.0]),
    "111": np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0),
    "110": np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0),
}


@dataclass(frozen=True)
class StiffnessConstants:
    C11: float = 165.7e9
    C12: float = 63.9e9
    C44: float = 79.6e9

    def __post_init__(self):
        if not (self.C11 > abs(self.C12) and self.C44 > 0):
            raise ValueError("stiffness constants violate elastic stability")


SILICON = StiffnessConstants()


def _sym(matrix) -> np.ndarray:
    M = np.array(matrix, dtype=float)
    if M.shape != (3, 3):
        raise ValueError("expected a 3x3 tensor")
    return M


@dataclass(frozen=True, eq=False)
class StrainTensor:
    matrix: np.ndarray

    def __post_init__(self):
        M = _sym(self.matrix)
        if not np.array_equal(M, M.T):
            # symmetrize tiny round-off, reject genuine asymmetry
            if np.max(np.abs(M - M.T)) > 1e-15 + 1e-12 * np.max(np.abs(M)):
                raise ValueError("strain tensor must be symmetric")
            M = 0.5 * (M + M.T)
        if np.max(np.abs(M)) >= 1e-2:
            raise ValueError("strain components must stay below 1e-2 (small-strain regime)")
        object.__setattr__(self, "matrix", M)

    @classmethod
    def zero(cls) -> "StrainTensor":
        return cls(np.zeros((3, 3)))

    def __add__(self, other: "StrainTensor") -> "StrainTensor":
        return StrainTensor(self.matrix + other.matrix)

    def __mul__(self, a: float) -> "StrainTensor":
        return StrainTensor(a * self.matrix)

    __rmul__ = __mul__


@dataclass(frozen=True)
class GradientElasticTensor:
    """Gradient-elastic constants in V/m^2 per unit strain.

    ``shear="tensor"`` maps V_ij = S44 * eps_ij; ``shear="engineering"`` uses
    the engineering shear strain, V_ij = S44 * 2 * eps_ij.
    """

    S11: float
    S44: float
    shear: str = "tensor"

    def __post_init__(self):
        if self.shear not in ("tensor", "engineering"):
            raise ValueError(f"unknown shear convention {self.shear!r}")

    @property
    def S12(self) -> float:
        return -0.5 * self.S11


REFERENCE_S = GradientElasticTensor(S11=1.5e22, S44=6.8e22)


@dataclass(frozen=True, eq=False)
class EFGTensor:
    matrix: np.ndarray

    def __post_init__(self):
        M = _sym(self.matrix)
        norm = np.linalg.norm(M)
        if abs(np.trace(M)) > 1e-9 * norm:
            raise ValueError("EFG tensor must be traceless")
        if np.max(np.abs(M - M.T)) > 1e-12 * max(norm, 1e-300):
            raise ValueError("EFG tensor must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))

    def principal(self) -> tuple[np.ndarray, np.ndarray]:
        """Principal values sorted by decreasing magnitude, with eigenvectors as columns."""
        vals, vecs = np.linalg.eigh(self.matrix)
        order = np.argsort(-np.abs(vals), kind="stable")
        return vals[order], vecs[:, order]

    def rotated(self, R: np.ndarray) -> "EFGTensor":
        return EFGTensor(R @ self.matrix @ R.T)


def perpendicular_ratio(orientation: str, C: StiffnessConstants = SILICON) -> float:
    """eps_perp / eps_par for a biaxially strained (100) or (111) layer."""
    if orientation == "100":
        return -2.0 * C.C12 / C.C11
    if orientation == "111":
        return -2.0 * (C.C11 + 2 * C.C12 - 2 * C.C44) / (C.C11 + 2 * C.C12 + 4 * C.C44)
    raise ValueError(f"unsupported stack orientation {orientation!r}")


def biaxial_thermal_strain(eps_par: float, orientation: str, C: StiffnessConstants = SILICON,
                           perp_model: str = "elastic",
                           eps_perp: float | None = None) -> StrainTensor:
    """Strain of a layer clamped in-plane to ``eps_par`` with a free surface.

    ``perp_model`` selects how the out-of-plane strain is obtained for (111):
    ``"elastic"`` uses the (111) zero-normal-stress ratio, ``"equal-100"`` reuses
    the (100) value, i.e. the same eps_perp as a (100) stack. An explicit
    ``eps_perp`` overrides both.
    """
    orientation = str(orientation).strip("()")
    if orientation not in ("100", "111"):
        raise ValueError(f"unsupported stack orientation {orientation!r}")
    if abs(eps_par) >= 1e-2:
        raise ValueError("|eps_par| must be below 1e-2")
    if perp_model not in ("elastic", "equal-100"):
        raise ValueError(f"unknown perp_model {perp_model!r}")
    if eps_perp is None:
        ratio_from = "100" if perp_model == "equal-100" else orientation
        eps_perp = perpendicular_ratio(ratio_from, C) * eps_par
    n = STACK_NORMALS[orientation]
    return StrainTensor(eps_par * np.eye(3) + (eps_perp - eps_par) * np.outer(n, n))


def uniaxial_strain(eps_long: float, eps_trans: float, axis) -> StrainTensor:
    """eps_trans * 1 + (eps_long - eps_trans) * n n^T for the unit direction of ``axis``."""
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("uniaxial strain axis must be nonzero")
    n = n / norm
    return StrainTensor(eps_trans * np.eye(3) + (eps_long - eps_trans) * np.outer(n, n))


def efg_from_strain(eps: StrainTensor, S: GradientElasticTensor) -> EFGTensor:
    e = eps.matrix
    diag = np.diag(e)
    trace = diag.sum()
    # S11*e_ii + S12*(tr - e_ii) with S12 = -S11/2
    V = (S.S44 * (2.0 if S.shear == "engineering" else 1.0)) * (e - np.diag(diag))
    V = V + np.diag(S.S11 * diag + S.S12 * (trace - diag))
    # S12 = -S11/2 makes V traceless; drop the round-off residue
    V -= np.trace(V) / 3.0 * np.eye(3)
    return EFGTensor(V)


class Coupling(NamedTuple):
    f_Q: float          # magnitude, Hz
    axis: np.ndarray    # principal axis of the largest-magnitude principal value
    sign: int           # sign of e*q*V_n
    degenerate: bool

    @property
    def signed(self) -> float:
        return self.sign * self.f_Q


def coupling_fq(efg: EFGTensor, sys: SpinSystem = ARSENIC_75,
                k: PhysicalConstants = DEFAULT_CONSTANTS) -> Coupling:
    """Quadrupole coupling f_Q = e*q*|V_n|/h from the dominant principal value."""
    vals, vecs = efg.principal()
    scale = max(np.linalg.norm(efg.matrix), 1e-300)
    degenerate = bool(abs(abs(vals[0]) - abs(vals[1])) <= 1e-9 * scale)
    if np.all(vals == 0):
        return Coupling(0.0, np.array([0.0, 0.0, 1.0]), 1, True)
    signed = k.e * sys.q * vals[0] / k.h
    axis = vecs[:, 0]
    # canonical orientation: first nonzero component positive
    nz = np.flatnonzero(np.abs(axis) > 1e-12)
    if nz.size and axis[nz[0]] < 0:
        axis = -axis
    return Coupling(abs(signed), axis, 1 if signed >= 0 else -1, degenerate)


def _unit_responses(eps: StrainTensor, shear: str) -> tuple[EFGTensor, EFGTensor]:
    return (efg_from_strain(eps, GradientElasticTensor(1.0, 0.0, shear)),
            efg_from_strain(eps, GradientElasticTensor(0.0, 1.0, shear)))


def extract_S(f_Q_100: float, f_Q_111: float, eps100: StrainTensor, eps111: StrainTensor,
              sys: SpinSystem = ARSENIC_75, k: PhysicalConstants = DEFAULT_CONSTANTS,
              shear: str = "tensor") -> tuple[float, float]:
    """Invert the strain -> f_Q chain for the two stack geometries.

    Returns (S11, S44) as magnitudes. When each geometry probes a single
    component (the usual (100)/(111) case) the inversion is a division;
    otherwise the two magnitude equations are solved jointly.
    """
    resp = []
    for eps in (eps100, eps111):
        a, b = _unit_responses(eps, shear)
        resp.append((coupling_fq(a, sys, k).f_Q, coupling_fq(b, sys, k).f_Q, a, b))
    (a1, b1, A1, B1), (a2, b2, A2, B2) = resp
    tiny = 1e-300
    if (a1 <= tiny and b1 <= tiny) or (a2 <= tiny and b2 <= tiny):
        raise ValueError("singular geometry: strain produces no field gradient")
    pure = (b1 <= 1e-12 * a1) and (a2 <= 1e-12 * b2)
    if pure:
        return f_Q_100 / a1, f_Q_111 / b2
    if abs(a1 * b2 - a2 * b1) <= 1e-12 * (a1 * b2 + a2 * b1):
        raise ValueError("singular geometry: the two strain states probe the same component")

    def resid(p):
        S = [p[0] * A1.matrix + p[1] * B1.matrix, p[0] * A2.matrix + p[1] * B2.matrix]
        return [coupling_fq(EFGTensor(S[0]), sys, k).f_Q - f_Q_100,
                coupling_fq(EFGTensor(S[1]), sys, k).f_Q - f_Q_111]

    guess = np.linalg.solve([[a1, b1], [a2, b2]], [f_Q_100, f_Q_111])
    sol = optimize.fsolve(resid, np.abs(guess), full_output=True, xtol=1e-13)
    if sol[2] != 1:
        raise ValueError(f"S extraction did not converge: {sol[3]}")
    return float(sol[0][0]), float(sol[0][1])


def strain_for_geometry(eps: float, geometry: str, C: StiffnessConstants = SILICON,
                        perp_model: str = "equal-100", eps_trans: float = 0.0) -> StrainTensor:
    """Strain tensor for a named geometry driven by a single strain value.

    ``stack-100`` / ``stack-111``: ``eps`` is the in-plane strain of a clamped
    layer. ``uniaxial-100`` / ``uniaxial-111``: ``eps`` is the strain along the
    axis, with ``eps_trans`` across it.
    """
    kind, _, orient = geometry.partition("-")
    if kind == "stack":
        return biaxial_thermal_strain(eps, orient, C, perp_model=perp_model)
    if kind == "uniaxial" and orient in STACK_NORMALS:
        return uniaxial_strain(eps, eps_trans, STACK_NORMALS[orient])
    raise ValueError(f"unsupported geometry {geometry!r}")


def piezo_shift_forecast(eps: float, S: GradientElasticTensor = REFERENCE_S,
                         geometry: str = "stack-111", sys: SpinSystem = ARSENIC_75,
                         k: PhysicalConstants = DEFAULT_CONSTANTS, C: StiffnessConstants = SILICON,
                         perp_model: str = "equal-100", eps_trans: float = 0.0) -> float:
    """Shift of the 3/2 <-> 1/2 line (Hz) at theta = 0 for a strain ``eps``.

    Strain -> EFG -> signed f_Q -> first-order line shift; linear in ``eps``.
    """
    if abs(eps) >= 1e-3:
        raise ValueError("|eps| must be below 1e-3 for a piezo forecast")
    if eps == 0:
        return 0.0
    strain = strain_for_geometry(eps, geometry, C, perp_model, eps_trans)
    cpl = coupling_fq(efg_from_strain(strain, S), sys, k)
    # the tensor axis direction is irrelevant at theta = 0 relative to that axis
    return perturbative_shift_first(cpl.signed, 0.0, 1.5, sys.I)


def rotate_to_field_frame(tensor: np.ndarray, field_axis) -> np.ndarray:
    """Express a crystal-frame tensor in the frame whose z axis is ``field_axis``."""
    b = np.asarray(field_axis, dtype=float)
    b = b / np.linalg.norm(b)
    # pick a reference not parallel to b for the x axis
    ref = np.array([1.0, 0.0, 0.0]) if abs(b[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = ref - b * (ref @ b)
    x /= np.linalg.norm(x)
    y = np.cross(b, x)
    R = np.vstack([x, y, b])
    return R @ np.asarray(tensor) @ R.T
