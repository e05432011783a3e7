"""Turn a parsed :class:`ExperimentConfig` into the physics objects of the other modules.

Field angles in ``[field]`` are polar angles measured from a reference axis
set by the strain geometry: the stack normal for ``stack-*``, the stress axis
for ``uniaxial`` and [001] otherwise. ``phi`` turns about that axis starting
from a fixed perpendicular direction.
"""

from __future__ import annotations

import math

import numpy as np

from .dynamics import NoiseModel, calibrate_amplitude
from .endor import BroadeningModel, EndorConfig, edmr_line_fields
from .seqlang import ExperimentConfig
from .spincore import FieldConfig, SpinSystem, larmor_frequency
from .strainmap import (STACK_NORMALS, EFGTensor, GradientElasticTensor, StiffnessConstants, StrainTensor,
                        biaxial_thermal_strain, coupling_fq, efg_from_strain, uniaxial_strain)

__all__ = [
    "spin_system",
    "stiffness",
    "gradient_elastic",
    "reference_axis",
    "field_axis",
    "field_config",
    "strain_tensor",
    "strain_value",
    "geometry_name",
    "efg_tensor",
    "coupling_and_larmor",
    "endor_config",
    "endor_fields",
    "broadening_model",
    "noise_model",
]


def spin_system(cfg: ExperimentConfig) -> SpinSystem:
    s = cfg.system
    return SpinSystem(I=s.I, g_n=s.g_n, q=s.q, g_n_free=s.g_n_free)


def stiffness(cfg: ExperimentConfig) -> StiffnessConstants:
    st = cfg.strain
    return StiffnessConstants(st.C11, st.C12, st.C44)


def gradient_elastic(cfg: ExperimentConfig) -> GradientElasticTensor:
    t = cfg.tensor_s
    return GradientElasticTensor(t.S11, t.S44, t.shear)


def reference_axis(cfg: ExperimentConfig) -> np.ndarray:
    st = cfg.strain
    if st.mode in ("stack-100", "stack-111"):
        return STACK_NORMALS[st.mode[-3:]]
    if st.mode == "uniaxial":
        return STACK_NORMALS[st.axis]
    return STACK_NORMALS["100"]


def _perpendicular(n: np.ndarray) -> np.ndarray:
    # component of whichever cube axis is least aligned with n
    e = np.eye(3)[int(np.argmin(np.abs(n)))]
    v = e - (e @ n) * n
    return v / np.linalg.norm(v)


def field_axis(cfg: ExperimentConfig, theta: float | None = None, phi: float | None = None) -> tuple:
    theta = cfg.field.theta if theta is None else theta
    phi = cfg.field.phi if phi is None else phi
    n = reference_axis(cfg)
    e1 = _perpendicular(n)
    e2 = np.cross(n, e1)
    b = math.sin(theta) * (math.cos(phi) * e1 + math.sin(phi) * e2) + math.cos(theta) * n
    b = b / np.linalg.norm(b)
    return tuple(float(x) for x in b)


def field_config(cfg: ExperimentConfig, B0: float | None = None, theta: float | None = None) -> FieldConfig:
    return FieldConfig(cfg.field.B0 if B0 is None else B0, field_axis(cfg, theta))


def strain_value(cfg: ExperimentConfig) -> float:
    """The scalar that drives the geometry: eps_par for stacks, eps_long for uniaxial."""
    st = cfg.strain
    if st.mode.startswith("stack"):
        return st.eps_par
    if st.mode == "uniaxial":
        return st.eps_long
    raise ValueError(f"strain mode {st.mode} has no scalar strain value")


def geometry_name(cfg: ExperimentConfig) -> str:
    st = cfg.strain
    if st.mode.startswith("stack"):
        return st.mode
    if st.mode == "uniaxial":
        return f"uniaxial-{st.axis}"
    raise ValueError(f"strain mode {st.mode} is not a named geometry")


def strain_tensor(cfg: ExperimentConfig, value: float | None = None) -> StrainTensor:
    """Crystal-frame strain; ``value`` replaces eps_par / eps_long (e.g. in a sweep)."""
    st = cfg.strain
    if st.mode == "none":
        return StrainTensor.zero()
    if st.mode.startswith("stack"):
        eps = st.eps_par if value is None else value
        eps_perp = st.eps_perp if value is None else None
        return biaxial_thermal_strain(eps, st.mode[-3:], stiffness(cfg), perp_model=st.perp_model,
                                      eps_perp=eps_perp)
    if st.mode == "uniaxial":
        eps = st.eps_long if value is None else value
        return uniaxial_strain(eps, st.eps_trans or 0.0, STACK_NORMALS[st.axis])
    comp = {k: getattr(st, k) or 0.0 for k in ("exx", "eyy", "ezz", "exy", "exz", "eyz")}
    m = np.array([[comp["exx"], comp["exy"], comp["exz"]],
                  [comp["exy"], comp["eyy"], comp["eyz"]],
                  [comp["exz"], comp["eyz"], comp["ezz"]]])
    return StrainTensor(m)


def efg_tensor(cfg: ExperimentConfig, value: float | None = None) -> EFGTensor:
    return efg_from_strain(strain_tensor(cfg, value), gradient_elastic(cfg))


def coupling_and_larmor(cfg: ExperimentConfig) -> tuple[float, float]:
    sys = spin_system(cfg)
    f_Q = coupling_fq(efg_tensor(cfg), sys).f_Q
    return f_Q, larmor_frequency(sys, cfg.field.B0)


def endor_config(cfg: ExperimentConfig) -> EndorConfig:
    en = cfg.endor
    rf = None if en.rf_start is None else (en.rf_start, en.rf_stop)
    return EndorConfig(t_antiparallel=en.t_antiparallel, t_parallel=en.t_parallel, efficiency=en.efficiency,
                       rf_range=rf, pulse_duration=en.pulse_duration)


def endor_fields(cfg: ExperimentConfig) -> list[FieldConfig]:
    """One field per ionization target m_I = 3/2 .. -3/2."""
    axis = field_axis(cfg)
    if cfg.endor.fields == "edmr":
        return [FieldConfig(B, axis) for B in edmr_line_fields(cfg.endor.mw_frequency)]
    return [FieldConfig(cfg.field.B0, axis)] * 4


def broadening_model(cfg: ExperimentConfig) -> BroadeningModel:
    b = cfg.broadening
    return BroadeningModel(b.spread, b.asymmetry, b.shape)


def noise_model(cfg: ExperimentConfig) -> NoiseModel:
    """Noise from ``[noise]``; cutoffs are given in Hz and converted to rad/s.

    With ``T2`` set, the amplitude is calibrated so the ``calibrate_n``-pulse
    sequence has that 1/e time.
    """
    nz = cfg.noise
    if nz is None:
        raise ValueError("config has no [noise] section")
    model = NoiseModel(nz.alpha, nz.amplitude, 2 * math.pi * nz.low_cutoff, 2 * math.pi * nz.high_cutoff)
    if nz.T2 is not None:
        model = calibrate_amplitude(model, nz.T2, nz.calibrate_n)
    return model
