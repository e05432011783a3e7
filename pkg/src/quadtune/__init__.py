"""Strain-tuned quadrupole spectroscopy of ionized donors in silicon."""

__version__ = "0.1.0"

from .spincore import ARSENIC_75, FieldConfig, SpinSystem, axial_hamiltonian, transition_frequencies
from .strainmap import SILICON, GradientElasticTensor, biaxial_thermal_strain, piezo_shift_forecast
from .seqlang import ExperimentConfig, parse, serialize, validate

__all__ = [
    "__version__",
    "ARSENIC_75",
    "FieldConfig",
    "SpinSystem",
    "axial_hamiltonian",
    "transition_frequencies",
    "SILICON",
    "GradientElasticTensor",
    "biaxial_thermal_strain",
    "piezo_shift_forecast",
    "ExperimentConfig",
    "parse",
    "serialize",
    "validate",
]
