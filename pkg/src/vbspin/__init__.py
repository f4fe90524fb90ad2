"""Charge-noise model of spin-1 defect ESR spectra, thin-film absorption and relaxation fits."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._backend import active_backend, set_backend
from .bath import BathParams, ChargeEnsemble, LatticeSpec, field_at_origin, sample_charges
from .fitting import (EsrModel, FitResult, TimeTrace, fit_esr, fit_exponential_decay,
                      fit_exponential_rise, fit_linear_slope, t1_two_channel)
from .optics import Layer, LayerStack, absorption_profile, energy_audit, transfer_matrix
from .spectrum import BroadeningSpec, Spectrum, ensemble_spectrum, splitting_estimate
from .spin import ElectricField, HamiltonianParams, block_transitions, full_hilbert_transitions

__all__ = [
    "active_backend", "set_backend",
    "BathParams", "ChargeEnsemble", "LatticeSpec", "field_at_origin", "sample_charges",
    "EsrModel", "FitResult", "TimeTrace", "fit_esr", "fit_exponential_decay",
    "fit_exponential_rise", "fit_linear_slope", "t1_two_channel",
    "Layer", "LayerStack", "absorption_profile", "energy_audit", "transfer_matrix",
    "BroadeningSpec", "Spectrum", "ensemble_spectrum", "splitting_estimate",
    "ElectricField", "HamiltonianParams", "block_transitions", "full_hilbert_transitions",
]
