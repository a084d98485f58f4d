"""Small-signal analysis: linearisation, modes, frequency response, Prony."""

from .linear import LinearModel, append_washout, linearize, linearize_function
from .modal import (Mode, ModalAnalyzer, eigenanalysis, find_mode, frequency_response,
                    hinf_norm_grid, locational_impact, modal_controllability)
from .prony import Prony, PronyComponent, dominant_mode, prony_fit, resample_uniform

__all__ = ["LinearModel", "append_washout", "linearize", "linearize_function", "Mode",
           "ModalAnalyzer", "eigenanalysis", "find_mode", "frequency_response",
           "hinf_norm_grid", "locational_impact", "modal_controllability", "Prony",
           "PronyComponent", "dominant_mode", "prony_fit", "resample_uniform"]
