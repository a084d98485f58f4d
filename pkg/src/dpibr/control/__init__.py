"""Robust damping-controller design: filters, reduction, H∞ synthesis and
the sequential decentralized procedure."""

from .controller import Controller
from .design import (DesignError, HinfDamper, sso_mode, SettlingReport, StageReport, close_loop,
                     design_single, sequential_design, settling_time_check)
from .filters import FilterSpec, bandpass_weight, identity_filter, paper_weight, washout_filter
from .hinf import SynthesisProblem, SynthesisResult, build_generalized_plant, hinf_synthesize
from .reduction import (BalancedTruncation, hankel_singular_values, schur_balanced_truncation,
                        split_stable, truncation_bound)

__all__ = ["Controller", "DesignError", "HinfDamper", "SettlingReport", "StageReport",
           "sso_mode", "close_loop", "design_single", "sequential_design", "settling_time_check",
           "FilterSpec", "bandpass_weight", "identity_filter", "paper_weight", "washout_filter",
           "SynthesisProblem", "SynthesisResult", "build_generalized_plant", "hinf_synthesize",
           "BalancedTruncation", "hankel_singular_values", "schur_balanced_truncation",
           "split_stable", "truncation_bound"]
