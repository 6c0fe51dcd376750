"""Photonic heat transport through a flux-tunable transmon between two resonators.

Submodules
----------
model
    Circuit parameters and truncated-basis Hamiltonians.
bath
    Spectral densities and exponential expansions of bath correlation functions.
heom
    Hierarchical equations of motion, propagation and heat currents.
perturbative
    Redfield-plus, Redfield and golden-rule solvers.
oracle
    Exact propagation with a discretized bath, for short-time checks.
experiments
    Flux sweeps, parameter scans, rectification and solver comparisons.
cli
    Config-driven command-line front end.
"""

from .bath import (BathSpec, Debye, EffectiveLorentz, ExponentialExpansion, LorentzClass,
                   correlation_closed_form, expand, expand_matsubara, expand_pade,
                   validate_expansion)
from .experiments import (HierarchySettings, RectificationResult, SolverSettings, SweepConfig,
                          SweepPoint, dynamics_trace, flux_sweep, parameter_scan,
                          rectification_sweep, solver_comparison)
from .heom import (Hierarchy, InstabilityError, PropagatorConfig, SteadyStateCriterion, Trajectory,
                   build_hierarchy, heat_current, propagate)
from .model import (CircuitParams, HilbertBasis, SystemModel, TransmonRegimeWarning,
                    build_beam_splitter, build_model, build_sequential, build_spin_boson,
                    energy_spectrum, transmon_frequency)
from .units import beta_from_mk, to_femtowatt

__all__ = [
    "BathSpec", "Debye", "EffectiveLorentz", "ExponentialExpansion", "LorentzClass",
    "correlation_closed_form", "expand", "expand_matsubara", "expand_pade", "validate_expansion",
    "HierarchySettings", "RectificationResult", "SolverSettings", "SweepConfig", "SweepPoint",
    "dynamics_trace", "flux_sweep", "parameter_scan", "rectification_sweep", "solver_comparison",
    "Hierarchy", "InstabilityError", "PropagatorConfig", "SteadyStateCriterion", "Trajectory",
    "build_hierarchy", "heat_current", "propagate",
    "CircuitParams", "HilbertBasis", "SystemModel", "TransmonRegimeWarning", "build_beam_splitter",
    "build_model", "build_sequential", "build_spin_boson", "energy_spectrum", "transmon_frequency",
    "beta_from_mk", "to_femtowatt",
]
