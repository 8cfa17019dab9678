"""Numerical lab for two reduced blow-up models.

``profile_model`` integrates the nonlocal (A, B) ODE, which stays regular
for all time, and audits its invariants. ``boundary_layer`` simulates the
Lagrangian boundary-layer model and records the growth of Q together with
the diagnostics needed to judge whether an apparent blow-up is resolved.
"""

from __future__ import annotations

from .boundary_layer import (BoundaryRun, GlobalQuantities, InitialData, ParticleGrid,
                             StepControl, audit_box_bound, audit_J_chain, build_grid, compute_J,
                             oracle_omega, step)
from .boundary_layer import run as run_boundary_layer
from .diagnostics import (BandReport, FitResult, TimeSeries, boundedness_window,
                          extrapolate_blowup, fit_power_law)
from .errors import (BlowupDetected, BlowupLabError, ConfigError, DomainError, InsufficientData,
                     NoBlowupTrend, NonConvergence, NotReached, NumericalFailure, SaturationError,
                     StepFloor)
from .profile_model import (AuditReport, ProfileRun, ProfileState, Regime, SamplePlan,
                            audit_inequalities, audit_pinching, audit_profile_bounds,
                            classify_regime, default_k, find_transition_time, integrate,
                            k_upper_bound)
from .quadrature import (ProfileParams, QuadratureResult, adaptive_integrate, integrand_a,
                         integrand_b, oracle_rhs_b0, peak_split, rhs)

__version__ = "0.1.0"

__all__ = [
    "AuditReport", "BandReport", "BlowupDetected", "BlowupLabError", "BoundaryRun",
    "ConfigError", "DomainError", "FitResult", "GlobalQuantities", "InitialData",
    "InsufficientData", "NoBlowupTrend", "NonConvergence", "NotReached", "NumericalFailure",
    "ParticleGrid", "ProfileParams", "ProfileRun", "ProfileState", "QuadratureResult", "Regime",
    "SamplePlan", "SaturationError", "StepControl", "StepFloor", "TimeSeries",
    "adaptive_integrate", "audit_box_bound", "audit_J_chain", "audit_inequalities",
    "audit_pinching", "audit_profile_bounds", "boundedness_window", "build_grid",
    "classify_regime", "compute_J", "default_k", "extrapolate_blowup", "find_transition_time",
    "fit_power_law", "integrand_a", "integrand_b", "integrate", "k_upper_bound", "oracle_omega",
    "oracle_rhs_b0", "peak_split", "rhs", "run_boundary_layer", "step",
]
