"""Finite-volume laboratory for a radial repulsive chemotaxis-consumption system."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import ChemoradError, ConfigError, DomainError, RegimeError, SchemeError
from .model import (
    DerivedConstants,
    ExponentChoice,
    InitialProfile,
    ProblemParams,
    barrier_delta1,
    choose_exponents,
    classify_regime,
    derive_constants,
    diffusion_coeff,
    eta,
    smallness_threshold_Mstar,
)
from .elliptic import RadialGrid, face_gradient, solve_v, v_at_origin
from .stepper import OutcomeLabel, SimState, StepperConfig, advance, initial_state, run_until
from .diagnostics import Diagnostics, DiagnosticsRecord, MonitorConfig, phi, psi

__all__ = [
    "ChemoradError",
    "ConfigError",
    "DerivedConstants",
    "Diagnostics",
    "DiagnosticsRecord",
    "DomainError",
    "ExponentChoice",
    "InitialProfile",
    "MonitorConfig",
    "OutcomeLabel",
    "ProblemParams",
    "RadialGrid",
    "RegimeError",
    "SchemeError",
    "SimState",
    "StepperConfig",
    "advance",
    "barrier_delta1",
    "choose_exponents",
    "classify_regime",
    "derive_constants",
    "diffusion_coeff",
    "eta",
    "face_gradient",
    "initial_state",
    "phi",
    "psi",
    "run_until",
    "smallness_threshold_Mstar",
    "solve_v",
    "v_at_origin",
]
