"""Driven-dissipative Dicke/LMG dynamics and time-crystal diagnostics."""

__version__ = "0.1.0"

from .drive import (
    BinaryDrive,
    BinaryNoisyAmplitudeDrive,
    BinaryNoisyDutyDrive,
    ConfigurationError,
    DisorderRealization,
    SinusoidalDrive,
    coupling_at,
    sample_disorder,
    split_seed,
    switch_times,
)
from .models import (
    MeanFieldBroken,
    MeanFieldState,
    ModelKind,
    ModelParams,
    PolarizedNegZ,
    PolarizedX,
    critical_coupling,
    dispatch_model,
    instability_duty,
    mean_field_derivative,
    mean_field_initial_state,
    perturbed_initial_state,
    steady_state,
)
from .integrate import (
    IntegrationDivergedError,
    TrajectorySeries,
    integrate_mean_field,
    integrate_ode,
    integrate_sde,
)
