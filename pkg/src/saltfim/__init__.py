"""Hybrid sensitivity propagation and salted Fisher information."""

from .estimation import (
    FitConfig,
    FitResult,
    MeasurementSet,
    MonteCarloSummary,
    monte_carlo_crlb,
    nls_fit,
    simulate_measurements,
)
from .exceptions import (
    AlgebraicSolveError,
    AmbiguousEventError,
    EstimationError,
    GrazingError,
    IntegrationError,
    NoCrossingError,
    NumericalError,
    SaltfimError,
    ValidationError,
    ZenoError,
)
from .hybrid import (
    AlgebraicLayer,
    HybridArc,
    HybridSystemSpec,
    IntegratorConfig,
    ModeSpec,
    TransitionSpec,
    simulate,
)
from .information import (
    InformationReport,
    NoiseModel,
    OutputMap,
    conditional_fim,
    crlb,
    event_increment,
    fisher_information,
    flow_information,
    hpe_certificate,
    hpe_gramian,
    info_metrics,
    least_observable_direction,
    reset_jacobian_fim,
    salted_fim,
    smooth_fim,
    state_output,
)
from .sensitivity import (
    JacobianBundle,
    PropagationMode,
    SensitivityTrajectory,
    event_time_sensitivity,
    propagate,
    saltation_matrix,
    sensitivity_jump,
)

__version__ = "0.1.0"

__all__ = [
    "AlgebraicLayer",
    "AlgebraicSolveError",
    "AmbiguousEventError",
    "EstimationError",
    "FitConfig",
    "FitResult",
    "GrazingError",
    "HybridArc",
    "HybridSystemSpec",
    "InformationReport",
    "IntegrationError",
    "IntegratorConfig",
    "JacobianBundle",
    "MeasurementSet",
    "ModeSpec",
    "MonteCarloSummary",
    "NoCrossingError",
    "NoiseModel",
    "NumericalError",
    "OutputMap",
    "PropagationMode",
    "SaltfimError",
    "SensitivityTrajectory",
    "TransitionSpec",
    "ValidationError",
    "ZenoError",
    "conditional_fim",
    "crlb",
    "event_increment",
    "event_time_sensitivity",
    "fisher_information",
    "flow_information",
    "hpe_certificate",
    "hpe_gramian",
    "info_metrics",
    "least_observable_direction",
    "monte_carlo_crlb",
    "nls_fit",
    "propagate",
    "reset_jacobian_fim",
    "saltation_matrix",
    "salted_fim",
    "sensitivity_jump",
    "simulate",
    "simulate_measurements",
    "smooth_fim",
    "state_output",
]
