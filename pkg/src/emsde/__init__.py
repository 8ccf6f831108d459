"""emsde: drift/diffusion identification for stochastic differential equations.

Fits a bilinear-drift, linear-diffusion SDE to a single observed trajectory
by maximizing the Gaussian one-step Euler-Maruyama transition likelihood,
and ships the simulation, baseline and evaluation machinery to exercise the
method on geometric Brownian motion and a stochastic Lorenz-63 system.
"""

from emsde.backends import active_backend_name, available_backends
from emsde.baselines import NonparametricField, gradient_match
from emsde.errors import (
    DimensionMismatchError,
    DivergenceError,
    EmsdeError,
    TrainingDivergedError,
    UndefinedGainError,
)
from emsde.evaluate import (
    MomentComparison,
    RmseReport,
    TopologyVerdict,
    attractor_topology,
    coefficient_rmse,
    gain_rate,
    moment_comparison,
    parameter_statistics,
)
from emsde.integrate import (
    SimConfig,
    Trajectory,
    derive_streams,
    em_path,
    em_step,
    read_trajectory_csv,
    simulate,
    simulate_ensemble,
    write_trajectory_csv,
)
from emsde.model import (
    DiffusionParams,
    DriftParams,
    EffectiveCoefficients,
    GaussianTransition,
    SdeModel,
    load_model,
    save_model,
)
from emsde.systems import GbmSystem, MomentCurve, StochasticLorenzSystem, empirical_moments
from emsde.train import (
    FitResult,
    LossBreakdown,
    LossGradient,
    TrainConfig,
    check_gradient,
    fit,
    nll_gradient,
    nll_loss,
)

__version__ = "0.1.0"

__all__ = [
    "DiffusionParams",
    "DimensionMismatchError",
    "DivergenceError",
    "DriftParams",
    "EffectiveCoefficients",
    "EmsdeError",
    "FitResult",
    "GaussianTransition",
    "GbmSystem",
    "LossBreakdown",
    "LossGradient",
    "MomentComparison",
    "MomentCurve",
    "NonparametricField",
    "RmseReport",
    "SdeModel",
    "SimConfig",
    "StochasticLorenzSystem",
    "TopologyVerdict",
    "TrainConfig",
    "TrainingDivergedError",
    "Trajectory",
    "UndefinedGainError",
    "active_backend_name",
    "attractor_topology",
    "available_backends",
    "check_gradient",
    "coefficient_rmse",
    "derive_streams",
    "em_path",
    "em_step",
    "empirical_moments",
    "fit",
    "gain_rate",
    "gradient_match",
    "load_model",
    "moment_comparison",
    "nll_gradient",
    "nll_loss",
    "parameter_statistics",
    "read_trajectory_csv",
    "save_model",
    "simulate",
    "simulate_ensemble",
    "write_trajectory_csv",
]
