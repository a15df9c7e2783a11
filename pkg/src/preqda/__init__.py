"""Sequential data assimilation for generative forecasting models via
scoring-rule posteriors, waste-free SMC, and a preconditioned gradient kernel."""

from .dgfm import ForecastModel, NetworkSpec, forecast_ensemble, param_count
from .diagnostics import MetricsReport, calibration_error, nrmse, r2
from .estimators import EnKFForecaster, PrequentialForecaster
from .lorenz96 import L96Params, SimConfig, TimeSeries, generate_dataset
from .scoring import EnergyScoreLoss, ScoreConfig, energy_score_estimate
from .smc import ParticleEnsemble, PriorSpec, SMCConfig, run_assimilation

__version__ = "0.1.0"

__all__ = [
    "ForecastModel", "NetworkSpec", "forecast_ensemble", "param_count",
    "MetricsReport", "calibration_error", "nrmse", "r2",
    "EnKFForecaster", "PrequentialForecaster",
    "L96Params", "SimConfig", "TimeSeries", "generate_dataset",
    "EnergyScoreLoss", "ScoreConfig", "energy_score_estimate",
    "ParticleEnsemble", "PriorSpec", "SMCConfig", "run_assimilation",
]
