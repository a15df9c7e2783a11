"""Stochastic (perturbed-observation) ensemble Kalman filter on the
single-scale Lorenz-96 state-space model with random per-transition forcing
and identity observation operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lorenz96 import drift_misspecified, rk4_step
from .streams import stream


@dataclass(frozen=True)
class EnKFConfig:
    ensemble_size: int = 100
    obs_noise_var: float = 1.0
    forcing_mean: float = 20.0
    forcing_var: float = 1.0
    dt: float = 0.001
    delta_t: float = 0.2

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.obs_noise_var <= 0 or self.forcing_var < 0:
            raise ValueError("variances must be positive")


@dataclass
class Ensemble:
    members: np.ndarray  # (ensemble_size, K)

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.float64)
        if not np.all(np.isfinite(self.members)):
            raise ValueError("non-finite ensemble member")


def forecast_step(ens: Ensemble, cfg: EnKFConfig, rng: np.random.Generator) -> Ensemble:
    """Integrate every member over one record interval.

    A forcing vector F ~ N(forcing_mean, forcing_var) is drawn once per member
    per interval (not per RK4 substep) and held fixed during the interval.
    """
    members = ens.members
    forcing = cfg.forcing_mean + np.sqrt(cfg.forcing_var) * rng.standard_normal(members.shape)
    n_sub = round(cfg.delta_t / cfg.dt)
    drift = lambda s: drift_misspecified(s, forcing)
    state = members
    for _ in range(n_sub):
        state = rk4_step(state, cfg.dt, drift)
    return Ensemble(state)


def analysis_step(ens: Ensemble, y_obs: np.ndarray, obs_noise_var: float,
                  rng: np.random.Generator) -> Ensemble:
    """Perturbed-observation Kalman update with H = identity.

    Gain G = C (C + R)^{-1} from the sample covariance C (1/(n-1) normalization)
    and R = obs_noise_var * I; each member sees a freshly perturbed observation.
    """
    members = ens.members
    n, K = members.shape
    if n < 2:
        raise ValueError("analysis needs at least 2 members")
    dev = members - members.mean(axis=0)
    C = dev.T @ dev / (n - 1)
    R = obs_noise_var * np.eye(K)
    G = np.linalg.solve((C + R).T, C.T).T        # C (C+R)^{-1}
    eps = np.sqrt(obs_noise_var) * rng.standard_normal((n, K))
    innov = y_obs[None, :] + eps - members
    return Ensemble(members + innov @ G.T)


def run_filter(observations: np.ndarray, cfg: EnKFConfig, seed: int) -> np.ndarray:
    """Alternate forecast/analysis along the series.

    Returns the pre-analysis (one-step predictive) ensembles, shape
    (T, ensemble_size, K); entry t predicts observations[t] from data up to t-1.
    Per-step rng substreams are keyed by (seed, step), so the run is
    deterministic and independent of scheduling.
    """
    observations = np.asarray(observations, dtype=np.float64)
    if observations.size == 0:
        return np.zeros((0, cfg.ensemble_size, 0))
    T, K = observations.shape
    init_rng = stream(seed, 0, 0)
    members = observations[0] + np.sqrt(cfg.obs_noise_var) * init_rng.standard_normal(
        (cfg.ensemble_size, K))
    ens = Ensemble(members)
    ens = analysis_step(ens, observations[0], cfg.obs_noise_var, stream(seed, 0, 2))
    predictive = np.empty((T, cfg.ensemble_size, K))
    predictive[0] = members
    for t in range(1, T):
        ens = forecast_step(ens, cfg, stream(seed, t, 1))
        predictive[t] = ens.members
        ens = analysis_step(ens, observations[t], cfg.obs_noise_var, stream(seed, t, 2))
    return predictive
