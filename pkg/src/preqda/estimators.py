"""Scikit-learn style wrappers around the assimilation pipeline.

`PrequentialForecaster.fit(X)` treats the rows of X as a multivariate time
series, runs episodic waste-free SMC over the forecasting-network parameters,
and exposes probabilistic one-step-ahead forecasts through `sample` and point
forecasts through `predict`. `EnKFForecaster` wraps the ensemble Kalman
filter baseline with the same surface. Both play by the sklearn estimator
contract (get_params/set_params, fitted attributes with trailing underscore).
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import diagnostics, enkf, smc
from .dgfm import NetworkSpec
from .kernel import KernelConfig
from .scoring import EnergyScoreLoss, ScoreConfig
from .smc import PriorSpec, SMCConfig


class PrequentialForecaster(BaseEstimator):
    def __init__(self, window=10, gru_hidden=16, dense_widths=(45, 44, 8),
                 noise_dim=1, tau=100, n_particles=150, n_chains=30, chain_len=5,
                 cess_threshold=None, n_episodes=None, m=10, beta=1.0, gamma=1.0,
                 eta=1e-6, sigma=0.99, lam=1e-8, alpha0=1e-2, grad_batch=100,
                 prior="gaussian", prior_dof=3, seed=0):
        self.window = window
        self.gru_hidden = gru_hidden
        self.dense_widths = dense_widths
        self.noise_dim = noise_dim
        self.tau = tau
        self.n_particles = n_particles
        self.n_chains = n_chains
        self.chain_len = chain_len
        self.cess_threshold = cess_threshold
        self.n_episodes = n_episodes
        self.m = m
        self.beta = beta
        self.gamma = gamma
        self.eta = eta
        self.sigma = sigma
        self.lam = lam
        self.alpha0 = alpha0
        self.grad_batch = grad_batch
        self.prior = prior
        self.prior_dof = prior_dof
        self.seed = seed

    def _spec(self, obs_dim: int) -> NetworkSpec:
        widths = tuple(self.dense_widths)
        if widths[-1] != obs_dim:
            widths = widths[:-1] + (obs_dim,)
        return NetworkSpec(window=self.window, obs_dim=obs_dim,
                           gru_hidden=self.gru_hidden, dense_widths=widths,
                           noise_dim=self.noise_dim)

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=self.window + 2)
        spec = self._spec(X.shape[1])
        loss = EnergyScoreLoss(spec, X, ScoreConfig(beta=self.beta, m=self.m,
                                                    gamma=self.gamma))
        threshold = (0.5 * self.n_particles if self.cess_threshold is None
                     else self.cess_threshold)
        cfg = SMCConfig(
            n_particles=self.n_particles, n_chains=self.n_chains,
            chain_len=self.chain_len, tau=self.tau, cess_threshold=threshold,
            prior=PriorSpec(family=self.prior, dof=self.prior_dof, dim=loss.dim),
            kernel=KernelConfig(eta=self.eta, sigma=self.sigma, lam=self.lam,
                                alpha0=self.alpha0),
            grad_batch=self.grad_batch,
        )
        self.spec_ = spec
        self.ensemble_ = smc.initial_ensemble(cfg, self.seed)
        self.tempering_records_ = []
        for result in smc.run_assimilation(cfg, loss, len(X), self.seed,
                                           window=spec.window,
                                           start=self.ensemble_,
                                           n_episodes=self.n_episodes):
            self.ensemble_ = result.ensemble
            self.tempering_records_.append(result.record)
        self.n_episodes_ = self.ensemble_.episode_index
        return self

    def sample(self, X, n_draws=100, seed=0):
        """Posterior-predictive draws for each window ending at a row of X.

        Returns (T - window, n_draws, obs_dim): entry t forecasts X[window + t].
        """
        check_is_fitted(self, "ensemble_")
        X = check_array(X, ensure_min_samples=self.window + 1)
        return diagnostics.posterior_predictive_draws(
            self.ensemble_, self.spec_, X, self.spec_.window, len(X) - 1,
            n_draws, (self.seed, 7, seed))

    def predict(self, X, n_draws=100, seed=0):
        return self.sample(X, n_draws=n_draws, seed=seed).mean(axis=1)

    def score(self, X, y=None, n_draws=100, seed=0):
        """R^2 of the one-step-ahead predictive mean (sklearn convention)."""
        X = check_array(X, ensure_min_samples=self.window + 2)
        point = self.predict(X, n_draws=n_draws, seed=seed)
        return diagnostics.r2(point, X[self.spec_.window:])


class EnKFForecaster(BaseEstimator):
    def __init__(self, ensemble_size=100, obs_noise_var=1.0, forcing_mean=20.0,
                 forcing_var=1.0, dt=0.001, delta_t=0.2, seed=0):
        self.ensemble_size = ensemble_size
        self.obs_noise_var = obs_noise_var
        self.forcing_mean = forcing_mean
        self.forcing_var = forcing_var
        self.dt = dt
        self.delta_t = delta_t
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        cfg = enkf.EnKFConfig(ensemble_size=self.ensemble_size,
                              obs_noise_var=self.obs_noise_var,
                              forcing_mean=self.forcing_mean,
                              forcing_var=self.forcing_var,
                              dt=self.dt, delta_t=self.delta_t)
        self.predictive_ = enkf.run_filter(X, cfg, self.seed)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "predictive_")
        return self.predictive_.mean(axis=1)

    def sample(self, X=None):
        check_is_fitted(self, "predictive_")
        return self.predictive_
