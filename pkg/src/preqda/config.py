"""Experiment configuration: flat ``section.key = value`` text files.

Every knob has a default matching the reference experiment (Lorenz-96 truth,
GRU-16 forecaster, N = 150 waste-free SMC with CESS threshold 75, kernel
hyperparameters eta = 1e-6, sigma = 0.99, lambda = 1e-8, alpha0 = 1e-2).
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib

from .dgfm import NetworkSpec
from .enkf import EnKFConfig
from .kernel import KernelConfig
from .lorenz96 import L96Params, SimConfig
from .scoring import ScoreConfig
from .smc import PriorSpec, SMCConfig

_DEFAULTS: dict[str, object] = {
    "seed": 0,
    "lorenz.K": 8,
    "lorenz.J": 32,
    "lorenz.h": 1.0,
    "lorenz.b": 10.0,
    "lorenz.c": 10.0,
    "lorenz.F": 20.0,
    "sim.dt": 0.001,
    "sim.delta_t": 0.2,
    "sim.burn_in": 2.0,
    "sim.duration": 4000.0,
    "sim.split": 0.8,
    "network.window": 10,
    "network.obs_dim": 8,
    "network.gru_hidden": 16,
    "network.dense_widths": (45, 44, 8),
    "network.noise_dim": 1,
    "score.beta": 1.0,
    "score.m": 10,
    "score.gamma": 1.0,
    "prior.family": "gaussian",
    "prior.dof": 3,
    "smc.n_particles": 150,
    "smc.n_chains": 30,
    "smc.chain_len": 5,
    "smc.tau": 100,
    "smc.cess_threshold": 75.0,
    "smc.grad_batch": 100,
    "smc.n_episodes": 0,            # 0 = as many as the training data allows
    "kernel.eta": 1e-6,
    "kernel.sigma": 0.99,
    "kernel.lambda": 1e-8,
    "kernel.alpha0": 1e-2,
    "enkf.ensemble_size": 100,
    "enkf.obs_noise_var": 1.0,
    "enkf.forcing_mean": 20.0,
    "enkf.forcing_var": 1.0,
    "diagnostics.m_pred": 100,
    "diagnostics.test_len": 2000,
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


class ExperimentConfig:
    def __init__(self, overrides: dict[str, object] | None = None):
        self.values = dict(_DEFAULTS)
        for key, val in (overrides or {}).items():
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown configuration key: {key!r}")
            self.values[key] = val

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        overrides: dict[str, object] = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in _DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
                overrides[key] = _parse_value(key, raw, _DEFAULTS[key])
        return cls(overrides)

    def dump(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    # -- typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def lorenz_params(self) -> L96Params:
        v = self.values
        return L96Params(K=v["lorenz.K"], J=v["lorenz.J"], h=v["lorenz.h"],
                         b=v["lorenz.b"], c=v["lorenz.c"], F=v["lorenz.F"])

    def sim_config(self) -> SimConfig:
        v = self.values
        return SimConfig(dt=v["sim.dt"], delta_t=v["sim.delta_t"],
                         burn_in=v["sim.burn_in"], duration=v["sim.duration"],
                         split=v["sim.split"])

    def network_spec(self) -> NetworkSpec:
        v = self.values
        return NetworkSpec(window=v["network.window"], obs_dim=v["network.obs_dim"],
                           gru_hidden=v["network.gru_hidden"],
                           dense_widths=tuple(v["network.dense_widths"]),
                           noise_dim=v["network.noise_dim"])

    def score_config(self) -> ScoreConfig:
        v = self.values
        return ScoreConfig(beta=v["score.beta"], m=v["score.m"], gamma=v["score.gamma"])

    def kernel_config(self) -> KernelConfig:
        v = self.values
        return KernelConfig(eta=v["kernel.eta"], sigma=v["kernel.sigma"],
                            lam=v["kernel.lambda"], alpha0=v["kernel.alpha0"])

    def smc_config(self, param_dim: int) -> SMCConfig:
        v = self.values
        prior = PriorSpec(family=v["prior.family"], dof=v["prior.dof"], dim=param_dim)
        return SMCConfig(n_particles=v["smc.n_particles"], n_chains=v["smc.n_chains"],
                         chain_len=v["smc.chain_len"], tau=v["smc.tau"],
                         cess_threshold=v["smc.cess_threshold"], prior=prior,
                         kernel=self.kernel_config(), grad_batch=v["smc.grad_batch"])

    def enkf_config(self) -> EnKFConfig:
        v = self.values
        return EnKFConfig(ensemble_size=v["enkf.ensemble_size"],
                          obs_noise_var=v["enkf.obs_noise_var"],
                          forcing_mean=v["enkf.forcing_mean"],
                          forcing_var=v["enkf.forcing_var"],
                          dt=v["sim.dt"], delta_t=v["sim.delta_t"])
