"""Two-scale Lorenz-96 truth model, RK4 integration, and dataset generation.

The full system couples K slow components y with J*K fast components x:

    dy_k = -y_{k-1} (y_{k-2} - y_{k+1}) - y_k + F - (h c / b) * sum of the
           J fast components attached to slow index k
    dx_j = -c b x_{j+1} (x_{j+2} - x_{j-1}) - c x_j + (h c / b) y_{owner(j)}

with cyclic indexing in both k and j. Only the slow components are recorded
as observations. The single-scale drift (slow equation with per-component
forcing, no coupling) is what the EnKF baseline assumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

BLOWUP_LIMIT = 1e6


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class L96Params:
    K: int = 8
    J: int = 32
    h: float = 1.0
    b: float = 10.0
    c: float = 10.0
    F: float = 20.0

    def __post_init__(self):
        if self.K < 4:
            raise ValueError("K must be >= 4 for distinct cyclic neighbours")
        if self.J < 1:
            raise ValueError("J must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.001
    delta_t: float = 0.2
    burn_in: float = 2.0
    duration: float = 4000.0
    split: float = 0.8

    def __post_init__(self):
        ratio = self.delta_t / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("delta_t must be an integer multiple of dt")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")

    @property
    def steps_per_record(self) -> int:
        return round(self.delta_t / self.dt)


@dataclass
class TimeSeries:
    observations: np.ndarray  # (T, K)
    delta_t: float
    train_end: int

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if not 0 < self.train_end < len(self.observations):
            raise ValueError("train_end must satisfy 0 < train_end < T")


def drift_full(state: np.ndarray, p: L96Params) -> np.ndarray:
    """Derivative of the packed state [y (K), x (J*K)] under the full system."""
    K, J = p.K, p.J
    y = state[:K]
    x = state[K:]
    coupling = (p.h * p.c / p.b) * x.reshape(K, J).sum(axis=1)
    dy = (-np.roll(y, 1) * (np.roll(y, 2) - np.roll(y, -1)) - y + p.F - coupling)
    owner = np.repeat(y, J)
    dx = (-p.c * p.b * np.roll(x, -1) * (np.roll(x, -2) - np.roll(x, 1))
          - p.c * x + (p.h * p.c / p.b) * owner)
    return np.concatenate([dy, dx])


def drift_misspecified(y: np.ndarray, F_vec: np.ndarray) -> np.ndarray:
    """Single-scale slow drift with per-component forcing, cyclic indexing.

    Vectorized over leading axes: y and F_vec may be (..., K).
    """
    return ((np.roll(y, -1, axis=-1) - np.roll(y, 2, axis=-1)) * np.roll(y, 1, axis=-1)
            - y + F_vec)


def rk4_step(state: np.ndarray, dt: float, drift) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = drift(state)
    k2 = drift(state + 0.5 * dt * k1)
    k3 = drift(state + 0.5 * dt * k2)
    k4 = drift(state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > BLOWUP_LIMIT:
        raise BlowUpError("integration blew up; reduce dt or check the drift")
    return out


def initial_state(p: L96Params) -> np.ndarray:
    state = np.zeros(p.K + p.J * p.K)
    state[0] = 1.0          # y(1) = 1
    state[p.K] = 1.0        # x(1) = 1
    return state


def generate_dataset(p: L96Params, sim: SimConfig) -> TimeSeries:
    """Integrate the full system and record the slow components.

    The observation at record index n is the state at time burn_in + n*delta_t
    for n = 1..T with T = duration / delta_t.
    """
    drift = lambda s: drift_full(s, p)
    state = initial_state(p)
    burn_steps = round(sim.burn_in / sim.dt)
    for _ in range(burn_steps):
        state = rk4_step(state, sim.dt, drift)
    n_records = round(sim.duration / sim.delta_t)
    obs = np.empty((n_records, p.K))
    for n in range(n_records):
        for _ in range(sim.steps_per_record):
            state = rk4_step(state, sim.dt, drift)
        obs[n] = state[:p.K]
    train_end = int(np.floor(sim.split * n_records))
    return TimeSeries(obs, sim.delta_t, train_end)


def save_csv(series: TimeSeries, path, comment: str | None = None) -> None:
    K = series.observations.shape[1]
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"y{i + 1}" for i in range(K)])
        for n, row in enumerate(series.observations, start=1):
            writer.writerow([repr(float(n * series.delta_t))] + [repr(float(v)) for v in row])


def load_csv(path, delta_t: float | None = None, train_end: int | None = None) -> TimeSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header[0] != "time":
            raise ValueError(f"unexpected CSV header: {header}")
        times, rows = [], []
        for rec in reader:
            times.append(float(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    obs = np.asarray(rows)
    if delta_t is None:
        delta_t = times[1] - times[0] if len(times) > 1 else 1.0
    if train_end is None:
        train_end = int(np.floor(0.8 * len(obs)))
    return TimeSeries(obs, delta_t, train_end)
