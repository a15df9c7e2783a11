"""Generative forecasting network: windowed GRU encoder + noise-fed dense decoder.

A forecast for the next observation is produced by running a single-layer GRU
over the last ``window`` observations, concatenating the final hidden state
with auxiliary Gaussian noise, and decoding through a stack of dense layers
(tanh on hidden layers, identity on the output).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Var


@dataclass(frozen=True)
class NetworkSpec:
    window: int = 10
    obs_dim: int = 8
    gru_hidden: int = 16
    dense_widths: tuple[int, ...] = (45, 44, 8)
    noise_dim: int = 1

    def __post_init__(self):
        if self.window < 1 or self.obs_dim < 1 or self.gru_hidden < 1 or self.noise_dim < 1:
            raise ValueError("window, obs_dim, gru_hidden and noise_dim must be >= 1")
        if not self.dense_widths:
            raise ValueError("dense_widths must be non-empty")
        if self.dense_widths[-1] != self.obs_dim:
            raise ValueError(
                f"last dense width ({self.dense_widths[-1]}) must equal obs_dim ({self.obs_dim})"
            )


def _layout(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    l, h = spec.obs_dim, spec.gru_hidden
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for gate in ("r", "z", "n"):
        shapes.append((f"W_{gate}", (l, h)))
        shapes.append((f"U_{gate}", (h, h)))
        shapes.append((f"bi_{gate}", (h,)))
        shapes.append((f"bh_{gate}", (h,)))
    d_in = h + spec.noise_dim
    for i, w in enumerate(spec.dense_widths):
        shapes.append((f"Wd_{i}", (d_in, w)))
        shapes.append((f"bd_{i}", (w,)))
        d_in = w
    return shapes


def param_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in _layout(spec))


def init_params(spec: NetworkSpec, seed: int, scale: float = 1.0) -> np.ndarray:
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, scale, size=param_count(spec))


def _unpack(spec: NetworkSpec, params: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for name, shape in _layout(spec):
        n = int(np.prod(shape))
        out[name] = params[pos:pos + n].reshape(shape)
        pos += n
    if pos != params.size:
        raise ValueError(f"expected {pos} parameters, got {params.size}")
    return out


@dataclass(frozen=True)
class ForecastModel:
    spec: NetworkSpec
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.params.size != param_count(self.spec):
            raise ValueError(
                f"params length {self.params.size} != param_count {param_count(self.spec)}"
            )


def forecast_batch(model: ForecastModel, histories: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Forecasts for a batch of windows.

    histories: (B, window, obs_dim); noise: (B, noise_dim) -> (B, obs_dim).
    """
    spec = model.spec
    histories = np.asarray(histories, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if histories.ndim != 3 or histories.shape[1:] != (spec.window, spec.obs_dim):
        raise ValueError(f"histories must be (B, {spec.window}, {spec.obs_dim})")
    if noise.shape != (histories.shape[0], spec.noise_dim):
        raise ValueError(f"noise must be (B, {spec.noise_dim})")
    p = _unpack(spec, model.params)
    B = histories.shape[0]
    h = np.zeros((B, spec.gru_hidden))
    for t in range(spec.window):
        x = histories[:, t, :]
        r = _sigmoid(x @ p["W_r"] + p["bi_r"] + h @ p["U_r"] + p["bh_r"])
        z = _sigmoid(x @ p["W_z"] + p["bi_z"] + h @ p["U_z"] + p["bh_z"])
        n = np.tanh(x @ p["W_n"] + p["bi_n"] + r * (h @ p["U_n"] + p["bh_n"]))
        h = n + z * (h - n)
    a = np.concatenate([h, noise], axis=1)
    last = len(spec.dense_widths) - 1
    for i in range(len(spec.dense_widths)):
        a = a @ p[f"Wd_{i}"] + p[f"bd_{i}"]
        if i != last:
            a = np.tanh(a)
    return a


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def simulate_forecast(model: ForecastModel, history: np.ndarray, noise: np.ndarray) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    return forecast_batch(model, history[None, :, :], noise[None, :])[0]


def forecast_ensemble(model: ForecastModel, history: np.ndarray, m: int,
                      rng: np.random.Generator) -> np.ndarray:
    """m forecasts from independent standard-Gaussian noise draws: (m, obs_dim)."""
    if m < 2:
        raise ValueError("m must be >= 2 (energy-score estimator is undefined for m < 2)")
    noise = rng.standard_normal((m, model.spec.noise_dim))
    histories = np.broadcast_to(history, (m,) + np.shape(history)).copy()
    return forecast_batch(model, histories, noise)


def tape_forecast(tape: Tape, theta: Var, spec: NetworkSpec,
                  histories: np.ndarray, noise: np.ndarray) -> Var:
    """Differentiable counterpart of forecast_batch, built on the tape.

    theta is the flat-parameter leaf; histories and noise enter as constants.
    Returns the (B, obs_dim) forecast Var.
    """
    pieces: dict[str, Var] = {}
    pos = 0
    for name, shape in _layout(spec):
        n = int(np.prod(shape))
        seg = theta.segment(pos, pos + n)
        pieces[name] = seg.reshape(shape) if len(shape) > 1 else seg
        pos += n
    B = histories.shape[0]
    h = tape.constant(np.zeros((B, spec.gru_hidden)))
    for t in range(spec.window):
        x = tape.constant(histories[:, t, :])
        r = (x.matmul(pieces["W_r"]).add_bias(pieces["bi_r"])
             + h.matmul(pieces["U_r"]).add_bias(pieces["bh_r"])).sigmoid()
        z = (x.matmul(pieces["W_z"]).add_bias(pieces["bi_z"])
             + h.matmul(pieces["U_z"]).add_bias(pieces["bh_z"])).sigmoid()
        n = (x.matmul(pieces["W_n"]).add_bias(pieces["bi_n"])
             + r * h.matmul(pieces["U_n"]).add_bias(pieces["bh_n"])).tanh()
        h = n + z * (h - n)
    a = h.concat_cols(tape.constant(noise))
    last = len(spec.dense_widths) - 1
    for i in range(len(spec.dense_widths)):
        a = a.matmul(pieces[f"Wd_{i}"]).add_bias(pieces[f"bd_{i}"])
        if i != last:
            a = a.tanh()
    return a
