"""Loss, Adam, and the mini-batch training loop."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from . import numerics as nx
from .dataset import PreparedData, TimeSeriesFrame, prepare
from .errors import ConfigError, NumericError, ShapeError
from .model import ModelConfig, ModelParams, forward, init_params
from .numerics import Tensor


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.001
    dropout_rate: float = 0.2
    max_epochs: int = 2500
    patience: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    """Loss history of one run. ``wall_clock`` is excluded from equality."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped: str = ""
    steps: int = 0
    wall_clock: float = field(default=0.0, compare=False)
    metrics: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_clock")
        return d


def mse_loss(pred, truth) -> Tensor:
    """Mean squared error over every element."""
    pred, truth = nx.as_tensor(pred), nx.as_tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} != truth shape {truth.shape}")
    d = pred - truth
    return nx.mean(d * d)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"nonfinite gradient for parameter {name}")
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        new_params[name] = p - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or not np.isfinite(total):
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def loss_and_grads(params: ModelParams, config: ModelConfig, exo, hist, label, rng=None):
    """Training-mode loss and gradients for one batch of one-step targets."""
    tape = nx.GradientTape()
    tensors = params.tensors(tape)
    y_hat, _ = forward(tensors, config, exo, hist, training=rng is not None, rng=rng)
    loss = mse_loss(y_hat, Tensor(label))
    return loss.item(), nx.backward(tape, loss)


def evaluate_loss(params: ModelParams, config: ModelConfig, exo, hist, label, batch_size: int = 1024) -> float:
    """Mean squared one-step error with dropout disabled."""
    tensors = params.tensors()
    total = 0.0
    for i in range(0, len(exo), batch_size):
        y, _ = forward(tensors, config, exo[i : i + batch_size], hist[i : i + batch_size])
        total += float(np.sum((y.data - label[i : i + batch_size]) ** 2))
    return total / len(exo)


def fit(config: ModelConfig, train_cfg: TrainConfig, train_arrays, val_arrays=None,
        params: ModelParams | None = None) -> tuple[ModelParams, TrainReport]:
    """Optimise on ``(exo, hist, label)`` arrays, where ``label`` holds one-step targets.

    Without ``val_arrays`` checkpoint selection and early stopping use the
    training loss evaluated without dropout.
    """
    start = time.perf_counter()
    config = replace(config, dropout_rate=train_cfg.dropout_rate)
    init_seq, shuffle_seq, drop_seq = np.random.SeedSequence(train_cfg.seed).spawn(3)
    if params is None:
        params = init_params(config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq) if train_cfg.dropout_rate > 0 else None
    exo, hist, label = (np.asarray(a, dtype=np.float64) for a in train_arrays[:3])
    label = label.reshape(len(label), -1)[:, 0]
    if val_arrays is not None:
        v_exo, v_hist, v_label = (np.asarray(a, dtype=np.float64) for a in val_arrays[:3])
        v_label = v_label.reshape(len(v_label), -1)[:, 0]
    else:
        v_exo, v_hist, v_label = exo, hist, label

    report = TrainReport()
    state = AdamState()
    best = params.copy()
    arrays = dict(params.items())
    n = len(exo)
    for epoch in range(train_cfg.max_epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for i in range(0, n, train_cfg.batch_size):
            idx = order[i : i + train_cfg.batch_size]
            loss, grads = loss_and_grads(ModelParams(arrays), config, exo[idx], hist[idx], label[idx], drop_rng)
            if not np.isfinite(loss):
                raise NumericError(f"training diverged: loss is {loss} in epoch {epoch}")
            grads = clip_gradients(grads, train_cfg.clip_norm)
            arrays, state = adam_step(arrays, grads, state, train_cfg)
            epoch_loss += loss * len(idx)
        current = ModelParams(arrays)
        val = evaluate_loss(current, config, v_exo, v_hist, v_label)
        if not np.isfinite(val):
            raise NumericError(f"training diverged: validation loss is {val} in epoch {epoch}")
        report.train_loss.append(epoch_loss / n)
        report.val_loss.append(val)
        if val < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val, epoch
            best = current.copy()
        elif epoch - report.best_epoch >= train_cfg.patience:
            report.stopped = "patience"
            break
    else:
        report.stopped = "max_epochs"
    report.steps = state.step
    report.wall_clock = time.perf_counter() - start
    return best, report


def train(frame: TimeSeriesFrame | PreparedData, config: ModelConfig,
          train_cfg: TrainConfig) -> tuple[ModelParams, TrainReport]:
    """Train on the chronological training split, selecting on validation loss.

    ``frame`` is raw (un-normalised) data or the output of
    :func:`buildsensys.dataset.prepare`; the returned parameters expect inputs
    normalised with that preparation's statistics.
    """
    prep = frame if isinstance(frame, PreparedData) else prepare(frame, config.L)
    if prep.L != config.L:
        raise ConfigError(f"prepared data uses L={prep.L}, model expects L={config.L}")
    if prep.raw.n_occ != config.n_occ or prep.raw.n_env != config.n_env:
        raise ConfigError(
            f"frame has {prep.raw.n_occ} occupancy and {prep.raw.n_env} environmental channels, "
            f"model expects {config.n_occ} and {config.n_env}"
        )
    return fit(config, train_cfg, prep.windows("train"), prep.windows("val"))
