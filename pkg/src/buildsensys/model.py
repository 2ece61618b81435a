"""Dual-attention LSTM encoder-decoder for traffic volume.

The encoder reweights occupancy zones and environmental channels at every
step with two separate input-attention blocks, each conditioned on the
previous encoder hidden and cell state, and feeds the reweighted vector
``[env; occ]`` to an LSTM. The decoder attends over all encoder hidden states,
fuses the resulting context with the past traffic value, and after the last
history value maps ``[context; decoder state]`` to a single forecast.

All functions take tensors with arbitrary leading batch axes. Exogenous input
arrays are ``(..., L, N)`` with the ``N_o`` occupancy channels first.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import numerics as nx
from .dataset import NormStats, invert_norm
from .errors import ConfigError, DataError, NumericError, ShapeError
from .numerics import Tensor

CHECKPOINT_FORMAT = "buildsensys-checkpoint"
CHECKPOINT_VERSION = 1

# name -> (use_occupancy, use_environment, crossdomain_attention, temporal_attention, arch)
VARIANTS = {
    "full": (True, True, True, True, "encdec"),
    "no_occupancy": (False, True, True, True, "encdec"),
    "no_environment": (True, False, True, True, "encdec"),
    "no_crossdomain_attention": (True, True, False, True, "encdec"),
    "no_temporal_attention": (True, True, True, False, "encdec"),
    "seq2seq": (True, True, False, False, "encdec"),
    "lstm": (True, True, False, False, "lstm"),
}

ABLATIONS = {
    "B": "full",
    "Bwo/o": "no_occupancy",
    "Bwo/e": "no_environment",
    "Bwo/c": "no_crossdomain_attention",
    "Bwo/t": "no_temporal_attention",
}


@dataclass(frozen=True)
class ModelConfig:
    L: int
    n_occ: int
    n_env: int
    p: int = 64
    q: int = 64
    tau: int = 1
    variant: str = "full"
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.L < 2:
            raise ConfigError(f"L must be >= 2, got {self.L}")
        if self.p < 1 or self.q < 1:
            raise ConfigError(f"hidden sizes must be >= 1, got p={self.p}, q={self.q}")
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.n_occ < 0 or self.n_env < 0 or self.n_occ + self.n_env < 1:
            raise ConfigError("need at least one building channel")
        if self.use_occupancy and self.n_occ < 1:
            raise ConfigError(f"variant {self.variant} needs at least one occupancy channel")
        if self.variant == "no_occupancy" and self.n_env < 1:
            raise ConfigError("variant no_occupancy needs at least one environmental channel")

    @property
    def use_occupancy(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def use_environment(self) -> bool:
        # a frame without environmental channels simply has no env block
        return VARIANTS[self.variant][1] and self.n_env > 0

    @property
    def crossdomain(self) -> bool:
        return VARIANTS[self.variant][2]

    @property
    def temporal(self) -> bool:
        return VARIANTS[self.variant][3]

    @property
    def arch(self) -> str:
        return VARIANTS[self.variant][4]

    @property
    def input_size(self) -> int:
        return self.n_occ * self.use_occupancy + self.n_env * self.use_environment

    def to_dict(self) -> dict:
        return asdict(self)


def _lstm_shapes(prefix: str, hidden: int, inputs: int) -> dict:
    shapes = {}
    for gate in "fios":
        shapes[f"{prefix}.W_{gate}"] = (hidden, hidden + inputs)
    for gate in "fios":
        shapes[f"{prefix}.b_{gate}"] = (hidden,)
    return shapes


def _attention_shapes(prefix: str, L: int, p: int) -> dict:
    return {f"{prefix}.v": (L,), f"{prefix}.W": (L, 2 * p), f"{prefix}.U": (L, L), f"{prefix}.b": (L,)}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name and shape of every learnable array for ``config``."""
    L, p, q = config.L, config.p, config.q
    if config.arch == "lstm":
        shapes = _lstm_shapes("lstm", p, config.n_occ + config.n_env + 1)
        shapes.update({"head.w": (p,), "head.b": ()})
        return shapes
    shapes = _lstm_shapes("enc", p, config.input_size)
    if config.crossdomain and config.use_occupancy:
        shapes.update(_attention_shapes("att_occ", L, p))
    if config.crossdomain and config.use_environment:
        shapes.update(_attention_shapes("att_env", L, p))
    shapes.update(_lstm_shapes("dec", q, 1))
    if config.temporal:
        shapes.update({"tatt.v": (p,), "tatt.W": (p, 2 * q), "tatt.U": (p, p), "tatt.b": (p,)})
    shapes.update(
        {
            "fuse.w": (p + 1,),
            "fuse.b": (),
            "out.W_y": (q, p + q),
            "out.b_y": (q,),
            "out.v_y": (q,),
            "out.b": (),
        }
    )
    return shapes


@dataclass
class ModelParams:
    """Named float64 arrays; insertion order is the canonical order."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def tensors(self, tape: nx.GradientTape | None = None) -> dict[str, Tensor]:
        if tape is None:
            return {k: Tensor(v) for k, v in self.arrays.items()}
        return {k: tape.parameter(k, v) for k, v in self.arrays.items()}

    def equals(self, other: ModelParams) -> bool:
        return list(self.arrays) == list(other.arrays) and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget bias 1."""
    arrays = {}
    for name, shape in param_shapes(config).items():
        leaf = name.split(".", 1)[1]
        if leaf.startswith("b"):
            arr = np.ones(shape) if leaf == "b_f" else np.zeros(shape)
        else:
            fan_in = shape[-1]
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        arrays[name] = np.asarray(arr, dtype=np.float64)
    return ModelParams(arrays)


@dataclass
class AttentionTrace:
    """Attention weights from one forward pass.

    ``beta`` is ``(..., L, N_o)``, ``alpha`` ``(..., L, N_e)`` and ``gamma``
    ``(..., steps, L)``; a block the variant does not compute is ``None``.
    """

    beta: np.ndarray | None = None
    alpha: np.ndarray | None = None
    gamma: np.ndarray | None = None

    def sample(self, i: int) -> AttentionTrace:
        pick = lambda a: None if a is None else a[i]  # noqa: E731
        return AttentionTrace(pick(self.beta), pick(self.alpha), pick(self.gamma))


# -- building blocks ---------------------------------------------------------


def _rowmat(x: Tensor, M: Tensor) -> Tensor:
    """``x @ M`` where ``x`` may be a bare vector."""
    if x.ndim == 1:
        return nx.reshape(nx.reshape(x, (1, x.shape[0])) @ M, (M.shape[1],))
    return x @ M


def _vecdot(x: Tensor, v: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with vector ``v``."""
    return nx.reshape(_rowmat(x, nx.reshape(v, (v.shape[0], 1))), x.shape[:-1])


def _fused(params: Mapping[str, Tensor], prefix: str) -> tuple[Tensor, Tensor]:
    W = nx.concat([params[f"{prefix}.W_{g}"] for g in "fios"], axis=0)
    b = nx.concat([params[f"{prefix}.b_{g}"] for g in "fios"], axis=0)
    return nx.transpose(W), b


def lstm_cell(h_prev, s_prev, x, weights) -> tuple[Tensor, Tensor]:
    """One LSTM step.

    ``weights`` is either a mapping with ``W_f, W_i, W_o, W_s, b_f, b_i,
    b_o, b_s`` (matrices ``hidden x (hidden + inputs)``) or a pre-fused
    ``(W^T, b)`` pair as built by the encoder loops.
    """
    h_prev, s_prev, x = nx.as_tensor(h_prev), nx.as_tensor(s_prev), nx.as_tensor(x)
    if isinstance(weights, tuple):
        WT, b = weights
    else:
        WT = nx.transpose(nx.concat([nx.as_tensor(weights[f"W_{g}"]) for g in "fios"], axis=0))
        b = nx.concat([nx.as_tensor(weights[f"b_{g}"]) for g in "fios"], axis=0)
    hidden = h_prev.shape[-1]
    if s_prev.shape != h_prev.shape or WT.shape != (hidden + x.shape[-1], 4 * hidden):
        raise ShapeError(
            f"lstm_cell: h {h_prev.shape}, s {s_prev.shape}, x {x.shape} do not fit weights {WT.shape[::-1]}"
        )
    z = _rowmat(nx.concat([h_prev, x], axis=-1), WT) + b
    f = nx.sigmoid(z[..., 0:hidden])
    i = nx.sigmoid(z[..., hidden : 2 * hidden])
    o = nx.sigmoid(z[..., 2 * hidden : 3 * hidden])
    g = nx.tanh(z[..., 3 * hidden :])
    s = f * s_prev + i * g
    h = o * nx.tanh(s)
    return h, s


def channel_projection(X: Tensor, U: Tensor) -> Tensor:
    """``U x^j`` for every channel ``j`` of ``X`` (``(..., L, C)`` -> ``(..., C, L)``)."""
    return nx.transpose(X) @ nx.transpose(U)


def input_attention(h_prev, s_prev, projected: Tensor, v, W, b, logit_shift: float = 0.0) -> Tensor:
    """Softmax over channels of ``v^T tanh(W [h; s] + U x^j + b)``.

    ``projected`` is the output of :func:`channel_projection`, shape
    ``(..., C, L)``; it does not depend on the step so callers compute it once.
    """
    hs = nx.concat([h_prev, s_prev], axis=-1)
    Wh = _vecmat(hs, W)
    L = Wh.shape[-1]
    e = nx.tanh(projected + nx.reshape(Wh, Wh.shape[:-1] + (1, L)) + b)
    logits = _vecdot(e, v)
    if logit_shift:
        logits = logits + logit_shift
    return nx.softmax(logits, axis=-1)


def _vecmat(x: Tensor, W: Tensor) -> Tensor:
    """``W x`` applied over leading axes of ``x``."""
    return _rowmat(x, nx.transpose(W))


def _attention_block(params, prefix, h_prev, s_prev, X, logit_shift=0.0):
    X = nx.as_tensor(X)
    proj = channel_projection(X, params[f"{prefix}.U"])
    return input_attention(
        h_prev, s_prev, proj, params[f"{prefix}.v"], params[f"{prefix}.W"], params[f"{prefix}.b"], logit_shift
    )


def occupancy_attention(h_prev, s_prev, X_occ, params: Mapping[str, Tensor], logit_shift: float = 0.0) -> Tensor:
    """Zone weights ``beta_t`` from the encoder's previous state and the full zone series."""
    if X_occ.shape[-1] < 1:
        raise ShapeError("occupancy attention needs at least one occupancy channel")
    return _attention_block(params, "att_occ", nx.as_tensor(h_prev), nx.as_tensor(s_prev), X_occ, logit_shift)


def environmental_attention(h_prev, s_prev, X_env, params: Mapping[str, Tensor], logit_shift: float = 0.0) -> Tensor:
    """Channel weights ``alpha_t`` for the environmental block."""
    if X_env.shape[-1] < 1:
        raise ShapeError("environmental attention needs at least one environmental channel")
    return _attention_block(params, "att_env", nx.as_tensor(h_prev), nx.as_tensor(s_prev), X_env, logit_shift)


def temporal_attention(hd_prev, sd_prev, H, params: Mapping[str, Tensor], projected: Tensor | None = None,
                       logit_shift: float = 0.0) -> tuple[Tensor, Tensor]:
    """Weights over encoder states ``H`` (``(..., L, p)``) and their convex combination."""
    hd_prev, sd_prev, H = nx.as_tensor(hd_prev), nx.as_tensor(sd_prev), nx.as_tensor(H)
    if projected is None:
        projected = H @ nx.transpose(params["tatt.U"])
    Wd = _vecmat(nx.concat([hd_prev, sd_prev], axis=-1), params["tatt.W"])
    p = Wd.shape[-1]
    if H.shape[-1] != p:
        raise ShapeError(f"temporal_attention: encoder states {H.shape} vs attention size {p}")
    e = nx.tanh(projected + nx.reshape(Wd, Wd.shape[:-1] + (1, p)) + params["tatt.b"])
    mu = _vecdot(e, params["tatt.v"])
    if logit_shift:
        mu = mu + logit_shift
    gamma = nx.softmax(mu, axis=-1)
    L = gamma.shape[-1]
    c = nx.reshape(nx.reshape(gamma, gamma.shape[:-1] + (1, L)) @ H, H.shape[:-2] + (p,))
    return gamma, c


class _Dropout:
    def __init__(self, rate: float, rng: np.random.Generator | None):
        self.rate = rate
        self.rng = rng

    def __call__(self, h: Tensor) -> Tensor:
        if self.rng is None or self.rate <= 0.0:
            return h
        keep = 1.0 - self.rate
        mask = (self.rng.random(h.shape) < keep) / keep
        return h * mask


def _check_finite(t: Tensor, where: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"nonfinite values at {where}")


def _split_exo(exo: Tensor, config: ModelConfig) -> tuple[Tensor | None, Tensor | None]:
    no = config.n_occ
    occ = exo[..., :no] if config.use_occupancy else None
    env = exo[..., no : no + config.n_env] if config.use_environment else None
    return occ, env


def encode(exo, params: Mapping[str, Tensor], config: ModelConfig, *, dropout: _Dropout | None = None,
           logit_shift: float = 0.0, attention_override: Callable | None = None):
    """Run the encoder; returns ``(H, trace)`` with ``H`` of shape ``(..., L, p)``.

    ``attention_override(block, t, h, s)`` may replace the weights of a block
    (``"occ"`` or ``"env"``); it exists so tests can stub attention out.
    """
    exo = nx.as_tensor(exo)
    if exo.shape[-2:] != (config.L, config.n_occ + config.n_env):
        raise ShapeError(f"encode: exo shape {exo.shape} does not match L={config.L}, N={config.n_occ + config.n_env}")
    batch = exo.shape[:-2]
    p = config.p
    occ, env = _split_exo(exo, config)
    h = Tensor(np.zeros(batch + (p,)))
    s = Tensor(np.zeros(batch + (p,)))
    WT, b = _fused(params, "enc")
    proj_occ = proj_env = None
    if config.crossdomain:
        if occ is not None:
            proj_occ = channel_projection(occ, params["att_occ.U"])
        if env is not None:
            proj_env = channel_projection(env, params["att_env.U"])
    betas, alphas, states = [], [], []
    for t in range(config.L):
        parts = []
        if env is not None:
            x_env = env[..., t, :]
            if config.crossdomain:
                if attention_override is not None:
                    alpha = nx.as_tensor(attention_override("env", t, h, s))
                else:
                    alpha = input_attention(h, s, proj_env, params["att_env.v"], params["att_env.W"],
                                            params["att_env.b"], logit_shift)
                alphas.append(alpha.data)
                x_env = alpha * x_env
            parts.append(x_env)
        if occ is not None:
            x_occ = occ[..., t, :]
            if config.crossdomain:
                if attention_override is not None:
                    beta = nx.as_tensor(attention_override("occ", t, h, s))
                else:
                    beta = input_attention(h, s, proj_occ, params["att_occ.v"], params["att_occ.W"],
                                           params["att_occ.b"], logit_shift)
                betas.append(beta.data)
                x_occ = beta * x_occ
            parts.append(x_occ)
        x_hat = parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)
        h, s = lstm_cell(h, s, x_hat, (WT, b))
        _check_finite(h, f"encoder step {t + 1}")
        states.append(dropout(h) if dropout is not None else h)
    H = nx.stack(states, axis=-2)
    trace = AttentionTrace(
        beta=np.stack(betas, axis=-2) if betas else None,
        alpha=np.stack(alphas, axis=-2) if alphas else None,
    )
    return H, trace


def decode(H, hist, params: Mapping[str, Tensor], config: ModelConfig, *, dropout: _Dropout | None = None,
           logit_shift: float = 0.0):
    """Decoder pass over the ``L-1`` history values; returns ``(y_hat, gammas)``.

    For each history value the context is computed from the current decoder
    state, fused with that value, and the decoder advances; a final attention
    step gives the context for the output head. Without temporal attention
    the context is the last encoder state.
    """
    H = nx.as_tensor(H)
    hist = nx.as_tensor(hist)
    if hist.shape[-1] != config.L - 1:
        raise ShapeError(f"decode: history length {hist.shape[-1]} != L-1 = {config.L - 1}")
    batch = H.shape[:-2]
    q = config.q
    d = Tensor(np.zeros(batch + (q,)))
    sd = Tensor(np.zeros(batch + (q,)))
    WT, b = _fused(params, "dec")
    gammas = []
    if config.temporal:
        projected = H @ nx.transpose(params["tatt.U"])
    else:
        last = H[..., config.L - 1, :]
    fuse_w = nx.reshape(params["fuse.w"], (config.p + 1, 1))

    def context():
        if not config.temporal:
            return last
        gamma, c = temporal_attention(d, sd, H, params, projected, logit_shift)
        gammas.append(gamma.data)
        return c

    for k in range(config.L - 1):
        c = context()
        y_prev = hist[..., k : k + 1]
        y_tilde = _rowmat(nx.concat([y_prev, c], axis=-1), fuse_w) + params["fuse.b"]
        d, sd = lstm_cell(d, sd, y_tilde, (WT, b))
        _check_finite(d, f"decoder step {k + 1}")
    c = context()
    d_out = dropout(d) if dropout is not None else d
    z = _rowmat(nx.concat([c, d_out], axis=-1), nx.transpose(params["out.W_y"])) + params["out.b_y"]
    y_hat = _vecdot(z, params["out.v_y"]) + params["out.b"]
    _check_finite(y_hat, "output head")
    return y_hat, (np.stack(gammas, axis=-2) if gammas else None)


def _lstm_forward(exo, hist, params, config, dropout):
    exo, hist = nx.as_tensor(exo), nx.as_tensor(hist)
    batch = exo.shape[:-2]
    y_prev = nx.concat([Tensor(np.zeros(batch + (1,))), hist], axis=-1)
    WT, b = _fused(params, "lstm")
    h = Tensor(np.zeros(batch + (config.p,)))
    s = Tensor(np.zeros(batch + (config.p,)))
    for t in range(config.L):
        x = nx.concat([y_prev[..., t : t + 1], exo[..., t, :]], axis=-1)
        h, s = lstm_cell(h, s, x, (WT, b))
        _check_finite(h, f"lstm step {t + 1}")
    h_out = dropout(h) if dropout is not None else h
    return _vecdot(h_out, params["head.w"]) + params["head.b"]


def forward(params: Mapping[str, Tensor], config: ModelConfig, exo, hist, *, training: bool = False,
            rng: np.random.Generator | None = None, logit_shift: float = 0.0,
            attention_override: Callable | None = None):
    """One-step forecast in normalised units; returns ``(y_hat, trace)``.

    Dropout is active only when ``training`` is set and ``rng`` is given.
    """
    dropout = _Dropout(config.dropout_rate, rng if training else None)
    if config.arch == "lstm":
        return _lstm_forward(exo, hist, params, config, dropout), AttentionTrace()
    H, trace = encode(exo, params, config, dropout=dropout, logit_shift=logit_shift,
                      attention_override=attention_override)
    y_hat, gamma = decode(H, hist, params, config, dropout=dropout, logit_shift=logit_shift)
    trace.gamma = gamma
    return y_hat, trace


def predict(params: ModelParams, config: ModelConfig, exo, hist, tau: int | None = None,
            stats: NormStats | None = None):
    """Forecast ``tau`` hours ahead by rolling the one-step model.

    ``exo`` and ``hist`` are normalised, shaped ``(..., L, N)`` and
    ``(..., L-1)``. After each step the forecast joins the history and the
    exogenous window slides forward, repeating its last observed row. With
    ``stats`` the result is de-normalised and clamped at zero.
    Returns ``(forecast (..., tau), traces)``.
    """
    tau = config.tau if tau is None else tau
    if tau < 1:
        raise ConfigError(f"tau must be >= 1, got {tau}")
    tensors = params.tensors()
    exo = np.asarray(exo, dtype=np.float64)
    hist = np.asarray(hist, dtype=np.float64)
    out, traces = [], []
    for _ in range(tau):
        y, trace = forward(tensors, config, exo, hist)
        out.append(y.data)
        traces.append(trace)
        hist = np.concatenate([hist[..., 1:], y.data[..., None]], axis=-1)
        exo = np.concatenate([exo[..., 1:, :], exo[..., -1:, :]], axis=-2)
    forecast = np.stack(out, axis=-1)
    if stats is not None:
        forecast = np.maximum(invert_norm(forecast, stats), 0.0)
    return forecast, traces


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, config: ModelConfig, stats: NormStats | None = None,
                    extra: dict | None = None) -> None:
    """JSON container; floats are written with round-trip precision."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "norm": stats.to_dict() if stats is not None else None,
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in params.items()},
    }
    if extra:
        doc["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


def load_checkpoint(path):
    """Return ``(params, config, stats, extra)`` from :func:`save_checkpoint` output."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    config = ModelConfig(**doc["config"])
    arrays = {}
    expected = param_shapes(config)
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        if expected.get(name) != shape:
            raise DataError(f"checkpoint parameter {name} has shape {shape}, expected {expected.get(name)}")
        arrays[name] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    if set(arrays) != set(expected):
        raise DataError(f"checkpoint is missing parameters {sorted(set(expected) - set(arrays))}")
    stats = NormStats.from_dict(doc["norm"]) if doc.get("norm") else None
    return ModelParams(arrays), config, stats, doc.get("extra", {})
