"""Comparison forecasters sharing the prepared windows of the main model.

Every forecaster follows the same two-call protocol::

    f.fit(prep)                          # prep is a dataset.PreparedData
    f.predict(prep, "test", horizon)     # normalised h-step forecasts

``predict`` returns one value per window of ``prep.windows(split, horizon)``:
the forecast for the window's last label hour, in normalised units.
Statistical baselines read the normalised series strictly before each
window's first label row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import PreparedData, local_calendar
from .errors import ConfigError, DataError, NumericError
from .model import ModelConfig, ModelParams, predict as model_predict
from .training import TrainConfig, train

# -- historical average --------------------------------------------------------


def ha_predict(slot_history) -> float:
    """Mean of the observations recorded for one (day-of-week, hour) slot."""
    h = np.asarray(slot_history, dtype=np.float64)
    if h.size == 0:
        raise DataError("historical average: empty slot")
    return float(h.mean())


class HistoricalAverage:
    name = "ha"

    def __init__(self, utc_offset_hours: float = 0.0):
        self.utc_offset_hours = utc_offset_hours
        self.table: np.ndarray | None = None

    def _slots(self, timestamps):
        _, hour, dow = local_calendar(np.asarray(timestamps), self.utc_offset_hours)
        return dow * 24 + hour

    def fit(self, prep: PreparedData) -> None:
        lo, hi = prep.split_range("train")
        slots = self._slots(prep.norm.timestamps[lo:hi])
        y = prep.norm.traffic[lo:hi]
        table = np.full(7 * 24, np.nan)
        for k in np.unique(slots):
            table[k] = ha_predict(y[slots == k])
        self.table = table

    def predict(self, prep: PreparedData, split: str, horizon: int) -> np.ndarray:
        rows = prep.anchor_rows(split, horizon) + horizon - 1
        out = self.table[self._slots(prep.norm.timestamps[rows])]
        if np.isnan(out).any():
            raise DataError("historical average: a target slot has no training history")
        return out


# -- ARIMA(p, d, 0) ------------------------------------------------------------


def _solve_ls(X: np.ndarray, y: np.ndarray, what: str) -> np.ndarray:
    if X.shape[1] == 0:
        return np.zeros(0)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1] and np.any(y != 0):
        raise NumericError(f"{what}: singular normal equations (rank {rank} < {X.shape[1]})")
    return coef


@dataclass(frozen=True)
class ARIMACoefficients:
    """AR coefficients ``phi`` on lags 1..p of the ``d``-times differenced series.

    An intercept is fitted only for ``d = 0``; with differencing the drift is
    fixed at zero so a random walk forecasts its last value.
    """

    p: int
    d: int
    phi: np.ndarray
    intercept: float = 0.0


def arima_fit(series, p: int = 3, d: int = 1) -> ARIMACoefficients:
    """Conditional least-squares fit of an ARIMA(p, d, 0) model."""
    if p < 0 or d < 0:
        raise ConfigError(f"ARIMA orders must be >= 0, got p={p}, d={d}")
    x = np.asarray(series, dtype=np.float64)
    if x.size <= p + d + 1:
        raise DataError(f"ARIMA({p},{d},0) needs more than {p + d + 1} observations, got {x.size}")
    w = np.diff(x, n=d) if d else x
    n = w.size - p
    cols = [w[p - i : p - i + n] for i in range(1, p + 1)]
    if d == 0:
        cols.insert(0, np.ones(n))
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    coef = _solve_ls(X, w[p:], "ARIMA")
    if d == 0:
        return ARIMACoefficients(p, d, coef[1:], float(coef[0]))
    return ARIMACoefficients(p, d, coef)


def arima_predict(coef: ARIMACoefficients, past, steps: int = 1) -> np.ndarray:
    """Forecast ``steps`` values after each row of ``past``.

    ``past`` is ``(..., k)`` with ``k >= p + d`` most recent observations;
    returns ``(..., steps)``.
    """
    past = np.asarray(past, dtype=np.float64)
    p, d = coef.p, coef.d
    if past.shape[-1] < p + d:
        raise DataError(f"ARIMA forecast needs {p + d} past values, got {past.shape[-1]}")
    # last value of every difference order below d, plus the level-d tail
    levels = [past]
    for _ in range(d):
        levels.append(np.diff(levels[-1], axis=-1))
    lasts = [lv[..., -1] for lv in levels[:d]]
    w = levels[d][..., levels[d].shape[-1] - p :] if p else levels[d][..., :0]
    out = []
    for _ in range(steps):
        nxt = coef.intercept + (w[..., ::-1] @ coef.phi if p else 0.0)
        nxt = np.broadcast_to(np.asarray(nxt, dtype=np.float64), past.shape[:-1]).copy()
        if p:
            w = np.concatenate([w[..., 1:], nxt[..., None]], axis=-1)
        for k in range(d - 1, -1, -1):
            nxt = lasts[k] + nxt
            lasts[k] = nxt
        out.append(nxt)
    return np.stack(out, axis=-1)


class ARIMA:
    name = "arima"

    def __init__(self, p: int = 3, d: int = 1):
        if p < 0 or d < 0:
            raise ConfigError(f"ARIMA orders must be >= 0, got p={p}, d={d}")
        self.p, self.d = p, d
        self.coef: ARIMACoefficients | None = None

    def fit(self, prep: PreparedData) -> None:
        lo, hi = prep.split_range("train")
        self.coef = arima_fit(prep.norm.traffic[lo:hi], self.p, self.d)

    def predict(self, prep: PreparedData, split: str, horizon: int) -> np.ndarray:
        rows = prep.anchor_rows(split, horizon)
        k = max(self.p + self.d, 1)
        if rows.min() < k:
            raise DataError(f"ARIMA needs {k} observations before the first window")
        past = prep.norm.traffic[rows[:, None] - np.arange(k, 0, -1)]
        return arima_predict(self.coef, past, horizon)[:, -1]


# -- VAR -----------------------------------------------------------------------


@dataclass(frozen=True)
class VARCoefficients:
    """``x_t = c + sum_i A[i-1] x_{t-i}``; ``A`` is ``(lag, k, k)``."""

    intercept: np.ndarray
    A: np.ndarray

    @property
    def lag(self) -> int:
        return self.A.shape[0]


def _lagged(x: np.ndarray, lag: int) -> np.ndarray:
    """Rows ``[x_{t-1}, ..., x_{t-lag}]`` flattened, for t = lag .. T-1."""
    n = x.shape[0] - lag
    return np.concatenate([x[lag - i : lag - i + n] for i in range(1, lag + 1)], axis=1)


def var_fit(series, lag: int = 24) -> VARCoefficients:
    """Least-squares VAR(lag) fit on a ``(T, k)`` array."""
    if lag < 1:
        raise ConfigError(f"VAR lag must be >= 1, got {lag}")
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    T, k = x.shape
    if T - lag <= lag * k + 1:
        raise DataError(f"VAR({lag}) on {k} series needs more than {lag * k + 1 + lag} rows, got {T}")
    X = np.column_stack([np.ones(T - lag), _lagged(x, lag)])
    B = _solve_ls(X, x[lag:], "VAR")
    return VARCoefficients(B[0], B[1:].reshape(lag, k, k).transpose(0, 2, 1))


def var_predict(coef: VARCoefficients, past, steps: int = 1) -> np.ndarray:
    """Forecast ``(..., steps, k)`` from ``past`` shaped ``(..., >= lag, k)``."""
    past = np.asarray(past, dtype=np.float64)
    lag = coef.lag
    if past.shape[-2] < lag:
        raise DataError(f"VAR forecast needs {lag} past rows, got {past.shape[-2]}")
    hist = past[..., past.shape[-2] - lag :, :]
    out = []
    for _ in range(steps):
        nxt = coef.intercept + sum(hist[..., lag - i, :] @ coef.A[i - 1].T for i in range(1, lag + 1))
        hist = np.concatenate([hist[..., 1:, :], nxt[..., None, :]], axis=-2)
        out.append(nxt)
    return np.stack(out, axis=-2)


class VAR:
    """VAR over all building channels plus traffic; the traffic component is the forecast."""

    name = "var"

    def __init__(self, lag: int = 24):
        if lag < 1:
            raise ConfigError(f"VAR lag must be >= 1, got {lag}")
        self.lag = lag
        self.coef: VARCoefficients | None = None

    @staticmethod
    def _series(prep: PreparedData) -> np.ndarray:
        return np.column_stack([prep.norm.channels, prep.norm.traffic])

    def fit(self, prep: PreparedData) -> None:
        lo, hi = prep.split_range("train")
        self.coef = var_fit(self._series(prep)[lo:hi], self.lag)

    def predict(self, prep: PreparedData, split: str, horizon: int) -> np.ndarray:
        rows = prep.anchor_rows(split, horizon)
        if rows.min() < self.lag:
            raise DataError(f"VAR needs {self.lag} rows before the first window")
        x = self._series(prep)
        past = x[rows[:, None] - np.arange(self.lag, 0, -1)]
        return var_predict(self.coef, past, horizon)[:, -1, -1]


# -- locally weighted regression -----------------------------------------------

WEIGHT_FLOOR = 1e-12


def lwr_predict(features, targets, query, bandwidth: float) -> float:
    """Gaussian-kernel weighted least squares with intercept, evaluated at ``query``.

    ``bandwidth = inf`` gives uniform weights, i.e. ordinary least squares.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(targets, dtype=np.float64)
    q = np.atleast_1d(np.asarray(query, dtype=np.float64))
    if not bandwidth > 0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    dist2 = np.sum((X - q) ** 2, axis=1)
    w = np.ones(len(X)) if np.isinf(bandwidth) else np.exp(-0.5 * dist2 / bandwidth**2)
    keep = w > WEIGHT_FLOOR
    dim = X.shape[1]
    if keep.sum() < dim + 1:
        raise DataError(f"LWR: only {int(keep.sum())} points carry weight near the query; need {dim + 1}")
    A = np.column_stack([np.ones(keep.sum()), X[keep]])
    sw = np.sqrt(w[keep])
    coef, _, rank, _ = np.linalg.lstsq(A * sw[:, None], y[keep] * sw, rcond=None)
    if rank < dim + 1:
        raise NumericError(f"LWR: rank-deficient weighted design (rank {rank} < {dim + 1})")
    return float(coef[0] + q @ coef[1:])


class LWR:
    """Building channels at the window's last observed hour predict the target hour.

    The bandwidth is chosen from ``grid`` by validation MSE. A query whose
    neighbourhood is too sparse is retried with a doubled bandwidth.
    """

    name = "lwr"

    def __init__(self, grid=(0.25, 0.5, 1.0, 2.0, 4.0, 8.0), bandwidth: float | None = None):
        if any(not b > 0 for b in grid):
            raise ConfigError("LWR bandwidth grid must be positive")
        self.grid = tuple(grid)
        self.fixed = bandwidth
        self.bandwidth = bandwidth
        self._data: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _pairs(self, prep: PreparedData, split: str, horizon: int):
        rows = prep.anchor_rows(split, horizon)
        return prep.norm.channels[rows], prep.norm.traffic[rows + horizon - 1]

    def _predict_many(self, X, y, Q, bandwidth) -> np.ndarray:
        out = np.empty(len(Q))
        for i, q in enumerate(Q):
            b = bandwidth
            for _ in range(8):
                try:
                    out[i] = lwr_predict(X, y, q, b)
                    break
                except (DataError, NumericError):
                    b *= 2.0
            else:
                out[i] = lwr_predict(X, y, q, np.inf)
        return out

    def fit(self, prep: PreparedData, horizon: int = 1) -> None:
        X, y = self._pairs(prep, "train", horizon)
        self._data[horizon] = (X, y)
        if self.fixed is None:
            Qv, yv = self._pairs(prep, "val", horizon)
            scores = [float(np.mean((self._predict_many(X, y, Qv, b) - yv) ** 2)) for b in self.grid]
            self.bandwidth = self.grid[int(np.argmin(scores))]

    def predict(self, prep: PreparedData, split: str, horizon: int) -> np.ndarray:
        if horizon not in self._data:
            X, y = self._pairs(prep, "train", horizon)
            self._data[horizon] = (X, y)
        X, y = self._data[horizon]
        Q, _ = self._pairs(prep, split, horizon)
        return self._predict_many(X, y, Q, self.bandwidth)


# -- recurrent baselines and the main model ---------------------------------------


class NeuralForecaster:
    """A model-module variant trained with :func:`training.train`."""

    def __init__(self, variant: str, name: str | None = None, p: int = 64, q: int = 64,
                 train_config: TrainConfig | None = None):
        self.variant = variant
        self.name = name or variant
        self.p, self.q = p, q
        self.train_config = train_config or TrainConfig()
        self.config: ModelConfig | None = None
        self.params: ModelParams | None = None
        self.report = None

    def fit(self, prep: PreparedData) -> None:
        self.config = ModelConfig(L=prep.L, n_occ=prep.raw.n_occ, n_env=prep.raw.n_env, p=self.p, q=self.q,
                                  variant=self.variant, dropout_rate=self.train_config.dropout_rate)
        self.params, self.report = train(prep, self.config, self.train_config)

    def predict(self, prep: PreparedData, split: str, horizon: int) -> np.ndarray:
        exo, hist, _, _ = prep.windows(split, horizon)
        forecast, _ = model_predict(self.params, self.config, exo, hist, tau=horizon)
        return forecast[:, -1]


@dataclass(frozen=True)
class BaselineSpec:
    """A registered forecaster kind with its hyperparameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in REGISTRY:
            raise ConfigError(f"unknown model {self.kind!r}; choose from {', '.join(REGISTRY)}")

    def build(self, train_config: TrainConfig | None = None):
        factory, allowed = REGISTRY[self.kind]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise ConfigError(f"model {self.kind!r} does not take {sorted(unknown)}")
        if allowed and "train_config" in allowed:
            return factory(name=self.kind, train_config=train_config, **self.params)
        return factory(**self.params)


def _neural(variant):
    def make(name=None, train_config=None, p=64, q=64):
        return NeuralForecaster(variant, name=name, p=p, q=q, train_config=train_config)

    return make


REGISTRY = {
    "ha": (HistoricalAverage, ("utc_offset_hours",)),
    "arima": (ARIMA, ("p", "d")),
    "var": (VAR, ("lag",)),
    "lwr": (LWR, ("grid", "bandwidth")),
    "lstm": (_neural("lstm"), ("p", "q", "train_config")),
    "seq2seq": (_neural("seq2seq"), ("p", "q", "train_config")),
    "seq2seq-attn": (_neural("no_crossdomain_attention"), ("p", "q", "train_config")),
    "buildsensys": (_neural("full"), ("p", "q", "train_config")),
}
