"""Fit forecasters on one frame and score them on the test split."""

from __future__ import annotations

import numpy as np

from . import __version__
from .baselines import REGISTRY, BaselineSpec, NeuralForecaster
from .dataset import PreparedData, TimeSeriesFrame, invert_norm, prepare
from .errors import ConfigError
from .metrics import EvalReport
from .model import ABLATIONS
from .training import TrainConfig

MODEL_NAMES = tuple(REGISTRY) + tuple(ABLATIONS)


def build_forecaster(name: str, train_config: TrainConfig | None = None, p: int = 64, q: int = 64,
                     options: dict | None = None):
    """Registry models by name; ablation labels (``B``, ``Bwo/t``, ...) map to model variants."""
    options = dict(options or {})
    if name in ABLATIONS:
        return NeuralForecaster(ABLATIONS[name], name=name, p=p, q=q, train_config=train_config)
    if name not in REGISTRY:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    if "train_config" in REGISTRY[name][1]:
        options.setdefault("p", p)
        options.setdefault("q", q)
    return BaselineSpec(name, options).build(train_config)


def forecast(model, prep: PreparedData, split: str, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """De-normalised, nonnegative forecasts and the matching ground truth."""
    rows = prep.anchor_rows(split, horizon) + horizon - 1
    pred = np.maximum(invert_norm(model.predict(prep, split, horizon), prep.stats), 0.0)
    return pred, prep.raw.traffic[rows]


def evaluate(frame: TimeSeriesFrame | PreparedData, models, *, L: int = 24, horizon: int = 1,
             road: str = "road", train_config: TrainConfig | None = None, p: int = 64, q: int = 64,
             options: dict | None = None, config: dict | None = None):
    """Fit each named model and score its ``horizon``-hour forecasts on the test split.

    Returns ``(report, fitted)`` where ``fitted`` maps names to fitted models.
    """
    prep = frame if isinstance(frame, PreparedData) else prepare(frame, L)
    report = EvalReport(config=dict(config or {}), version=__version__)
    fitted = {}
    for name in models:
        model = build_forecaster(name, train_config, p, q, (options or {}).get(name))
        model.fit(prep)
        pred, truth = forecast(model, prep, "test", horizon)
        report.add(name, road, horizon, pred, truth)
        fitted[name] = model
    return report, fitted
