"""Forecast error metrics and the evaluation report."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise DataError(f"prediction length {pred.size} != truth length {truth.size}")
    if pred.size == 0:
        raise DataError("metrics need at least one value")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(truth - pred)))


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def mape_detail(pred, truth) -> tuple[float, int]:
    """MAPE in percent over nonzero truths, plus the number of excluded hours."""
    pred, truth = _pair(pred, truth)
    keep = truth != 0
    if not keep.any():
        raise DataError("MAPE undefined: every ground-truth value is zero")
    return float(100.0 * np.mean(np.abs((truth[keep] - pred[keep]) / truth[keep]))), int((~keep).sum())


def mape(pred, truth) -> float:
    return mape_detail(pred, truth)[0]


def format_percent(value: float) -> str:
    return f"{value:.2f}%"


@dataclass
class EvalReport:
    """Metrics keyed by ``(model, road, horizon)``."""

    config: dict = field(default_factory=dict)
    version: str = ""
    rows: list[dict] = field(default_factory=list)

    def add(self, model: str, road: str, horizon: int, pred, truth) -> dict:
        pred, truth = _pair(pred, truth)
        m, excluded = mape_detail(pred, truth)
        row = {
            "model": model,
            "road": road,
            "horizon": int(horizon),
            "rmse": rmse(pred, truth),
            "mae": mae(pred, truth),
            "mape": m,
            "samples": int(pred.size),
            "mape_excluded": excluded,
        }
        self.rows.append(row)
        return row

    def get(self, model: str, road: str | None = None, horizon: int | None = None) -> dict:
        for r in self.rows:
            if r["model"] == model and road in (None, r["road"]) and horizon in (None, r["horizon"]):
                return r
        raise KeyError((model, road, horizon))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"version": self.version, "config": self.config, "config_fingerprint": self.fingerprint,
                "results": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Rows are models, with an RMSE/MAE/MAPE column triplet per road and horizon."""
        models = list(dict.fromkeys(r["model"] for r in self.rows))
        keys = list(dict.fromkeys((r["road"], r["horizon"]) for r in self.rows))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["model"]
        for road, h in keys:
            tag = road if len({k[1] for k in keys}) == 1 else f"{road}@{h}"
            header += [f"{tag} RMSE", f"{tag} MAE", f"{tag} MAPE"]
        w.writerow(header)
        for m in models:
            line = [m]
            for road, h in keys:
                try:
                    r = self.get(m, road, h)
                    line += [f"{r['rmse']:.2f}", f"{r['mae']:.2f}", format_percent(r["mape"])]
                except KeyError:
                    line += ["", "", ""]
            w.writerow(line)
        return buf.getvalue()
