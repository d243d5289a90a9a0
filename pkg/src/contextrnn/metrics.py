"""Root relative squared error, mean per-series correlation, and evaluation reports.

RSE normalizes the forecast RMSE by the deviation of the actuals from the
global test-set mean; CORR averages per-series Pearson correlations
(series that are constant over the evaluated cells are skipped and
counted). Both follow the conventions of the LSTNet evaluation protocol.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, SeriesPanel
from .model import ModelParams, rolling_forecast

__all__ = ["EvalReport", "rse", "corr", "corr_with_skips", "evaluate"]


def rse(predicted, actual) -> float:
    """sqrt(sum (y - yhat)^2) / sqrt(sum (y - mean(Y))^2) over all cells."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise DataError(f"shape mismatch: {predicted.shape} vs {actual.shape}")
    center = actual.mean()
    denom = math.sqrt(float(np.sum((actual - center) ** 2)))
    if denom == 0.0:
        raise DataError("actuals are constant; RSE undefined")
    return math.sqrt(float(np.sum((actual - predicted) ** 2))) / denom


def corr_with_skips(predicted, actual) -> tuple[float, int]:
    """Mean per-series Pearson correlation and the count of skipped series."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape or predicted.ndim != 2:
        raise DataError("need equally shaped (series, cells) matrices")
    values = []
    skipped = 0
    for i in range(actual.shape[0]):
        a = actual[i] - actual[i].mean()
        p = predicted[i] - predicted[i].mean()
        denom = math.sqrt(float(a @ a) * float(p @ p))
        if denom == 0.0:
            skipped += 1
            continue
        values.append(float(a @ p) / denom)
    if not values:
        raise DataError("every series is constant; CORR undefined")
    return float(np.mean(values)), skipped


def corr(predicted, actual) -> float:
    return corr_with_skips(predicted, actual)[0]


@dataclass(frozen=True)
class EvalReport:
    rse: float
    corr: float
    per_horizon: dict  # horizon (1-based) -> (rse, corr)
    runtime_seconds: float
    config: dict = field(default_factory=dict)
    corr_skipped: int = 0

    def __post_init__(self):
        if self.rse < 0.0 or not (-1.0 - 1e-12 <= self.corr <= 1.0 + 1e-12):
            raise DataError("report violates rse >= 0 or corr in [-1, 1]")

    def to_json(self) -> str:
        payload = {
            "rse": self.rse,
            "corr": self.corr,
            "per_horizon": {str(h): list(v) for h, v in self.per_horizon.items()},
            "runtime_seconds": self.runtime_seconds,
            "config": self.config,
            "corr_skipped": self.corr_skipped,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        return cls(
            rse=raw["rse"],
            corr=raw["corr"],
            per_horizon={int(h): tuple(v) for h, v in raw["per_horizon"].items()},
            runtime_seconds=raw["runtime_seconds"],
            config=raw.get("config", {}),
            corr_skipped=raw.get("corr_skipped", 0),
        )


def forecast_matrices(params: ModelParams, panel: SeriesPanel, emit_from: int, series=None):
    """Rolling medians vs actuals: (predicted, actual) of shape (series, anchors, fh).

    Only anchors whose full output window is observed for a series
    contribute that series' row; evaluation runs in original units.
    """
    cfg = params.config
    series = list(range(panel.n)) if series is None else list(series)
    forecasts = rolling_forecast(params, panel, emit_from, series)
    anchors = [t for t in sorted(forecasts) if t + cfg.horizon <= panel.T]
    if not anchors:
        raise DataError("no complete forecast windows inside the evaluation region")
    pred_rows, act_rows = [], []
    for sid in series:
        pred, act = [], []
        for t in anchors:
            got = forecasts[t].get(sid)
            if got is None or not panel.mask[sid, t : t + cfg.horizon].all():
                continue
            pred.append(got[0])
            act.append(panel.values[sid, t : t + cfg.horizon] - panel.shift)
        if pred:
            pred_rows.append(np.stack(pred))
            act_rows.append(np.stack(act))
    if not pred_rows:
        raise DataError("no evaluable series")
    return np.stack(pred_rows), np.stack(act_rows)


def evaluate(params: ModelParams, panel: SeriesPanel, test_start: int, series=None, config_echo=None) -> EvalReport:
    """Rolling evaluation over every grid anchor at or past ``test_start``."""
    start = time.perf_counter()
    predicted, actual = forecast_matrices(params, panel, max(test_start, params.config.first_anchor), series)
    n_series, n_anchors, fh = predicted.shape
    overall_rse = rse(predicted, actual)
    overall_corr, skipped = corr_with_skips(
        predicted.reshape(n_series, -1), actual.reshape(n_series, -1)
    )
    per_horizon = {}
    for h in range(fh):
        try:
            h_corr, _ = corr_with_skips(predicted[:, :, h], actual[:, :, h])
        except DataError:
            h_corr = math.nan
        per_horizon[h + 1] = (rse(predicted[:, :, h], actual[:, :, h]), h_corr)
    return EvalReport(
        rse=overall_rse,
        corr=overall_corr,
        per_horizon=per_horizon,
        runtime_seconds=time.perf_counter() - start,
        config=config_echo or {},
        corr_skipped=skipped,
    )
