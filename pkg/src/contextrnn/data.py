"""Panels, chronological splits, window normalization, calendar features,
and synthetic coupled-series generation.

All series data flows through :class:`SeriesPanel`, an immutable N×T value
matrix with equally spaced timestamps and an observed-value mask. Panels
holding non-positive values receive a recorded positivity shift at load
time so the multiplicative decomposition and log preprocessing stay valid.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DataError",
    "SeriesPanel",
    "WindowPair",
    "window_pair",
    "SynthSpec",
    "load_panel",
    "split",
    "preprocess_window",
    "normalize_output",
    "postprocess",
    "calendar_features",
    "synth_generate",
    "write_panel_csv",
    "write_forecast_csv",
]

#: positivity shift is offset = 1 - min + SHIFT_EPS when any value <= 0
SHIFT_EPS = 1e-6

#: integer-indexed files get hourly timestamps from this origin
INDEX_EPOCH = dt.datetime(2000, 1, 1)

CALENDAR_SIZE = 74  # hour(24) + day-of-week(7) + day-of-month(31) + month(12)


class DataError(Exception):
    """Malformed or insufficient input data."""


@dataclass(frozen=True)
class SeriesPanel:
    """Immutable N×T value matrix with timestamps and observation mask."""

    values: np.ndarray  # (n, T) float64, already positivity-shifted
    timestamps: tuple  # T datetimes, strictly increasing, equally spaced
    mask: np.ndarray  # (n, T) bool, True = observed
    frequency: dt.timedelta
    shift: float = 0.0  # added to raw values at load; subtract to recover

    def __post_init__(self):
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))
        object.__setattr__(self, "mask", np.ascontiguousarray(self.mask, dtype=bool))
        self.values.setflags(write=False)
        self.mask.setflags(write=False)
        if self.values.shape != self.mask.shape:
            raise DataError("values and mask shapes differ")
        if len(self.timestamps) != self.values.shape[1]:
            raise DataError("timestamp count does not match T")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def window(self, series: int, start: int, stop: int) -> np.ndarray:
        return self.values[series, start:stop]


@dataclass(frozen=True)
class WindowPair:
    """One training example: input window, target window, and its scalers."""

    input: np.ndarray  # W preprocessed values
    target: np.ndarray  # fh normalized targets
    z_bar: float  # input-window mean, series units
    seasonal_factors: np.ndarray  # W + fh factors (input part then output part)
    series_id: int
    t: int  # anchor timestep: first forecast position

    def __post_init__(self):
        W, fh = len(self.input), len(self.target)
        if self.t < W or len(self.seasonal_factors) != W + fh:
            raise DataError("anchor leaves no room for the window, or factor count is off")


def window_pair(panel: "SeriesPanel", series_id: int, t: int, horizon: int, seasonal_factors) -> WindowPair:
    """Normalized (input, target) example at anchor t from observed values.

    ``seasonal_factors`` covers the input window then the output window
    (W + fh values). The anchor must satisfy t >= W and t + fh <= T.
    """
    factors = np.asarray(seasonal_factors, dtype=np.float64)
    W = factors.size - horizon
    if not (W <= t and t + horizon <= panel.T):
        raise DataError(f"anchor {t} out of range for window {W} and horizon {horizon}")
    z_in = panel.values[series_id, t - W : t]
    z_out = panel.values[series_id, t : t + horizon]
    z_bar = float(z_in[panel.mask[series_id, t - W : t]].mean())
    return WindowPair(
        input=preprocess_window(z_in, z_bar, factors[:W]),
        target=normalize_output(z_out, z_bar),
        z_bar=z_bar,
        seasonal_factors=factors,
        series_id=series_id,
        t=t,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a coupled synthetic panel.

    ``edges`` lists (driver, driven) or (driver, driven, weight) entries;
    a driven series receives ``weight * driver[t - lag]`` (defaulting to
    ``coupling``) plus its own sinusoid mixture and noise. Series that
    drive others (or are uncoupled) are sinusoid mixtures alone.
    """

    n: int
    T: int
    edges: tuple = ()
    coupling: float = 1.0
    lag: int = 1
    noise_sigma: float = 0.1
    seasonal_period: int = 24

    def __post_init__(self):
        if self.n < 1 or self.T < 2:
            raise DataError("synthetic spec needs n >= 1 and T >= 2")
        if self.lag < 0:
            raise DataError("lag must be non-negative")
        for edge in self.edges:
            if len(edge) not in (2, 3):
                raise DataError(f"edge {edge} must be (driver, driven[, weight])")
            driver, driven = edge[0], edge[1]
            if not (0 <= driver < self.n and 0 <= driven < self.n) or driver == driven:
                raise DataError(f"bad coupling edge ({driver}, {driven})")

    def weighted_edges(self):
        return [
            (edge[0], edge[1], float(edge[2]) if len(edge) == 3 else self.coupling)
            for edge in self.edges
        ]


def _parse_stamp(cell: str):
    cell = cell.strip()
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return dt.datetime.fromisoformat(cell)
    except ValueError:
        raise DataError(f"first column must be ISO-8601 or integer index, got {cell!r}") from None


def load_panel(path) -> SeriesPanel:
    """Read a CSV panel: first column timestamp/index, one series per column.

    Empty cells mark missing observations. If any value is non-positive a
    global shift of ``1 - min + eps`` is applied and recorded on the panel.
    """
    if hasattr(path, "read"):
        rows = list(csv.reader(path))
    else:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError("empty file")
    width = len(rows[0])
    if width < 2:
        raise DataError("need a timestamp column plus at least one series")
    stamps, cells = [], []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"ragged row {r}: {len(row)} columns, expected {width}")
        stamps.append(_parse_stamp(row[0]))
        cells.append(row[1:])

    if all(isinstance(s, int) for s in stamps):
        deltas = {b - a for a, b in zip(stamps, stamps[1:])}
        if len(stamps) > 1 and deltas != {1}:
            raise DataError("integer index must increase by 1")
        freq = dt.timedelta(hours=1)
        timestamps = tuple(INDEX_EPOCH + dt.timedelta(hours=s - stamps[0]) for s in stamps)
    elif all(isinstance(s, dt.datetime) for s in stamps):
        timestamps = tuple(stamps)
        if len(stamps) > 1:
            freq = stamps[1] - stamps[0]
            if freq <= dt.timedelta(0):
                raise DataError("timestamps must be strictly increasing")
            for a, b in zip(stamps, stamps[1:]):
                if b - a != freq:
                    raise DataError("timestamps must be equally spaced")
        else:
            freq = dt.timedelta(hours=1)
    else:
        raise DataError("mixed timestamp and integer-index rows")

    T, n = len(rows), width - 1
    values = np.zeros((n, T))
    mask = np.ones((n, T), dtype=bool)
    for t, row in enumerate(cells):
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                mask[j, t] = False
            else:
                try:
                    values[j, t] = float(cell)
                except ValueError:
                    raise DataError(f"bad numeric cell at row {t}, series {j}: {cell!r}") from None

    shift = 0.0
    observed = values[mask]
    if observed.size and observed.min() <= 0.0:
        shift = 1.0 - float(observed.min()) + SHIFT_EPS
        values = values + shift
        values[~mask] = 0.0
    return SeriesPanel(values, timestamps, mask, freq, shift)


def split(panel: SeriesPanel, ratios=(0.6, 0.2, 0.2)):
    """Chronological train/validation/test split at floor(r1·T), floor((r1+r2)·T)."""
    if panel.T < 10:
        raise DataError(f"panel too short to split: T={panel.T}")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError("ratios must be three fractions summing to 1")
    a = int(math.floor(ratios[0] * panel.T))
    b = int(math.floor((ratios[0] + ratios[1]) * panel.T))

    def piece(lo, hi):
        return SeriesPanel(
            panel.values[:, lo:hi].copy(),
            panel.timestamps[lo:hi],
            panel.mask[:, lo:hi].copy(),
            panel.frequency,
            panel.shift,
        )

    return piece(0, a), piece(a, b), piece(b, panel.T)


def preprocess_window(z, z_bar, seasonal):
    """x_in = log(z / (z_bar * s)) elementwise; all inputs must be positive."""
    z = np.asarray(z, dtype=np.float64)
    seasonal = np.asarray(seasonal, dtype=np.float64)
    if z_bar <= 0 or np.any(z <= 0) or np.any(seasonal <= 0):
        raise DataError("preprocessing needs strictly positive values")
    return np.log(z / (z_bar * seasonal))


def normalize_output(z, z_bar):
    """x_out = z / z_bar."""
    if z_bar <= 0:
        raise DataError("z_bar must be positive")
    return np.asarray(z, dtype=np.float64) / z_bar


def postprocess(x_hat, z_bar, seasonal, shift=0.0):
    """Invert preprocessing: z_hat = exp(x_hat) * z_bar * s, minus the load shift."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if np.any(np.abs(x_hat) > 700.0):
        raise DataError("postprocess overflow: |x_hat| > 700")
    return np.exp(x_hat) * z_bar * np.asarray(seasonal, dtype=np.float64) - shift


def calendar_features(timestamp: dt.datetime) -> np.ndarray:
    """74-dim one-hot block: hour-of-day, day-of-week, day-of-month, month.

    Sub-hourly timestamps share their hour's slot. Exactly four entries are 1.
    """
    out = np.zeros(CALENDAR_SIZE)
    out[timestamp.hour] = 1.0
    out[24 + timestamp.weekday()] = 1.0
    out[24 + 7 + (timestamp.day - 1)] = 1.0
    out[24 + 7 + 31 + (timestamp.month - 1)] = 1.0
    return out


def synth_generate(spec: SynthSpec, seed: int) -> SeriesPanel:
    """Deterministic coupled panel: sinusoid-mixture drivers, lagged driven series."""
    rng = np.random.default_rng(seed)
    n, T, p = spec.n, spec.T, spec.seasonal_period
    pad = spec.lag
    grid = np.arange(-pad, T, dtype=np.float64)

    driven_by = {}
    for driver, driven, weight in spec.weighted_edges():
        driven_by[driven] = (driver, weight)

    base = np.zeros((n, T + pad))
    for i in range(n):
        # every series gets its own positive sinusoid mixture; drawn for all
        # series (in index order) so coupling edges do not perturb the stream
        amp1, amp2 = rng.uniform(0.5, 1.5, 2)
        phase1, phase2 = rng.uniform(0.0, 2.0 * np.pi, 2)
        long_period = rng.uniform(4.0, 8.0) * p
        wave = amp1 * np.sin(2.0 * np.pi * grid / p + phase1)
        wave += amp2 * np.sin(2.0 * np.pi * grid / long_period + phase2)
        noise = rng.normal(0.0, spec.noise_sigma, T + pad) if spec.noise_sigma > 0 else 0.0
        base[i] = 10.0 + wave + noise

    values = np.empty((n, T))
    for i in range(n):
        if i in driven_by:
            driver, weight = driven_by[i]
            shifted = base[driver, pad - spec.lag : pad - spec.lag + T]
            own = base[i, pad:]
            values[i] = weight * shifted + own
        else:
            values[i] = base[i, pad:]

    low = values.min()
    if low <= 0.0:
        values = values + (1.0 - low + SHIFT_EPS)
    timestamps = tuple(INDEX_EPOCH + dt.timedelta(hours=t) for t in range(T))
    return SeriesPanel(values, timestamps, np.ones((n, T), dtype=bool), dt.timedelta(hours=1))


def write_panel_csv(panel: SeriesPanel, path):
    """Write a panel back to the CSV layout accepted by load_panel."""
    def dump(fh):
        writer = csv.writer(fh, lineterminator="\n")
        for t in range(panel.T):
            row = [panel.timestamps[t].isoformat()]
            for j in range(panel.n):
                row.append(repr(float(panel.values[j, t] - panel.shift)) if panel.mask[j, t] else "")
            writer.writerow(row)

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w", newline="") as fh:
            dump(fh)


def write_forecast_csv(rows, path):
    """Write forecast rows (timestamp, series, median, lower, upper)."""
    def dump(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "series", "median", "lower", "upper"])
        for stamp, series, med, lo, hi in rows:
            writer.writerow([stamp.isoformat(), series, repr(float(med)), repr(float(lo)), repr(float(hi))])

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w", newline="") as fh:
            dump(fh)
