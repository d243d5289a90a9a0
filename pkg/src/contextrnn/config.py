"""Run configuration and the flat ``key = value`` config-file format.

Every field of :class:`TrainConfig` is addressable from a config file;
CLI flags override file values. Schedules are written as
``epoch:value`` pairs separated by commas and apply step-wise (the entry
with the largest epoch not exceeding the current one wins).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .data import DataError

__all__ = ["TrainConfig", "load_config", "save_config", "parse_overrides"]


def _default_batch_schedule():
    return {1: 2, 4: 5, 5: 12, 6: 25, 7: 50, 8: 100}


def _default_lr_schedule():
    return {1: 3e-3, 9: 1e-3, 10: 1e-4}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 11
    batch_schedule: dict = field(default_factory=_default_batch_schedule)
    lr_schedule: dict = field(default_factory=_default_lr_schedule)
    q_star: float = 0.48
    q_low: float = 0.025
    q_high: float = 0.975
    gamma: float = 0.4
    window: int = 168  # input window W
    horizon: int = 24  # forecast length fh
    period: int = 24  # seasonal period p
    dilations: tuple = (2, 6, 12, 24)
    context_size: int = 2  # u, per-series context slots
    context_batch: int = 15  # K, series in the context track
    contexts_per_target: int = 5  # S, ranked contexts per target
    state_width: int = 40  # controlling-state slots of each bottom cell
    hidden_width: int = 40  # top-cell (layer) output width
    conv_channels: int = 8
    conv_kernel: int = 3
    stride: int = 1  # timesteps between consecutive anchors
    steps_per_update: int = 50  # anchors per optimizer update (tape segment)
    maxlag: int = 4  # Granger lag order
    seed: int = 0
    ensemble: int = 1
    context_mode: str = "full"  # full | global | none

    def __post_init__(self):
        if not (0.0 < self.q_low < self.q_star < self.q_high < 1.0):
            raise DataError("quantiles must satisfy 0 < q_low < q_star < q_high < 1")
        if self.gamma < 0.0:
            raise DataError("gamma must be non-negative")
        if self.epochs < 1 or self.window < 2 or self.horizon < 1 or self.period < 1:
            raise DataError("epochs, window, horizon and period must be positive")
        if self.stride < 1 or self.steps_per_update < 1:
            raise DataError("stride and steps_per_update must be positive")
        if any(d < 1 for d in self.dilations) or not self.dilations:
            raise DataError("dilations must be positive")
        if self.context_mode not in ("full", "global", "none"):
            raise DataError(f"unknown context mode {self.context_mode!r}")
        for name in ("batch_schedule", "lr_schedule"):
            sched = getattr(self, name)
            if not sched or any(int(k) < 1 for k in sched):
                raise DataError(f"{name} needs at least one entry with epoch >= 1")

    def _lookup(self, schedule, epoch):
        keys = [k for k in schedule if k <= epoch]
        if not keys:
            raise DataError(f"no schedule entry at or before epoch {epoch}")
        return schedule[max(keys)]

    def batch_size_at(self, epoch: int) -> int:
        return int(self._lookup(self.batch_schedule, epoch))

    def lr_at(self, epoch: int) -> float:
        return float(self._lookup(self.lr_schedule, epoch))

    @property
    def first_anchor(self) -> int:
        # needs W history for the window and 2p values for the warm start
        return max(self.window, 2 * self.period)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


_INT_FIELDS = {
    "epochs", "window", "horizon", "period", "context_size", "context_batch",
    "contexts_per_target", "state_width", "hidden_width", "conv_channels",
    "conv_kernel", "stride", "steps_per_update", "maxlag", "seed", "ensemble",
}
_FLOAT_FIELDS = {"q_star", "q_low", "q_high", "gamma"}
_SCHEDULE_FIELDS = {"batch_schedule", "lr_schedule"}


def _parse_value(name: str, text: str):
    text = text.strip()
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    if name == "dilations":
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    if name in _SCHEDULE_FIELDS:
        sched = {}
        for pair in text.split(","):
            if not pair.strip():
                continue
            epoch, _, value = pair.partition(":")
            sched[int(epoch)] = float(value) if name == "lr_schedule" else int(value)
        return sched
    if name == "context_mode":
        return text
    raise DataError(f"unknown config key {name!r}")


def parse_overrides(pairs) -> dict:
    """Parse ``key=value`` strings (e.g. from CLI ``--set``) into field values."""
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise DataError(f"override {pair!r} is not key=value")
        out[key.strip()] = _parse_value(key.strip(), value)
    return out


def load_config(path, **overrides) -> TrainConfig:
    """Read a flat key=value file ('#' comments allowed) and apply overrides."""
    values = {}
    if hasattr(path, "read"):
        lines = path.read().splitlines()
    else:
        with open(path) as fh:
            lines = fh.read().splitlines()
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise DataError(f"config line {lineno} is not key = value: {line!r}")
        values[key.strip()] = _parse_value(key.strip(), value)
    values.update(overrides)
    return TrainConfig(**values)


def _format_value(name, value):
    if name == "dilations":
        return ",".join(str(d) for d in value)
    if name in _SCHEDULE_FIELDS:
        return ",".join(f"{k}:{value[k]}" for k in sorted(value))
    return str(value)


def save_config(config: TrainConfig, path):
    def dump(fh):
        for f in fields(config):
            fh.write(f"{f.name} = {_format_value(f.name, getattr(config, f.name))}\n")

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w") as fh:
            dump(fh)
