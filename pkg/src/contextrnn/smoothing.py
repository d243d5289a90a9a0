"""Dynamic multiplicative Holt-Winters decomposition.

Each series keeps a level and a ring buffer of ``p`` seasonal factors.
The effective smoothing coefficients are sigmoids of per-series logits
plus per-step corrections supplied by the network, so every update stays
a convex combination and the decomposition remains differentiable end to
end. States hold :class:`~contextrnn.tape.Tensor` scalars; constants and
tape-tracked tensors mix freely.
"""

from __future__ import annotations

import math

from . import tape as tp
from .tape import Tensor

__all__ = [
    "SmoothingError",
    "ESState",
    "es_init",
    "es_step",
    "es_skip",
    "seasonal_lookup",
    "future_factors",
    "DEFAULT_LOGIT",
]

#: slow-adapting prior: sigmoid(-2) ~ 0.119
DEFAULT_LOGIT = -2.0


class SmoothingError(Exception):
    """Invalid smoothing input (non-positive value, bad offset, short prefix)."""


class ESState:
    """Level + seasonal ring + smoothing logits for one series.

    ``seasonal[0]`` is the factor for the current step t; the ring always
    holds exactly ``period`` factors covering steps t .. t+p-1.
    """

    __slots__ = ("level", "seasonal", "alpha_logit", "beta_logit", "period")

    def __init__(self, level, seasonal, alpha_logit, beta_logit, period):
        if len(seasonal) != period:
            raise SmoothingError(f"ring holds {len(seasonal)} factors, period is {period}")
        self.level = level
        self.seasonal = list(seasonal)
        self.alpha_logit = alpha_logit
        self.beta_logit = beta_logit
        self.period = period

    def detach(self) -> "ESState":
        """Constant copy (used at tape truncation boundaries)."""
        return ESState(
            self.level.detach(),
            [s.detach() for s in self.seasonal],
            self.alpha_logit.detach(),
            self.beta_logit.detach(),
            self.period,
        )


def _scalar(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(float(x))


def es_init(series_prefix, period: int, alpha_logit=DEFAULT_LOGIT, beta_logit=DEFAULT_LOGIT) -> ESState:
    """Warm-start a state from the first 2p values of a series.

    Level is the mean of the first p values; factor i is
    mean(z_i, z_{i+p}) / level, renormalized to average 1.
    """
    values = [float(v) for v in series_prefix]
    if len(values) < 2 * period:
        raise SmoothingError(f"need {2 * period} values to initialize, got {len(values)}")
    if any(v <= 0.0 for v in values):
        raise SmoothingError("initialization values must be positive")
    level = sum(values[:period]) / period
    raw = [(values[i] + values[i + period]) / 2.0 / level for i in range(period)]
    norm = sum(raw) / period
    seasonal = [Tensor(r / norm) for r in raw]
    return ESState(Tensor(level), seasonal, _scalar(alpha_logit), _scalar(beta_logit), period)


def es_step(state: ESState, z_t: float, delta_alpha=0.0, delta_beta=0.0):
    """Advance one observation; returns (new state, l_t, s_{t+p}).

    alpha = sigmoid(alpha_logit + delta_alpha) and likewise beta, so both
    stay in (0, 1). The oldest ring factor is consumed, the new one
    appended. A non-positive z_t rejects the step and leaves the state
    unchanged.
    """
    z = float(z_t)
    if z <= 0.0:
        raise SmoothingError(f"observation must be positive, got {z}")
    alpha = tp.sigmoid(tp.add(state.alpha_logit, delta_alpha))
    beta = tp.sigmoid(tp.add(state.beta_logit, delta_beta))
    one_minus_alpha = tp.sub(1.0, alpha)
    level = tp.add(tp.mul(alpha, z), tp.mul(one_minus_alpha, state.level))
    # z / l_t via exp(log z - log l): both strictly positive
    ratio = tp.exp(tp.sub(math.log(z), tp.log(level)))
    s_head = state.seasonal[0]
    s_new = tp.add(tp.mul(beta, ratio), tp.mul(tp.sub(1.0, beta), s_head))
    new_state = ESState(
        level,
        state.seasonal[1:] + [s_new],
        state.alpha_logit,
        state.beta_logit,
        state.period,
    )
    return new_state, level, s_new


def es_skip(state: ESState) -> ESState:
    """Advance past a missing observation: rotate the ring, keep level.

    A pure rotation keeps the seasonal phase aligned with wall clock
    without inventing data.
    """
    return ESState(
        state.level,
        state.seasonal[1:] + [state.seasonal[0]],
        state.alpha_logit,
        state.beta_logit,
        state.period,
    )


def seasonal_lookup(state: ESState, offset: int) -> Tensor:
    """Stored factor for phase ``offset`` in [0, p)."""
    if not (0 <= offset < state.period):
        raise SmoothingError(f"offset {offset} outside ring of period {state.period}")
    return state.seasonal[offset]


def future_factors(state: ESState, horizon: int) -> list[Tensor]:
    """Factors for the next ``horizon`` steps; repeats the ring phase beyond p."""
    return [state.seasonal[i % state.period] for i in range(horizon)]
