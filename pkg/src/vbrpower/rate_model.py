"""Pointwise SINR and capacity math for the single-cell downlink.

Capacities use the natural logarithm throughout, so ``bandwidth * slot``
times ``log1p(sinr)`` is the data volume a slot carries.  Every function is
vectorised over users.

Under full power use (sum of powers equal to the budget ``P``) the SINR of
user ``n`` depends only on its own power ``p``::

    sinr = L * p / (P - p + A)        A = noise / gain

which is the "budget map" used by the per-user power bounds, the inflection
point and the capacity derivatives below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelState

__all__ = [
    "SinrBounds",
    "PowerBounds",
    "PowerAllocation",
    "InconsistentStateError",
    "sinr",
    "capacity",
    "sinr_bounds",
    "sinr_bounds_from_curves",
    "power_bounds",
    "inflection_point",
    "budget_sinr",
    "budget_capacity",
    "capacity_derivatives",
    "convex_region_bound",
    "sum_log_objective",
]

RTOL = 1e-9


class InconsistentStateError(ValueError):
    """Transmission curve above the overflow curve at the start of a slot."""


@dataclass(frozen=True)
class SinrBounds:
    gamma_min: np.ndarray
    gamma_max: np.ndarray
    gamma_th: float = 0.0

    @property
    def feasible(self):
        return np.asarray(self.gamma_min) <= np.asarray(self.gamma_max)


@dataclass(frozen=True)
class PowerBounds:
    p_min: np.ndarray
    p_max: np.ndarray
    p_star: np.ndarray

    @property
    def p_th(self):
        """Upper end of the concave region, ``min(p_max, p_star)``."""
        return np.minimum(self.p_max, self.p_star)

    def __getitem__(self, idx) -> "PowerBounds":
        return PowerBounds(np.asarray(self.p_min)[idx], np.asarray(self.p_max)[idx], np.asarray(self.p_star)[idx])

    def __len__(self) -> int:
        return np.size(self.p_min)


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    budget: float

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        if np.any(p < 0):
            raise ValueError("powers must be nonnegative")
        if p.sum() > self.budget * (1 + RTOL) + 1e-15:
            raise ValueError(f"total power {p.sum():.6g} W exceeds budget {self.budget:.6g} W")
        object.__setattr__(self, "powers", p)

    @property
    def total(self) -> float:
        return float(self.powers.sum())


def sinr(powers, channels: ChannelState) -> np.ndarray:
    """SINR of every user for the power vector ``powers``.

    Interference at user ``n`` is the power sent to all other users,
    attenuated by that user's own path gain and the orthogonality factor.
    """
    p = np.asarray(powers.powers if isinstance(powers, PowerAllocation) else powers, dtype=float)
    G = np.asarray(channels.gain, dtype=float)
    interference = channels.orthogonality * G * (p.sum() - p)
    return channels.proc_gain * G * p / (interference + channels.noise)


def capacity(gamma, bandwidth: float = 1.0):
    """Shannon rate ``bandwidth * ln(1 + gamma)``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("SINR must be nonnegative")
    return bandwidth * np.log1p(gamma)


def sinr_bounds_from_curves(consumed, ceiling, sent, bandwidth: float, slot_length: float, gamma_th: float = 0.0) -> SinrBounds:
    """SINR window for one slot from ``D(t)``, ``B(t)`` and ``X(t-1)``.

    ``gamma_min`` delivers exactly the outstanding deficit ``D(t) - X(t-1)``
    (or the transceiver floor), ``gamma_max`` exactly fills the buffer to
    ``B(t)``.
    """
    consumed, ceiling, sent = (np.asarray(v, dtype=float) for v in (consumed, ceiling, sent))
    volume = bandwidth * slot_length
    headroom = ceiling - sent
    slack = RTOL * np.maximum(np.abs(ceiling), 1.0)
    if np.any(headroom < -slack):
        raise InconsistentStateError("transmission curve already exceeds the overflow curve")
    # headroom within rounding of the ceiling counts as a full buffer
    headroom = np.where(headroom <= slack, 0.0, headroom)
    deficit = np.maximum(consumed - sent, 0.0)
    with np.errstate(over="ignore"):
        g_min = np.maximum(np.expm1(deficit / volume), gamma_th)
        g_max = np.expm1(headroom / volume)
    return SinrBounds(g_min, g_max, gamma_th)


def sinr_bounds(session, t: int, bandwidth: float, gamma_th: float = 0.0) -> SinrBounds:
    if not session.active(t):
        raise ValueError(f"slot {t} outside the session")
    return sinr_bounds_from_curves(
        session.consumption[t], session.overflow[t], session.transmitted[t - 1], bandwidth, session.slot_length, gamma_th
    )


def inflection_point(proc_gain, quality, budget: float):
    """Power where the budget-map capacity turns from concave to convex."""
    L = np.asarray(proc_gain, dtype=float)
    if np.any(L <= 2):
        raise ValueError("processing gain must exceed 2 for an inflection point to exist")
    return (L - 2) / (2 * (L - 1)) * (budget + np.asarray(quality, dtype=float))


def power_bounds(bounds: SinrBounds, channels: ChannelState, budget: float) -> PowerBounds:
    """Per-user power interval that realises the SINR window under the budget map."""
    if budget <= 0:
        raise ValueError("power budget must be positive")
    L = np.asarray(channels.proc_gain, dtype=float)
    a = budget + channels.quality

    def invert(g):
        g = np.asarray(g, dtype=float)
        # a * g / (L + g), written to stay finite for g = inf
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(g > 0, a / (1.0 + L / g), 0.0)
        return out

    return PowerBounds(invert(bounds.gamma_min), invert(bounds.gamma_max), inflection_point(L, channels.quality, budget))


def budget_sinr(p, quality, proc_gain, budget: float):
    p = np.asarray(p, dtype=float)
    return proc_gain * p / (budget - p + quality)


def budget_capacity(p, quality, proc_gain, budget: float):
    """``ln(1 + sinr)`` under the budget map, in nats per Hz-second."""
    p = np.asarray(p, dtype=float)
    a = budget + quality
    # 1 + L p / (a - p) = (a + (L - 1) p) / (a - p)
    return np.log1p(proc_gain * p / (a - p))


def capacity_derivatives(p, channels_or_quality, budget: float, proc_gain=None):
    """First and second derivative of :func:`budget_capacity` in ``p``."""
    if isinstance(channels_or_quality, ChannelState):
        quality, L = channels_or_quality.quality, np.asarray(channels_or_quality.proc_gain, dtype=float)
    else:
        quality, L = np.asarray(channels_or_quality, dtype=float), np.asarray(proc_gain, dtype=float)
    p = np.asarray(p, dtype=float)
    a = budget + quality
    q = (a - p) * (a + (L - 1) * p)
    d1 = L * a / q
    d2 = -L * ((L - 2) * a + 2 * (1 - L) * p) * a / q**2
    return d1, d2


def convex_region_bound(quality, budget: float):
    """Processing gain above which at most two links can sit in the convex region."""
    if budget <= 0:
        raise ValueError("power budget must be positive")
    A = np.asarray(quality, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(A), 2.0, (4 * budget + 6 * A) / (budget + 3 * A))


def sum_log_objective(p, quality, proc_gain, budget: float) -> float:
    return float(np.sum(budget_capacity(p, quality, proc_gain, budget)))
