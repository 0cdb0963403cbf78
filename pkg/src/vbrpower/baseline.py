"""Diversity-aware baseline: fund users in order of channel quality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelState
from .rate_model import PowerBounds

__all__ = ["BaselineAllocation", "allocate_diversity", "equal_split"]


@dataclass(frozen=True)
class BaselineAllocation:
    powers: np.ndarray
    fill_order: np.ndarray


def allocate_diversity(bounds: PowerBounds, channels: ChannelState, budget: float) -> BaselineAllocation:
    """Best channel first, each user up to its buffer-filling power ``p_max``.

    Users are ranked by ascending ``A = noise / gain`` (ties by index); the
    first user the budget cannot fully cover gets what is left and everyone
    after it gets nothing.  Minimum-power floors are ignored.
    """
    p_max = np.atleast_1d(np.asarray(bounds.p_max, dtype=float))
    quality = np.broadcast_to(channels.quality, p_max.shape)
    order = np.lexsort((np.arange(p_max.size), quality))
    powers = np.zeros(p_max.size)
    left = float(budget)
    for n in order:
        if left <= 0:
            break
        powers[n] = min(p_max[n], left)
        left -= powers[n]
    return BaselineAllocation(powers, order)


def equal_split(n_users: int, budget: float) -> np.ndarray:
    return np.full(n_users, budget / n_users) if n_users else np.zeros(0)
