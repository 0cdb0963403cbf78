"""Downlink channel states: path loss, log-normal shadowing and thermal noise."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.constants import Boltzmann

__all__ = ["ChannelState", "ChannelModel", "draw_channel", "thermal_noise", "draw_distances", "subset"]


def thermal_noise(temperature: float = 290.0, bandwidth: float = 1e6) -> float:
    """Noise power ``k_B * T0 * B_w`` in Watts."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return Boltzmann * temperature * bandwidth


@dataclass(frozen=True)
class ChannelState:
    """Link parameters for one slot.

    Fields hold either scalars (one user) or equal-length arrays (all users of
    the cell); indexing an array state returns the scalar state of one user.
    """

    gain: np.ndarray | float
    noise: np.ndarray | float
    proc_gain: np.ndarray | float = 128.0
    orthogonality: float = 1.0
    distance: np.ndarray | float = np.nan

    def __post_init__(self):
        if np.any(np.asarray(self.gain) <= 0):
            raise ValueError("path gain must be positive")
        if np.any(np.asarray(self.noise) <= 0):
            raise ValueError("noise power must be positive")
        if np.any(np.asarray(self.proc_gain) < 1):
            raise ValueError("processing gain must be >= 1")
        if not 0.0 <= self.orthogonality <= 1.0:
            raise ValueError("orthogonality must lie in [0, 1]")

    @property
    def quality(self):
        """Noise-to-gain ratio ``A = eta / G`` (Watts); smaller is better."""
        return np.asarray(self.noise) / np.asarray(self.gain)

    def __len__(self) -> int:
        return np.size(self.gain)

    def __getitem__(self, idx) -> "ChannelState":
        pick = lambda v: np.broadcast_to(np.asarray(v, dtype=float), np.shape(self.gain))[idx]
        return ChannelState(pick(self.gain), pick(self.noise), pick(self.proc_gain), self.orthogonality, pick(self.distance))

    @classmethod
    def stack(cls, states: Sequence["ChannelState"]) -> "ChannelState":
        betas = {s.orthogonality for s in states}
        if len(betas) != 1:
            raise ValueError("all users of a cell share one orthogonality factor")
        return cls(
            np.array([s.gain for s in states], dtype=float),
            np.array([s.noise for s in states], dtype=float),
            np.array([s.proc_gain for s in states], dtype=float),
            betas.pop(),
            np.array([s.distance for s in states], dtype=float),
        )


def draw_channel(
    distance: float,
    shadow_sigma_db: float,
    rng: np.random.Generator | None = None,
    *,
    noise: float | None = None,
    proc_gain: float = 128.0,
    pathloss_exponent: float = 4.0,
    orthogonality: float = 1.0,
) -> ChannelState:
    """Sample ``G = d**-n * 10**(s/10)`` with ``s ~ N(0, sigma_dB)``."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    shadow = 0.0
    if shadow_sigma_db > 0:
        if rng is None:
            raise ValueError("shadowing needs a random generator")
        shadow = rng.normal(0.0, shadow_sigma_db)
    gain = distance ** (-pathloss_exponent) * 10.0 ** (shadow / 10.0)
    return ChannelState(gain, thermal_noise() if noise is None else noise, proc_gain, orthogonality, distance)


def draw_distances(n_users: int, seed: int, low: float = 100.0, high: float = 1000.0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xD157,)))
    return rng.uniform(low, high, n_users)


class ChannelModel:
    """Per-slot channel generator for a cell.

    Each user owns an RNG stream derived from the master seed, so a user's
    shadowing sequence does not depend on how many other users exist.  A
    shadowing draw is held for ``coherence_slots`` consecutive slots.
    """

    def __init__(
        self,
        distances: Sequence[float],
        seed: int = 0,
        shadow_sigma_db: float = 8.0,
        pathloss_exponent: float = 4.0,
        temperature_k: float = 290.0,
        bandwidth_hz: float = 1e6,
        proc_gain: float | Sequence[float] = 128.0,
        orthogonality: float = 1.0,
        coherence_slots: int = 1,
    ):
        self.distances = np.asarray(distances, dtype=float)
        if np.any(self.distances <= 0):
            raise ValueError("distances must be positive")
        if coherence_slots < 1:
            raise ValueError("coherence_slots must be >= 1")
        n = self.distances.size
        self.shadow_sigma_db = float(shadow_sigma_db)
        self.pathloss_exponent = float(pathloss_exponent)
        self.noise = thermal_noise(temperature_k, bandwidth_hz)
        self.proc_gain = np.broadcast_to(np.asarray(proc_gain, dtype=float), (n,)).copy()
        self.orthogonality = float(orthogonality)
        self.coherence_slots = int(coherence_slots)
        self._rngs = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,))) for k in range(n)]
        self._shadow = np.zeros(n)
        self._slot = 0
        self._mean_gain = self.distances ** (-self.pathloss_exponent)

    def next_slot(self) -> ChannelState:
        if self._slot % self.coherence_slots == 0 and self.shadow_sigma_db > 0:
            self._shadow = np.array([r.normal(0.0, self.shadow_sigma_db) for r in self._rngs])
        self._slot += 1
        gain = self._mean_gain * 10.0 ** (self._shadow / 10.0)
        return ChannelState(gain, np.full(gain.size, self.noise), self.proc_gain, self.orthogonality, self.distances)


def subset(state: ChannelState, idx) -> ChannelState:
    """Array state restricted to the users in ``idx``."""
    idx = np.asarray(idx)
    return replace(
        state,
        gain=np.asarray(state.gain)[idx],
        noise=np.broadcast_to(state.noise, np.shape(state.gain))[idx],
        proc_gain=np.broadcast_to(state.proc_gain, np.shape(state.gain))[idx],
        distance=np.broadcast_to(state.distance, np.shape(state.gain))[idx],
    )
