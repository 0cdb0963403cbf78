"""Step I: can every user be served at its buffer-filling SINR at once?

Reaching ``gamma_max`` for all users is a linear system ``(I - F) P = u``.
It has a positive solution iff the spectral radius of the nonnegative
matrix ``F`` is below one; the solution is then optimal whenever it fits
in the power budget.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, subset

__all__ = [
    "SinrSystem",
    "Step1Status",
    "Step1Outcome",
    "IllConditionedError",
    "build_system",
    "spectral_radius",
    "solve_step1",
    "allocate_step1",
]

RADIUS_TOL = 1e-10
RADIUS_MAX_ITER = 10_000
# radii this close to one are treated as infeasible
RADIUS_MARGIN = 1e-8


class IllConditionedError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SinrSystem:
    F: np.ndarray
    u: np.ndarray

    @property
    def size(self) -> int:
        return self.u.size


class Step1Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE_SPECTRAL = "infeasible_spectral"
    EXCEEDS_BUDGET = "exceeds_budget"


@dataclass(frozen=True)
class Step1Outcome:
    status: Step1Status
    spectral_radius: float
    powers: np.ndarray | None = None
    radius_converged: bool = True

    @property
    def optimal(self) -> bool:
        return self.status is Step1Status.OPTIMAL


def build_system(gamma_max, channels: ChannelState) -> SinrSystem:
    """Matrix form of ``sinr_n(P) = gamma_max_n`` for all users."""
    g = np.atleast_1d(np.asarray(gamma_max, dtype=float))
    if g.size < 1:
        raise ValueError("need at least one user")
    L = np.broadcast_to(np.asarray(channels.proc_gain, dtype=float), g.shape)
    G = np.broadcast_to(np.asarray(channels.gain, dtype=float), g.shape)
    eta = np.broadcast_to(np.asarray(channels.noise, dtype=float), g.shape)
    ratio = channels.orthogonality * g / L
    F = np.repeat(ratio[:, None], g.size, axis=1)
    np.fill_diagonal(F, 0.0)
    u = eta * g / (L * G)
    return SinrSystem(F, u)


def spectral_radius(
    F, tol: float = RADIUS_TOL, max_iter: int = RADIUS_MAX_ITER, threshold: float | None = None
) -> tuple[float, bool]:
    """Perron root of a nonnegative matrix by power iteration.

    Iterates on ``F + I`` (same Perron vector, aperiodic) and stops when
    the Collatz-Wielandt lower and upper bounds on the radius of ``F``
    agree to ``tol``.  Returns
    ``(radius, converged)``; on hitting ``max_iter`` the midpoint of the
    last bracket is reported with ``converged=False``.

    With ``threshold`` set, iteration also stops as soon as the bracket lies
    entirely on one side of it.  The bound on that side is returned (the
    lower bound when the radius is at least ``threshold``, the upper bound
    otherwise), which is enough to classify the matrix and avoids the slow
    convergence seen when the radius is far above one.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("F must be square")
    if np.any(F < 0):
        raise ValueError("F must be nonnegative")
    n = F.shape[0]
    if not np.any(F):
        return 0.0, True
    # work on F / scale so huge entries (very large target SINRs) cannot overflow
    scale = F.max()
    Fs = F / scale
    x = np.ones(n)
    lo = hi = np.nan
    for _ in range(max_iter):
        z = Fs @ x
        pos = x > 0
        ratios = z[pos] / x[pos]
        lo, hi = ratios.min(), ratios.max()
        # the lower bound holds for any nonnegative vector, so dropping
        # negligible components can only tighten it
        big = x > 1e-12 * x.max()
        if not big.all():
            zb = Fs[:, big] @ x[big]
            lo = max(lo, (zb[big] / x[big]).min())
        if hi - lo <= tol * hi:
            return float(0.5 * (lo + hi) * scale), True
        if threshold is not None:
            if lo * scale >= threshold:
                return float(lo * scale), True
            if hi * scale < threshold:
                return float(hi * scale), True
        # iterate on F + I: same Perron vector, and the shift makes it aperiodic
        y = z + x
        x = y / np.linalg.norm(y)
    return float(0.5 * (lo + hi) * scale), False


def solve_step1(system: SinrSystem, budget: float) -> Step1Outcome:
    """Classify the system and, when solvable, return its power vector."""
    F, u = system.F, system.u
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(u))):
        return Step1Outcome(Step1Status.INFEASIBLE_SPECTRAL, float("inf"))
    radius, ok = spectral_radius(F, threshold=1.0 - RADIUS_MARGIN)
    if radius >= 1.0 - RADIUS_MARGIN:
        return Step1Outcome(Step1Status.INFEASIBLE_SPECTRAL, radius, radius_converged=ok)
    P = np.linalg.solve(np.eye(system.size) - F, u)
    if not np.all(np.isfinite(P)):
        raise IllConditionedError(f"I - F is numerically singular (radius {radius:.3g})")
    if np.any(P[u > 0] <= 0) or np.any(P < 0):
        # mathematically impossible below radius one; treat as infeasible
        return Step1Outcome(Step1Status.INFEASIBLE_SPECTRAL, radius, radius_converged=ok)
    status = Step1Status.OPTIMAL if P.sum() <= budget else Step1Status.EXCEEDS_BUDGET
    return Step1Outcome(status, radius, P, ok)


def allocate_step1(gamma_max, channels: ChannelState, budget: float) -> Step1Outcome:
    """Step I over a cell, with zero-demand users (``gamma_max == 0``) held at zero power.

    The returned ``powers`` are indexed like ``gamma_max``.
    """
    g = np.asarray(gamma_max, dtype=float)
    demand = np.flatnonzero(g > 0)
    full = np.zeros(g.size)
    if demand.size == 0:
        return Step1Outcome(Step1Status.OPTIMAL, 0.0, full)
    out = solve_step1(build_system(g[demand], subset(channels, demand)), budget)
    if out.powers is None:
        return out
    full[demand] = out.powers
    return Step1Outcome(out.status, out.spectral_radius, full, out.radius_converged)
