"""Step II: greedy allocation when the buffers cannot all be filled.

With the whole budget in use, each user's capacity depends on its own power
only and is concave below its inflection point, convex above it.  The
allocator drops users whose minimum power cannot be met, then compares
three candidate structures:

1. every link in its concave region, leftover power poured into the
   links with the best marginal rate;
2. the best link pushed into its convex region first, the rest as in 1;
3. the two best links pushed first, the rest as in 1.

and keeps the one with the largest sum of log(1 + SINR).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelState, subset
from .dual_solver import ConcaveProblem, SolverConfig, solve_distributed
from .rate_model import (
    PowerBounds,
    SinrBounds,
    budget_capacity,
    capacity_derivatives,
    convex_region_bound,
    power_bounds,
)
from .step1 import Step1Outcome, allocate_step1

__all__ = [
    "TriageReport",
    "PhaseResult",
    "Step2Result",
    "AllocationResult",
    "NoPhaseSucceededError",
    "triage",
    "marginal_rate",
    "project_box_sum",
    "run_phases",
    "allocate_step2",
    "allocate_proposed",
]

log = logging.getLogger(__name__)

POWER_RTOL = 1e-12


class NoPhaseSucceededError(RuntimeError):
    pass


@dataclass(frozen=True)
class TriageReport:
    retained: np.ndarray
    suspended: np.ndarray
    p_min_sum: float
    gap: float


@dataclass(frozen=True)
class PhaseResult:
    powers: np.ndarray
    objective: float
    phase_id: int
    rounds: list = field(default_factory=list, compare=False, repr=False)
    problem: ConcaveProblem | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Step2Result:
    powers: np.ndarray  # indexed like the input users; suspended users at zero
    triage: TriageReport
    best: PhaseResult
    phases: dict  # phase_id -> PhaseResult (objective -inf when the phase failed)


def triage(bounds: PowerBounds, channels: ChannelState, budget: float) -> TriageReport:
    """Suspend the worst-channel users until the minimum powers fit the budget.

    Users go in descending order of ``A = noise / gain``; among equal ``A``
    the higher index goes first.
    """
    p_min = np.atleast_1d(np.asarray(bounds.p_min, dtype=float))
    quality = np.broadcast_to(channels.quality, p_min.shape)
    idx = np.arange(p_min.size)
    removal = np.lexsort((-idx, -quality))
    kept = np.ones(p_min.size, dtype=bool)
    total = p_min.sum()
    for n in removal:
        if total <= budget:
            break
        kept[n] = False
        total -= p_min[n]
    total = float(p_min[kept].sum())
    return TriageReport(np.flatnonzero(kept), np.flatnonzero(~kept), total, budget - total)


def project_box_sum(y, lo, hi, total: float) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{lo <= x <= hi, sum(x) = total}``.

    The projection is ``clip(y - t, lo, hi)`` for the shift ``t`` that
    meets the total; ``sum(clip(y - t))`` is piecewise linear and
    nonincreasing in ``t`` with kinks at ``y - lo`` and ``y - hi``.
    """
    kinks = np.sort(np.concatenate((y - lo, y - hi)))
    sums = np.clip(y[None, :] - kinks[:, None], lo, hi).sum(axis=1)
    k = np.searchsorted(-sums, -total)
    if k == 0:
        return np.clip(y - kinks[0], lo, hi)
    if k == kinks.size:
        return np.clip(y - kinks[-1], lo, hi)
    t0, t1, s0, s1 = kinks[k - 1], kinks[k], sums[k - 1], sums[k]
    t = t0 if s0 == s1 else t0 + (s0 - total) * (t1 - t0) / (s0 - s1)
    return np.clip(y - t, lo, hi)


def marginal_rate(p_from, gap, bounds: PowerBounds, quality, proc_gain, budget: float):
    """Secant slope of the budget-map capacity from ``p_from`` over the next ``gap`` Watts.

    The interval is cut at ``p_max``; a zero-width interval yields the
    derivative at ``p_from``.
    """
    p_from = np.asarray(p_from, dtype=float)
    end = np.minimum(bounds.p_max, p_from + gap)
    width = end - p_from
    c0 = budget_capacity(p_from, quality, proc_gain, budget)
    c1 = budget_capacity(end, quality, proc_gain, budget)
    slope, _ = capacity_derivatives(p_from, quality, budget, proc_gain)
    with np.errstate(divide="ignore", invalid="ignore"):
        secant = (c1 - c0) / width
    return np.where(width > 0, secant, slope)


class _Cell:
    """Retained users of one slot and the shared helpers of the three phases."""

    def __init__(self, bounds: PowerBounds, quality, proc_gain, budget: float, cfg: SolverConfig):
        self.p_min = np.asarray(bounds.p_min, dtype=float)
        self.p_max = np.asarray(bounds.p_max, dtype=float)
        self.p_star = np.asarray(bounds.p_star, dtype=float)
        self.bounds = bounds
        self.quality = np.broadcast_to(np.asarray(quality, dtype=float), self.p_min.shape)
        self.proc_gain = np.broadcast_to(np.asarray(proc_gain, dtype=float), self.p_min.shape)
        self.budget = budget
        self.cfg = cfg
        self.n = self.p_min.size
        self.convex_capable = self.p_max > self.p_star
        self.rounds = []
        self.problem = None

    def objective(self, p) -> float:
        return float(np.sum(budget_capacity(p, self.quality, self.proc_gain, self.budget)))

    def ranking(self, candidates, p_from, gap):
        """Candidate indices by descending marginal rate (ties: smaller A, then lower index)."""
        cand = np.flatnonzero(candidates)
        if cand.size == 0:
            return cand
        R = marginal_rate(p_from[cand], gap, self.bounds[cand], self.quality[cand], self.proc_gain[cand], self.budget)
        order = np.lexsort((cand, self.quality[cand], -R))
        return cand[order]

    def pour(self, p, members):
        """Hand the unassigned power to members, best marginal rate first, each up to ``p_max``."""
        tiny = POWER_RTOL * self.budget
        for eligible in (members & self.convex_capable, members):
            while True:
                left = self.budget - p.sum()
                room = eligible & (self.p_max - p > 0)
                if left <= tiny or not room.any():
                    break
                top = self.ranking(room, p, left)[0]
                p[top] = min(self.p_max[top], p[top] + left)
        return p

    def concave_then_pour(self, p, members) -> bool:
        """Concave solve over ``members`` with the power not held by others, then pour.

        Members already at or beyond their inflection point stay at
        ``p_min`` during the concave solve.  Returns whether the dual solver
        converged.
        """
        concave = members & (self.p_min < self.p_star)
        fixed = members & ~concave
        p[fixed] = self.p_min[fixed]
        ok = True
        if concave.any():
            available = self.budget - p[~concave].sum()
            prob = ConcaveProblem(
                self.p_min[concave],
                np.minimum(self.p_max, self.p_star)[concave],
                self.quality[concave],
                self.proc_gain[concave],
                self.budget,
                max(available, float(self.p_min[concave].sum())),
            )
            res = solve_distributed(prob, self.cfg)
            self.problem = prob
            self.rounds = res.rounds
            ok = res.converged
            p[concave] = res.powers
        self.pour(p, members)
        return ok

    def polish(self, p, max_iter: int = 500) -> np.ndarray:
        """Local projected-gradient ascent on the full budget-map problem from ``p``.

        Keeps every box and the total at ``budget``; never lowers the
        objective.  Used to move a phase's candidate off the structural
        corner it was built on (e.g. a link stopped at its inflection point).
        """
        lo, hi = self.p_min, self.p_max
        f = self.objective(p)
        step = 1.0 / self.budget
        for _ in range(max_iter):
            g, _ = capacity_derivatives(p, self.quality, self.budget, self.proc_gain)
            s = 4 * step
            while True:
                q = project_box_sum(p + s * g, lo, hi, self.budget)
                fq = self.objective(q)
                if fq >= f + 1e-4 * g @ (q - p) or s < 1e-14 * step:
                    break
                s *= 0.5
            if fq <= f:
                break
            moved = np.abs(q - p).max()
            p, f, step = q, fq, s
            if moved <= 1e-12 * self.budget:
                break
        return p

    def push(self, p, links):
        """Give each link, in turn, as much of the remaining power as its ``p_max`` allows."""
        for n in links:
            left = self.budget - p.sum()
            if left <= 0:
                break
            p[n] = min(self.p_max[n], p[n] + left)
        return p

    def phase(self, phase_id: int, pushed=(), polish: bool = True) -> PhaseResult:
        self.rounds, self.problem = [], None
        p = self.p_min.copy()
        members = np.ones(self.n, dtype=bool)
        self.push(p, pushed)
        members[list(pushed)] = False
        ok = True
        if self.budget - p.sum() > POWER_RTOL * self.budget:
            ok = self.concave_then_pour(p, members)
        if not ok:
            log.warning("phase %d: dual solver did not converge", phase_id)
            return PhaseResult(p, -np.inf, phase_id, self.rounds, self.problem)
        if polish and self.p_max.sum() > self.budget:
            p = self.polish(p)
        return PhaseResult(p, self.objective(p), phase_id, self.rounds, self.problem)


def run_phases(
    report: TriageReport,
    bounds: PowerBounds,
    channels: ChannelState,
    budget: float,
    cfg: SolverConfig = SolverConfig(),
    polish: bool = True,
) -> tuple[PhaseResult, dict]:
    """Evaluate the three phases over the retained users and keep the best.

    ``bounds`` and ``channels`` describe all users; the returned powers are
    indexed like ``report.retained``.  With ``polish`` each phase's
    candidate is first improved by local ascent (see ``_Cell.polish``);
    ``polish=False`` compares the raw phase outputs.
    """
    keep = report.retained
    shape = np.shape(bounds.p_min)
    cell = _Cell(
        bounds[keep],
        np.broadcast_to(channels.quality, shape)[keep],
        np.broadcast_to(channels.proc_gain, shape)[keep],
        budget,
        cfg,
    )
    results = {1: cell.phase(1, polish=polish)}
    gap = budget - cell.p_min.sum()
    top = cell.ranking(cell.convex_capable, cell.p_min, gap)
    if top.size >= 1:
        results[2] = cell.phase(2, top[:1], polish)
    if top.size >= 2 and np.any(cell.proc_gain < convex_region_bound(cell.quality, budget)):
        results[3] = cell.phase(3, top[:2], polish)
    best = max(results.values(), key=lambda r: (r.objective, -r.phase_id))
    if not np.isfinite(best.objective):
        raise NoPhaseSucceededError("every phase failed to converge")
    return best, results


def allocate_step2(
    bounds: PowerBounds,
    channels: ChannelState,
    budget: float,
    cfg: SolverConfig = SolverConfig(),
    polish: bool = True,
) -> Step2Result:
    report = triage(bounds, channels, budget)
    best, phases = run_phases(report, bounds, channels, budget, cfg, polish)
    powers = np.zeros(np.size(bounds.p_min))
    powers[report.retained] = best.powers
    return Step2Result(powers, report, best, phases)


@dataclass(frozen=True)
class AllocationResult:
    """Outcome of one slot of the proposed allocator."""

    powers: np.ndarray
    path: str  # "idle", "step1", "step2-phase{1,2,3}"
    step1: Step1Outcome | None = None
    step2: Step2Result | None = None
    suspended: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def allocate_proposed(
    sinr: SinrBounds,
    channels: ChannelState,
    budget: float,
    cfg: SolverConfig = SolverConfig(),
    polish: bool = True,
) -> AllocationResult:
    """Step I, falling back to Step II, for the users of one slot.

    Users with no room left in their buffer (``gamma_max == 0``) get zero
    power and take no part in either step.
    """
    g_max = np.atleast_1d(np.asarray(sinr.gamma_max, dtype=float))
    n = g_max.size
    powers = np.zeros(n)
    demand = np.flatnonzero(g_max > 0)
    if demand.size == 0:
        return AllocationResult(powers, "idle")
    ch = subset(channels, demand)
    s1 = allocate_step1(g_max[demand], ch, budget)
    if s1.optimal:
        powers[demand] = s1.powers
        return AllocationResult(powers, "step1", s1)
    sub = SinrBounds(np.atleast_1d(sinr.gamma_min)[demand], g_max[demand], sinr.gamma_th)
    pb = power_bounds(sub, ch, budget)
    report = triage(pb, ch, budget)
    keep = report.retained
    if keep.size and pb.p_max[keep].sum() <= budget:
        # every retained buffer can be filled once the suspended users are silent
        s1r = allocate_step1(g_max[demand][keep], subset(ch, keep), budget)
        if s1r.optimal:
            powers[demand[keep]] = s1r.powers
            return AllocationResult(powers, "step1", s1r, suspended=demand[report.suspended])
    best, phases = run_phases(report, pb, ch, budget, cfg, polish)
    local = np.zeros(demand.size)
    local[keep] = best.powers
    powers[demand] = local
    s2 = Step2Result(local, report, best, phases)
    return AllocationResult(powers, f"step2-phase{best.phase_id}", s1, s2, demand[report.suspended])
