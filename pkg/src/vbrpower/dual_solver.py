"""Distributed dual-decomposition solver for the concave-region subproblem.

Problem::

    maximize    sum_n c_n(P_n)
    subject to  p_min_n <= P_n <= p_th_n,   sum_n P_n <= p_total

with ``c_n`` the budget-map capacity, concave on each box.  Prices
``lam`` / ``mu`` (box ends) and ``nu`` (total power) are broadcast by the
base station; every user maximises its own Lagrangian term by projected
gradient ascent and reports the requested power; the base station then
takes a projected gradient step on the dual.  All step sizes come from an
Armijo backtracking search.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rate_model import budget_capacity, capacity_derivatives

__all__ = [
    "ConcaveProblem",
    "SolverConfig",
    "DualState",
    "RoundRecord",
    "DualResult",
    "InfeasibleProblemError",
    "user_subproblem",
    "master_update",
    "solve_distributed",
    "dual_objective",
    "write_round_log",
]


class InfeasibleProblemError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    armijo_shrink: float = 0.5
    armijo_slope: float = 0.01
    initial_step: float = 1.0
    tol: float = 1e-6
    max_iters: int = 200
    max_rounds: int = 500

    def __post_init__(self):
        if not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_shrink must lie in (0, 1)")
        if not 0 < self.armijo_slope < 1:
            raise ValueError("armijo_slope must lie in (0, 1)")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.max_rounds < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass(frozen=True)
class ConcaveProblem:
    """Box- and budget-constrained sum-capacity problem in the concave region.

    ``budget`` is the cell's peak power (it enters every user's SINR map);
    ``p_total`` is the share of it available to these users.
    """

    p_min: np.ndarray
    p_th: np.ndarray
    quality: np.ndarray
    proc_gain: np.ndarray
    budget: float
    p_total: float

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (self.p_min, self.p_th, self.quality, self.proc_gain)]
        n = max(a.size for a in arrs)
        arrs = [np.broadcast_to(a, (n,)).copy() for a in arrs]
        for name, a in zip(("p_min", "p_th", "quality", "proc_gain"), arrs):
            object.__setattr__(self, name, a)
        if np.any(self.p_min < 0) or np.any(self.p_th < self.p_min):
            raise ValueError("need 0 <= p_min <= p_th")

    @property
    def size(self) -> int:
        return self.p_min.size

    def utility(self, p) -> np.ndarray:
        return budget_capacity(p, self.quality, self.proc_gain, self.budget)

    def objective(self, p) -> float:
        return float(np.sum(self.utility(p)))

    def derivatives(self, p):
        return capacity_derivatives(p, self.quality, self.budget, self.proc_gain)

    def feasible(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p)
        slack = tol * max(self.budget, 1.0)
        return bool(
            np.all(p >= self.p_min - slack) and np.all(p <= self.p_th + slack) and p.sum() <= self.p_total + slack
        )


@dataclass
class DualState:
    lam: np.ndarray
    mu: np.ndarray
    nu: float
    iterate: np.ndarray
    iteration: int = 0
    converged: bool = False

    @classmethod
    def initial(cls, problem: ConcaveProblem) -> "DualState":
        n = problem.size
        return cls(np.zeros(n), np.zeros(n), 0.0, problem.p_min.copy())

    def prices(self):
        return self.lam, self.mu, self.nu


@dataclass(frozen=True)
class RoundRecord:
    round: int
    powers: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    nu: float
    objective: float
    dual_objective: float
    residual: float
    probes: int


@dataclass
class DualResult:
    powers: np.ndarray
    state: DualState
    rounds: list = field(default_factory=list)
    objective: float = float("nan")
    subproblems_converged: bool = True

    @property
    def converged(self) -> bool:
        return self.state.converged


Responder = Callable[[np.ndarray, np.ndarray, float, np.ndarray], np.ndarray]


def _lagrangian_terms(problem: ConcaveProblem, p, price):
    return problem.utility(p) + price * p


def user_subproblem(
    problem: ConcaveProblem,
    lam,
    mu,
    nu: float,
    start=None,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[np.ndarray, bool]:
    """Every user's best response ``argmax c_n(P) + (lam_n - mu_n - nu) P`` on its box.

    Projected gradient ascent, one independent iteration per user
    (vectorised).  The raw gradient step is scaled by the inverse local
    curvature of ``c_n`` and by ``cfg.initial_step``; Armijo backtracking
    along the projection arc shrinks it until the sufficient-increase test
    holds.  Returns the powers and whether every user met the tolerance.
    """
    lo, hi = problem.p_min, problem.p_th
    p = lo.copy() if start is None else np.clip(np.asarray(start, dtype=float), lo, hi)
    price = np.asarray(lam, dtype=float) - np.asarray(mu, dtype=float) - nu
    width = hi - lo
    xtol = 1e-13 * (problem.budget + problem.quality)
    done = width <= 0
    sigma, shrink = cfg.armijo_slope, cfg.armijo_shrink
    for _ in range(cfg.max_iters):
        if done.all():
            return p, True
        d1, d2 = problem.derivatives(p)
        grad = d1 + price
        curv = np.maximum(-d2, 0.0)
        # flat curvature: jump straight to the box end the gradient points at
        step = np.divide(grad, curv, out=np.sign(grad) * width, where=curv > 0)
        step = cfg.initial_step * np.clip(step, -width, width)
        # already pinned at a box end with the gradient pointing outward
        pinned = ((p <= lo) & (grad <= 0)) | ((p >= hi) & (grad >= 0))
        done |= pinned
        base = _lagrangian_terms(problem, p, price)
        roundoff = 8 * np.finfo(float).eps * (np.abs(base) + 1.0)
        theta = np.ones_like(p)
        todo = ~done
        new = p.copy()
        while todo.any():
            cand = np.clip(p + theta * step, lo, hi)
            gain = _lagrangian_terms(problem, cand, price) - base
            ok = gain >= sigma * grad * (cand - p) - roundoff
            accept = todo & ok
            new[accept] = cand[accept]
            todo &= ~ok
            theta[todo] *= shrink
            # trial moves below resolution: the point is stationary to rounding
            stuck = todo & (np.abs(theta * step) <= xtol)
            done |= stuck
            todo &= ~stuck
        moved = np.abs(new - p)
        p = new
        done |= moved <= xtol
    return p, bool(done.all())


def dual_objective(problem: ConcaveProblem, lam, mu, nu: float, p) -> float:
    """Lagrangian at the users' responses ``p``: the dual function value."""
    price = lam - mu - nu
    return float(
        np.sum(_lagrangian_terms(problem, p, price)) + np.sum(mu * problem.p_th - lam * problem.p_min) + nu * problem.p_total
    )


def _dual_curvature(problem: ConcaveProblem, p) -> np.ndarray:
    """Per-user ``dP/dprice`` at interior responses (zero at box ends)."""
    _, d2 = problem.derivatives(p)
    interior = (p > problem.p_min) & (p < problem.p_th)
    with np.errstate(divide="ignore"):
        return np.where(interior & (d2 < 0), 1.0 / np.abs(d2), 0.0)


def _breakpoint_step(problem: ConcaveProblem, nu: float, grad: float, lam, mu) -> float | None:
    """Step length that moves ``nu`` to the next price where some response leaves a box end."""
    base = lam - mu
    d_lo, _ = problem.derivatives(problem.p_min)
    d_hi, _ = problem.derivatives(problem.p_th)
    # user n sits at p_th for nu <= d_hi + base and at p_min for nu >= d_lo + base
    kinks = np.concatenate((d_lo + base, d_hi + base))
    direction = -np.sign(grad)
    ahead = kinks[(kinks - nu) * direction > 0]
    if ahead.size == 0:
        return None
    nearest = ahead[np.argmin(np.abs(ahead - nu))]
    return abs(nearest - nu) / abs(grad) * (1 + 1e-9)


def master_update(
    state: DualState,
    requested,
    problem: ConcaveProblem,
    cfg: SolverConfig = SolverConfig(),
    respond: Responder | None = None,
) -> tuple[DualState, np.ndarray, int]:
    """One base-station price update from the users' requested powers.

    Each multiplier family (``lam``, ``mu``, ``nu``) takes a projected
    gradient step on the dual function with its own Armijo-selected step.
    Evaluating a trial step requires the users' responses at the trial
    prices; ``respond`` supplies them (default: :func:`user_subproblem`).

    Returns the new state, the users' responses at the new prices and the
    number of trial broadcasts spent.
    """
    if respond is None:
        respond = lambda lam, mu, nu, start: user_subproblem(problem, lam, mu, nu, start, cfg)[0]
    lam, mu, nu = state.lam.copy(), state.mu.copy(), float(state.nu)
    p = np.asarray(requested, dtype=float)
    value = dual_objective(problem, lam, mu, nu, p)
    probes = 0
    sigma, shrink = cfg.armijo_slope, cfg.armijo_shrink

    def search(current, grad, alpha, make):
        nonlocal probes, value, p
        for _ in range(80):
            trial = np.maximum(current - alpha * grad, 0.0)
            if np.array_equal(trial, current):
                return current
            cand_prices = make(trial)
            q = respond(*cand_prices, p)
            probes += 1
            v = dual_objective(problem, *cand_prices, q)
            if v <= value + sigma * np.sum(grad * (trial - current)):
                value, p = v, q
                return trial
            alpha *= shrink
        return current

    curv = _dual_curvature(problem, p)
    # lambda family: dL/dlam_n = P_n - p_min_n
    g_lam = p - problem.p_min
    if np.any(np.maximum(lam - g_lam, 0.0) != lam):
        a0 = cfg.initial_step / max(curv.max(), 1.0)
        lam = search(lam, g_lam, a0, lambda t: (t, mu, nu))
    g_mu = problem.p_th - p
    if np.any(np.maximum(mu - g_mu, 0.0) != mu):
        a0 = cfg.initial_step / max(curv.max(), 1.0)
        mu = search(mu, g_mu, a0, lambda t: (lam, t, nu))
    curv = _dual_curvature(problem, p)
    g_nu = problem.p_total - p.sum()
    if max(nu - g_nu, 0.0) != nu:
        total = curv.sum()
        if total > 0:
            a0 = cfg.initial_step / total
        else:
            a0 = _breakpoint_step(problem, nu, g_nu, lam, mu) or cfg.initial_step
        nu = float(search(np.array([nu]), np.array([g_nu]), a0, lambda t: (lam, mu, float(t[0])))[0])
    new = DualState(lam, mu, nu, p, state.iteration + 1, False)
    return new, p, probes


def _residual(problem: ConcaveProblem, state: DualState, prev: DualState, p) -> float:
    gap = problem.p_total - p.sum()
    primal = max(0.0, -gap)
    slack = max(
        state.nu * abs(gap),
        float(np.max(state.lam * (p - problem.p_min), initial=0.0)),
        float(np.max(state.mu * (problem.p_th - p), initial=0.0)),
    )
    # natural residual of the dual: distance from nu to its projected-gradient image
    natural = abs(state.nu - max(state.nu - gap, 0.0))
    moved = max(
        abs(state.nu - prev.nu),
        float(np.max(np.abs(state.lam - prev.lam), initial=0.0)),
        float(np.max(np.abs(state.mu - prev.mu), initial=0.0)),
    )
    return max(primal, slack, natural, moved)


def _restore_feasibility(problem: ConcaveProblem, p) -> np.ndarray:
    """Scale the power above ``p_min`` down so that the budget holds."""
    p = np.clip(p, problem.p_min, problem.p_th)
    excess = p.sum() - problem.p_total
    if excess <= 0:
        return p
    above = p - problem.p_min
    room = problem.p_total - problem.p_min.sum()
    return problem.p_min + above * (room / above.sum())


def solve_distributed(problem: ConcaveProblem, cfg: SolverConfig = SolverConfig(), state: DualState | None = None) -> DualResult:
    """Run the broadcast / respond / update rounds until the prices settle.

    Stops when the largest of the primal infeasibility, complementary
    slackness, dual natural residual and price movement drops below
    ``cfg.tol``, or after ``cfg.max_rounds`` rounds (non-converged).  The
    returned powers always satisfy every constraint.
    """
    if problem.p_min.sum() > problem.p_total * (1 + 1e-12):
        raise InfeasibleProblemError(
            f"minimum powers need {problem.p_min.sum():.6g} W but only {problem.p_total:.6g} W available"
        )
    state = DualState.initial(problem) if state is None else state
    p, sub_ok = user_subproblem(problem, state.lam, state.mu, state.nu, state.iterate, cfg)
    all_sub_ok = sub_ok

    def respond(lam, mu, nu, start):
        nonlocal all_sub_ok
        q, ok = user_subproblem(problem, lam, mu, nu, start, cfg)
        all_sub_ok &= ok
        return q

    rounds = []
    best = None
    for r in range(1, cfg.max_rounds + 1):
        prev = state
        state, p, probes = master_update(state, p, problem, cfg, respond)
        res = _residual(problem, state, prev, p)
        rounds.append(
            RoundRecord(
                r, p.copy(), state.lam.copy(), state.mu.copy(), state.nu,
                problem.objective(p), dual_objective(problem, *state.prices(), p), res, probes,
            )
        )
        if problem.feasible(p) and (best is None or problem.objective(p) > problem.objective(best)):
            best = p.copy()
        if res < cfg.tol:
            state.converged = True
            break
    final = p if state.converged or best is None else best
    final = _restore_feasibility(problem, final)
    state.iterate = final
    return DualResult(final, state, rounds, problem.objective(final), all_sub_ok)


def write_round_log(rounds: Sequence[RoundRecord], fh=None) -> str:
    """CSV with one row per round: powers, prices and objectives."""
    out = fh if fh is not None else io.StringIO()
    n = rounds[0].powers.size if rounds else 0
    w = csv.writer(out, lineterminator="\n")
    w.writerow(
        ["round"] + [f"p{k}" for k in range(n)] + [f"lambda{k}" for k in range(n)] + [f"mu{k}" for k in range(n)]
        + ["nu", "objective", "dual_objective", "residual", "probes"]
    )
    for rec in rounds:
        w.writerow(
            [rec.round] + [repr(float(v)) for v in rec.powers] + [repr(float(v)) for v in rec.lam]
            + [repr(float(v)) for v in rec.mu]
            + [repr(float(rec.nu)), repr(rec.objective), repr(rec.dual_objective), repr(rec.residual), rec.probes]
        )
    return out.getvalue() if fh is None else ""
