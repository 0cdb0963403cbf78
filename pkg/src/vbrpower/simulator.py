"""Slot-by-slot simulation of the cell and its playout buffers."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .baseline import allocate_diversity, equal_split
from .channel import ChannelModel, ChannelState, draw_distances, subset
from .config import RunConfig
from .dual_solver import ConcaveProblem, InfeasibleProblemError, write_round_log
from .rate_model import InconsistentStateError, SinrBounds, capacity, power_bounds, sinr, sinr_bounds_from_curves
from .step1 import allocate_step1
from .step2 import NoPhaseSucceededError, allocate_proposed
from .traces import BUNDLED_TITLES, FrameTrace, VideoSession, bundled_trace, load_trace

__all__ = ["SlotRecord", "RunSummary", "Simulation", "utilization_series", "build_sessions", "SLOT_COLUMNS"]

log = logging.getLogger(__name__)

SLOT_COLUMNS = ("slot", "user", "power_w", "sinr", "delivered_bits", "buffer_bits", "utilization", "event", "path")


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    users: np.ndarray  # indices of the sessions active in this slot
    power: np.ndarray
    sinr: np.ndarray
    delivered: np.ndarray
    buffer: np.ndarray
    utilization: np.ndarray
    events: tuple  # per active user: None | "underflow" | "overflow"
    path: str

    def rows(self) -> Iterable[tuple]:
        for k, n in enumerate(self.users):
            yield (
                self.slot, int(n), repr(float(self.power[k])), repr(float(self.sinr[k])),
                repr(float(self.delivered[k])), repr(float(self.buffer[k])), repr(float(self.utilization[k])),
                self.events[k] or "none", self.path,
            )


@dataclass
class RunSummary:
    total_slots: int
    user_slots: int
    underflow_fraction: float
    underflow_count: int
    overflow_count: int
    mean_utilization: float
    per_user_stalls: list
    path_counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "total_slots": self.total_slots,
            "user_slots": self.user_slots,
            "underflow_fraction": self.underflow_fraction,
            "underflow_count": self.underflow_count,
            "overflow_count": self.overflow_count,
            "mean_utilization": self.mean_utilization,
            "per_user_stalls": list(self.per_user_stalls),
            "path_counts": dict(sorted(self.path_counts.items())),
        }

    def text(self) -> str:
        d = self.as_dict()
        d["per_user_stalls"] = " ".join(map(str, d["per_user_stalls"]))
        d["path_counts"] = " ".join(f"{k}={v}" for k, v in d["path_counts"].items())
        width = max(map(len, d))
        return "\n".join(f"{k:<{width}}  {v}" for k, v in d.items())


def utilization_series(records: Sequence[SlotRecord]) -> np.ndarray:
    """Mean ``(X - D) / b`` over the active users of every slot."""
    if not records:
        raise ValueError("no slot records")
    return np.array([r.utilization.mean() if r.users.size else np.nan for r in records])


def _trace_for(name: str, cache: dict) -> FrameTrace:
    if name not in cache:
        cache[name] = bundled_trace(name) if name in BUNDLED_TITLES else load_trace(name)
    return cache[name]


def build_sessions(cfg: RunConfig) -> tuple[list[VideoSession], np.ndarray]:
    """Sessions and user distances for a run, with per-user pins from ``cfg.user_specs`` applied."""
    cache: dict = {}
    n = cfg.users
    distances = draw_distances(n, cfg.seed, cfg.distance_min_m, cfg.distance_max_m)
    offset_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0x0FF5E7,)))
    raw_offsets = offset_rng.random(n)
    sessions = []
    rates = set()
    for k in range(n):
        spec = cfg.user_specs.get(k)
        name = spec.trace if spec and spec.trace else cfg.traces[k % len(cfg.traces)]
        trace = _trace_for(name, cache)
        rates.add(trace.frame_rate)
        if spec and spec.offset is not None:
            offset = spec.offset
        elif cfg.offsets == "random":
            offset = int(raw_offsets[k] * len(trace))
        else:
            offset = 0
        if spec and spec.distance_m is not None:
            distances[k] = spec.distance_m
        sessions.append(VideoSession.from_trace(trace, buffer_multiplier=cfg.buffer_multiplier, offset=offset))
    if len(rates) != 1:
        raise ValueError(f"all traces must share one frame rate, got {sorted(rates)}")
    return sessions, distances


class Simulation:
    """Runs the allocator of ``cfg`` over every slot of the configured sessions."""

    def __init__(self, cfg: RunConfig, sessions: list[VideoSession] | None = None, distances=None):
        self.cfg = cfg.validate()
        if sessions is None:
            sessions, built = build_sessions(cfg)
            distances = built if distances is None else distances
        self.sessions = sessions
        self.slot_length = sessions[0].slot_length
        if any(abs(s.slot_length - self.slot_length) > 1e-12 for s in sessions):
            raise ValueError("sessions must share one slot length")
        self.distances = np.asarray(distances, dtype=float)
        self.channels = ChannelModel(
            self.distances,
            seed=cfg.seed,
            shadow_sigma_db=cfg.shadow_sigma_db,
            pathloss_exponent=cfg.pathloss_exponent,
            temperature_k=cfg.temperature_k,
            bandwidth_hz=cfg.bandwidth_hz,
            proc_gain=cfg.proc_gain,
            orthogonality=cfg.orthogonality,
            coherence_slots=cfg.coherence_slots,
        )
        self.records: list[SlotRecord] = []
        self.rounds: list = []  # (slot, rounds) of concave solves kept for the round log
        self.last_concave: tuple[int, ConcaveProblem] | None = None
        self.t = 0

    @property
    def horizon(self) -> int:
        longest = max(s.total_frames for s in self.sessions)
        return longest if self.cfg.slots is None else min(self.cfg.slots, longest)

    def _allocate(self, t, sb, ch: ChannelState) -> tuple[np.ndarray, str]:
        budget = self.cfg.peak_power_w
        if self.cfg.allocator == "proposed":
            res = allocate_proposed(sb, ch, budget, self.cfg.solver, self.cfg.polish)
            if res.step2 is not None:
                best = res.step2.best
                if best.problem is not None:
                    self.last_concave = (t, best.problem)
                if best.rounds:
                    if self.cfg.log_all_rounds:
                        self.rounds.append((t, best.rounds))
                    else:
                        self.rounds = [(t, best.rounds)]
            return res.powers, res.path
        g_max = np.asarray(sb.gamma_max)
        powers = np.zeros(g_max.size)
        demand = np.flatnonzero(g_max > 0)
        if demand.size == 0:
            return powers, "idle"
        chd = subset(ch, demand)
        s1 = allocate_step1(g_max[demand], chd, budget)
        if s1.optimal:
            powers[demand] = s1.powers
            return powers, "step1"
        pb = power_bounds(SinrBounds(np.asarray(sb.gamma_min)[demand], g_max[demand], sb.gamma_th), chd, budget)
        powers[demand] = allocate_diversity(pb, chd, budget).powers
        return powers, "baseline"

    def step(self) -> SlotRecord:
        t = self.t + 1
        cfg = self.cfg
        ch_all = self.channels.next_slot()
        users = np.array([k for k, s in enumerate(self.sessions) if s.active(t)], dtype=int)
        ch = subset(ch_all, users)
        sess = [self.sessions[k] for k in users]
        D = np.array([s.consumption[t] for s in sess])
        B = np.array([s.overflow[t] for s in sess])
        X = np.array([s.transmitted[t - 1] for s in sess])
        sb = sinr_bounds_from_curves(D, B, X, cfg.bandwidth_hz, self.slot_length, cfg.gamma_th)
        try:
            powers, path = self._allocate(t, sb, ch)
        # ArithmeticError covers an ill-conditioned Step I solve
        except (ArithmeticError, NoPhaseSucceededError, InfeasibleProblemError, InconsistentStateError) as exc:
            log.warning("slot %d: allocation failed (%s); equal split", t, exc)
            powers = np.zeros(users.size)
            demand = np.asarray(sb.gamma_max) > 0
            powers[demand] = equal_split(int(demand.sum()), cfg.peak_power_w)
            path = "fallback"
        gamma = sinr(powers, ch)
        delivered = capacity(gamma, cfg.bandwidth_hz) * self.slot_length
        events = tuple(s.record_delivery(t, float(bits)) for s, bits in zip(sess, delivered))
        level = np.array([s.buffer_level(t) for s in sess])
        util = level / np.array([s.buffer_size for s in sess])
        rec = SlotRecord(t, users, powers, gamma, delivered, level, util, events, path)
        self.records.append(rec)
        self.t = t
        return rec

    def run(self, slots: int | None = None, csv_file=None) -> RunSummary:
        """Advance ``slots`` slots (default: to the horizon) and summarise.

        When ``csv_file`` is given, per-user slot rows are streamed to it.
        """
        end = self.horizon if slots is None else min(self.t + slots, self.horizon)
        writer = None
        if csv_file is not None:
            writer = csv.writer(csv_file, lineterminator="\n")
            if self.t == 0:
                writer.writerow(SLOT_COLUMNS)
        while self.t < end:
            rec = self.step()
            if writer is not None:
                writer.writerows(rec.rows())
        return self.summary()

    def summary(self) -> RunSummary:
        user_slots = sum(r.users.size for r in self.records)
        under = sum(e == "underflow" for r in self.records for e in r.events)
        over = sum(e == "overflow" for r in self.records for e in r.events)
        stalls = [0] * len(self.sessions)
        paths: dict = {}
        for r in self.records:
            paths[r.path] = paths.get(r.path, 0) + 1
            for n, e in zip(r.users, r.events):
                if e == "underflow":
                    stalls[n] += 1
        util = utilization_series(self.records) if self.records else np.array([np.nan])
        return RunSummary(
            total_slots=len(self.records),
            user_slots=user_slots,
            underflow_fraction=under / user_slots if user_slots else 0.0,
            underflow_count=under,
            overflow_count=over,
            mean_utilization=float(np.nanmean(util)),
            per_user_stalls=stalls,
            path_counts=paths,
        )

    def write_outputs(self, out_dir: str | Path, summary: RunSummary) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary.as_dict(), indent=2) + "\n")
        with (out / "rounds.csv").open("w") as fh:
            if self.cfg.log_all_rounds:
                for slot, rounds in self.rounds:
                    fh.write(f"# slot {slot}\n")
                    write_round_log(rounds, fh)
            elif self.rounds:
                slot, rounds = self.rounds[-1]
                fh.write(f"# slot {slot}\n")
                write_round_log(rounds, fh)
