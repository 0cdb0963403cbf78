"""Frame-size traces and the cumulative curves of the deterministic VBR model.

A session is described by three cumulative curves indexed by slot ``t``:

* ``consumption`` (D): bits the decoder has consumed by the end of slot ``t``.
* ``overflow`` (B): most bits the client can hold by slot ``t`` without
  overflowing its playout buffer.
* ``transmitted`` (X): bits actually delivered so far.

A schedule is feasible when ``D(t) <= X(t) <= B(t)`` for every slot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "FrameTrace",
    "VideoSession",
    "DeliveryEvent",
    "build_consumption",
    "build_overflow",
    "load_trace",
    "save_trace",
    "synthetic_trace",
    "bundled_trace",
    "BUNDLED_TITLES",
]

BUNDLED_TITLES = ("news", "movie", "sports")

# Relative slack used when classifying a delivery as an overflow/underflow.
EVENT_RTOL = 1e-9

_HEADER_RE = re.compile(r"(\w+)\s*=\s*([^\s]+)")


@dataclass(frozen=True)
class FrameTrace:
    """Per-frame sizes of a stored video, in bits."""

    frame_sizes: np.ndarray
    frame_rate: float = 30.0
    title: str = ""

    def __post_init__(self):
        sizes = np.asarray(self.frame_sizes, dtype=float)
        if sizes.ndim != 1 or sizes.size == 0:
            raise ValueError("trace must contain at least one frame")
        if np.any(sizes <= 0) or not np.all(np.isfinite(sizes)):
            raise ValueError("frame sizes must be positive and finite")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        sizes.setflags(write=False)
        object.__setattr__(self, "frame_sizes", sizes)

    def __len__(self) -> int:
        return self.frame_sizes.size

    @property
    def max_frame(self) -> float:
        return float(self.frame_sizes.max())

    def rotated(self, offset: int) -> "FrameTrace":
        """Cyclically shift the trace so that playback starts at frame ``offset``."""
        offset = int(offset) % len(self)
        if offset == 0:
            return self
        return FrameTrace(np.roll(self.frame_sizes, -offset), self.frame_rate, self.title)


def build_consumption(trace: FrameTrace | Sequence[float]) -> np.ndarray:
    """Return D with ``D[0] = 0`` and ``D[t]`` the total size of frames 1..t."""
    sizes = trace.frame_sizes if isinstance(trace, FrameTrace) else np.asarray(trace, dtype=float)
    if sizes.size == 0:
        raise ValueError("cannot build a consumption curve from an empty trace")
    return np.concatenate(([0.0], np.cumsum(sizes, dtype=float)))


def build_overflow(consumption: np.ndarray, buffer_size: float, total_frames: int | None = None) -> np.ndarray:
    """Cumulative overflow curve ``B(t) = min(D(t-1) + b, D(T))``.

    ``D(-1)`` is taken as zero, so ``B(0) = min(b, D(T))``: the buffer may be
    prefilled before playout begins.
    """
    if buffer_size <= 0:
        raise ValueError("buffer_size must be positive")
    D = np.asarray(consumption, dtype=float)
    T = D.size - 1 if total_frames is None else int(total_frames)
    D = D[: T + 1]
    shifted = np.concatenate(([0.0], D[:-1]))
    return np.minimum(shifted + buffer_size, D[T])


@dataclass(frozen=True)
class DeliveryEvent:
    slot: int
    kind: str  # "underflow" | "overflow"
    amount: float  # bits outside [D(t), B(t)]


@dataclass
class VideoSession:
    """Curves of one streaming session plus the live transmission record."""

    consumption: np.ndarray
    buffer_size: float
    slot_length: float
    title: str = ""
    overflow: np.ndarray = field(default=None)
    transmitted: np.ndarray = field(default=None)
    events: list = field(default_factory=list)
    last_slot: int = 0

    def __post_init__(self):
        self.consumption = np.asarray(self.consumption, dtype=float)
        if self.consumption.size < 2:
            raise ValueError("session needs at least one frame")
        if self.slot_length <= 0:
            raise ValueError("slot_length must be positive")
        if self.overflow is None:
            self.overflow = build_overflow(self.consumption, self.buffer_size)
        if self.transmitted is None:
            self.transmitted = np.zeros_like(self.consumption)

    @classmethod
    def from_trace(
        cls,
        trace: FrameTrace,
        buffer_size: float | None = None,
        buffer_multiplier: float = 1.5,
        offset: int = 0,
    ) -> "VideoSession":
        """Session for ``trace``; the buffer defaults to ``buffer_multiplier`` x the largest frame."""
        if buffer_size is None:
            buffer_size = buffer_multiplier * trace.max_frame
        trace = trace.rotated(offset)
        return cls(build_consumption(trace), float(buffer_size), 1.0 / trace.frame_rate, trace.title)

    @property
    def total_frames(self) -> int:
        return self.consumption.size - 1

    @property
    def total_bits(self) -> float:
        return float(self.consumption[-1])

    def active(self, t: int) -> bool:
        return 1 <= t <= self.total_frames

    def tolerance(self) -> float:
        return EVENT_RTOL * max(self.total_bits, 1.0)

    def record_delivery(self, t: int, bits: float) -> str | None:
        """Append ``bits`` delivered in slot ``t`` and classify the outcome.

        Returns ``"overflow"``, ``"underflow"`` or ``None``.  Events are
        logged on the session and never abort anything.
        """
        if bits < 0:
            raise ValueError("delivered bits must be nonnegative")
        if t != self.last_slot + 1:
            raise ValueError(f"slot {t} recorded out of order (last was {self.last_slot})")
        if not self.active(t):
            raise ValueError(f"slot {t} outside session of {self.total_frames} frames")
        x = self.transmitted[t - 1] + bits
        self.transmitted[t] = x
        self.last_slot = t
        tol = self.tolerance()
        kind = None
        if x > self.overflow[t] + tol:
            kind, amount = "overflow", x - self.overflow[t]
        elif x < self.consumption[t] - tol:
            kind, amount = "underflow", self.consumption[t] - x
        if kind is not None:
            self.events.append(DeliveryEvent(t, kind, float(amount)))
        return kind

    def buffer_level(self, t: int) -> float:
        return float(self.transmitted[t] - self.consumption[t])

    def utilization(self, t: int) -> float:
        return self.buffer_level(t) / self.buffer_size

    def event_count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)


def load_trace(path: str | Path, unit: str | None = None, frame_rate: float | None = None, title: str | None = None) -> FrameTrace:
    """Read a trace file: one frame size per line, optional ``# fps=.. unit=..`` header.

    Explicit ``unit``/``frame_rate`` arguments override the header.  Sizes
    in bytes are converted to bits on ingest.
    """
    path = Path(path)
    header = {}
    sizes = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                header.update(dict(_HEADER_RE.findall(line)))
                continue
            try:
                sizes.append(float(line.split()[0]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a frame size: {line!r}") from None
    unit = unit or header.get("unit", "bits")
    if unit not in ("bits", "bytes"):
        raise ValueError(f"{path}: unknown unit {unit!r}")
    fps = frame_rate or float(header.get("fps", 30.0))
    arr = np.asarray(sizes, dtype=float)
    if unit == "bytes":
        arr = arr * 8
    return FrameTrace(arr, fps, title or header.get("title", path.stem))


def save_trace(trace: FrameTrace, path: str | Path, unit: str = "bits") -> None:
    sizes = trace.frame_sizes / 8 if unit == "bytes" else trace.frame_sizes
    with Path(path).open("w") as fh:
        fh.write(f"# fps={trace.frame_rate:g} unit={unit} title={trace.title or 'trace'}\n")
        for s in sizes:
            fh.write(f"{int(round(s))}\n")


def synthetic_trace(
    n_frames: int = 10_000,
    seed: int = 0,
    mean_bits: float = 16_000.0,
    frame_rate: float = 30.0,
    gop: str = "IBBPBBPBBPBB",
    title: str = "synthetic",
) -> FrameTrace:
    """GOP-structured VBR trace with slowly varying scene activity.

    Frame sizes are lognormal around type-dependent means (I > P > B) and
    modulated by an AR(1) scene-complexity process, which gives the bursty,
    correlated profile typical of MPEG traces.  Sizes are whole bytes.
    """
    rng = np.random.default_rng(seed)
    weights = {"I": 4.0, "P": 1.6, "B": 0.6}
    pattern = np.array([weights[c] for c in gop])
    types = np.resize(pattern, n_frames)
    scene = np.empty(n_frames)
    level = 0.0
    for k in range(n_frames):
        level = 0.995 * level + 0.05 * rng.standard_normal()
        scene[k] = level
    noise = rng.normal(0.0, 0.25, n_frames)
    raw = types * np.exp(scene + noise)
    sizes = raw * (mean_bits / raw.mean())
    byte_sizes = np.maximum(np.round(sizes / 8), 1.0)
    return FrameTrace(byte_sizes * 8, frame_rate, title)


def bundled_trace(title: str = "news") -> FrameTrace:
    """One of the synthetic traces shipped with the package (10,000 frames)."""
    if title not in BUNDLED_TITLES:
        raise KeyError(f"no bundled trace {title!r}; choose from {BUNDLED_TITLES}")
    ref = resources.files("vbrpower") / "data" / f"{title}.txt"
    with resources.as_file(ref) as p:
        return load_trace(p, title=title)


def bundled_trace_path(title: str = "news") -> Path:
    ref = resources.files("vbrpower") / "data" / f"{title}.txt"
    return Path(str(ref))
