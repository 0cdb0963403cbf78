"""Run configuration: INI file + presets + defaults.

Example file::

    [run]
    preset = sec5
    users = 20
    allocator = proposed
    seed = 7

    [cell]
    peak_power_w = 10

    [user.3]
    distance_m = 250
    trace = news
    offset = 120

Every key is optional.  Section ``[user.N]`` pins user ``N``'s distance,
trace (bundled title or file path) and start offset; unpinned values are
drawn from the seed.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dual_solver import SolverConfig
from .traces import BUNDLED_TITLES

__all__ = ["RunConfig", "UserSpec", "ConfigError", "PRESETS", "load_config", "dump_config", "apply_overrides"]


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class UserSpec:
    distance_m: float | None = None
    trace: str | None = None
    offset: int | None = None


@dataclass(frozen=True)
class RunConfig:
    users: int = 20
    slots: int | None = None
    allocator: str = "proposed"
    seed: int = 0
    preset: str | None = None
    # cell
    peak_power_w: float = 10.0
    proc_gain: float = 128.0
    gamma_th: float = 0.0
    orthogonality: float = 1.0
    # channel
    pathloss_exponent: float = 4.0
    shadow_sigma_db: float = 8.0
    temperature_k: float = 290.0
    bandwidth_hz: float = 1e6
    coherence_slots: int = 1
    distance_min_m: float = 100.0
    distance_max_m: float = 1000.0
    # video
    traces: tuple = BUNDLED_TITLES
    buffer_multiplier: float = 1.5
    offsets: str = "random"
    # allocator internals
    solver: SolverConfig = SolverConfig()
    polish: bool = True
    # output
    out: str | None = None
    log_all_rounds: bool = False
    user_specs: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        positive = ("peak_power_w", "bandwidth_hz", "temperature_k", "buffer_multiplier", "distance_min_m")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be positive, got {getattr(self, key)!r}")
        if self.users < 1:
            raise ConfigError("users", "need at least one user")
        if self.slots is not None and self.slots < 1:
            raise ConfigError("slots", "must be >= 1")
        if self.allocator not in ("proposed", "diversity"):
            raise ConfigError("allocator", f"unknown allocator {self.allocator!r}")
        if self.proc_gain <= 2:
            raise ConfigError("proc_gain", "must exceed 2")
        if self.gamma_th < 0:
            raise ConfigError("gamma_th", "must be nonnegative")
        if not 0 <= self.orthogonality <= 1:
            raise ConfigError("orthogonality", "must lie in [0, 1]")
        if self.shadow_sigma_db < 0:
            raise ConfigError("shadow_sigma_db", "must be nonnegative")
        if self.coherence_slots < 1:
            raise ConfigError("coherence_slots", "must be >= 1")
        if self.distance_max_m < self.distance_min_m:
            raise ConfigError("distance_max_m", "must be >= distance_min_m")
        if self.offsets not in ("random", "zero"):
            raise ConfigError("offsets", "must be 'random' or 'zero'")
        if not self.traces:
            raise ConfigError("traces", "need at least one trace")
        for name in self.traces:
            _check_trace("traces", name)
        for n, spec in self.user_specs.items():
            if n >= self.users:
                raise ConfigError(f"user.{n}", f"index beyond users={self.users}")
            if spec.distance_m is not None and spec.distance_m <= 0:
                raise ConfigError(f"user.{n}.distance_m", "must be positive")
            if spec.trace is not None:
                _check_trace(f"user.{n}.trace", spec.trace)
        return self


def _check_trace(key: str, name: str) -> None:
    if name not in BUNDLED_TITLES and not Path(name).is_file():
        raise ConfigError(key, f"trace file not found: {name}")


PRESETS = {
    # single-cell setting of the reference experiments
    "sec5": dict(users=20, peak_power_w=10.0, proc_gain=128.0, bandwidth_hz=1e6, shadow_sigma_db=8.0,
                 temperature_k=290.0, pathloss_exponent=4.0, distance_min_m=100.0, distance_max_m=1000.0,
                 buffer_multiplier=1.5),
    # same cell, 50 users, for the baseline comparison
    "sec5-compare": dict(users=50, peak_power_w=10.0, proc_gain=128.0, bandwidth_hz=1e6, shadow_sigma_db=8.0,
                         temperature_k=290.0, pathloss_exponent=4.0, distance_min_m=100.0, distance_max_m=1000.0,
                         buffer_multiplier=1.5),
}

_SECTIONS = {
    "run": ("users", "slots", "allocator", "seed", "preset", "out", "log_all_rounds"),
    "cell": ("peak_power_w", "proc_gain", "gamma_th", "orthogonality"),
    "channel": ("pathloss_exponent", "shadow_sigma_db", "temperature_k", "bandwidth_hz", "coherence_slots",
                "distance_min_m", "distance_max_m"),
    "video": ("traces", "buffer_multiplier", "offsets"),
    "solver": ("armijo_shrink", "armijo_slope", "initial_step", "tol", "max_iters", "max_rounds", "polish"),
}
_SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverConfig)}


def _convert(key: str, raw: str, target):
    raw = raw.strip()
    try:
        if key == "traces":
            return tuple(t.strip() for t in raw.split(",") if t.strip())
        if key in ("slots", "out", "preset") and raw.lower() in ("", "none"):
            return None
        if isinstance(target, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(target, int) or key in ("slots", "users", "seed"):
            return int(raw)
        if isinstance(target, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """New config with ``overrides`` applied; a ``preset`` key first loads the preset values."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    preset = overrides.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = dataclasses.replace(cfg, preset=preset, **PRESETS[preset])
    solver_kw = {k: overrides.pop(k) for k in list(overrides) if k in _SOLVER_KEYS}
    if solver_kw:
        try:
            overrides["solver"] = dataclasses.replace(cfg.solver, **solver_kw)
        except ValueError as exc:
            raise ConfigError("solver", str(exc)) from None
    return dataclasses.replace(cfg, **overrides)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Parse an INI run file (``None`` or an empty file gives all defaults).

    When the file sets no seed, ``VBR_SEED`` from the environment is used.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"file not found: {path}")
        parser.read(path)
    base = RunConfig()
    values: dict = {}
    users: dict = {}
    for section in parser.sections():
        if section.startswith("user."):
            try:
                n = int(section.split(".", 1)[1])
            except ValueError:
                raise ConfigError(section, "user sections are named user.<index>") from None
            sec = parser[section]
            users[n] = UserSpec(
                float(sec["distance_m"]) if "distance_m" in sec else None,
                sec.get("trace"),
                int(sec["offset"]) if "offset" in sec else None,
            )
            continue
        if section not in _SECTIONS:
            raise ConfigError(section, "unknown section")
        for key, raw in parser[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            target = getattr(base.solver, key) if key in _SOLVER_KEYS else getattr(base, key)
            values[key] = _convert(key, raw, target)
    if "seed" not in values and os.environ.get("VBR_SEED"):
        values["seed"] = _convert("seed", os.environ["VBR_SEED"], 0)
    preset = values.pop("preset", None)
    cfg = apply_overrides(base, preset=preset) if preset else base
    cfg = apply_overrides(cfg, **values)
    if users:
        cfg = dataclasses.replace(cfg, user_specs=users)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    """INI text that :func:`load_config` turns back into ``cfg``."""
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(cfg.solver, key) if key in _SOLVER_KEYS else getattr(cfg, key)
            if key == "preset":
                # the preset's values are written out explicitly below
                continue
            if value is None:
                value = ""
            elif key == "traces":
                value = ", ".join(value)
            elif isinstance(value, float):
                value = repr(value)
            parser[section][key] = str(value)
    for n, spec in sorted(cfg.user_specs.items()):
        sec = {}
        if spec.distance_m is not None:
            sec["distance_m"] = repr(float(spec.distance_m))
        if spec.trace is not None:
            sec["trace"] = spec.trace
        if spec.offset is not None:
            sec["offset"] = str(spec.offset)
        parser[f"user.{n}"] = sec
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
