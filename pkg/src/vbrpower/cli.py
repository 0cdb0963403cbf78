"""Command-line entry point: ``vbrpower [--config FILE] [--preset sec5] ...``.

Writes ``slots.csv``, ``summary.json``, ``rounds.csv`` and the effective
``config.ini`` into the output directory and prints a key-value summary.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import PRESETS, ConfigError, apply_overrides, dump_config, load_config
from .simulator import Simulation

log = logging.getLogger("vbrpower")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vbrpower", description="Simulate downlink power allocation for VBR video users.")
    ap.add_argument("--config", help="INI run file (defaults apply to anything it leaves out)")
    ap.add_argument("--allocator", choices=("proposed", "diversity"))
    ap.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--slots", type=int, help="stop after this many slots")
    ap.add_argument("--seed", type=int, help="overrides the config seed and VBR_SEED")
    ap.add_argument("--users", type=int)
    ap.add_argument("--out", help="output directory (default: ./vbrpower-out)")
    ap.add_argument("--log-all-rounds", action="store_true", default=None,
                    help="log the dual solver rounds of every slot, not only the last")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)  # exits with status 2 and usage on bad flags
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(
            cfg,
            preset=args.preset,
            allocator=args.allocator,
            slots=args.slots,
            seed=args.seed,
            users=args.users,
            out=args.out,
            log_all_rounds=args.log_all_rounds,
        ).validate()
        out = Path(cfg.out or "vbrpower-out")
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(dump_config(cfg))
        sim = Simulation(cfg)
        started = time.perf_counter()
        with (out / "slots.csv").open("w", newline="") as fh:
            summary = sim.run(csv_file=fh)
        sim.write_outputs(out, summary)
        log.info("ran %d slots in %.1f s", summary.total_slots, time.perf_counter() - started)
    except ConfigError as exc:
        print(f"vbrpower: config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"vbrpower: {exc}", file=sys.stderr)
        return 1
    print(summary.text())
    print(f"{'output':<18}  {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
