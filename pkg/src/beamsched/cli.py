"""Command line entry point: ``beamsched run | compare | validate-config``.

Exit codes: 0 success, 2 configuration error, 3 strict-mode infeasibility abort.
Any config key can be overridden from the environment as ``BEAMSCHED_<KEY>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .bench import compare_methods, export_report, run_benchmark
from .config import ConfigError, ENV_PREFIX, load_config
from .scheduler import METHODS, SchedulingAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("beamsched")


def _int_list(text: str) -> list[int]:
    """``0,3,5`` or ``0-19`` or a mix of both (non-negative)."""
    out: list[int] = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*(?:-\s*(\d+)\s*)?", part)
        if m is None:
            raise argparse.ArgumentTypeError(f"bad seed list entry {part!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        out.extend(range(lo, hi + 1))
    return out


def _method_list(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return methods


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="beamsched",
        description="QoS-aware user scheduling and power allocation for a multibeam satellite downlink.",
        epilog=f"Config keys can be overridden with {ENV_PREFIX}<KEY> environment variables.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one window with one method")
    run.add_argument("--config", type=Path, help="YAML or JSON config (default: desk preset)")
    run.add_argument("--method", required=True, choices=METHODS)
    run.add_argument("--power", choices=("fixed", "alloc"), default="fixed")
    run.add_argument("--seed", type=int, help="overrides rng_seed from the config")
    run.add_argument("--out", type=Path, required=True, help="output directory")

    cmp_ = sub.add_parser("compare", help="fixed vs allocated power gains over paired seeds")
    cmp_.add_argument("--config", type=Path)
    cmp_.add_argument("--methods", type=_method_list, default=list(METHODS), help="comma separated")
    cmp_.add_argument("--seeds", type=_int_list, default=[0], help="e.g. 0-19 or 1,4,7")
    cmp_.add_argument("--out", type=Path, required=True)
    cmp_.add_argument("--workers", type=int, default=1, help="parallel processes")

    val = sub.add_parser("validate-config", help="check a config file and print the resolved values")
    val.add_argument("path", type=Path)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "validate-config":
            if not args.path.exists():
                raise ConfigError("<file>", f"{args.path} does not exist")
            cfg = load_config(args.path)
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK

        if args.config is not None and not args.config.exists():
            raise ConfigError("<file>", f"{args.config} does not exist")
        cfg = load_config(args.config)

        if args.command == "run":
            report = run_benchmark(cfg, args.method, args.power, args.seed)
            export_report(report, args.out)
            s = report.summary
            print(
                f"{s['method']} ({s['power_mode']}) seed {s['seed']}: "
                f"mean sum {s['mean_sum_mbps']:.1f} Mbps, "
                f"satisfaction {s['mean_satisfaction']:.3f}, "
                f"QoS violations {s['qos_violation_fraction']:.3f} -> {args.out}"
            )
            return EXIT_OK

        log.info("comparing %s over seeds %s", ",".join(args.methods), args.seeds)
        table = compare_methods(cfg, args.methods, args.seeds, workers=args.workers, out=args.out)
        print(table.format())
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchedulingAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
