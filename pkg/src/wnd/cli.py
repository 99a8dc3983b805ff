"""``wnd`` command line: one subcommand per experiment.

Exit codes: 0 when every property check passes (or the run is exploratory),
2 when a property check fails, 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ._parallel import WORKERS_ENV
from .experiments import EXIT_OPERATIONAL, EXPERIMENTS, ConfigError, parse_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wnd",
        description="White-noise dispersion experiments.",
        epilog=f"Set {WORKERS_ENV}=k to spread ensemble loops over k processes.",
    )
    sub = ap.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", type=Path, help="key=value config file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--paths", type=int, help="number of Brownian paths M")
        sp.add_argument("--out", help="output root directory (default: runs)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text() if args.config else ""
        over = {"experiment": args.experiment, "seed": args.seed, "paths": args.paths, "out": args.out}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            over[k.strip()] = v.strip()
        cfg = parse_config(text, over)
        res = run_experiment(cfg)
    except (ConfigError, OSError) as exc:
        print(f"wnd: error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    except Exception as exc:  # noqa: BLE001 - any failure inside a run is operational
        print(f"wnd: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    status = {True: "PASS", False: "FAIL", None: "REPORTED"}[res.verdict]
    for k, v in res.summary.items():
        print(f"{k}: {v}")
    print(f"{cfg.experiment}: {status} -> {res.directory}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
