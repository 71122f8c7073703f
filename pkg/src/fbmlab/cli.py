"""Command-line entry point: ``fbmlab <experiment> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbmlab", description="fBM verification and Monte Carlo experiments")
    ap.add_argument("experiment", choices=harness.EXPERIMENTS)
    ap.add_argument("--config", help="JSON config file; flags override its keys")
    ap.add_argument("--seed", type=int, help="root seed")
    ap.add_argument("--workers", type=int, help="worker threads (0 = available parallelism)")
    ap.add_argument("--out", dest="out_dir", help="output directory")
    ap.add_argument("--ch-mode", choices=("literal", "derived"))
    ap.add_argument("--no-renormalize", dest="renormalize", action="store_false", default=None,
                    help="keep raw coefficient rows (no exact-variance row scaling)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
            if not isinstance(config, dict):
                raise harness.ConfigError("config file must hold a JSON object")
        overrides = {"root_seed": args.seed, "workers": args.workers, "out_dir": args.out_dir,
                     "ch_mode": args.ch_mode, "renormalize": args.renormalize}
        cfg = harness.ExperimentConfig.build(args.experiment, config,
                                             {k: v for k, v in overrides.items() if v is not None})
    except (OSError, json.JSONDecodeError, harness.ConfigError) as exc:
        print(f"fbmlab: config error: {exc}", file=sys.stderr)
        return 2
    env = harness.run(cfg)
    for v in env.verdicts:
        print(f"{'PASS' if v['passed'] else 'FAIL'} {v['name']}: {v['value']:.6g} {v['comparator']} {v['threshold']}")
    if env.error:
        print(f"fbmlab: {env.error}", file=sys.stderr)
    print(f"{cfg.experiment}: {'passed' if env.passed else 'failed'}; report at {cfg.out_dir}/report.json")
    return harness.exit_status(env)


if __name__ == "__main__":
    sys.exit(main())
