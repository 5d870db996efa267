"""Command line entry point: ``vcconsensus {run,analyze,reproduce-example,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import AcceptanceFailure, ConsensusError, ParseError, ValidationError
from .harness import cmd_analyze, cmd_reproduce_example, cmd_run
from .scenarios import RING_SEEDS

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcconsensus",
        description="Consensus of double-integrator agents under nonconvex velocity "
                    "constraints, switching digraphs and delays.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("config", help="scenario JSON file or a bundled name (paper_section5)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--horizon", type=int, default=None, help="override the step count")
        p.add_argument("--allow-violations", action="store_true",
                       help="warn instead of failing on assumption checks")

    p_run = sub.add_parser("run", help="simulate and write trajectory.csv / summary.json")
    scenario_args(p_run)
    p_run.add_argument("--out-dir", default=None)

    p_an = sub.add_parser("analyze", help="simulate, then certify the matrix products")
    scenario_args(p_an)
    p_an.add_argument("--out-dir", default=None)

    p_rep = sub.add_parser("reproduce-example", help="four-agent ring example over a seed set")
    p_rep.add_argument("--seed", type=int, action="append", default=None,
                       help="seed to run (repeatable); default 0..4")
    p_rep.add_argument("--horizon", type=int, default=600)
    p_rep.add_argument("--out-dir", default="out/reproduce")
    p_rep.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")

    p_val = sub.add_parser("validate", help="parse a scenario and run the assumption checks")
    scenario_args(p_val)
    return parser


def _print_report(report) -> None:
    print(json.dumps(report.to_dict() if hasattr(report, "to_dict") else report,
                     indent=2, sort_keys=True, default=str))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "reproduce-example":
            seeds = args.seed if args.seed else list(RING_SEEDS)
            reports = cmd_reproduce_example(seeds, args.horizon, args.out_dir, args.jobs)
            for rep in reports:
                print(f"seed {rep['seed']}: diameter {rep['final_diameter']:.3e} "
                      f"(<1e-3 at k={rep['steps_to_threshold']}), "
                      f"infeasible {rep['feasibility_violations']}, "
                      f"dual deviation {rep['dual_deviation']:.2e}, {rep['wall_clock']:.2f} s")
            return EXIT_OK

        cfg = load_config(args.config, seed=args.seed, horizon=args.horizon,
                          allow_violations=args.allow_violations)
        if args.command == "validate":
            for c in cfg.checks:
                print(f"{'PASS' if c.passed else 'FAIL'} [{c.assumption}] {c.entity}: {c.detail}")
            print(f"config_hash={cfg.config_hash}")
            return EXIT_OK if not cfg.violations else EXIT_CONFIG
        if args.command == "run":
            report, _ = cmd_run(cfg, args.out_dir)
        else:
            report, _, _ = cmd_analyze(cfg, args.out_dir)
        _print_report(report)
        return EXIT_OK
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except (ParseError, ValidationError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConsensusError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
