"""Command-line interface.

Subcommands: run, sweep, verify, roll, plot. Exit codes: 0 success,
1 usage or config error, 2 verification failure, 3 runtime failure.
SMRL_SEED_OFFSET shifts every seed in the loaded config (cluster
sharding).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..errors import ConfigError, SmrlError
from ..theoremlab import verify_all

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2
EXIT_RUNTIME = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _seed_offset() -> int:
    raw = os.environ.get("SMRL_SEED_OFFSET", "0")
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"SMRL_SEED_OFFSET must be an integer, got {raw!r}") from exc


def _parse_values(raw: str) -> list:
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(json.loads(token))
        except json.JSONDecodeError:
            values.append(token)
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--resume", action="store_true")

    p_sweep = sub.add_parser("sweep", help="fan a config out over one axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, help="dotted key, e.g. smoothing.sigma")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")

    p_verify = sub.add_parser("verify", help="run the theorem verification suite")
    p_verify.add_argument("--report", default=None)

    p_roll = sub.add_parser("roll", help="dump scripted or random episodes")
    p_roll.add_argument("--env", required=True)
    p_roll.add_argument("--policy", choices=("scripted", "random"), default="scripted")
    p_roll.add_argument("--out", required=True)
    p_roll.add_argument("--episodes", type=int, default=3)
    p_roll.add_argument("--seed", type=int, default=0)

    p_plot = sub.add_parser("plot", help="render learning-curve SVGs from metrics CSVs")
    p_plot.add_argument("--in", dest="in_dir", required=True)
    p_plot.add_argument("--out", dest="out_dir", required=True)
    return parser


def _dispatch(args) -> int:
    if args.command == "run":
        from .config import load_config
        from .run import run

        config = load_config(args.config, seed_offset=_seed_offset())
        result = run(config, resume=args.resume)
        print(json.dumps(result["seeds"], indent=2, sort_keys=True, default=str))
        return EXIT_OK

    if args.command == "sweep":
        from .config import load_config
        from .run import sweep

        config = load_config(args.config, seed_offset=_seed_offset())
        results = sweep(config, args.axis, _parse_values(args.values))
        print(json.dumps(sorted(results), indent=2))
        return EXIT_OK

    if args.command == "verify":
        report = verify_all(report_path=args.report)
        for check in report["checks"]:
            status = "PASS" if check["pass"] else "FAIL"
            print(f"[{status}] {check['check']}: max_err={check['max_err']:.3e}")
        return EXIT_OK if report["all_pass"] else EXIT_VERIFY_FAILED

    if args.command == "roll":
        from .run import roll_episodes

        episodes = roll_episodes(
            args.env, args.policy, args.out, episodes=args.episodes,
            seed=args.seed + _seed_offset(),
        )
        print(f"wrote {len(episodes)} episodes to {args.out}")
        return EXIT_OK

    if args.command == "plot":
        from .plots import plot_metrics

        written = plot_metrics(args.in_dir, args.out_dir)
        for path in written:
            print(path)
        return EXIT_OK

    raise _UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SmrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
