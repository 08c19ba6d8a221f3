"""Command-line surface over the experiment harness.

Subcommands mirror the experiment kinds: rate, run, verify, sweep.  Each
takes --config (a key = value section document), --out, and --seed; rate
also accepts direct parameters (--q --p --tau, or --q --p --alpha [--beta])
so a certificate can be printed without writing a file.  Exit codes: 0 all
verdicts PASS, 1 a verification FAIL, 2 usage or config problem, 3
internal error.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

from .harness import OUT_ENV, ConfigError, execute, parse_config

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

_RATE_FLAGS = ("q", "p", "tau", "alpha", "beta")


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="async-iter-lab",
        description="Rate certificates and trace-verified simulations for "
        "asynchronous iterations.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    helps = {
        "rate": "print the rate certificate for given recursion parameters",
        "run": "simulate an algorithm and verify its trace and bound",
        "verify": "check a stored trace.csv against a recursion form",
        "sweep": "run a config once per swept parameter value",
    }
    for name, text in helps.items():
        sub = commands.add_parser(name, help=text)
        sub.add_argument("--config", metavar="PATH", help="experiment config document")
        sub.add_argument(
            "--out",
            metavar="DIR",
            help=f"output directory (overrides the config key and ${OUT_ENV})",
        )
        sub.add_argument(
            "--seed", type=int, metavar="N", help="root seed override (64-bit unsigned)"
        )
        if name == "rate":
            sub.add_argument("--q", type=float, help="decay coefficient")
            sub.add_argument("--p", type=float, help="delayed-window coefficient")
            sub.add_argument("--tau", type=int, help="delay bound (geometric certificate)")
            sub.add_argument("--alpha", type=float, help="delay growth slope (polynomial)")
            sub.add_argument("--beta", type=float, help="delay growth offset")
    return parser


def _rate_flag_text(args) -> str:
    lines = ["[experiment]", "kind = rate"]
    if args.seed is not None:
        lines.append(f"seed = {args.seed}")
    lines.extend(["", "[rate]"])
    for key in _RATE_FLAGS:
        value = getattr(args, key)
        if value is None:
            continue
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _config_from_args(args):
    rate_flags = args.command == "rate" and any(
        getattr(args, key) is not None for key in _RATE_FLAGS
    )
    if args.config is None:
        if args.command != "rate":
            raise _UsageError(f"{args.command} requires --config")
        if args.q is None or args.p is None:
            raise _UsageError("rate requires --config, or both --q and --p")
        config = parse_config(_rate_flag_text(args))
    else:
        if rate_flags:
            raise _UsageError("pass either --config or direct rate parameters, not both")
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise _UsageError(f"cannot read config: {exc}") from None
        config = parse_config(text)
        if config.kind != args.command:
            raise _UsageError(
                f"config kind {config.kind!r} does not match subcommand {args.command!r}"
            )
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise _UsageError("--seed must be a 64-bit unsigned integer")
        config = dataclasses.replace(config, seed=args.seed)
    return config


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        config = _config_from_args(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        for line in exc.errors:
            print(line, file=sys.stderr)
        return EXIT_USAGE
    try:
        report = execute(config, out_dir=args.out)
    except ConfigError as exc:
        for line in exc.errors:
            print(line, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    for line in report.verdict_lines:
        print(line)
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
