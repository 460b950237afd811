from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from vqdrift.exception import DivergenceError, InvalidConfig, InvalidInput
from vqdrift.harness.checks import CHECKS, CheckOptions, run_checks
from vqdrift.harness.config import DEMOS, ExperimentConfig, demo_config, load_config, sweep_config
from vqdrift.harness.harness import batch_size_sweep, run_experiment
from vqdrift.harness.plot import write_snapshots
from vqdrift.harness.trace import write_sweep, write_trace
from vqdrift.updaters import RULE_ALIASES, RuleKind, parse_rule_kind

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_OUT = "vqdrift-out"
DEFAULT_SWEEP = "1,4,16,64"

RULE_CHOICES = sorted(set(RULE_ALIASES) | {kind.value for kind in RuleKind})


def _batch_sizes(value: str) -> list[int]:
    try:
        sizes = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid batch size list: {value!r}")
    if not sizes or any(size < 1 for size in sizes):
        raise argparse.ArgumentTypeError("batch sizes must be positive integers")
    return sizes


def _configure_logging(verbosity: int) -> None:
    if not verbosity:
        return

    level = logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s %(message)s")
    for name in list(logging.root.manager.loggerDict):
        if name.startswith("vqdrift"):
            logging.getLogger(name).setLevel(level)


def _experiment_config(args: argparse.Namespace, config: ExperimentConfig) -> ExperimentConfig:
    """Build the run configuration: preset, then the config file, then command line flags."""
    if args.config:
        config = load_config(args.config, config)

    changes = {}
    for name in ("seed", "epochs", "batch_size"):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    if args.rule is not None:
        changes["rule"] = config.rule.replace(kind=parse_rule_kind(args.rule))
    return config.replace(**changes)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_demo(args: argparse.Namespace) -> int:
    config = _experiment_config(args, demo_config(args.name))
    out = _out_dir(args)

    trace = run_experiment(config)
    write_trace(trace, out / "trace.csv")
    snapshots = write_snapshots(trace, out)

    final = trace.final
    print(f"wrote {out / 'trace.csv'} and {len(snapshots)} snapshots to {out}")
    print(
        f"{args.name} / {config.rule.label}: steps={final.step} distortion={final.distortion_current:.6g} "
        f"target_distortion={final.distortion_target:.6g} utilization={final.utilization:.4f} "
        f"dead_codes={final.dead_codes}"
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _experiment_config(args, sweep_config(args.demo))
    too_large = [b for b in args.batch_sizes if b > config.n]
    if too_large:
        raise InvalidInput(f"batch sizes {too_large} exceed the dataset size {config.n}")
    out = _out_dir(args)

    result = batch_size_sweep(config, args.batch_sizes, workers=args.workers)
    write_sweep(result, out / "sweep.csv")

    for row in result.rows:
        print(
            f"B={row.batch_size}: distortion={row.final_distortion:.6g} utilization={row.final_utilization:.4f} "
            f"dead_codes={row.dead_codes}"
        )

    rho = result.correlation
    if math.isnan(rho):
        print("spearman(B, distortion) undefined")
    else:
        verdict = "negative: larger batches reduce distortion" if rho < 0 else "not negative"
        print(f"spearman(B, distortion) = {rho:.3f} ({verdict})")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    options = CheckOptions(seed=args.seed if args.seed is not None else 0, corrupt_gradient=args.corrupt_gradient)
    results = run_checks(args.only, options)
    for result in results:
        print(result)
    return EXIT_OK if all(result.passed for result in results) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity (-vv for debug)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", metavar="FILE", help="YAML experiment configuration")
    run.add_argument("--rule", choices=RULE_CHOICES, help="codebook update rule")
    run.add_argument("--epochs", type=int, help="number of epochs")
    run.add_argument("--batch-size", type=int, help="mini-batch size")
    run.add_argument(
        "--out",
        default=os.getenv("VQDRIFT_OUT", DEFAULT_OUT),
        help="output directory (default $VQDRIFT_OUT or %(default)s)",
    )

    parser = argparse.ArgumentParser(prog="vqdrift", description="Codebook update rules on drifting toy data")
    subparsers = parser.add_subparsers(dest="command", required=True)

    demo = subparsers.add_parser("demo", parents=[common, run], help="run a toy demo, write trace.csv and snapshots")
    demo.add_argument("name", choices=list(DEMOS), help="demo to run")
    demo.set_defaults(func=cmd_demo)

    sweep = subparsers.add_parser("sweep", parents=[common, run], help="sweep the batch size, write sweep.csv")
    sweep.add_argument("--demo", choices=list(DEMOS), default="translation", help="demo to sweep (default %(default)s)")
    sweep.add_argument(
        "--batch-sizes",
        type=_batch_sizes,
        default=_batch_sizes(DEFAULT_SWEEP),
        help="comma separated batch sizes (default %(default)s)",
    )
    sweep.add_argument("--workers", type=int, default=None, help="run the sweep on this many threads")
    sweep.set_defaults(func=cmd_sweep)

    check = subparsers.add_parser("check", parents=[common], help="run the invariant suite")
    check.add_argument("--only", action="append", choices=list(CHECKS), metavar="NAME", help="run only this check")
    check.add_argument("--corrupt-gradient", action="store_true", help="double one projector gradient (debug)")
    check.set_defaults(func=cmd_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"vqdrift: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except (InvalidConfig, InvalidInput) as e:
        print(f"vqdrift: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
