"""
Boosted Decay Lab - Experiment Runner
Run one laboratory subcommand from a JSON config and write its report
"""

import argparse
import sys
from typing import Optional, Sequence

from src.errors import LabError
from src.laboratory import COMMANDS, DecayLab
from src.logbook import LOGBOOK
from src.reporting import summary_table, write_report
from src.schemas import load_config


DESCRIPTIONS = {
    "check-algebra": "commutator residuals of (N, H, P) and the free-theory convergence pair",
    "boost-identity": "boosted H and P against their closed forms over the rapidity sweep",
    "speedup": "moving-packet amplitude against the rest amplitude at dilated time",
    "dilation": "survival fits at rest and at each momentum, dilation ratios",
    "moments": "average momentum and energy of the boosted rest state",
    "mixture": "two-component state with fast and slow decay",
    "appendix": "coefficient ODE, BCH orders and span decomposition",
    "scan": "fit rates over every (velocity, momentum) pair",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out-dir", help="Report directory (overrides output_dir)")
    common.add_argument("--refine-boost", action="store_true", help="Refine N by least squares before use")
    common.add_argument("--quiet", action="store_true", help="No log lines, progress bars or summary")
    common.add_argument("--dump-operators", action="store_true", help="Also write H0, H_int, P and N as CSV")

    parser = argparse.ArgumentParser(prog="run_experiment.py",
                                     description="Boosted Decay Lab - decay of a moving unstable particle")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=DESCRIPTIONS[command])
    return parser


def _fail(message: str, code: int) -> int:
    print(f"[error] {message}", file=sys.stderr)
    return code


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the subcommand, write the report; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit 2
        return exc.code if isinstance(exc.code, int) else 2

    LOGBOOK.verbose = not args.quiet
    LOGBOOK.reset()
    try:
        config = load_config(args.config)
        if args.out_dir:
            config.output_dir = args.out_dir
        if args.refine_boost:
            config.boost.use_refined = True
        lab = DecayLab(config, logger=LOGBOOK)
        report = lab.run(args.command)
        written = write_report(report, config.output_dir)
        if args.dump_operators:
            written.extend(lab.dump_operators(config.output_dir))
    except LabError as exc:
        return _fail(str(exc), exc.exit_code)
    except OSError as exc:
        return _fail(f"cannot write report: {exc}", 1)
    except Exception as exc:
        return _fail(f"unexpected {type(exc).__name__}: {exc}", 1)

    LOGBOOK.log("report", f"{len(written)} files written to {config.output_dir}")
    if not args.quiet:
        print(summary_table(report))
    return 0 if report.passed else 1


def main():
    """Main entry point."""
    sys.exit(run_command())


if __name__ == "__main__":
    main()
