"""CLI interface for gaitphase.

    gaitphase calibrate --config run.json [--seed N] [--out DIR]
    gaitphase replay    --config run.json [--seed N] [--out DIR]
    gaitphase simulate  --config run.json [--seed N] [--out DIR]
    gaitphase report    telemetry.csv [telemetry.csv ...] --out DIR
"""

import argparse
import logging
from typing import List, Optional

from gaitphase import harness
from gaitphase.config import load_config
from gaitphase.errors import GaitPhaseError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitphase",
        description="Phase-variable impedance control: calibration, replay, simulation and reports.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("calibrate", "fit phase (and volitional) calibration and write profile.json"),
        ("replay", "stream recorded or synthetic frames through a controller"),
        ("simulate", "run a controller in closed loop with the toy ankle plant"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="run configuration JSON")
        sub.add_argument("--seed", type=int, default=None, help="override the synth seed")
        sub.add_argument("--out", default=None, help="override the output directory")

    report = commands.add_parser("report", help="compare telemetry files")
    report.add_argument("telemetry", nargs="*", help="telemetry CSV files")
    report.add_argument("--out", default="report", help="output directory")
    report.add_argument("--references", default=None, help="reference trajectory CSV")
    report.add_argument(
        "--metrics", nargs="*", default=None, help="metric groups: angle torque power intent estimation"
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    The main function executes on commands:
    `python -m gaitphase` and `$ gaitphase `.

    Returns the process exit code: 0 on success, 2 for data errors, 3 for calibration
    errors and 4 for configuration errors.
    """
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.root.setLevel(logging.DEBUG)

    try:
        if args.command == "report":
            harness.cmd_report(args.telemetry, args.out, references=args.references, metrics=args.metrics)
            return 0
        cfg = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
        if args.command == "calibrate":
            harness.cmd_calibrate(cfg)
        elif args.command == "replay":
            harness.cmd_replay(cfg)
        else:
            harness.cmd_simulate(cfg)
    except GaitPhaseError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    return 0
