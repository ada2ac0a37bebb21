"""Command line front end.

Subcommands:
    train      learn Q-tables on a scenario, one run per seed
    evaluate   run a controller and write a metrics report
    calibrate  fit a detection-noise profile to target error statistics
    compare    percentage deltas between two evaluation reports
    validate   structural checks on a scenario
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .perception import CalibrationError
from .rewards import REWARDS
from .scenarios import BUILTIN_SCENARIOS


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be a comma-separated list of integers, got {raw!r}"
        ) from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("seeds must be distinct")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficlab",
        description="Traffic-signal control test bed: tabular Q-learning "
                    "agents on a microscopic network simulation, with an "
                    "optional camera-detection noise model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", required=True,
                       help="built-in scenario name (%s) or a scenario JSON file"
                            % ", ".join(sorted(BUILTIN_SCENARIOS)))
        p.add_argument("--seeds", type=_parse_seeds,
                       default=harness.DEFAULT_SEEDS,
                       help="comma-separated seed list (default 0,1,2,3,4)")
        p.add_argument("--out", default="results",
                       help="output directory (default: results)")

    p_train = sub.add_parser("train", help="train Q-learning agents")
    add_common(p_train)
    p_train.add_argument("--reward", default="avg_speed",
                         choices=sorted(REWARDS),
                         help="reward signal (default avg_speed)")
    p_train.add_argument("--episodes", type=int, default=300,
                         help="training episodes per seed (default 300)")

    p_eval = sub.add_parser("evaluate", help="evaluate a controller")
    add_common(p_eval)
    p_eval.add_argument("--controller", default="static",
                        help="static, actuated, or agents:<qtables file>")
    p_eval.add_argument("--sensing", default="ground_truth",
                        help="ground_truth, v5, v8, or a noise-profile JSON file")

    p_cal = sub.add_parser("calibrate",
                           help="fit a noise profile to error targets")
    p_cal.add_argument("--mae", type=float, required=True,
                       help="target mean absolute count error")
    p_cal.add_argument("--rmse", type=float, required=True,
                       help="target root mean squared count error")
    p_cal.add_argument("--mean", type=float, required=True,
                       help="target mean signed error (bias)")
    p_cal.add_argument("--lanes", type=int, default=43,
                       help="synthetic lanes per snapshot (default 43, the "
                            "size of the reference detector deployment)")
    p_cal.add_argument("--name", default="calibrated",
                       help="profile name (default: calibrated)")
    p_cal.add_argument("--snapshots", type=int, default=20000,
                       help="synthetic snapshots per evaluation (default 20000)")
    p_cal.add_argument("--seed", type=int, default=1234)
    p_cal.add_argument("--out", default="results")

    p_cmp = sub.add_parser("compare",
                           help="percentage change between two reports")
    p_cmp.add_argument("baseline", help="baseline report.csv")
    p_cmp.add_argument("candidate", help="candidate report.csv")
    p_cmp.add_argument("--out", default=None,
                       help="optional CSV path for the deltas")

    p_val = sub.add_parser("validate", help="check a scenario definition")
    p_val.add_argument("--scenario", required=True)

    return parser


def _run_train(args) -> int:
    spec = harness.ExperimentSpec(
        scenario=args.scenario, reward=args.reward, episodes=args.episodes,
        seeds=args.seeds, out_dir=args.out)
    written = harness.cmd_train(spec)
    for item in written:
        print(f"wrote {item['tables']}")
        print(f"wrote {item['curve']}")
    return 0


def _run_evaluate(args) -> int:
    spec = harness.ExperimentSpec(
        scenario=args.scenario, controller=args.controller,
        sensing=args.sensing, seeds=args.seeds, out_dir=args.out)
    artifacts = harness.cmd_evaluate(spec)
    for key in sorted(artifacts):
        print(f"wrote {artifacts[key]}")
    return 0


def _run_calibrate(args) -> int:
    try:
        artifacts = harness.cmd_calibrate(
            args.mae, args.rmse, args.mean, args.lanes, args.name, args.out,
            snapshots=args.snapshots, seed=args.seed)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        if exc.residuals:
            for stat in sorted(exc.residuals):
                print(f"  best residual {stat}: {exc.residuals[stat]:+.4f}",
                      file=sys.stderr)
        return 1
    print(f"wrote {artifacts['profile']}")
    print(f"wrote {artifacts['residuals']}")
    return 0


def _run_compare(args) -> int:
    deltas = harness.cmd_compare(args.baseline, args.candidate,
                                 out_path=args.out)
    for metric in sorted(deltas):
        print(f"{metric}: {deltas[metric]:+.1f}%")
    if args.out:
        print(f"wrote {args.out}")
    return 0


def _run_validate(args) -> int:
    problems = harness.cmd_validate(args.scenario)
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        return 1
    print("scenario ok")
    return 0


_HANDLERS = {
    "train": _run_train,
    "evaluate": _run_evaluate,
    "calibrate": _run_calibrate,
    "compare": _run_compare,
    "validate": _run_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
