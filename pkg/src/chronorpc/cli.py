"""Command-line front end.

Subcommands:
  run         execute one scenario file and print its summary
  experiment  run one of the canned studies (I: platforms, II: probing
              modes, III: spike stress)
  replay      re-run the predictors offline over a recorded sample CSV
  demo        run a self-checking coordination walkthrough

Exit status is 0 only when every assertion of the requested scenario,
experiment or demo held.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    CheckFailed,
    DEMOS,
    DemoFailure,
    ScenarioInvalid,
    experiment_platforms,
    experiment_probing,
    experiment_stress,
    load_scenario,
    run_scenario,
)
from .prediction import ALGORITHMS, read_sample_csv, replay_rows

EXPERIMENTS = {
    "I": "platforms",
    "II": "probing",
    "III": "stress",
    "platforms": "platforms",
    "probing": "probing",
    "stress": "stress",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronorpc",
        description="time-triggered rpc scheduling: scenarios, experiments, replay, demos",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("--scenario", required=True, help="path to a scenario file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="directory for samples.csv and summary.txt")

    p_exp = sub.add_parser("experiment", help="run a canned study")
    p_exp.add_argument("name", choices=sorted(EXPERIMENTS), help="which experiment")
    p_exp.add_argument("--seed", type=int, default=1)
    p_exp.add_argument("--out", default=None, help="directory for the experiment csv")
    p_exp.add_argument("--samples", type=int, default=None, help="samples per periodic scenario")
    p_exp.add_argument("--trials", type=int, default=None, help="trials per burst scenario")

    p_replay = sub.add_parser("replay", help="run predictors offline over a sample csv")
    p_replay.add_argument("--csv", required=True, help="csv with sequence,scheduled_time_ns,execution_time_ns")
    p_replay.add_argument("--algo", default="all", choices=("all",) + ALGORITHMS)
    p_replay.add_argument("--window", type=int, default=8)
    p_replay.add_argument("--out", default=None, help="output csv path (default stdout)")

    p_demo = sub.add_parser("demo", help="run a coordination walkthrough")
    p_demo.add_argument("name", choices=sorted(DEMOS))
    p_demo.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    result = run_scenario(scenario, out_dir=args.out)
    sys.stdout.write(result.summary_text())
    if args.out:
        print(f"# wrote samples.csv and summary.txt to {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    name = EXPERIMENTS[args.name]
    if name == "platforms":
        kwargs = {} if args.samples is None else {"samples": args.samples}
        report, _ = experiment_platforms(args.seed, out_dir=args.out, **kwargs)
    elif name == "probing":
        kwargs = {}
        if args.samples is not None:
            kwargs["samples"] = args.samples
        if args.trials is not None:
            kwargs["trials"] = args.trials
        report, _ = experiment_probing(args.seed, out_dir=args.out, **kwargs)
    else:
        kwargs = {} if args.samples is None else {"samples": args.samples}
        report, _ = experiment_stress(args.seed, out_dir=args.out, **kwargs)
    sys.stdout.write(report.csv_text())
    return 0


def _cmd_replay(args) -> int:
    with open(args.csv, newline="", encoding="utf-8") as handle:
        try:
            samples = read_sample_csv(handle)
        except ValueError as exc:
            print(f"error: {args.csv}: {exc}", file=sys.stderr)
            return 1
    algorithms = ALGORITHMS if args.algo == "all" else (args.algo,)
    header, rows = replay_rows(samples, algorithms, args.window)
    if args.out:
        out = open(args.out, "w", newline="", encoding="utf-8")
    else:
        out = sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_demo(args) -> int:
    for line in DEMOS[args.name](args.seed):
        print(line)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        if args.command == "replay":
            return _cmd_replay(args)
        return _cmd_demo(args)
    except (CheckFailed, DemoFailure, ScenarioInvalid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
