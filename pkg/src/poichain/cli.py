"""Command-line entry point: ``poichain run|baseline|combined``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import measure_latency, run_baseline_suite, run_combined_suite
from .simulation import ConfigError, MetricsReport, Scenario, Simulation


def _summary(report: MetricsReport) -> str:
    failed = [k for k, v in report.assertions.items() if not v]
    rate = lambda x: "n/a" if x is None else f"{x:.1%}"
    status = "ok" if report.ok else "FAILED " + ",".join(failed)
    return (
        f"{report.name}: valid={report.valid_cases} invalid={report.invalid_cases} "
        f"detection={rate(report.detection_rate)} false_positive={rate(report.false_positive_rate)} "
        f"blocks={report.committed_blocks} {status}"
    )


def _write_suite(report: MetricsReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.dumps())
    (out / "latency.json").write_text(json.dumps(measure_latency(report), indent=2, sort_keys=True) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = Scenario.from_json(json.loads(Path(args.scenario).read_text()))
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    sim = Simulation(scenario)
    report = sim.run()
    sim.write_outputs(report, Path(args.out), trace=args.trace)
    print(_summary(report))
    return 0 if report.ok else 1


def cmd_suite(args: argparse.Namespace) -> int:
    report = run_baseline_suite(args.repeats) if args.command == "baseline" else run_combined_suite(args.repeats)
    _write_suite(report, Path(args.out))
    print(_summary(report))
    for op, s in measure_latency(report).items():
        print(f"  {op:<14} n={s['n']:<5} median={s['median_ms']:.4f}ms p99={s['p99_ms']:.4f}ms")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--trace", action="store_true", help="also write trace.jsonl and events.jsonl")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="poichain", description="Proof-of-Inference simulator and validation suites")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run a scenario file")
    run.add_argument("scenario", help="path to a scenario JSON file")
    run.set_defaults(func=cmd_run)
    for name, text in (("baseline", "fixed 13 valid / 16 invalid case mix"), ("combined", "baseline plus 1000 scale cases")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--repeats", type=int, default=20, help="timing repetitions per fixed case")
        p.set_defaults(func=cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
