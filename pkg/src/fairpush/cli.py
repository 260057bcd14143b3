"""Command line front end: run scenarios, list presets, compare reports."""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

from fairpush.errors import ConfigError, ProtocolError, SimulationError
from fairpush.metrics import MetricsReport
from fairpush.proxy import Strategy
from fairpush.scenario import load_scenario, preset, preset_names, run_scenario


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    overrides = {}
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if overrides:
        config = replace(config, **overrides)
    results = run_scenario(config, out_dir=args.out, report_format=args.format)
    for result in results:
        r = result.report
        print(
            f"{r.scenario} {r.strategy} seed={r.seed}: "
            f"F={r.unfairness_avg:.4f} rebuffer={r.rebuffer_count} "
            f"res={sum(r.responses.values())} pp={sum(r.push_promises.values())} "
            f"discarded={sum(r.push_discards.values())}"
        )
    print(f"wrote {len(results)} run(s) under {args.out}")
    return 0


def _fmt(values: list[float]) -> str:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return "unbounded"
    mean = sum(finite) / len(finite)
    if len(finite) == 1:
        return f"{mean:.3f}"
    return f"{mean:.3f} ({min(finite):.3f}-{max(finite):.3f})"


def _cmd_compare(args: argparse.Namespace) -> int:
    if len(args.reports) < 2:
        raise ConfigError("compare needs at least two reports")
    reports = [MetricsReport.from_json(Path(p).read_text()) for p in args.reports]
    scenarios = {r.scenario for r in reports}
    if len(scenarios) != 1:
        raise ConfigError(f"reports span different scenarios: {sorted(scenarios)}")
    by_strategy: dict[str, list[MetricsReport]] = {}
    for r in reports:
        by_strategy.setdefault(r.strategy, []).append(r)
    known = [s for s in Strategy.ALL if s in by_strategy]
    extra = sorted(set(by_strategy) - set(known))
    columns = known + extra

    def row(label: str, pick) -> str:
        cells = [_fmt([pick(r) for r in by_strategy[s]]) for s in columns]
        return "  ".join([f"{label:<22}"] + [f"{c:>24}" for c in cells])

    def tracked(r: MetricsReport, mapping: dict) -> float:
        if not mapping:
            return math.nan
        return mapping[sorted(mapping)[0]]

    print(f"scenario: {scenarios.pop()}  ({len(reports)} reports)")
    print("  ".join([f"{'metric':<22}"] + [f"{s:>24}" for s in columns]))
    print(row("unfairness F", lambda r: r.unfairness_avg))
    print(row("rebuffer events", lambda r: float(r.rebuffer_count)))
    print(row("adaptation delay s", lambda r: tracked(r, r.adaptation_delay_s)))
    print(row("degradation kbps", lambda r: tracked(r, r.degradation_amplitude_kbps)))
    print(row("responses", lambda r: float(sum(r.responses.values()))))
    print(row("push promises", lambda r: float(sum(r.push_promises.values()))))
    print(row("pushes discarded", lambda r: float(sum(r.push_discards.values()))))
    print(row("avg bitrate kbps", lambda r: sum(r.avg_bitrate_kbps.values()) / len(r.avg_bitrate_kbps)))
    return 0


def _cmd_presets(_: argparse.Namespace) -> int:
    for name in preset_names():
        config = preset(name)
        print(
            f"{name:<8} clients={len(config.clients)} strategy={config.strategy} "
            f"segments={config.total_segments} capacity={config.capacity_kbps:g}kbps"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairpush",
        description="Simulate multi-client adaptive streaming over server push.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario's repetitions and write artifacts")
    run.add_argument("--scenario", required=True, help="preset name or TOML file path")
    run.add_argument("--strategy", choices=Strategy.ALL, help="override the scenario strategy")
    run.add_argument("--seed", type=int, help="override the base seed")
    run.add_argument("--reps", type=int, help="override the repetition count")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--format", choices=("json", "csv"), default="json",
                     help="metrics format: per-run metrics.json or one summary.csv")
    run.set_defaults(func=_cmd_run)

    compare = sub.add_parser("compare", help="tabulate metrics.json reports side by side")
    compare.add_argument("reports", nargs="+", help="two or more metrics.json paths")
    compare.set_defaults(func=_cmd_compare)

    presets = sub.add_parser("presets", help="list built-in scenario presets")
    presets.set_defaults(func=_cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProtocolError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
