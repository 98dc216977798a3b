"""Command-line entry point: run, replay, sweep, check, latency."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .confirmation import RULES
from .monitors import (
    SUMMARY_FIELDS, TraceData, latency_table, monitor_report, report_json, summary_csv, summary_rows,
)
from .scenarios import REPLAYS, SWEEP_FIELDS, SWEEP_STRATEGIES, replay_config, run_sweep, sweep_totals
from .simnet import ConfigError, ScenarioConfig, Trace, run_scenario

EXIT_OK, EXIT_MONITOR, EXIT_CONFIG = 0, 1, 2
SEED_ENV = "GASPER_CONFIRM_SEED"


def parse_seed_range(text: str) -> range:
    """'A..B' inclusive, or a single integer."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; expected A..B") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--rule", choices=RULES, help="restrict evaluation and monitors to one rule")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--strict", action="store_true", help="violations under void assumptions also fail")
    p.add_argument("--horizon-slots", type=int, dest="horizon_slots", help="override the horizon")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gasper-confirm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    _common(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("replay", help="replay a hand-built counterexample")
    p.add_argument("name", choices=REPLAYS)
    _common(p, config=False)

    p = sub.add_parser("sweep", help="adversarial seed sweep")
    _common(p)
    p.add_argument("--seeds", type=parse_seed_range, default=range(0, 20))
    p.add_argument("--strategies", default=",".join(SWEEP_STRATEGIES))
    p.add_argument("--betas", default=None, help="comma-separated adversarial fractions, e.g. 0,0.05,0.1")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("check", help="re-run the monitors over a saved trace")
    p.add_argument("trace")
    p.add_argument("--rule", choices=RULES)
    p.add_argument("--out", default=None)
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("latency", help="print the latency table of a trace or scenario")
    p.add_argument("trace", nargs="?")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon-slots", type=int, dest="horizon_slots")
    return ap


def load_config(path, seed=None, rule=None, horizon=None) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text()) if path else {}
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["config: top level must be an object"])
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError([f"{SEED_ENV}: not an integer"]) from None
    if seed is not None:
        data["seed"] = seed
    if rule is not None:
        data["rules"] = [rule]
    if horizon is not None:
        data["horizon_slots"] = horizon
    return ScenarioConfig.from_json(data).validate()


def write_outputs(out, trace: Trace, report: dict, blocks: str | None = None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.jsonl")
    (out / "report.json").write_text(report_json(report))
    (out / "summary.csv").write_text(summary_csv(summary_rows(report)))
    if blocks is not None:
        (out / "blocks.jsonl").write_text(blocks)


def _verdict(report) -> int:
    return EXIT_OK if report["pass"] else EXIT_MONITOR


def _print_summary(report, stream=sys.stdout):
    for kind in ("safety", "monotonicity"):
        for rule, frag in report[kind].items():
            state = "pass" if frag["pass"] else "FAIL"
            if frag["void"]:
                state = "void"
            print(f"{kind:13s} {rule:9s} {state:5s} checked={frag['checked']} violations={frag['violations']}",
                  file=stream)
    for name, g in report["gasper"].items():
        print(f"gasper        {name:25s} {'pass' if g['pass'] else 'FAIL'}", file=stream)
    for flip in report.get("raw_flips", []):
        print(f"raw flip      {flip['label']} safe at slot {flip['true_slot']}, unsafe at slot {flip['false_slot']}, "
              f"lmd confirmed afterwards: {flip['confirmed_lmd_after']}", file=stream)
    for g in report.get("gj_weight", []):
        print(f"gj weight     observer {g['observer']} total {g['total']} vs observer {g['other']} total "
              f"{g['total_other']} (epsilon {g['epsilon']}); precondition holds: {g['precondition_holds']}",
              file=stream)


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed, args.rule, args.horizon_slots)
    trace, sim = run_scenario(cfg)
    report = monitor_report(trace, strict=args.strict)
    write_outputs(args.out, trace, report, sim.store.to_jsonl())
    _print_summary(report)
    return _verdict(report)


def cmd_replay(args) -> int:
    cfg = replay_config(args.name)
    if args.rule:
        cfg.rules = [args.rule]
    if args.horizon_slots:
        cfg.horizon_slots = args.horizon_slots
    trace, sim = run_scenario(cfg.validate())
    report = monitor_report(trace, strict=args.strict)
    write_outputs(args.out, trace, report, sim.store.to_jsonl())
    _print_summary(report)
    return _verdict(report)


def cmd_sweep(args) -> int:
    strategies = [s for s in args.strategies.split(",") if s]
    bad = [s for s in strategies if s not in SWEEP_STRATEGIES]
    if bad:
        raise ConfigError([f"strategies: unknown {bad}"])
    betas = (None,)
    if args.betas:
        try:
            betas = tuple(x.strip() for x in args.betas.split(",") if x.strip())
            for b in betas:
                if not 0 <= float(b) < 1:
                    raise ValueError
        except ValueError:
            raise ConfigError(["betas: expected comma-separated fractions in [0, 1)"]) from None
    over = {}
    if args.config:
        try:
            over = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config: cannot load {args.config}: {exc}"]) from None
    if args.rule:
        over["rules"] = [args.rule]
    if args.horizon_slots:
        over["horizon_slots"] = args.horizon_slots
    rows, _ = run_sweep(strategies, args.seeds, betas, over, args.strict, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(rows, SWEEP_FIELDS))
    failed = [r for r in rows if not r["pass"]]
    totals = sweep_totals(rows)
    (out / "report.json").write_text(json.dumps(
        {"by_rule": totals, "failed_runs": len({(r["strategy"], r["seed"], r["beta"]) for r in failed})},
        indent=1, sort_keys=True))
    for k, v in totals.items():
        print(f"{k:9s} cells={v['cells']} safety={v['safety_violations']}/{v['safety_premise_cells']} "
              f"monotonicity={v['monotonicity_violations']}/{v['monotonicity_premise_cells']} "
              f"void={v['void_violations']}")
    return EXIT_OK if not failed else EXIT_MONITOR


def cmd_check(args) -> int:
    try:
        trace = Trace.read(args.trace)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError([f"trace: cannot load {args.trace}: {exc}"]) from None
    report = monitor_report(trace, rules=[args.rule] if args.rule else None, strict=args.strict)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_json(report))
        (out / "summary.csv").write_text(summary_csv(summary_rows(report), SUMMARY_FIELDS))
    _print_summary(report)
    return _verdict(report)


def cmd_latency(args) -> int:
    if args.trace:
        try:
            trace = Trace.read(args.trace)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError([f"trace: cannot load {args.trace}: {exc}"]) from None
    else:
        trace, _ = run_scenario(load_config(args.config, args.seed, None, args.horizon_slots))
    table = latency_table(TraceData(trace))
    rules = [k for k in table["aggregate"] if k != "finalization"]
    print("slot  block             " + "  ".join(f"{r:>8s}" for r in rules) + "  finalize  (slots; seconds)")
    for row in table["rows"]:
        cells = "  ".join(f"{'-' if row[r] is None else row[r]:>8}" for r in rules)
        f = row["finalization"]
        secs = "" if f is None else f"{f * table['seconds_per_slot']}s"
        print(f"{row['slot']:4d}  {row['block']}  {cells}  {'-' if f is None else f:>8}  {secs}")
    for k, a in table["aggregate"].items():
        print(f"{k:12s} p50={a['p50']} p90={a['p90']} max={a['max']} unconfirmed={a['unconfirmed']}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "replay": cmd_replay, "sweep": cmd_sweep, "check": cmd_check, "latency": cmd_latency}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
