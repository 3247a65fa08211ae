# pipelab.py

"""
Command-line entry point: render tables, evaluate formulas, check graphs, simulate cells and run sweeps.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from analytic import formula_bubble_ratio
from config import ConfigError, LabConfig, _env_str
from execgraph import GraphError, build_exec_graph, check_graph, dump_graph
from schedule_core import (
    ScheduleError,
    ScheduleKind,
    StagePlacement,
    build_schedule,
    render_table,
    structural_metrics,
    validate_table,
)
from simulator import (
    SimulationError,
    export_timeline_csv,
    export_trace,
    memory_timeline,
    simulate,
    timeline_metrics,
)
from sweep import ALL_OUTPUTS, SweepSpec, build_regimes, compare_report, run_sweep

logger = logging.getLogger(__name__)


def _add_schedule_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kind", required=True, help="gpipe | 1f1b | chimera | hanayo")
    parser.add_argument("-S", "--stages", type=int, required=True)
    parser.add_argument("-B", "--microbatches", type=int, required=True)
    parser.add_argument("--blocks", type=int, default=None, help="override model block count N")
    parser.add_argument("--asym", action="store_true", help="asymmetric 1:2 Chimera placement")
    parser.add_argument("--recompute", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipelab", description="Pipeline-parallel schedule lab")
    parser.add_argument("--config", type=Path, default=None, help="JSON config with model/system/sweep sections")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--log-level", default=_env_str("PIPELAB_LOG_LEVEL", "INFO"))
    parser.add_argument("--seed-irrelevant", action="store_true", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="verb", required=True)

    table = sub.add_parser("table", help="render a schedule table with structural metrics")
    _add_schedule_args(table)
    table.add_argument("--format", choices=["ascii", "csv"], default="ascii")

    formula = sub.add_parser("formula", help="closed-form bubble ratio")
    formula.add_argument("--kind", required=True)
    formula.add_argument("-S", "--stages", type=int, required=True)
    formula.add_argument("-B", "--microbatches", type=int, required=True)

    graph = sub.add_parser("graph", help="build and check an execution graph")
    _add_schedule_args(graph)
    graph.add_argument("--dump", action="store_true", help="write graph.txt to --out")
    graph.add_argument("--grad-sync", action="store_true")

    sim = sub.add_parser("simulate", help="simulate one schedule under one regime")
    _add_schedule_args(sim)
    sim.add_argument("--regime", default="mid_nw_mid_cp")
    sim.add_argument("--grad-sync", action="store_true")
    sim.add_argument("--trace", action="store_true", help="write trace.json to --out")
    sim.add_argument("--timeline", action="store_true", help="write timeline.csv to --out")

    sweep = sub.add_parser("sweep", help="run the experiment sweep and write datasets")
    sweep.add_argument("--outputs", default=",".join(ALL_OUTPUTS))

    report = sub.add_parser("report", help="compare runs from a sweep dataset")
    report.add_argument("--mode", choices=["hanayo_vs_chimera", "asym_vs_sym"], required=True)
    report.add_argument("--dataset", type=Path, default=None, help="cells.csv from a sweep")
    return parser


def _load_config(args: argparse.Namespace) -> LabConfig:
    cfg = LabConfig.from_file(args.config) if args.config else LabConfig.from_env().validate()
    if getattr(args, "blocks", None):
        cfg.model = replace(cfg.model, blocks=args.blocks)
    return cfg


def _out_dir(args: argparse.Namespace, cfg: LabConfig) -> Path:
    out = args.out or Path(cfg.sweep.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _placement(args: argparse.Namespace, cfg: LabConfig) -> StagePlacement:
    if args.asym:
        return StagePlacement.asymmetric_chimera(args.stages, cfg.model.blocks)
    return StagePlacement.uniform(args.kind, args.stages, cfg.model.blocks)


def _table(args, cfg):
    placement = _placement(args, cfg)
    return build_schedule(args.kind, args.stages, args.microbatches, placement, recompute=args.recompute), placement


def cmd_table(args: argparse.Namespace, cfg: LabConfig) -> int:
    table, _ = _table(args, cfg)
    print(render_table(table, args.format), end="")
    report = validate_table(table)
    print(report)
    if report.ok:
        m = structural_metrics(table)
        print(f"bubble_ratio={m.bubble_ratio:.4f} utilization={m.utilization:.4f} "
              f"schedule_length={m.schedule_length:g}")
    return 0 if report.ok else 1


def cmd_formula(args: argparse.Namespace, cfg: LabConfig) -> int:
    result = formula_bubble_ratio(args.kind, args.stages, args.microbatches)
    print(f"{result.kind.value} S={args.stages} B={args.microbatches} "
          f"bubble_ratio={result.bubble_ratio:.4f} ({result.assumptions})")
    return 0


def cmd_graph(args: argparse.Namespace, cfg: LabConfig) -> int:
    table, placement = _table(args, cfg)
    graph = build_exec_graph(table, placement, cfg.model, grad_sync=args.grad_sync)
    report = check_graph(graph)
    print(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges, {len(graph.transfers())} transfers")
    for v in report.violations:
        print(f"  [{v.rule}] nodes={list(v.node_ids)} {v.detail}")
    print("graph ok" if report.ok else f"{len(report.violations)} violation(s)")
    if args.dump:
        path = _out_dir(args, cfg) / "graph.txt"
        path.write_text(dump_graph(graph), encoding="utf-8")
        print(f"wrote {path}")
    return 0 if report.ok else 1


def cmd_simulate(args: argparse.Namespace, cfg: LabConfig) -> int:
    table, placement = _table(args, cfg)
    graph = build_exec_graph(table, placement, cfg.model, grad_sync=args.grad_sync)
    system = build_regimes(cfg.system, cfg.sweep.regime_factor)[args.regime]
    tl = simulate(graph, system)
    metrics = timeline_metrics(tl, table.workers)
    memory = memory_timeline(tl, graph, placement, cfg.model)
    print(f"{table.kind.value} S={args.stages} B={args.microbatches} on {args.regime}: "
          f"T_sim={metrics.t_sim:.4f}s beta_idle={100 * metrics.beta_idle:.2f}% "
          f"peak_activation={memory.global_peak_activation / 2 ** 40:.4f}TiB "
          f"peak_total={memory.global_peak_total / 2 ** 40:.4f}TiB")
    if args.trace:
        print(f"wrote {export_trace(tl, graph, _out_dir(args, cfg) / 'trace.json')}")
    if args.timeline:
        print(f"wrote {export_timeline_csv(tl, graph, _out_dir(args, cfg) / 'timeline.csv')}")
    return 0


def cmd_sweep(args: argparse.Namespace, cfg: LabConfig) -> int:
    outputs = [o.strip() for o in args.outputs.split(",") if o.strip()]
    spec = SweepSpec.from_config(cfg, outputs)
    paths = run_sweep(spec, _out_dir(args, cfg), concurrency=cfg.sweep.concurrency)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_report(args: argparse.Namespace, cfg: LabConfig) -> int:
    dataset = args.dataset or (args.out or Path(cfg.sweep.output_dir)) / "cells.csv"
    print(compare_report(dataset, args.mode), end="")
    return 0


COMMANDS = {
    "table": cmd_table,
    "formula": cmd_formula,
    "graph": cmd_graph,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.seed_irrelevant:
        print("pipelab: --seed-irrelevant is reserved; runs are deterministic and take no seed", file=sys.stderr)
        return 2
    try:
        if hasattr(args, "kind"):
            args.kind = ScheduleKind.parse(args.kind)
        cfg = _load_config(args)
        return COMMANDS[args.verb](args, cfg)
    except (ConfigError, ScheduleError, GraphError, SimulationError, FileNotFoundError, ValueError) as exc:
        print(f"pipelab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
