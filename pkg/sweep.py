# sweep.py

"""
Regime grids, experiment sweeps over schedules and system regimes, dataset emission and comparison reports.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import pandas as pd

from analytic import formula_bubble_ratio
from config import ConfigError, LabConfig, ModelConfig, SystemConfig
from data_loader import DATASET_COLUMNS, load_dataset, write_dataset
from execgraph import build_exec_graph, check_graph
from metrics import CellSample, SweepMetrics
from schedule_core import (
    ScheduleKind,
    StagePlacement,
    build_schedule,
    structural_metrics,
    validate_table,
)
from simulator import memory_timeline, simulate, timeline_metrics, validate_timeline

logger = logging.getLogger(__name__)

LEVELS = ("fast", "mid", "slow")

# network-bound -> compute-bound axis of the timeline datasets
PLOT_REGIMES = {"slow": "slow_nw_fast_cp", "mid": "mid_nw_mid_cp", "fast": "fast_nw_slow_cp"}

COLUMN_PREFIX = {
    ScheduleKind.GPIPE: "gpipe",
    ScheduleKind.ONEF1B: "onef1b",
    ScheduleKind.CHIMERA: "chimera",
    ScheduleKind.HANAYO: "hanayo",
}

TIB = float(2 ** 40)

ALL_OUTPUTS = (
    "formula_comparison",
    "timeline_comparison_bubble",
    "timeline_comparison_runtime",
    "memory",
    "unbalanced_runtime",
    "hanayo_table",
    "cells",
)


# ============================================================================
# Regimes
# ============================================================================

def regime_name(network: str, compute: str) -> str:
    return f"{network}_nw_{compute}_cp"


def system_label(regime: str) -> str:
    """Row label for comparison tables; the identity cell of the grid is the baseline system."""
    return "baseline" if regime == regime_name("mid", "mid") else regime


@dataclass(frozen=True)
class RegimeGrid:
    baseline: SystemConfig
    factor: float
    regimes: Dict[str, SystemConfig]

    @property
    def names(self) -> List[str]:
        return list(self.regimes)

    def __getitem__(self, name: str) -> SystemConfig:
        try:
            return self.regimes[name]
        except KeyError:
            raise ConfigError(f"Unknown regime '{name}'; expected one of {self.names}") from None


def build_regimes(baseline: SystemConfig, factor: float = 10.0) -> RegimeGrid:
    """
    3x3 grid of network x compute scalings.

    Fast multiplies throughput/bandwidth by `factor` and divides latency by it,
    slow does the inverse; compute scaling moves TP and BW_m together with L_c and L_m.
    """
    if factor <= 1:
        raise ConfigError(f"regime factor must be > 1, got {factor}")
    scale = {"fast": factor, "mid": 1.0, "slow": 1.0 / factor}
    regimes = {}
    for net in LEVELS:
        for comp in LEVELS:
            name = regime_name(net, comp)
            if net == "mid" and comp == "mid":
                regimes[name] = replace(baseline, name=name)
                continue
            fn, fc = scale[net], scale[comp]
            regimes[name] = replace(
                baseline,
                name=name,
                peak_throughput=baseline.peak_throughput * fc,
                mem_bandwidth=baseline.mem_bandwidth * fc,
                compute_latency=baseline.compute_latency / fc,
                mem_latency=baseline.mem_latency / fc,
                net_bandwidth=baseline.net_bandwidth * fn,
                net_latency=baseline.net_latency / fn,
            )
    return RegimeGrid(baseline, factor, regimes)


# ============================================================================
# Sweep Specification
# ============================================================================

@dataclass(frozen=True, order=True)
class ScheduleVariant:
    kind: ScheduleKind
    asymmetric: bool = False
    recompute: bool = False
    grad_sync: bool = False

    @property
    def label(self) -> str:
        parts = ["asym" if self.asymmetric else "sym"]
        if self.recompute:
            parts.append("recompute")
        if self.grad_sync:
            parts.append("gradsync")
        return "+".join(parts)

    def placement(self, stages: int, blocks: int) -> StagePlacement:
        if self.asymmetric:
            return StagePlacement.asymmetric_chimera(stages, blocks)
        return StagePlacement.uniform(self.kind, stages, blocks)


@dataclass(frozen=True, order=True)
class SweepCell:
    variant: ScheduleVariant
    stages: int
    microbatches: int
    regime: str
    blocks: int

    @property
    def label(self) -> str:
        return (f"{COLUMN_PREFIX[self.variant.kind]}[{self.variant.label}] S={self.stages} "
                f"B={self.microbatches} N={self.blocks} {self.regime}")


@dataclass
class SweepSpec:
    """What to run; `cells()` expands the requested outputs into independent sweep cells."""

    schedules: List[ScheduleVariant]
    stages: List[int]
    microbatches: List[int]
    model: ModelConfig
    regimes: RegimeGrid
    outputs: List[str] = field(default_factory=lambda: list(ALL_OUTPUTS))
    plot_stages: int = 8
    hanayo_stages: int = 8
    hanayo_microbatches: int = 8
    asym_blocks: int = 120

    @classmethod
    def from_config(cls, cfg: LabConfig, outputs: Optional[Iterable[str]] = None) -> "SweepSpec":
        sweep = cfg.sweep
        return cls(
            schedules=[ScheduleVariant(ScheduleKind.GPIPE), ScheduleVariant(ScheduleKind.ONEF1B),
                       ScheduleVariant(ScheduleKind.CHIMERA)],
            stages=list(sweep.stages),
            microbatches=list(sweep.microbatches),
            model=cfg.model,
            regimes=build_regimes(cfg.system, sweep.regime_factor),
            outputs=list(outputs or ALL_OUTPUTS),
            plot_stages=sweep.plot_stages,
            hanayo_stages=sweep.hanayo_stages,
            hanayo_microbatches=sweep.hanayo_microbatches,
            asym_blocks=sweep.asym_blocks,
        )

    def cells(self) -> List[SweepCell]:
        unknown = sorted(set(self.outputs) - set(ALL_OUTPUTS))
        if unknown:
            raise ConfigError(f"Unknown sweep outputs: {unknown}")
        n = self.model.blocks
        mid = PLOT_REGIMES["mid"]
        cells = set()
        wants = set(self.outputs)
        if wants & {"formula_comparison", "timeline_comparison_bubble", "timeline_comparison_runtime"}:
            regimes = list(PLOT_REGIMES.values()) if wants - {"formula_comparison"} else [mid]
            for v in self.schedules:
                for b in self.microbatches:
                    for r in regimes:
                        cells.add(SweepCell(v, self.plot_stages, b, r, n))
        if "memory" in wants:
            for v in self.schedules:
                for s in self.stages:
                    for b in self.microbatches:
                        cells.add(SweepCell(v, s, b, mid, n))
        if "unbalanced_runtime" in wants:
            for asym in (False, True):
                v = ScheduleVariant(ScheduleKind.CHIMERA, asymmetric=asym)
                for s in self.stages:
                    for b in self.microbatches:
                        for r in PLOT_REGIMES.values():
                            cells.add(SweepCell(v, s, b, r, self.asym_blocks))
        if "hanayo_table" in wants:
            if self.hanayo_stages != self.hanayo_microbatches:
                raise ConfigError(
                    f"Hanayo runs only at S = B, got S={self.hanayo_stages} B={self.hanayo_microbatches}"
                )
            for kind in (ScheduleKind.CHIMERA, ScheduleKind.HANAYO):
                for r in self.regimes.names:
                    cells.add(SweepCell(ScheduleVariant(kind), self.hanayo_stages,
                                        self.hanayo_microbatches, r, n))
        ordered = sorted(cells, key=lambda c: (COLUMN_PREFIX[c.variant.kind], c.variant.label,
                                               c.stages, c.microbatches, c.regime, c.blocks))
        for b in {c.microbatches for c in ordered}:
            self.model.microbatch_size(b)
        return ordered


# ============================================================================
# Cell Evaluation
# ============================================================================

@dataclass(frozen=True)
class CellResult:
    cell: SweepCell
    formula_bubble: float = math.nan
    table_bubble: float = math.nan
    t_sim: float = math.nan
    beta_idle: float = math.nan
    peak_activation_bytes: float = math.nan
    status: str = "ok"
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_row(self) -> dict:
        return {
            "schedule": COLUMN_PREFIX[self.cell.variant.kind],
            "variant": self.cell.variant.label,
            "S": self.cell.stages,
            "B": self.cell.microbatches,
            "regime": self.cell.regime,
            "blocks": self.cell.blocks,
            "formula_bubble": self.formula_bubble,
            "table_bubble": self.table_bubble,
            "t_sim": self.t_sim,
            "beta_idle": self.beta_idle,
            "peak_activation_bytes": self.peak_activation_bytes,
            "status": self.status,
            "error": self.error,
        }


def evaluate_cell(cell: SweepCell, model: ModelConfig, regimes: RegimeGrid) -> CellResult:
    """Table -> validation -> structural metrics -> graph -> simulation -> memory for one cell."""
    variant = cell.variant
    model = replace(model, blocks=cell.blocks)
    placement = variant.placement(cell.stages, cell.blocks)
    table = build_schedule(variant.kind, cell.stages, cell.microbatches, placement,
                           recompute=variant.recompute)
    report = validate_table(table)
    if not report.ok:
        raise RuntimeError(f"invalid table: {report.violations[0]}")
    structural = structural_metrics(table)
    formula = math.nan
    if variant.kind is not ScheduleKind.HANAYO and cell.stages >= 2:
        formula = formula_bubble_ratio(variant.kind, cell.stages, cell.microbatches).bubble_ratio

    graph = build_exec_graph(table, placement, model, grad_sync=variant.grad_sync)
    graph_report = check_graph(graph)
    if not graph_report.ok:
        raise RuntimeError(f"invalid graph: {graph_report.violations[0]}")
    tl = simulate(graph, regimes[cell.regime])
    problems = validate_timeline(tl, graph)
    if problems:
        raise RuntimeError(f"invalid timeline: {problems[0]}")
    sim = timeline_metrics(tl, table.workers)
    memory = memory_timeline(tl, graph, placement, model)
    return CellResult(
        cell=cell,
        formula_bubble=formula,
        table_bubble=structural.bubble_ratio,
        t_sim=sim.t_sim,
        beta_idle=sim.beta_idle,
        peak_activation_bytes=float(memory.global_peak_activation),
    )


class SweepRunner:
    """Evaluates independent sweep cells on a thread pool and returns them in cell order."""

    def __init__(self, concurrency: int = 4, metrics: Optional[SweepMetrics] = None) -> None:
        self.concurrency = max(1, concurrency)
        self.metrics = metrics or SweepMetrics()

    def _run_one(self, cell: SweepCell, model: ModelConfig, regimes: RegimeGrid) -> CellResult:
        start = time.perf_counter()
        try:
            result = evaluate_cell(cell, model, regimes)
        except Exception as exc:
            logger.exception(f"Sweep cell failed: {cell.label}")
            result = CellResult(cell=cell, status="error", error=f"{type(exc).__name__}: {exc}")
        self.metrics.record(CellSample(
            label=cell.label,
            start_time=start,
            end_time=time.perf_counter(),
            success=result.ok,
            error=result.error or None,
        ))
        return result

    def run(self, cells: List[SweepCell], model: ModelConfig, regimes: RegimeGrid) -> List[CellResult]:
        results: Dict[SweepCell, CellResult] = {}
        with ThreadPoolExecutor(max_workers=self.concurrency) as executor:
            futures = {executor.submit(self._run_one, cell, model, regimes): cell for cell in cells}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        return [results[cell] for cell in cells]


# ============================================================================
# Datasets
# ============================================================================

def results_frame(results: Iterable[CellResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in results], columns=DATASET_COLUMNS["cells"])


def _pick(cells: pd.DataFrame, schedule: str, stages: int, microbatches: int, regime: str,
          variant: str = "sym", blocks: Optional[int] = None) -> Optional[pd.Series]:
    mask = ((cells["schedule"] == schedule) & (cells["S"] == stages) & (cells["B"] == microbatches)
            & (cells["regime"] == regime) & (cells["variant"] == variant) & (cells["status"] == "ok"))
    if blocks is not None:
        mask &= cells["blocks"] == blocks
    rows = cells[mask]
    return None if rows.empty else rows.iloc[0]


def _value(row: Optional[pd.Series], column: str, scale: float = 1.0) -> float:
    return math.nan if row is None else float(row[column]) * scale


def formula_comparison_frame(cells: pd.DataFrame, spec: SweepSpec) -> pd.DataFrame:
    rows = []
    for b in spec.microbatches:
        row = {"B": b}
        for v in spec.schedules:
            name = COLUMN_PREFIX[v.kind]
            hit = _pick(cells, name, spec.plot_stages, b, PLOT_REGIMES["mid"], v.label, spec.model.blocks)
            row[f"{name}_formula"] = _value(hit, "formula_bubble", 100.0)
            row[f"{name}_table"] = _value(hit, "table_bubble", 100.0)
        rows.append(row)
    return pd.DataFrame(rows)


def timeline_comparison_frame(cells: pd.DataFrame, spec: SweepSpec, column: str) -> pd.DataFrame:
    scale = 100.0 if column == "beta_idle" else 1.0
    rows = []
    for b in spec.microbatches:
        row = {"B": b}
        for level in ("slow", "mid", "fast"):
            for v in spec.schedules:
                name = COLUMN_PREFIX[v.kind]
                hit = _pick(cells, name, spec.plot_stages, b, PLOT_REGIMES[level], v.label, spec.model.blocks)
                row[f"{level}_{name}"] = _value(hit, column, scale)
        rows.append(row)
    return pd.DataFrame(rows)


def memory_frame(cells: pd.DataFrame, spec: SweepSpec) -> pd.DataFrame:
    rows = []
    for b in spec.microbatches:
        row = {"B": b}
        for s in spec.stages:
            for v in spec.schedules:
                name = COLUMN_PREFIX[v.kind]
                hit = _pick(cells, name, s, b, PLOT_REGIMES["mid"], v.label, spec.model.blocks)
                row[f"{name}_s{s}"] = _value(hit, "peak_activation_bytes", 1.0 / TIB)
        rows.append(row)
    return pd.DataFrame(rows)


def delta_t_pct(t_ref: float, t_alt: float) -> float:
    """Relative runtime change in percent; negative means the alternative is faster."""
    if t_ref <= 0:
        raise ValueError(f"reference runtime must be positive, got {t_ref}")
    return 100.0 * (t_alt - t_ref) / t_ref


def unbalanced_frame(cells: pd.DataFrame, spec: SweepSpec) -> pd.DataFrame:
    rows = []
    for b in spec.microbatches:
        row = {"B": b}
        for level in ("fast", "mid", "slow"):
            for s in spec.stages:
                regime = PLOT_REGIMES[level]
                sym = _pick(cells, "chimera", s, b, regime, "sym", spec.asym_blocks)
                asym = _pick(cells, "chimera", s, b, regime, "asym", spec.asym_blocks)
                pct = math.nan
                if sym is not None and asym is not None:
                    pct = delta_t_pct(float(sym["t_sim"]), float(asym["t_sim"]))
                row[f"{level}_s{s}_pct"] = pct
        rows.append(row)
    return pd.DataFrame(rows)


# ============================================================================
# Comparison Reports
# ============================================================================

def comparison_frame(cells: pd.DataFrame, mode: str, stages: Optional[int] = None,
                     microbatches: Optional[int] = None,
                     blocks: Optional[int] = None) -> Tuple[pd.DataFrame, List[str]]:
    """
    Pair reference and alternative runs.

    hanayo_vs_chimera: Chimera (reference) against Hanayo per regime, both at the same
    (S, B, N); N defaults to the block count of the Hanayo runs.
    asym_vs_sym: symmetric Chimera (reference) against the 1:2 placement per regime, S and B.
    """
    missing: List[str] = []
    rows = []
    ok = cells[cells["status"] == "ok"]
    if mode == "hanayo_vs_chimera":
        hanayo = ok[ok["schedule"] == "hanayo"]
        if stages is None:
            stages = int(hanayo["S"].iloc[0]) if not hanayo.empty else 8
        if microbatches is None:
            microbatches = int(hanayo["B"].iloc[0]) if not hanayo.empty else stages
        if blocks is None and not hanayo.empty:
            blocks = int(hanayo["blocks"].iloc[0])
        for regime in [regime_name(n, c) for n in LEVELS for c in LEVELS]:
            ref = _pick(ok, "chimera", stages, microbatches, regime, "sym", blocks)
            alt = _pick(ok, "hanayo", stages, microbatches, regime, "sym", blocks)
            if ref is None or alt is None:
                which = [name for name, hit in (("chimera", ref), ("hanayo", alt)) if hit is None]
                missing.append(f"{regime}: missing {', '.join(which)} at S={stages} B={microbatches}")
                continue
            rows.append({
                "system": system_label(regime),
                "beta_c": 100.0 * float(ref["beta_idle"]),
                "beta_h": 100.0 * float(alt["beta_idle"]),
                "t_c": float(ref["t_sim"]),
                "t_h": float(alt["t_sim"]),
                "delta_t_pct": delta_t_pct(float(ref["t_sim"]), float(alt["t_sim"])),
            })
        columns = DATASET_COLUMNS["hanayo_table"]
    elif mode == "asym_vs_sym":
        chimera = ok[ok["schedule"] == "chimera"]
        asym = chimera[chimera["variant"] == "asym"]
        for _, alt in asym.sort_values(["regime", "S", "B"]).iterrows():
            ref = _pick(ok, "chimera", int(alt["S"]), int(alt["B"]), alt["regime"], "sym", int(alt["blocks"]))
            if ref is None:
                missing.append(f"{alt['regime']}: missing symmetric chimera at S={alt['S']} B={alt['B']}")
                continue
            rows.append({
                "system": system_label(alt["regime"]),
                "S": int(alt["S"]),
                "B": int(alt["B"]),
                "beta_sym": 100.0 * float(ref["beta_idle"]),
                "beta_asym": 100.0 * float(alt["beta_idle"]),
                "t_sym": float(ref["t_sim"]),
                "t_asym": float(alt["t_sim"]),
                "delta_t_pct": delta_t_pct(float(ref["t_sim"]), float(alt["t_sim"])),
            })
        if asym.empty:
            missing.append("no asymmetric chimera cells in dataset")
        columns = ["system", "S", "B", "beta_sym", "beta_asym", "t_sym", "t_asym", "delta_t_pct"]
    else:
        raise ValueError(f"unknown report mode '{mode}'")
    return pd.DataFrame(rows, columns=columns), missing


def compare_report(dataset: Union[pd.DataFrame, Path, str], mode: str) -> str:
    """Text table of beta_idle pairs and runtime deltas; missing cells are listed below it."""
    cells = dataset if isinstance(dataset, pd.DataFrame) else load_dataset(Path(dataset))
    frame, missing = comparison_frame(cells, mode)
    title = {"hanayo_vs_chimera": "Hanayo vs Chimera (negative delta: Hanayo faster)",
             "asym_vs_sym": "Asymmetric vs symmetric Chimera (negative delta: asymmetric faster)"}[mode]
    lines = [title, "=" * len(title)]
    if frame.empty:
        lines.append("(no comparable cells)")
    else:
        lines.append(frame.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    lines += [f"MISSING {m}" for m in missing]
    return "\n".join(lines) + "\n"


# ============================================================================
# Sweep Driver
# ============================================================================

def run_sweep(
    spec: SweepSpec,
    out_dir: Path,
    concurrency: int = 4,
    metrics: Optional[SweepMetrics] = None,
) -> Dict[str, Path]:
    """Evaluate every planned cell and write the requested datasets."""
    cells = spec.cells()
    runner = SweepRunner(concurrency=concurrency, metrics=metrics)
    logger.info(f"Running sweep: {len(cells)} cells on {runner.concurrency} thread(s)")
    results = runner.run(cells, spec.model, spec.regimes)
    frame = results_frame(results)

    builders = {
        "formula_comparison": lambda: formula_comparison_frame(frame, spec),
        "timeline_comparison_bubble": lambda: timeline_comparison_frame(frame, spec, "beta_idle"),
        "timeline_comparison_runtime": lambda: timeline_comparison_frame(frame, spec, "t_sim"),
        "memory": lambda: memory_frame(frame, spec),
        "unbalanced_runtime": lambda: unbalanced_frame(frame, spec),
        "hanayo_table": lambda: comparison_frame(frame, "hanayo_vs_chimera", spec.hanayo_stages,
                                                 spec.hanayo_microbatches, spec.model.blocks)[0],
        "cells": lambda: frame,
    }
    paths = {}
    for name in ALL_OUTPUTS:
        if name in spec.outputs:
            paths[name] = write_dataset(builders[name](), out_dir, name)

    snapshot = runner.metrics.snapshot()
    logger.info(
        f"Sweep finished: {snapshot['successes']}/{snapshot['total']} cells ok, "
        f"{snapshot['failures']} failed, avg {snapshot['avg_wall_ms'] or 0:.1f} ms per cell"
    )
    return paths
