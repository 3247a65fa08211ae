# simulator.py

"""
Deterministic discrete-event execution of annotated execution graphs with timeline, memory and trace output.
"""

from __future__ import annotations

import heapq
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import networkx as nx
import pandas as pd

from config import ModelConfig, SystemConfig
from costmodel import activation_bytes, persistent_bytes, stage_activation_bytes
from execgraph import ExecGraph, ExecNode
from schedule_core import DEFAULT_SLOT_WEIGHTS, Phase, StagePlacement

logger = logging.getLogger(__name__)


class SimulationError(ValueError):
    """Raised when a graph cannot be simulated or its results cannot be written."""


@dataclass
class Timeline:
    start: Dict[int, float]
    end: Dict[int, float]
    durations: Dict[int, float]
    makespan: float
    busy: List[float]
    link_busy: Dict[Tuple[int, int], float] = field(default_factory=dict)

    @property
    def workers(self) -> int:
        return len(self.busy)

    @property
    def idle(self) -> List[float]:
        return [self.makespan - b for b in self.busy]


@dataclass(frozen=True)
class SimMetrics:
    t_sim: float
    beta_idle: float
    utilization: List[float]

    def snapshot(self) -> dict:
        return {"t_sim": self.t_sim, "beta_idle": self.beta_idle, "utilization": list(self.utilization)}


@dataclass
class MemoryTimeline:
    """Per-worker (time, live activation bytes) steps on top of constant persistent bytes."""

    steps: List[List[Tuple[float, int]]]
    persistent: List[int]
    peak_activation: List[int]

    @property
    def peak_total(self) -> List[int]:
        return [a + p for a, p in zip(self.peak_activation, self.persistent)]

    @property
    def global_peak_activation(self) -> int:
        return max(self.peak_activation, default=0)

    @property
    def global_peak_total(self) -> int:
        return max(self.peak_total, default=0)

    def final_activation(self, worker: int) -> int:
        steps = self.steps[worker]
        return steps[-1][1] if steps else 0


# ============================================================================
# Durations
# ============================================================================

def annotate(graph: ExecGraph, sys: SystemConfig) -> Dict[int, float]:
    """Seconds per node from its cost annotation."""
    durations = {}
    for node in graph.nodes:
        if node.cost is None:
            raise SimulationError(f"node {node.id} ({node.name}) has no cost annotation")
        durations[node.id] = node.cost.duration(sys)
    return durations


def ideal_durations(graph: ExecGraph, slot_weights: Optional[Mapping[Phase, float]] = None) -> Dict[int, float]:
    """Slot-weight compute durations and free transfers, the reduction back to the table."""
    weights = slot_weights or DEFAULT_SLOT_WEIGHTS
    return {n.id: (weights[n.phase] if n.is_compute else 0.0) for n in graph.nodes}


# ============================================================================
# Event Engine
# ============================================================================

def simulate(
    graph: ExecGraph,
    sys: Optional[SystemConfig] = None,
    durations: Optional[Mapping[int, float]] = None,
) -> Timeline:
    """
    List-schedule the graph by earliest feasible start.

    Compute nodes run on their worker in local order; transfers hold the directed
    link between their endpoints and overlap with compute. Ties break on local
    order index, then node id.
    """
    if durations is None:
        if sys is None:
            raise SimulationError("simulate needs a SystemConfig or explicit durations")
        durations = annotate(graph, sys)
    missing = [n.id for n in graph.nodes if n.id not in durations]
    if missing:
        raise SimulationError(f"nodes without duration: {missing[:5]}")
    if not nx.is_directed_acyclic_graph(graph.to_networkx()):
        raise SimulationError("graph has a cycle")

    preds: Dict[int, set] = {n.id: set() for n in graph.nodes}
    for a, b in graph.edges:
        preds[b].add(a)
    local_index: Dict[int, int] = {}
    for order in graph.local_order:
        for i, node_id in enumerate(order):
            local_index[node_id] = i
            if i:
                preds[node_id].add(order[i - 1])
    succs: Dict[int, List[int]] = defaultdict(list)
    for b, ps in preds.items():
        for a in ps:
            succs[a].append(b)

    waiting = {node_id: len(ps) for node_id, ps in preds.items()}
    ready_at: Dict[int, float] = defaultdict(float)
    worker_free: Dict[int, float] = defaultdict(float)
    link_free: Dict[Tuple[int, int], float] = defaultdict(float)
    start: Dict[int, float] = {}
    end: Dict[int, float] = {}
    busy = [0.0] * graph.workers
    link_busy: Dict[Tuple[int, int], float] = defaultdict(float)

    def earliest(node: ExecNode) -> float:
        if node.is_compute:
            return max(ready_at[node.id], worker_free[node.worker])
        return max(ready_at[node.id], link_free[(node.src, node.dst)])

    heap: List[Tuple[float, int, int]] = []
    for node_id, count in waiting.items():
        if count == 0:
            node = graph.node(node_id)
            heapq.heappush(heap, (earliest(node), local_index.get(node_id, 0), node_id))

    while heap:
        t, rank, node_id = heapq.heappop(heap)
        node = graph.node(node_id)
        t_now = earliest(node)
        if t_now > t:
            heapq.heappush(heap, (t_now, rank, node_id))
            continue
        duration = durations[node_id]
        start[node_id], end[node_id] = t, t + duration
        if node.is_compute:
            worker_free[node.worker] = end[node_id]
            busy[node.worker] += duration
        else:
            link_free[(node.src, node.dst)] = end[node_id]
            link_busy[(node.src, node.dst)] += duration
        for nxt in succs[node_id]:
            ready_at[nxt] = max(ready_at[nxt], end[node_id])
            waiting[nxt] -= 1
            if waiting[nxt] == 0:
                nxt_node = graph.node(nxt)
                heapq.heappush(heap, (earliest(nxt_node), local_index.get(nxt, 0), nxt))

    if len(end) != len(graph.nodes):
        raise SimulationError(f"simulation stalled after {len(end)} of {len(graph.nodes)} nodes")
    makespan = max(end.values(), default=0.0)
    return Timeline(start, end, dict(durations), makespan, busy, dict(link_busy))


def validate_timeline(tl: Timeline, graph: ExecGraph) -> List[str]:
    """Edge ordering, exclusive resources and makespan; returns problems found."""
    problems = []
    for a, b in graph.edges:
        if tl.end[a] > tl.start[b]:
            problems.append(f"edge {a}->{b}: end {tl.end[a]} after start {tl.start[b]}")
    lanes: Dict[object, List[Tuple[float, float]]] = defaultdict(list)
    for node in graph.nodes:
        lane = ("w", node.worker) if node.is_compute else ("l", node.src, node.dst)
        lanes[lane].append((tl.start[node.id], tl.end[node.id]))
    for lane, spans in lanes.items():
        spans.sort()
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            if s1 < e0 and e1 > s1 and e0 > s0:
                problems.append(f"overlap on {lane}: [{s0}, {e0}) and [{s1}, {e1})")
    if tl.end and tl.makespan != max(tl.end.values()):
        problems.append("makespan is not the latest end time")
    return problems


# ============================================================================
# Metrics
# ============================================================================

def timeline_metrics(tl: Timeline, workers: Optional[int] = None) -> SimMetrics:
    """Idle fraction over [0, T_sim] counting compute only as busy time."""
    workers = workers or tl.workers
    if tl.makespan <= 0:
        return SimMetrics(0.0, 0.0, [0.0] * workers)
    busy = tl.busy + [0.0] * (workers - len(tl.busy))
    beta = sum(tl.makespan - b for b in busy) / (workers * tl.makespan)
    return SimMetrics(tl.makespan, beta, [b / tl.makespan for b in busy])


def memory_timeline(
    tl: Timeline,
    graph: ExecGraph,
    placement: Optional[StagePlacement] = None,
    model: Optional[ModelConfig] = None,
) -> MemoryTimeline:
    """
    Activation bytes allocated at Fwd start and freed at Wgrad end.

    With recomputation only the stage input stays resident between the end of Fwd
    and the start of Recomp.
    """
    placement = placement or graph.placement
    if placement is None or model is None or graph.table is None:
        raise SimulationError("memory_timeline needs the graph's table, a placement and a model")
    m = model.microbatch_size(graph.table.microbatches)
    boundary = activation_bytes(model, m)

    cells: Dict[tuple, Dict[Phase, int]] = defaultdict(dict)
    for node in graph.nodes:
        if node.is_compute and node.phase is not Phase.OPT:
            cells[(node.worker, node.microbatch, node.branch, node.stage)][node.phase] = node.id

    events: Dict[int, List[Tuple[float, int]]] = defaultdict(list)
    for (w, _, branch, stage), phases in cells.items():
        full = stage_activation_bytes(model, placement.blocks_of(branch, stage), m)
        fwd, wgrad = phases[Phase.FWD], phases[Phase.WGRAD]
        events[w].append((tl.start[fwd], full))
        events[w].append((tl.end[wgrad], -full))
        if Phase.RECOMP in phases:
            events[w].append((tl.end[fwd], boundary - full))
            events[w].append((tl.start[phases[Phase.RECOMP]], full - boundary))

    steps, peaks, persistent = [], [], []
    for w in range(graph.workers):
        live, peak, series = 0, 0, []
        # frees at the same instant land before allocations
        for t, delta in sorted(events[w]):
            live += delta
            peak = max(peak, live)
            series.append((t, live))
        steps.append(series)
        peaks.append(peak)
        persistent.append(persistent_bytes(placement, model, w))
    return MemoryTimeline(steps, persistent, peaks)


# ============================================================================
# Export
# ============================================================================

def trace_lanes(graph: ExecGraph) -> List[str]:
    pairs = {tuple(sorted((n.src, n.dst))) for n in graph.transfers()}
    lanes = [f"worker{w}" for w in range(graph.workers)]
    for a, b in sorted(pairs):
        lanes += [f"link{a}->{b}", f"link{b}->{a}"]
    return lanes


def _lane(node: ExecNode) -> str:
    return f"worker{node.worker}" if node.is_compute else f"link{node.src}->{node.dst}"


def export_trace(tl: Timeline, graph: ExecGraph, path: Path) -> Path:
    """Write a browser-viewable trace-event JSON file with one complete event per timed node."""
    events = []
    for node in graph.nodes:
        duration = tl.end[node.id] - tl.start[node.id]
        if duration <= 0:
            continue
        events.append({
            "name": node.name,
            "cat": node.kind.value,
            "ph": "X",
            "ts": tl.start[node.id] * 1e6,
            "dur": duration * 1e6,
            "pid": 0,
            "tid": _lane(node),
            "args": {
                "phase": node.phase.value if node.phase else None,
                "mb": node.microbatch,
                "branch": node.branch.value if node.branch else None,
                "stage": node.stage,
                "bytes": node.payload or None,
            },
        })
    document = {"traceEvents": events, "displayTimeUnit": "ms", "otherData": {"lanes": trace_lanes(graph)}}
    path = Path(path)
    try:
        path.write_text(json.dumps(document, indent=1), encoding="utf-8")
    except OSError as exc:
        raise SimulationError(f"cannot write trace to {path}: {exc}") from exc
    logger.info(f"Wrote {len(events)} trace events to {path}")
    return path


def timeline_to_frame(tl: Timeline, graph: ExecGraph) -> pd.DataFrame:
    rows = []
    for node in graph.nodes:
        rows.append({
            "node_id": node.id,
            "worker": node.worker if node.is_compute else f"{node.src}->{node.dst}",
            "kind": node.kind.value,
            "phase": node.phase.value if node.phase else node.direction.value,
            "mb": node.microbatch,
            "branch": node.branch.value if node.branch else "",
            "start_s": tl.start[node.id],
            "end_s": tl.end[node.id],
        })
    return pd.DataFrame(rows, columns=["node_id", "worker", "kind", "phase", "mb", "branch", "start_s", "end_s"])


def export_timeline_csv(tl: Timeline, graph: ExecGraph, path: Path) -> Path:
    path = Path(path)
    try:
        timeline_to_frame(tl, graph).to_csv(path, index=False)
    except OSError as exc:
        raise SimulationError(f"cannot write timeline to {path}: {exc}") from exc
    return path
