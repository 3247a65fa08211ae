# execgraph.py

"""
Execution graphs: schedule tables translated into compute and transfer nodes with dependency edges.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

import networkx as nx

from config import ModelConfig
from costmodel import CostAnnotation, activation_bytes, stage_costs, weight_bytes_per_block
from schedule_core import (
    Branch,
    Cell,
    Phase,
    ScheduleKind,
    ScheduleTable,
    StagePlacement,
    validate_table,
)

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Raised when a graph cannot be built from a table and placement."""


class NodeKind(str, Enum):
    COMPUTE = "compute"
    TRANSFER = "transfer"


class Direction(str, Enum):
    ACTIVATION = "activation"
    GRADIENT = "gradient"
    REDUCTION = "reduction"


StageRef = Tuple[Branch, int]


@dataclass(frozen=True)
class ExecNode:
    id: int
    kind: NodeKind
    worker: Optional[int] = None
    microbatch: Optional[int] = None
    branch: Optional[Branch] = None
    stage: Optional[int] = None
    phase: Optional[Phase] = None
    src: Optional[int] = None
    dst: Optional[int] = None
    src_stage: Optional[StageRef] = None
    dst_stage: Optional[StageRef] = None
    direction: Optional[Direction] = None
    payload: int = 0
    cost: Optional[CostAnnotation] = None

    @property
    def is_compute(self) -> bool:
        return self.kind is NodeKind.COMPUTE

    @property
    def name(self) -> str:
        if self.is_compute:
            if self.phase is Phase.OPT:
                return f"O@w{self.worker}"
            return f"{self.branch.value}{self.phase.value}{self.microbatch}s{self.stage}"
        return f"X{self.direction.value[0]}{self.microbatch if self.microbatch is not None else ''}:{self.src}->{self.dst}"

    def describe(self) -> str:
        if self.is_compute:
            mb = "-" if self.microbatch is None else self.microbatch
            branch = "-" if self.phase is Phase.OPT else self.branch.value
            stage = "-" if self.stage is None else self.stage
            return f"compute worker={self.worker} phase={self.phase.value} mb={mb} branch={branch} stage={stage}"
        mb = "-" if self.microbatch is None else self.microbatch
        branch = "-" if self.branch is None else self.branch.value
        return (f"transfer src={self.src} dst={self.dst} mb={mb} branch={branch} "
                f"bytes={self.payload} direction={self.direction.value}")


@dataclass
class ExecGraph:
    nodes: List[ExecNode]
    edges: List[Tuple[int, int]]
    local_order: List[List[int]]
    table: Optional[ScheduleTable] = None
    placement: Optional[StagePlacement] = None
    _by_id: Dict[int, ExecNode] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {n.id: n for n in self.nodes}

    @property
    def workers(self) -> int:
        return len(self.local_order)

    def node(self, node_id: int) -> ExecNode:
        return self._by_id[node_id]

    def transfers(self) -> List[ExecNode]:
        return [n for n in self.nodes if not n.is_compute]

    def predecessors(self) -> Dict[int, List[int]]:
        preds: Dict[int, List[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            preds[b].append(a)
        return preds

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(n.id for n in self.nodes)
        g.add_edges_from(self.edges)
        return g

    def with_edge(self, a: int, b: int) -> "ExecGraph":
        return ExecGraph(list(self.nodes), self.edges + [(a, b)], [list(o) for o in self.local_order],
                         self.table, self.placement)

    def without_node(self, node_id: int) -> "ExecGraph":
        nodes = [n for n in self.nodes if n.id != node_id]
        edges = [(a, b) for a, b in self.edges if node_id not in (a, b)]
        order = [[i for i in o if i != node_id] for o in self.local_order]
        return ExecGraph(nodes, edges, order, self.table, self.placement)


# ============================================================================
# Construction
# ============================================================================

def _check_placement(table: ScheduleTable, placement: StagePlacement) -> None:
    if placement.kind is not table.kind or placement.stages != table.stages:
        raise GraphError(
            f"placement for {placement.kind.value} S={placement.stages} does not match "
            f"{table.kind.value} S={table.stages}"
        )
    for route in table.routes():
        for hop in route:
            key = (hop.branch, hop.stage)
            if key not in placement.workers:
                raise GraphError(f"stage {hop.branch.value}{hop.stage} is hosted nowhere")
            if placement.workers[key] != hop.worker:
                raise GraphError(
                    f"stage {hop.branch.value}{hop.stage} placed on worker {placement.workers[key]}, "
                    f"table runs it on worker {hop.worker}"
                )


def build_exec_graph(
    table: ScheduleTable,
    placement: StagePlacement,
    model: ModelConfig,
    dtype_bytes: Optional[int] = None,
    grad_sync: bool = False,
) -> ExecGraph:
    """
    Traverse the table row-wise into compute nodes and insert one transfer per
    cross-worker dependency.

    Activations travel Fwd(k) -> Fwd(k+1). The gradient for stage k leaves the
    downstream worker once its Wgrad is done and feeds Agrad(k). Colocated stages
    are joined by a direct edge.
    """
    report = validate_table(table)
    if not report.ok:
        raise GraphError(f"table is invalid: {report.violations[0]}")
    _check_placement(table, placement)
    if grad_sync and table.kind is not ScheduleKind.CHIMERA:
        raise GraphError("grad_sync applies only to Chimera's replicated stages")
    if dtype_bytes is not None:
        model = replace(model, dtype_bytes=dtype_bytes)

    m = model.microbatch_size(table.microbatches)
    payload = activation_bytes(model, m)
    nodes: List[ExecNode] = []
    edges: List[Tuple[int, int]] = []
    local_order: List[List[int]] = []
    ids: Dict[Cell, int] = {}
    opt_ids: List[int] = []

    for w in range(table.workers):
        order = []
        for cell in table.row_order(w):
            node_id = len(nodes)
            if cell.phase is Phase.OPT:
                flops, mem = stage_costs(model, placement.worker_blocks(w), m, Phase.OPT)
                opt_ids.append(node_id)
            else:
                flops, mem = stage_costs(model, placement.blocks_of(cell.branch, cell.stage), m, cell.phase)
                ids[cell] = node_id
            nodes.append(ExecNode(
                id=node_id,
                kind=NodeKind.COMPUTE,
                worker=w,
                microbatch=cell.microbatch,
                branch=cell.branch,
                stage=cell.stage,
                phase=cell.phase,
                cost=CostAnnotation(flops=flops, mem_bytes=mem),
            ))
            if order:
                edges.append((order[-1], node_id))
            order.append(node_id)
        local_order.append(order)

    def transfer(producer: int, consumer: int, src: int, dst: int, direction: Direction,
                 mb: Optional[int], branch: Optional[Branch], src_stage, dst_stage, size: int) -> None:
        node_id = len(nodes)
        nodes.append(ExecNode(
            id=node_id,
            kind=NodeKind.TRANSFER,
            microbatch=mb,
            branch=branch,
            src=src,
            dst=dst,
            src_stage=src_stage,
            dst_stage=dst_stage,
            direction=direction,
            payload=size,
            cost=CostAnnotation(net_bytes=float(size), transfer=True),
        ))
        edges.append((producer, node_id))
        edges.append((node_id, consumer))

    wgrads_by_worker: Dict[int, List[int]] = defaultdict(list)
    for mb, route in enumerate(table.routes()):
        for i, hop in enumerate(route):
            fwd = ids[Cell(mb, hop.branch, Phase.FWD, hop.stage)]
            agrad = ids[Cell(mb, hop.branch, Phase.AGRAD, hop.stage)]
            wgrad = ids[Cell(mb, hop.branch, Phase.WGRAD, hop.stage)]
            if table.recompute:
                recomp = ids[Cell(mb, hop.branch, Phase.RECOMP, hop.stage)]
                edges += [(fwd, recomp), (recomp, agrad)]
            else:
                edges.append((fwd, agrad))
            edges.append((agrad, wgrad))
            wgrads_by_worker[hop.worker].append(wgrad)
            if i + 1 == len(route):
                continue
            nxt = route[i + 1]
            nxt_fwd = ids[Cell(mb, nxt.branch, Phase.FWD, nxt.stage)]
            nxt_wgrad = ids[Cell(mb, nxt.branch, Phase.WGRAD, nxt.stage)]
            here, there = (hop.branch, hop.stage), (nxt.branch, nxt.stage)
            if nxt.worker == hop.worker:
                edges += [(fwd, nxt_fwd), (nxt_wgrad, agrad)]
            else:
                transfer(fwd, nxt_fwd, hop.worker, nxt.worker, Direction.ACTIVATION,
                         mb, hop.branch, here, there, payload)
                transfer(nxt_wgrad, agrad, nxt.worker, hop.worker, Direction.GRADIENT,
                         mb, nxt.branch, there, here, payload)

    for w, opt in enumerate(opt_ids):
        edges += [(wg, opt) for wg in wgrads_by_worker[w]]

    if grad_sync:
        for k in range(table.stages):
            down, up = (Branch.DOWN, k), (Branch.UP, k)
            a, b = placement.workers[down], placement.workers[up]
            size = placement.blocks_of(Branch.DOWN, k) * weight_bytes_per_block(model)
            last_a = max(wg for wg in wgrads_by_worker[a] if nodes[wg].branch is Branch.DOWN and nodes[wg].stage == k)
            last_b = max(wg for wg in wgrads_by_worker[b] if nodes[wg].branch is Branch.UP and nodes[wg].stage == k)
            transfer(last_a, opt_ids[b], a, b, Direction.REDUCTION, None, Branch.DOWN, down, up, size)
            transfer(last_b, opt_ids[a], b, a, Direction.REDUCTION, None, Branch.UP, up, down, size)

    graph = ExecGraph(nodes, sorted(set(edges)), local_order, table, placement)
    logger.debug(
        f"Built graph for {table.kind.value} S={table.stages} B={table.microbatches}: "
        f"{len(nodes)} nodes, {len(graph.transfers())} transfers"
    )
    return graph


# ============================================================================
# Checks
# ============================================================================

@dataclass(frozen=True)
class GraphViolation:
    rule: str
    node_ids: Tuple[int, ...]
    detail: str


@dataclass
class GraphReport:
    violations: List[GraphViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule: str, node_ids: Iterable[int], detail: str) -> None:
        self.violations.append(GraphViolation(rule, tuple(node_ids), detail))


def _expected_transfers(graph: ExecGraph) -> Counter:
    expected: Counter = Counter()
    for mb, route in enumerate(graph.table.routes()):
        for hop, nxt in zip(route, route[1:]):
            if hop.worker == nxt.worker:
                continue
            here, there = (hop.branch, hop.stage), (nxt.branch, nxt.stage)
            expected[(mb, Direction.ACTIVATION, here, there)] += 1
            expected[(mb, Direction.GRADIENT, there, here)] += 1
    return expected


def check_graph(graph: ExecGraph) -> GraphReport:
    """Acyclicity, per-worker order against the source table, and one transfer per dependency."""
    report = GraphReport()
    g = graph.to_networkx()
    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        report.add("cycle", [a for a, _ in cycle], f"cycle through {len(cycle)} edges")

    edge_set: Set[Tuple[int, int]] = set(graph.edges)
    for w, order in enumerate(graph.local_order):
        for a, b in zip(order, order[1:]):
            if (a, b) not in edge_set:
                report.add("local-order", (a, b), f"worker {w} lacks precedence edge {a}->{b}")
        if graph.table is None:
            continue
        expected = [(c.microbatch, c.branch, c.stage, c.phase) for c in graph.table.row_order(w)]
        actual = [(graph.node(i).microbatch, graph.node(i).branch, graph.node(i).stage, graph.node(i).phase)
                  for i in order]
        if expected != actual:
            report.add("local-order", order, f"worker {w} order differs from table row")

    if graph.table is None:
        return report

    preds = graph.predecessors()
    succs: Dict[int, List[int]] = defaultdict(list)
    for a, b in graph.edges:
        succs[a].append(b)

    found: Dict[tuple, List[int]] = defaultdict(list)
    for node in graph.transfers():
        if node.direction is Direction.REDUCTION:
            continue
        found[(node.microbatch, node.direction, node.src_stage, node.dst_stage)].append(node.id)
        if len(preds[node.id]) != 1 or len(succs[node.id]) != 1:
            report.add("transfer-edges", [node.id], f"{node.name} needs one producer and one consumer")

    expected = _expected_transfers(graph)
    for key, count in expected.items():
        mb, direction, src, dst = key
        have = found.get(key, [])
        if len(have) < count:
            report.add("missing-dependency", [],
                       f"mb={mb} stage {src[0].value}{src[1]}->{dst[0].value}{dst[1]} has no {direction.value} transfer")
        elif len(have) > count:
            report.add("duplicate-transfer", have,
                       f"mb={mb} stage {src[0].value}{src[1]}->{dst[0].value}{dst[1]} has {len(have)} transfers")
    for key, have in found.items():
        if key not in expected:
            report.add("unexpected-transfer", have, f"transfer {key} joins non-adjacent stages")
    return report


# ============================================================================
# Paths and Dumps
# ============================================================================

def critical_path(graph: ExecGraph, durations: Mapping[int, float]) -> float:
    """Longest node-weighted path through the DAG."""
    g = graph.to_networkx()
    try:
        order = list(nx.topological_sort(g))
    except nx.NetworkXUnfeasible as exc:
        raise GraphError("graph has a cycle") from exc
    finish: Dict[int, float] = {}
    for node_id in order:
        start = max((finish[p] for p in g.predecessors(node_id)), default=0.0)
        finish[node_id] = start + durations[node_id]
    return max(finish.values(), default=0.0)


def dump_graph(graph: ExecGraph) -> str:
    lines = [f"NODE {n.id} {n.describe()}" for n in graph.nodes]
    lines += [f"EDGE {a} {b}" for a, b in graph.edges]
    return "\n".join(lines) + "\n"
