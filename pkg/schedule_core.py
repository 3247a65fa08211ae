# schedule_core.py

"""
Tabular pipeline schedules: worker x slot tables, the four schedule builders, validation and structural metrics.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Deque, Dict, Iterator, List, Optional, Sequence, Tuple

if TYPE_CHECKING:
    from config import ModelConfig

logger = logging.getLogger(__name__)


class ScheduleError(ValueError):
    """Raised when a schedule cannot be built or measured."""


class Phase(str, Enum):
    FWD = "F"
    AGRAD = "A"
    WGRAD = "W"
    OPT = "O"
    RECOMP = "R"


class Branch(str, Enum):
    DOWN = "D"
    UP = "U"


class ScheduleKind(str, Enum):
    GPIPE = "gpipe"
    ONEF1B = "1f1b"
    CHIMERA = "chimera"
    HANAYO = "hanayo"

    @classmethod
    def parse(cls, value: "str | ScheduleKind") -> "ScheduleKind":
        if isinstance(value, ScheduleKind):
            return value
        key = value.strip().lower().replace("-", "").replace("_", "")
        aliases = {"onef1b": cls.ONEF1B, "1f1b": cls.ONEF1B, "gpipe": cls.GPIPE,
                   "chimera": cls.CHIMERA, "hanayo": cls.HANAYO}
        if key not in aliases:
            raise ScheduleError(f"Unknown schedule kind '{value}'")
        return aliases[key]

    @property
    def bidirectional(self) -> bool:
        return self in (ScheduleKind.CHIMERA, ScheduleKind.HANAYO)


DEFAULT_SLOT_WEIGHTS: Dict[Phase, float] = {
    Phase.FWD: 1.0,
    Phase.AGRAD: 1.0,
    Phase.WGRAD: 1.0,
    Phase.OPT: 0.0,
    Phase.RECOMP: 1.0,
}

# Causal rank of the per-stage phases of one microbatch.
_PHASE_RANK = {Phase.FWD: 0, Phase.RECOMP: 1, Phase.AGRAD: 2, Phase.WGRAD: 3}


@dataclass(frozen=True)
class Cell:
    """One phase of one microbatch on one stage; Opt cells carry no microbatch or stage."""

    microbatch: Optional[int]
    branch: Branch
    phase: Phase
    stage: Optional[int] = None

    @classmethod
    def opt(cls) -> "Cell":
        return cls(None, Branch.DOWN, Phase.OPT, None)

    def label(self, with_branch: bool = True) -> str:
        prefix = self.branch.value if with_branch else ""
        mb = "" if self.microbatch is None else str(self.microbatch)
        return f"{prefix}{self.phase.value}{mb}"


@dataclass(frozen=True)
class Hop:
    """One stage visit of a microbatch route."""

    branch: Branch
    stage: int
    worker: int


# ============================================================================
# Placement
# ============================================================================

def host_worker(kind: ScheduleKind, stages: int, branch: Branch, stage: int) -> int:
    """Worker hosting (branch, stage); Up stages run from the last worker back to the first."""
    if branch is Branch.DOWN:
        return stage
    if not kind.bidirectional:
        raise ScheduleError(f"{kind.value} has no Up branch")
    return stages - 1 - stage


def _branches(kind: ScheduleKind) -> Tuple[Branch, ...]:
    return (Branch.DOWN, Branch.UP) if kind.bidirectional else (Branch.DOWN,)


@dataclass(frozen=True)
class StagePlacement:
    """Block count and hosting worker of every (branch, stage)."""

    kind: ScheduleKind
    stages: int
    total_blocks: int
    blocks: Dict[Tuple[Branch, int], int]
    workers: Dict[Tuple[Branch, int], int]
    asymmetric: bool = False

    @classmethod
    def uniform(cls, kind: "ScheduleKind | str", stages: int, total_blocks: int) -> "StagePlacement":
        kind = ScheduleKind.parse(kind)
        # Hanayo cuts a single model copy into 2S chunks; the others give each branch a full copy.
        chunks = 2 * stages if kind is ScheduleKind.HANAYO else stages
        if stages < 1 or total_blocks % chunks:
            raise ScheduleError(
                f"uniform {kind.value} placement requires N divisible by {chunks} "
                f"(N={total_blocks}, S={stages})"
            )
        per_stage = total_blocks // chunks
        blocks, workers = {}, {}
        for branch in _branches(kind):
            for k in range(stages):
                blocks[(branch, k)] = per_stage
                workers[(branch, k)] = host_worker(kind, stages, branch, k)
        return cls(kind, stages, total_blocks, blocks, workers)

    @classmethod
    def asymmetric_chimera(cls, stages: int, total_blocks: int) -> "StagePlacement":
        """1:2 placement: the first half of each branch gets q blocks per stage, the second half 2q."""
        if stages < 2 or stages % 2:
            raise ScheduleError(f"asymmetric placement requires even S >= 2, got S={stages}")
        if (2 * total_blocks) % (3 * stages):
            raise ScheduleError(
                f"asymmetric 1:2 placement requires N divisible by 3S/2 (N={total_blocks}, S={stages})"
            )
        q = (2 * total_blocks) // (3 * stages)
        blocks, workers = {}, {}
        for branch in (Branch.DOWN, Branch.UP):
            for k in range(stages):
                blocks[(branch, k)] = q if k < stages // 2 else 2 * q
                workers[(branch, k)] = host_worker(ScheduleKind.CHIMERA, stages, branch, k)
        return cls(ScheduleKind.CHIMERA, stages, total_blocks, blocks, workers, asymmetric=True)

    def blocks_of(self, branch: Branch, stage: int) -> int:
        return self.blocks[(branch, stage)]

    def worker_of(self, branch: Branch, stage: int) -> int:
        try:
            return self.workers[(branch, stage)]
        except KeyError:
            raise ScheduleError(f"stage {branch.value}{stage} is hosted nowhere") from None

    def hosted(self, worker: int) -> List[Tuple[Branch, int]]:
        return sorted(key for key, w in self.workers.items() if w == worker)

    def worker_blocks(self, worker: int) -> int:
        return sum(self.blocks[key] for key in self.hosted(worker))

    @property
    def meta_symmetric(self) -> bool:
        return len({self.worker_blocks(w) for w in range(self.stages)}) == 1

    def problems(self) -> List[str]:
        """Invariant violations; empty when the placement is consistent."""
        found = []
        if self.kind is ScheduleKind.HANAYO:
            if sum(self.blocks.values()) != self.total_blocks:
                found.append(f"Hanayo chunks sum to {sum(self.blocks.values())}, expected {self.total_blocks}")
        else:
            for branch in _branches(self.kind):
                total = sum(n for (b, _), n in self.blocks.items() if b is branch)
                if total != self.total_blocks:
                    found.append(f"branch {branch.value} sums to {total} blocks, expected {self.total_blocks}")
        for (branch, stage), worker in self.workers.items():
            if worker != host_worker(self.kind, self.stages, branch, stage):
                found.append(f"stage {branch.value}{stage} hosted on worker {worker}")
        if self.asymmetric and not self.meta_symmetric:
            found.append("asymmetric placement is not meta-symmetric")
        return found


def microbatch_routes(kind: "ScheduleKind | str", stages: int, microbatches: int) -> List[List[Hop]]:
    """Ordered stage visits of every microbatch."""
    kind = ScheduleKind.parse(kind)

    def chain(branch: Branch) -> List[Hop]:
        return [Hop(branch, k, host_worker(kind, stages, branch, k)) for k in range(stages)]

    routes = []
    for mb in range(microbatches):
        if kind is ScheduleKind.CHIMERA:
            routes.append(chain(Branch.DOWN if mb < microbatches // 2 else Branch.UP))
        elif kind is ScheduleKind.HANAYO:
            routes.append(chain(Branch.DOWN) + chain(Branch.UP))
        else:
            routes.append(chain(Branch.DOWN))
    return routes


# ============================================================================
# Table
# ============================================================================

@dataclass
class ScheduleTable:
    kind: ScheduleKind
    stages: int
    microbatches: int
    grid: List[List[Optional[Cell]]]
    slot_weights: Dict[Phase, float] = field(default_factory=lambda: dict(DEFAULT_SLOT_WEIGHTS))
    recompute: bool = False
    waves: int = 1
    placement: Optional[StagePlacement] = None

    @property
    def workers(self) -> int:
        return len(self.grid)

    @property
    def slots(self) -> int:
        return max((len(row) for row in self.grid), default=0)

    def cells(self) -> Iterator[Tuple[int, int, Cell]]:
        for w, row in enumerate(self.grid):
            for t, cell in enumerate(row):
                if cell is not None:
                    yield w, t, cell

    def row_order(self, worker: int) -> List[Cell]:
        return [cell for cell in self.grid[worker] if cell is not None]

    def routes(self) -> List[List[Hop]]:
        return microbatch_routes(self.kind, self.stages, self.microbatches)

    def slot_index(self) -> Dict[Cell, Tuple[int, int]]:
        return {cell: (w, t) for w, t, cell in self.cells()}


def _backward_chain(mb: int, hop: Hop, recompute: bool) -> List[Cell]:
    seq = [Cell(mb, hop.branch, Phase.AGRAD, hop.stage), Cell(mb, hop.branch, Phase.WGRAD, hop.stage)]
    if recompute:
        seq.insert(0, Cell(mb, hop.branch, Phase.RECOMP, hop.stage))
    return seq


def cell_dependencies(routes: Sequence[Sequence[Hop]], recompute: bool = False) -> Dict[Cell, List[Cell]]:
    """
    Cross-cell dependencies of every microbatch phase.

    Fwd waits for the upstream Fwd. Agrad waits for its own Fwd (or Recomp) and for
    the downstream stage's Wgrad, which is when the full backward of that stage has
    produced the gradient it hands upstream.
    """
    deps: Dict[Cell, List[Cell]] = {}
    for mb, route in enumerate(routes):
        for i, hop in enumerate(route):
            fwd = Cell(mb, hop.branch, Phase.FWD, hop.stage)
            agrad = Cell(mb, hop.branch, Phase.AGRAD, hop.stage)
            wgrad = Cell(mb, hop.branch, Phase.WGRAD, hop.stage)
            prev = route[i - 1] if i > 0 else None
            nxt = route[i + 1] if i + 1 < len(route) else None
            deps[fwd] = [Cell(mb, prev.branch, Phase.FWD, prev.stage)] if prev else []
            before_agrad = fwd
            if recompute:
                recomp = Cell(mb, hop.branch, Phase.RECOMP, hop.stage)
                deps[recomp] = [fwd]
                before_agrad = recomp
            deps[agrad] = [before_agrad]
            if nxt:
                deps[agrad].append(Cell(mb, nxt.branch, Phase.WGRAD, nxt.stage))
            deps[wgrad] = [agrad]
    return deps


def _pack(orders: List[List[Cell]], deps: Dict[Cell, List[Cell]]) -> List[List[Optional[Cell]]]:
    """Place per-worker orders as early as their local predecessor and dependencies allow."""
    slot: Dict[Cell, int] = {}
    positions: List[List[int]] = [[] for _ in orders]
    remaining = sum(len(o) for o in orders)
    while remaining:
        progress = False
        for w, order in enumerate(orders):
            while len(positions[w]) < len(order):
                cell = order[len(positions[w])]
                needed = deps.get(cell, ())
                if any(d not in slot for d in needed):
                    break
                last = positions[w][-1] if positions[w] else -1
                t = max([last + 1] + [slot[d] + 1 for d in needed])
                positions[w].append(t)
                if cell.phase is not Phase.OPT:
                    slot[cell] = t
                remaining -= 1
                progress = True
        if not progress:
            stuck = [order[len(positions[w])].label() for w, order in enumerate(orders)
                     if len(positions[w]) < len(order)]
            raise ScheduleError(f"worker orders deadlock at cells {stuck}")

    length = max((p[-1] for p in positions if p), default=-1) + 1
    grid: List[List[Optional[Cell]]] = [[None] * length for _ in orders]
    for w, order in enumerate(orders):
        for cell, t in zip(order, positions[w]):
            grid[w][t] = cell
    return grid


def _with_opt(orders: List[List[Cell]]) -> List[List[Cell]]:
    return [order + [Cell.opt()] for order in orders]


# ============================================================================
# Builders
# ============================================================================

def _gpipe_order(stage: int, microbatches: int, recompute: bool) -> List[Cell]:
    hop = Hop(Branch.DOWN, stage, stage)
    order = [Cell(mb, Branch.DOWN, Phase.FWD, stage) for mb in range(microbatches)]
    for mb in reversed(range(microbatches)):
        order += _backward_chain(mb, hop, recompute)
    return order


def _onef1b_order(stage: int, stages: int, microbatches: int, recompute: bool) -> List[Cell]:
    hop = Hop(Branch.DOWN, stage, stage)
    warmup = min(stages - stage - 1, microbatches)
    order = [Cell(mb, Branch.DOWN, Phase.FWD, stage) for mb in range(warmup)]
    bwd = 0
    for mb in range(warmup, microbatches):
        order.append(Cell(mb, Branch.DOWN, Phase.FWD, stage))
        order += _backward_chain(bwd, hop, recompute)
        bwd += 1
    for mb in range(bwd, microbatches):
        order += _backward_chain(mb, hop, recompute)
    return order


@dataclass
class _Stream:
    """Forward and backward queues of one (branch, stage) hosted on a worker."""

    hop: Hop
    position: int
    microbatches: List[int]
    cap: int
    issued_fwd: int = 0
    issued_bwd: int = 0


# Candidate: (is_backward, position in route, microbatch, stream index)
_Candidate = Tuple[bool, int, int, int]


def _greedy_orders(
    streams: List[List[_Stream]],
    deps: Dict[Cell, List[Cell]],
    priority: Callable[[_Candidate], tuple],
    recompute: bool,
) -> List[List[Cell]]:
    """
    Slot-by-slot list packing over per-stage queues.

    Each worker fills a free slot with the best ready candidate. A started backward
    occupies consecutive slots (Recomp, Agrad, Wgrad) on its worker.
    """
    done: Dict[Cell, int] = {}
    pending: List[Deque[Cell]] = [deque() for _ in streams]
    orders: List[List[Cell]] = [[] for _ in streams]
    remaining = sum(len(s.microbatches) * (4 if recompute else 3) for ws in streams for s in ws)
    limit = 4 * remaining + 16

    def ready(cell: Cell, t: int, skip_recomp: bool = False) -> bool:
        for d in deps[cell]:
            if skip_recomp and d.phase is Phase.RECOMP:
                continue
            if d not in done or done[d] >= t:
                return False
        return True

    t = 0
    while remaining:
        placed = []
        for w, worker_streams in enumerate(streams):
            if pending[w]:
                cell = pending[w].popleft()
                orders[w].append(cell)
                placed.append(cell)
                continue
            candidates: List[_Candidate] = []
            for i, s in enumerate(worker_streams):
                if s.issued_fwd < len(s.microbatches) and s.issued_fwd - s.issued_bwd < s.cap:
                    mb = s.microbatches[s.issued_fwd]
                    if ready(Cell(mb, s.hop.branch, Phase.FWD, s.hop.stage), t):
                        candidates.append((False, s.position, mb, i))
                if s.issued_bwd < s.issued_fwd:
                    mb = s.microbatches[s.issued_bwd]
                    if ready(Cell(mb, s.hop.branch, Phase.AGRAD, s.hop.stage), t, skip_recomp=True):
                        candidates.append((True, s.position, mb, i))
            if not candidates:
                continue
            backward, _, mb, i = min(candidates, key=priority)
            s = worker_streams[i]
            if backward:
                s.issued_bwd += 1
                chain = _backward_chain(mb, s.hop, recompute)
                cell = chain[0]
                pending[w].extend(chain[1:])
            else:
                s.issued_fwd += 1
                cell = Cell(mb, s.hop.branch, Phase.FWD, s.hop.stage)
            orders[w].append(cell)
            placed.append(cell)
        for cell in placed:
            done[cell] = t
        remaining -= len(placed)
        t += 1
        if t > limit:
            raise ScheduleError("greedy packing did not converge")
    return orders


def _chimera_orders(stages: int, microbatches: int, deps, recompute: bool) -> List[List[Cell]]:
    half = microbatches // 2
    streams = []
    for w in range(stages):
        down = Hop(Branch.DOWN, w, w)
        up = Hop(Branch.UP, stages - 1 - w, w)
        streams.append([
            _Stream(down, down.stage, list(range(half)), stages - down.stage // 2),
            _Stream(up, up.stage, list(range(half, microbatches)), stages - up.stage // 2),
        ])
    # forwards first, then the stage closest to its pipeline entry, then the older microbatch
    return _greedy_orders(streams, deps, lambda c: (c[0], c[1], c[2], c[3]), recompute)


def _hanayo_orders(stages: int, microbatches: int, deps, recompute: bool) -> List[List[Cell]]:
    everyone = list(range(microbatches))
    streams = []
    for w in range(stages):
        down = Hop(Branch.DOWN, w, w)
        up = Hop(Branch.UP, stages - 1 - w, w)
        streams.append([
            _Stream(down, down.stage, everyone, microbatches),
            _Stream(up, stages + up.stage, everyone, microbatches),
        ])
    # oldest microbatch first, then forwards, then the earlier wave
    return _greedy_orders(streams, deps, lambda c: (c[2], c[0], c[1], c[3]), recompute)


def build_schedule(
    kind: "ScheduleKind | str",
    stages: int,
    microbatches: int,
    placement: Optional[StagePlacement] = None,
    recompute: bool = False,
    waves: int = 2,
) -> ScheduleTable:
    """Build a valid schedule table for one of the four families."""
    kind = ScheduleKind.parse(kind)
    if stages < 1 or microbatches < 1:
        raise ScheduleError(f"need S >= 1 and B >= 1, got S={stages}, B={microbatches}")
    if kind is ScheduleKind.CHIMERA:
        if stages < 2 or stages % 2:
            raise ScheduleError(f"Chimera requires S even and >= 2, got S={stages}")
        if microbatches % 2:
            raise ScheduleError(f"Chimera requires B even, got B={microbatches}")
    if kind is ScheduleKind.HANAYO:
        if waves != 2:
            raise ScheduleError(f"Hanayo supports exactly 2 waves, got waves={waves}")
        if microbatches % waves:
            raise ScheduleError(f"Hanayo requires B divisible by waves ({waves}), got B={microbatches}")
    if placement is not None:
        if placement.kind is not kind or placement.stages != stages:
            raise ScheduleError(
                f"placement for {placement.kind.value} S={placement.stages} does not fit {kind.value} S={stages}"
            )
        problems = placement.problems()
        if problems:
            raise ScheduleError(f"inconsistent placement: {'; '.join(problems)}")

    routes = microbatch_routes(kind, stages, microbatches)
    deps = cell_dependencies(routes, recompute)
    if kind is ScheduleKind.GPIPE:
        orders = [_gpipe_order(k, microbatches, recompute) for k in range(stages)]
    elif kind is ScheduleKind.ONEF1B:
        orders = [_onef1b_order(k, stages, microbatches, recompute) for k in range(stages)]
    elif kind is ScheduleKind.CHIMERA:
        orders = _chimera_orders(stages, microbatches, deps, recompute)
    else:
        orders = _hanayo_orders(stages, microbatches, deps, recompute)

    grid = _pack(_with_opt(orders), deps)
    table = ScheduleTable(
        kind=kind,
        stages=stages,
        microbatches=microbatches,
        grid=grid,
        recompute=recompute,
        waves=waves if kind is ScheduleKind.HANAYO else 1,
        placement=placement,
    )
    logger.debug(f"Built {kind.value} table S={stages} B={microbatches}: {table.slots} slots")
    return table


# ============================================================================
# Validation
# ============================================================================

@dataclass(frozen=True)
class Violation:
    worker: Optional[int]
    slot: Optional[int]
    rule: str
    detail: str


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, worker: Optional[int], slot: Optional[int], rule: str, detail: str) -> None:
        self.violations.append(Violation(worker, slot, rule, detail))

    def __str__(self) -> str:
        if self.ok:
            return "valid table (0 violations)"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  worker={v.worker} slot={v.slot} [{v.rule}] {v.detail}" for v in self.violations]
        return "\n".join(lines)


def validate_table(table: ScheduleTable) -> ValidationReport:
    """Check shape, placement, causal order, completeness and cross-worker causality; never raises."""
    report = ValidationReport()
    if table.workers != table.stages:
        report.add(None, None, "shape", f"{table.workers} rows for {table.stages} stages")
    if any(len(row) != table.slots for row in table.grid):
        report.add(None, None, "shape", "rows have different lengths")

    seen: Dict[Cell, List[Tuple[int, int]]] = defaultdict(list)
    opt_slots: Dict[int, List[int]] = defaultdict(list)
    for w, t, cell in table.cells():
        if cell.phase is Phase.OPT:
            opt_slots[w].append(t)
        else:
            seen[cell].append((w, t))

    routes = table.routes()
    required = set()
    for mb, route in enumerate(routes):
        for hop in route:
            phases = [Phase.FWD, Phase.AGRAD, Phase.WGRAD] + ([Phase.RECOMP] if table.recompute else [])
            for phase in phases:
                cell = Cell(mb, hop.branch, phase, hop.stage)
                required.add(cell)
                where = seen.get(cell, [])
                if not where:
                    report.add(hop.worker, None, "completeness", f"missing {cell.label()} on stage {hop.stage}")
                    continue
                for w, t in where[1:]:
                    report.add(w, t, "completeness", f"duplicate {cell.label()} on stage {hop.stage}")
                for w, t in where:
                    if w != hop.worker:
                        report.add(w, t, "placement", f"{cell.label()} stage {hop.stage} belongs on worker {hop.worker}")

    for cell, where in seen.items():
        if cell not in required:
            for w, t in where:
                report.add(w, t, "completeness", f"unexpected cell {cell.label()} stage {cell.stage}")

    first = {cell: where[0][1] for cell, where in seen.items()}

    # causal order of phases per (mb, branch, stage)
    for mb, route in enumerate(routes):
        for i, hop in enumerate(route):
            present = []
            for phase, rank in sorted(_PHASE_RANK.items(), key=lambda kv: kv[1]):
                cell = Cell(mb, hop.branch, phase, hop.stage)
                if cell in first:
                    present.append((cell, first[cell]))
            for (a, ta), (b, tb) in zip(present, present[1:]):
                if tb <= ta:
                    report.add(hop.worker, tb, "causal-order", f"{b.label()} at slot {tb} not after {a.label()} at slot {ta}")
            if i + 1 < len(route):
                nxt = route[i + 1]
                f0, f1 = Cell(mb, hop.branch, Phase.FWD, hop.stage), Cell(mb, nxt.branch, Phase.FWD, nxt.stage)
                if f0 in first and f1 in first and first[f1] <= first[f0]:
                    report.add(nxt.worker, first[f1], "cross-worker", f"{f1.label()} stage {nxt.stage} not after upstream Fwd")
                a0, a1 = Cell(mb, hop.branch, Phase.AGRAD, hop.stage), Cell(mb, nxt.branch, Phase.AGRAD, nxt.stage)
                if a0 in first and a1 in first and first[a0] <= first[a1]:
                    report.add(hop.worker, first[a0], "cross-worker", f"{a0.label()} stage {hop.stage} not after downstream Agrad")

    for w in range(table.workers):
        slots = opt_slots.get(w, [])
        if len(slots) != 1:
            report.add(w, None, "completeness", f"expected one Opt cell, found {len(slots)}")
            continue
        last_wgrad = max((t for ww, t, c in table.cells() if ww == w and c.phase is Phase.WGRAD), default=-1)
        if slots[0] <= last_wgrad:
            report.add(w, slots[0], "causal-order", f"Opt at slot {slots[0]} before final Wgrad at {last_wgrad}")
    return report


# ============================================================================
# Structural Metrics
# ============================================================================

@dataclass(frozen=True)
class StructuralMetrics:
    bubble_ratio: float
    schedule_length: float
    per_worker_idle: List[float]

    @property
    def utilization(self) -> float:
        return 1.0 - self.bubble_ratio

    def snapshot(self) -> dict:
        return {
            "bubble_ratio": self.bubble_ratio,
            "utilization": self.utilization,
            "schedule_length": self.schedule_length,
            "per_worker_idle": list(self.per_worker_idle),
        }


def _require_valid(table: ScheduleTable) -> None:
    report = validate_table(table)
    if not report.ok:
        raise ScheduleError(f"table is invalid, see validate_table: {report.violations[0]}")


def structural_metrics(table: ScheduleTable) -> StructuralMetrics:
    """
    Bubble ratio over the span from the first to the last weighted cell.

    A slot lasts as long as the heaviest cell in its column; a column without
    weighted cells lasts one unit. Zero-weight cells (Opt) hold a slot position but
    do not extend the span. Idle includes fill and drain ramps on every worker.
    """
    _require_valid(table)
    weights = table.slot_weights
    negative = sorted(p.value for p, v in weights.items() if v < 0)
    if negative:
        raise ScheduleError(f"slot weights must be >= 0, got negative weights for {negative}")
    busy = [0.0] * table.workers
    column: Dict[int, float] = {}
    for w, t, cell in table.cells():
        weight = weights.get(cell.phase, 0.0)
        if weight > 0:
            busy[w] += weight
            column[t] = max(column.get(t, 0.0), weight)
    if not column:
        return StructuralMetrics(0.0, 0.0, [0.0] * table.workers)
    length = sum(column.get(t, 1.0) for t in range(min(column), max(column) + 1))
    idle = [length - b for b in busy]
    bubble = sum(idle) / (table.workers * length)
    return StructuralMetrics(bubble, length, idle)


# ============================================================================
# Activation Lifetimes
# ============================================================================

@dataclass
class ActivationProfile:
    """Retention intervals are half-open slot ranges [Fwd slot, Wgrad slot + 1)."""

    intervals: Dict[Tuple[int, int, Branch, int], Tuple[int, int]]
    recompute_slots: Dict[Tuple[int, int, Branch, int], int]
    peak_counts: List[int]
    peak_bytes: Optional[List[int]] = None

    @property
    def global_peak_bytes(self) -> Optional[int]:
        return max(self.peak_bytes) if self.peak_bytes else None


def activation_lifetimes(
    table: ScheduleTable,
    placement: Optional[StagePlacement] = None,
    model: Optional["ModelConfig"] = None,
) -> ActivationProfile:
    """Activation retention per (worker, mb, branch, stage) and per-worker peaks."""
    _require_valid(table)
    index = table.slot_index()
    intervals, recompute_slots = {}, {}
    for mb, route in enumerate(table.routes()):
        for hop in route:
            key = (hop.worker, mb, hop.branch, hop.stage)
            _, start = index[Cell(mb, hop.branch, Phase.FWD, hop.stage)]
            _, end = index[Cell(mb, hop.branch, Phase.WGRAD, hop.stage)]
            intervals[key] = (start, end + 1)
            if table.recompute:
                recompute_slots[key] = index[Cell(mb, hop.branch, Phase.RECOMP, hop.stage)][1]

    def full_ranges(key) -> List[Tuple[int, int]]:
        start, end = intervals[key]
        if key in recompute_slots:
            return [(start, start + 1), (recompute_slots[key], end)]
        return [(start, end)]

    counts = [0] * table.workers
    for w in range(table.workers):
        delta = defaultdict(int)
        for key in intervals:
            if key[0] == w:
                for a, b in full_ranges(key):
                    delta[a] += 1
                    delta[b] -= 1
        live = 0
        for t in sorted(delta):
            live += delta[t]
            counts[w] = max(counts[w], live)

    peak_bytes = None
    if model is not None:
        from costmodel import activation_bytes, stage_activation_bytes

        placement = placement or table.placement or StagePlacement.uniform(table.kind, table.stages, model.blocks)
        m = model.microbatch_size(table.microbatches)
        boundary = activation_bytes(model, m)
        peak_bytes = [0] * table.workers
        for w in range(table.workers):
            delta = defaultdict(int)
            for key, (start, end) in intervals.items():
                if key[0] != w:
                    continue
                full = stage_activation_bytes(model, placement.blocks_of(key[2], key[3]), m)
                if key in recompute_slots:
                    # only the stage input survives between Fwd and Recomp
                    delta[start] += full
                    delta[start + 1] += boundary - full
                    delta[recompute_slots[key]] += full - boundary
                    delta[end] -= full
                else:
                    delta[start] += full
                    delta[end] -= full
            live = 0
            for t in sorted(delta):
                live += delta[t]
                peak_bytes[w] = max(peak_bytes[w], live)
    return ActivationProfile(intervals, recompute_slots, counts, peak_bytes)


# ============================================================================
# Rendering
# ============================================================================

_LABEL = re.compile(r"^([DU])([FAWOR])(\d*)$")


def render_table(table: ScheduleTable, fmt: str = "ascii") -> str:
    """ASCII grid (one line per worker, `.` for idle) or CSV with a `worker,slot0,...` header."""
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["worker"] + [f"slot{t}" for t in range(table.slots)])
        for w, row in enumerate(table.grid):
            writer.writerow([w] + [cell.label() if cell else "" for cell in row])
        return out.getvalue()
    if fmt != "ascii":
        raise ScheduleError(f"unknown table format '{fmt}'")

    with_branch = table.kind.bidirectional
    labels = [[cell.label(with_branch) if cell else "." for cell in row] for row in table.grid]
    width = max((len(label) for row in labels for label in row), default=1)
    return "\n".join(" ".join(label.ljust(width) for label in row).rstrip() for row in labels) + "\n"


def parse_table(text: str, kind: "ScheduleKind | str", waves: int = 2) -> ScheduleTable:
    """Inverse of render_table(..., 'csv')."""
    kind = ScheduleKind.parse(kind)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0] != "worker":
        raise ScheduleError("CSV table must start with a 'worker,slot0,...' header")
    width = len(rows[0]) - 1
    stages = len(rows) - 1
    grid: List[List[Optional[Cell]]] = []
    max_mb, recompute = -1, False
    for w, row in enumerate(rows[1:]):
        cells: List[Optional[Cell]] = []
        for text_cell in row[1:] + [""] * (width - len(row) + 1):
            if not text_cell:
                cells.append(None)
                continue
            match = _LABEL.match(text_cell)
            if not match:
                raise ScheduleError(f"unparseable cell '{text_cell}' on worker {w}")
            branch, phase = Branch(match.group(1)), Phase(match.group(2))
            if phase is Phase.OPT:
                cells.append(Cell(None, branch, phase, None))
                continue
            mb = int(match.group(3))
            max_mb = max(max_mb, mb)
            recompute = recompute or phase is Phase.RECOMP
            stage = w if branch is Branch.DOWN else stages - 1 - w
            cells.append(Cell(mb, branch, phase, stage))
        grid.append(cells[:width])
    return ScheduleTable(
        kind=kind,
        stages=stages,
        microbatches=max_mb + 1,
        grid=grid,
        recompute=recompute,
        waves=waves if kind is ScheduleKind.HANAYO else 1,
    )
