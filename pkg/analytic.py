# analytic.py

"""
Closed-form bubble-ratio estimates for GPipe, 1F1B and Chimera.
"""

from __future__ import annotations

from dataclasses import dataclass

from schedule_core import ScheduleError, ScheduleKind

ASSUMPTIONS = "t_bwd = 2*t_fwd, synchronous step, no communication"


@dataclass(frozen=True)
class FormulaResult:
    kind: ScheduleKind
    stages: int
    microbatches: int
    bubble_ratio: float
    assumptions: str = ASSUMPTIONS


def formula_bubble_ratio(kind: "ScheduleKind | str", stages: int, microbatches: int) -> FormulaResult:
    """
    Fill/drain idle over total span.

    A unidirectional pipeline idles for (S - 1) forward+backward groups against B
    groups of work per worker. Chimera's two counter-running pipelines shorten the
    fill and drain to S/2 - 1 groups against the same B groups of work, which gives
    (S - 2) / (S - 2 + 2B).
    """
    kind = ScheduleKind.parse(kind)
    if stages < 2 or microbatches < 1:
        raise ScheduleError(f"formula needs S >= 2 and B >= 1, got S={stages}, B={microbatches}")
    if kind in (ScheduleKind.GPIPE, ScheduleKind.ONEF1B):
        ratio = (stages - 1) / (stages - 1 + microbatches)
    elif kind is ScheduleKind.CHIMERA:
        if stages % 2:
            raise ScheduleError(f"Chimera formula requires even S, got S={stages}")
        ratio = (stages - 2) / (stages - 2 + 2 * microbatches)
    else:
        raise ScheduleError(f"no closed-form bubble ratio for {kind.value}")
    return FormulaResult(kind, stages, microbatches, ratio)
