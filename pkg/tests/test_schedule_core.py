# tests/test_schedule_core.py

"""
Tests for schedule tables: builders, validation rules, structural metrics, activation lifetimes and rendering.
"""

from __future__ import annotations

import random
from dataclasses import replace

import pytest

from analytic import formula_bubble_ratio
from schedule_core import (
    Branch,
    Cell,
    Phase,
    ScheduleError,
    ScheduleKind,
    ScheduleTable,
    StagePlacement,
    activation_lifetimes,
    build_schedule,
    microbatch_routes,
    parse_table,
    render_table,
    structural_metrics,
    validate_table,
)

MICROBATCHES = [8, 16, 32, 64, 128, 256]


def _copy_grid(table: ScheduleTable):
    return [list(row) for row in table.grid]


# ============================================================================
# Test 1: Builders
# ============================================================================

def test_gpipe_worker0_fill_then_reverse_drain():
    """
    GPipe (S=4, B=8), worker 0: eight forwards back to back, an idle gap while the
    pipeline fills, then (Agrad, Wgrad) pairs in reverse microbatch order and Opt last.
    """
    table = build_schedule(ScheduleKind.GPIPE, 4, 8)
    row = table.grid[0]
    order = table.row_order(0)

    assert [c.phase for c in order[:8]] == [Phase.FWD] * 8
    assert [c.microbatch for c in order[:8]] == list(range(8))
    assert all(cell is not None for cell in row[:8])
    assert row[8] is None, "expected an idle gap after the forward burst"

    backward = order[8:-1]
    assert [(c.phase, c.microbatch) for c in backward] == [
        (phase, mb) for mb in reversed(range(8)) for phase in (Phase.AGRAD, Phase.WGRAD)
    ]
    assert order[-1].phase is Phase.OPT


def test_onef1b_single_stage_has_no_idle_slot():
    table = build_schedule("1f1b", 1, 1)

    assert table.workers == 1
    assert [c.label(False) for c in table.grid[0]] == ["F0", "A0", "W0", "O"]
    assert structural_metrics(table).bubble_ratio == 0.0


def test_onef1b_steady_state_alternates():
    """After warmup, worker 0 interleaves one forward with one full backward."""
    table = build_schedule(ScheduleKind.ONEF1B, 4, 8)
    phases = [c.phase for c in table.row_order(0)]

    # warmup S-1 forwards, then F followed by an (A, W) chain
    assert phases[:3] == [Phase.FWD] * 3
    assert phases[3:6] == [Phase.FWD, Phase.AGRAD, Phase.WGRAD]
    assert phases[6:9] == [Phase.FWD, Phase.AGRAD, Phase.WGRAD]


def test_chimera_routes_split_microbatches_between_branches():
    routes = microbatch_routes(ScheduleKind.CHIMERA, 4, 8)

    for mb in range(4):
        assert [h.branch for h in routes[mb]] == [Branch.DOWN] * 4
        assert [h.worker for h in routes[mb]] == [0, 1, 2, 3]
    for mb in range(4, 8):
        assert [h.branch for h in routes[mb]] == [Branch.UP] * 4
        assert [h.worker for h in routes[mb]] == [3, 2, 1, 0]


def test_hanayo_route_is_a_wave_down_and_back():
    route = microbatch_routes(ScheduleKind.HANAYO, 4, 4)[0]

    assert [h.worker for h in route] == [0, 1, 2, 3, 3, 2, 1, 0]
    assert [h.branch for h in route] == [Branch.DOWN] * 4 + [Branch.UP] * 4


@pytest.mark.parametrize("kind,stages,microbatches,match", [
    (ScheduleKind.CHIMERA, 3, 8, "S even"),
    (ScheduleKind.CHIMERA, 4, 7, "B even"),
    (ScheduleKind.HANAYO, 4, 5, "divisible by waves"),
    (ScheduleKind.GPIPE, 0, 8, "S >= 1"),
    (ScheduleKind.GPIPE, 4, 0, "B >= 1"),
])
def test_builder_rejects_violated_preconditions(kind, stages, microbatches, match):
    with pytest.raises(ScheduleError, match=match):
        build_schedule(kind, stages, microbatches)


def test_hanayo_rejects_other_wave_counts():
    with pytest.raises(ScheduleError, match="2 waves"):
        build_schedule(ScheduleKind.HANAYO, 4, 4, waves=4)


def test_builder_rejects_placement_for_other_kind():
    placement = StagePlacement.uniform(ScheduleKind.GPIPE, 4, 128)
    with pytest.raises(ScheduleError, match="does not fit"):
        build_schedule(ScheduleKind.CHIMERA, 4, 8, placement)


def test_schedule_kind_parse_accepts_aliases():
    assert ScheduleKind.parse("OneF1B") is ScheduleKind.ONEF1B
    assert ScheduleKind.parse("1F1B") is ScheduleKind.ONEF1B
    assert ScheduleKind.parse(" gpipe ") is ScheduleKind.GPIPE
    with pytest.raises(ScheduleError):
        ScheduleKind.parse("pipedream")


# ============================================================================
# Test 2: Placement
# ============================================================================

def test_asymmetric_placement_is_meta_symmetric():
    """
    1:2 placement at S=4, N=120: the first two stages of each branch get 20 blocks,
    the last two 40, and every worker ends up with 60 blocks.
    """
    placement = StagePlacement.asymmetric_chimera(4, 120)

    assert [placement.blocks_of(Branch.DOWN, k) for k in range(4)] == [20, 20, 40, 40]
    assert [placement.blocks_of(Branch.UP, k) for k in range(4)] == [20, 20, 40, 40]
    up_by_worker = [placement.blocks_of(b, k) for w in range(4)
                    for b, k in placement.hosted(w) if b is Branch.UP]
    assert up_by_worker == [40, 40, 20, 20]
    assert [placement.worker_blocks(w) for w in range(4)] == [60] * 4
    assert placement.meta_symmetric
    assert placement.problems() == []


def test_asymmetric_placement_requires_divisible_blocks():
    with pytest.raises(ScheduleError, match="divisible"):
        StagePlacement.asymmetric_chimera(4, 128)
    with pytest.raises(ScheduleError, match="even"):
        StagePlacement.asymmetric_chimera(3, 120)


def test_uniform_placements():
    chimera = StagePlacement.uniform(ScheduleKind.CHIMERA, 8, 128)
    hanayo = StagePlacement.uniform(ScheduleKind.HANAYO, 8, 128)

    assert chimera.blocks_of(Branch.UP, 0) == 16
    assert chimera.worker_of(Branch.UP, 0) == 7
    assert chimera.worker_blocks(0) == 32, "Chimera hosts two full stages per worker"
    assert hanayo.blocks_of(Branch.DOWN, 0) == 8
    assert hanayo.worker_blocks(0) == 16, "Hanayo splits one model copy into 2S chunks"
    with pytest.raises(ScheduleError):
        StagePlacement.uniform(ScheduleKind.GPIPE, 3, 128)


def test_asymmetric_schedule_builds():
    placement = StagePlacement.asymmetric_chimera(4, 120)
    table = build_schedule(ScheduleKind.CHIMERA, 4, 8, placement)

    assert validate_table(table).ok
    assert table.placement is placement


# ============================================================================
# Test 3: Validation
# ============================================================================

def test_builders_produce_valid_tables():
    report = validate_table(build_schedule(ScheduleKind.GPIPE, 4, 8))
    assert report.ok, str(report)
    assert str(report) == "valid table (0 violations)"


def test_agrad_before_fwd_is_a_causal_violation():
    """Agrad at slot 3 and Fwd at slot 5 for the same (mb, stage) breaks phase order."""
    a0 = Cell(0, Branch.DOWN, Phase.AGRAD, 0)
    f0 = Cell(0, Branch.DOWN, Phase.FWD, 0)
    w0 = Cell(0, Branch.DOWN, Phase.WGRAD, 0)
    grid = [[None, None, None, a0, None, f0, w0, Cell.opt()]]
    table = ScheduleTable(ScheduleKind.ONEF1B, 1, 1, grid)

    report = validate_table(table)
    causal = [v for v in report.violations if v.rule == "causal-order"]
    assert causal, str(report)
    assert causal[0].slot == 3
    assert "A0" in causal[0].detail and "F0" in causal[0].detail


def test_missing_wgrad_is_a_completeness_violation():
    table = build_schedule(ScheduleKind.GPIPE, 4, 8)
    grid = _copy_grid(table)
    target = Cell(2, Branch.DOWN, Phase.WGRAD, 1)
    slot = grid[1].index(target)
    grid[1][slot] = None

    report = validate_table(replace(table, grid=grid))
    missing = [v for v in report.violations if v.rule == "completeness"]
    assert len(missing) == 1, str(report)
    assert "W2" in missing[0].detail and "stage 1" in missing[0].detail


def test_cell_on_wrong_worker_is_a_placement_violation():
    table = build_schedule(ScheduleKind.GPIPE, 2, 2)
    grid = _copy_grid(table)
    # move worker 1's first cell onto an idle slot of worker 0
    t1 = next(t for t, c in enumerate(grid[1]) if c is not None)
    idle = next(t for t, c in enumerate(grid[0]) if c is None)
    grid[0][idle], grid[1][t1] = grid[1][t1], None

    report = validate_table(replace(table, grid=grid))
    assert any(v.rule == "placement" for v in report.violations), str(report)


def test_missing_opt_is_reported():
    table = build_schedule(ScheduleKind.ONEF1B, 2, 2)
    grid = _copy_grid(table)
    grid[0] = [None if c is not None and c.phase is Phase.OPT else c for c in grid[0]]

    report = validate_table(replace(table, grid=grid))
    assert any("Opt" in v.detail for v in report.violations), str(report)


def test_structural_metrics_reject_invalid_table():
    table = build_schedule(ScheduleKind.GPIPE, 2, 2)
    grid = _copy_grid(table)
    grid[0][0] = None
    with pytest.raises(ScheduleError, match="validate_table"):
        structural_metrics(replace(table, grid=grid))


def test_validity_closure_over_random_configurations():
    """Every builder output passes validation, with and without recomputation."""
    rng = random.Random(20)
    configs = []
    for _ in range(40):
        kind = rng.choice(list(ScheduleKind))
        if kind is ScheduleKind.CHIMERA:
            stages, microbatches = 2 * rng.randint(1, 5), 2 * rng.randint(1, 12)
        elif kind is ScheduleKind.HANAYO:
            stages, microbatches = rng.randint(1, 8), 2 * rng.randint(1, 8)
        else:
            stages, microbatches = rng.randint(1, 10), rng.randint(1, 24)
        configs.append((kind, stages, microbatches, rng.random() < 0.3))

    for kind, stages, microbatches, recompute in configs:
        table = build_schedule(kind, stages, microbatches, recompute=recompute)
        report = validate_table(table)
        assert report.ok, f"{kind.value} S={stages} B={microbatches} recompute={recompute}:\n{report}"


# ============================================================================
# Test 4: Structural Metrics
# ============================================================================

def test_gpipe_bubble_ratio_s8_b8():
    metrics = structural_metrics(build_schedule(ScheduleKind.GPIPE, 8, 8))
    assert metrics.bubble_ratio == pytest.approx(7 / 15, abs=1e-12)
    assert metrics.utilization == pytest.approx(8 / 15, abs=1e-12)


@pytest.mark.parametrize("stages", [4, 8])
def test_gpipe_and_onef1b_match_the_formula_exactly(stages):
    """
    GPipe and 1F1B tables reproduce (S-1)/(S-1+B) for every B on the sweep axis,
    and the two schedules have identical bubble ratios.
    """
    print(f"\n{'='*70}")
    print(f"GPIPE / 1F1B STRUCTURAL IDENTITY (S={stages})")
    print(f"{'='*70}")
    for b in MICROBATCHES:
        expected = formula_bubble_ratio(ScheduleKind.GPIPE, stages, b).bubble_ratio
        gpipe = structural_metrics(build_schedule(ScheduleKind.GPIPE, stages, b)).bubble_ratio
        onef1b = structural_metrics(build_schedule(ScheduleKind.ONEF1B, stages, b)).bubble_ratio
        print(f"  B={b:4d} formula={expected:.6f} gpipe={gpipe:.6f} 1f1b={onef1b:.6f}")
        assert gpipe == pytest.approx(expected, abs=1e-12)
        assert onef1b == pytest.approx(gpipe, abs=1e-12)


def test_chimera_table_anchors():
    """
    The built Chimera tables sit well above the closed form, which assumes
    perfect overlap of the two pipelines.
    """
    s8 = structural_metrics(build_schedule(ScheduleKind.CHIMERA, 8, 16)).bubble_ratio
    s4 = structural_metrics(build_schedule(ScheduleKind.CHIMERA, 4, 16)).bubble_ratio

    print(f"\n  Chimera table bubble: S=8,B=16 -> {s8:.4f}; S=4,B=16 -> {s4:.4f}")
    assert s8 == pytest.approx(0.26, abs=0.03)
    assert s4 == pytest.approx(0.13, abs=0.03)
    assert s8 > formula_bubble_ratio(ScheduleKind.CHIMERA, 8, 16).bubble_ratio
    assert s4 > formula_bubble_ratio(ScheduleKind.CHIMERA, 4, 16).bubble_ratio


def test_chimera_fills_faster_than_gpipe_at_small_b():
    chimera = structural_metrics(build_schedule(ScheduleKind.CHIMERA, 8, 8)).bubble_ratio
    gpipe = structural_metrics(build_schedule(ScheduleKind.GPIPE, 8, 8)).bubble_ratio
    assert chimera < gpipe


@pytest.mark.parametrize("stages", [4, 8])
def test_chimera_never_worse_than_gpipe_structurally(stages):
    for b in (8, 16, 32):
        chimera = structural_metrics(build_schedule(ScheduleKind.CHIMERA, stages, b)).bubble_ratio
        gpipe = structural_metrics(build_schedule(ScheduleKind.GPIPE, stages, b)).bubble_ratio
        assert chimera <= gpipe, f"S={stages} B={b}: chimera {chimera:.4f} > gpipe {gpipe:.4f}"


def test_hanayo_two_waves_beat_chimera_at_s_equals_b():
    hanayo = structural_metrics(build_schedule(ScheduleKind.HANAYO, 8, 8)).bubble_ratio
    chimera = structural_metrics(build_schedule(ScheduleKind.CHIMERA, 8, 8)).bubble_ratio
    assert 0.0 < hanayo < chimera


def test_bubble_ratio_shrinks_with_more_microbatches():
    for kind in (ScheduleKind.GPIPE, ScheduleKind.ONEF1B):
        ratios = [structural_metrics(build_schedule(kind, 4, b)).bubble_ratio for b in (8, 32, 128)]
        assert ratios[0] > ratios[1] > ratios[2], f"{kind.value}: {ratios}"
    chimera = [structural_metrics(build_schedule(ScheduleKind.CHIMERA, 4, b)).bubble_ratio for b in (8, 128)]
    assert chimera[0] > chimera[1]


def test_per_worker_idle_sums_to_bubble():
    table = build_schedule(ScheduleKind.ONEF1B, 4, 8)
    m = structural_metrics(table)
    assert sum(m.per_worker_idle) / (table.workers * m.schedule_length) == pytest.approx(m.bubble_ratio)
    assert m.snapshot()["schedule_length"] == m.schedule_length


def test_weighted_slots_stretch_the_span():
    """
    With backward cells twice as long as forwards, GPipe(4,8) spans 11 forward
    columns plus 22 backward columns of weight 2, and each worker is busy 8 + 32 units.
    """
    table = build_schedule(ScheduleKind.GPIPE, 4, 8)
    table.slot_weights = {**table.slot_weights, Phase.AGRAD: 2.0, Phase.WGRAD: 2.0}
    m = structural_metrics(table)

    assert m.schedule_length == pytest.approx(55.0)
    assert m.per_worker_idle == pytest.approx([15.0] * 4)
    assert m.bubble_ratio == pytest.approx(3 / 11)
    assert all(idle >= 0 for idle in m.per_worker_idle)


def test_negative_slot_weight_rejected():
    table = build_schedule(ScheduleKind.ONEF1B, 2, 2)
    table.slot_weights = {**table.slot_weights, Phase.FWD: -1.0}
    with pytest.raises(ScheduleError, match="slot weights"):
        structural_metrics(table)


def test_every_worker_drains_after_its_last_forward():
    """On every worker the last Wgrad lands at or after the last Fwd."""
    rng = random.Random(7)
    for _ in range(30):
        kind = rng.choice(list(ScheduleKind))
        if kind is ScheduleKind.CHIMERA:
            stages, microbatches = 2 * rng.randint(1, 4), 2 * rng.randint(1, 16)
        elif kind is ScheduleKind.HANAYO:
            stages, microbatches = rng.randint(2, 8), 2 * rng.randint(1, 8)
        else:
            stages, microbatches = rng.randint(2, 8), rng.randint(1, 32)
        table = build_schedule(kind, stages, microbatches)
        for w, row in enumerate(table.grid):
            last = {phase: max((t for t, c in enumerate(row) if c is not None and c.phase is phase),
                               default=-1)
                    for phase in (Phase.FWD, Phase.WGRAD)}
            assert last[Phase.WGRAD] >= last[Phase.FWD], f"{kind.value} S={stages} B={microbatches} w={w}"


# ============================================================================
# Test 5: Activation Lifetimes
# ============================================================================

def test_gpipe_worker0_holds_the_whole_minibatch():
    profile = activation_lifetimes(build_schedule(ScheduleKind.GPIPE, 4, 8))
    assert profile.peak_counts[0] == 8


@pytest.mark.parametrize("microbatches,expected", [(8, 4), (2, 2)])
def test_onef1b_worker0_peak_is_min_b_s(microbatches, expected):
    profile = activation_lifetimes(build_schedule(ScheduleKind.ONEF1B, 4, microbatches))
    assert profile.peak_counts[0] == expected


def test_gpipe_peak_bytes_invariant_to_microbatch_count(default_model):
    """Fewer, larger microbatches hold the same bytes as many small ones."""
    small = activation_lifetimes(build_schedule(ScheduleKind.GPIPE, 4, 8), model=default_model)
    large = activation_lifetimes(build_schedule(ScheduleKind.GPIPE, 4, 256), model=default_model)
    assert small.peak_bytes[0] == large.peak_bytes[0]
    assert small.global_peak_bytes == large.global_peak_bytes


def test_intervals_end_after_wgrad():
    table = build_schedule(ScheduleKind.ONEF1B, 2, 2)
    profile = activation_lifetimes(table)
    index = table.slot_index()
    for (w, mb, branch, stage), (start, end) in profile.intervals.items():
        assert index[Cell(mb, branch, Phase.FWD, stage)] == (w, start)
        assert index[Cell(mb, branch, Phase.WGRAD, stage)] == (w, end - 1)


def test_recompute_lowers_peak_bytes(default_model):
    plain = activation_lifetimes(build_schedule(ScheduleKind.GPIPE, 4, 8), model=default_model)
    recomp_table = build_schedule(ScheduleKind.GPIPE, 4, 8, recompute=True)
    recomp = activation_lifetimes(recomp_table, model=default_model)

    assert len(recomp.recompute_slots) == 4 * 8
    assert recomp.global_peak_bytes < plain.global_peak_bytes


# ============================================================================
# Test 6: Rendering
# ============================================================================

def test_render_single_stage_ascii():
    assert render_table(build_schedule(ScheduleKind.ONEF1B, 1, 1)) == "F0 A0 W0 O\n"


def test_render_marks_idle_slots_and_branches():
    gpipe = render_table(build_schedule(ScheduleKind.GPIPE, 2, 1)).splitlines()
    chimera = render_table(build_schedule(ScheduleKind.CHIMERA, 2, 2)).splitlines()

    assert len(gpipe) == 2
    assert "." in gpipe[0]
    assert chimera[0].startswith("DF0") or chimera[0].startswith("UF1")
    assert "U" in chimera[0] and "D" in chimera[0]


def test_csv_render_parse_render_is_identical():
    table = build_schedule(ScheduleKind.GPIPE, 4, 8)
    text = render_table(table, "csv")
    parsed = parse_table(text, ScheduleKind.GPIPE)

    assert text.splitlines()[0].startswith("worker,slot0,slot1")
    assert render_table(parsed, "csv") == text
    assert render_table(parsed) == render_table(table)
    assert validate_table(parsed).ok


def test_parse_rejects_garbage():
    with pytest.raises(ScheduleError, match="header"):
        parse_table("a,b\n", ScheduleKind.GPIPE)
    with pytest.raises(ScheduleError, match="unparseable"):
        parse_table("worker,slot0\n0,XX\n", ScheduleKind.GPIPE)


def test_unknown_render_format():
    with pytest.raises(ScheduleError):
        render_table(build_schedule(ScheduleKind.GPIPE, 1, 1), "svg")
