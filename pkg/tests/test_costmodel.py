# tests/test_costmodel.py

"""
Tests for the Hockney and roofline time models and the transformer FLOP/byte accounting.
"""

from __future__ import annotations

from dataclasses import replace

import pytest

from config import SystemConfig
from costmodel import (
    CostAnnotation,
    activation_bytes,
    block_forward_flops,
    comm_time,
    compute_time,
    persistent_bytes,
    stage_activation_bytes,
    stage_costs,
    weight_bytes_per_block,
)
from schedule_core import Phase, ScheduleKind, StagePlacement


# ============================================================================
# Test 1: Communication
# ============================================================================

def test_comm_time_baseline(baseline_system: SystemConfig):
    assert comm_time(1e8, baseline_system) == pytest.approx(0.0020005, rel=1e-12)


def test_comm_time_zero_volume_pays_latency(baseline_system: SystemConfig):
    assert comm_time(0, baseline_system) == baseline_system.net_latency


def test_comm_time_fast_network_is_ten_times_faster(regimes):
    base = comm_time(1e8, regimes["mid_nw_mid_cp"])
    fast = comm_time(1e8, regimes["fast_nw_mid_cp"])
    assert base == pytest.approx(0.0020005, rel=1e-12)
    assert fast == pytest.approx(0.00020005, rel=1e-12)


def test_comm_time_rejects_negative_volume(baseline_system: SystemConfig):
    with pytest.raises(ValueError):
        comm_time(-1, baseline_system)


# ============================================================================
# Test 2: Compute
# ============================================================================

def test_compute_time_compute_bound(baseline_system: SystemConfig):
    """F=1e12, V_m=1e9 on the baseline: max(2.001e-3, ~3.68e-5)."""
    t = compute_time(1e12, 1e9, baseline_system)
    assert t == pytest.approx(2.001e-3, rel=1e-12)


def test_compute_time_latency_floor(baseline_system: SystemConfig):
    assert compute_time(0, 0, baseline_system) == max(baseline_system.compute_latency,
                                                      baseline_system.mem_latency)


def test_compute_time_memory_bound(baseline_system: SystemConfig):
    t = compute_time(1e9, 1e12, baseline_system)
    memory = 1e12 / (baseline_system.mem_bandwidth * baseline_system.mem_efficiency) + baseline_system.mem_latency
    assert t == pytest.approx(memory)
    assert t > 1e9 / (baseline_system.peak_throughput * baseline_system.compute_efficiency)


def test_compute_time_rejects_negative_work(baseline_system: SystemConfig):
    with pytest.raises(ValueError):
        compute_time(-1, 0, baseline_system)


def test_cost_annotation_dispatches_by_kind(baseline_system: SystemConfig):
    wire = CostAnnotation(net_bytes=1e8, transfer=True)
    work = CostAnnotation(flops=1e12, mem_bytes=1e9)
    assert wire.duration(baseline_system) == comm_time(1e8, baseline_system)
    assert work.duration(baseline_system) == compute_time(1e12, 1e9, baseline_system)


# ============================================================================
# Test 3: Transformer Accounting
# ============================================================================

def test_block_forward_flops(default_model):
    d = s = 4096
    expected = 32 * s * (24 * d * d + 4 * s * d)
    assert block_forward_flops(default_model, 32) == pytest.approx(expected, rel=1e-12)
    assert block_forward_flops(default_model, 32) == pytest.approx(6.16e13, rel=1e-2)


def test_activation_bytes(default_model):
    assert activation_bytes(default_model, 32) == 1_073_741_824
    assert activation_bytes(default_model, 1) == 33_554_432
    with pytest.raises(ValueError):
        activation_bytes(default_model, 0)


def test_stage_activation_bytes_scale_with_blocks(default_model):
    one = stage_activation_bytes(default_model, 1, 4)
    assert stage_activation_bytes(default_model, 16, 4) == 16 * one
    assert one == default_model.act_bytes * 4 * 4096 * 4096


def test_backward_phases_cost_one_forward_each(default_model):
    fwd = stage_costs(default_model, 16, 8, Phase.FWD)
    for phase in (Phase.AGRAD, Phase.WGRAD, Phase.RECOMP):
        assert stage_costs(default_model, 16, 8, phase) == fwd


def test_opt_streams_state_without_flops(default_model):
    flops, mem = stage_costs(default_model, 16, 8, Phase.OPT)
    assert flops == 0.0
    assert mem == 16 * weight_bytes_per_block(default_model) * (2 + default_model.optimizer_multiplier)


# ============================================================================
# Test 4: Persistent Memory
# ============================================================================

def test_gpipe_persistent_bytes(default_model):
    """16 blocks x 12 d^2 x 2 bytes x (params + grads + 6 optimizer words) ~ 51.5 GB."""
    placement = StagePlacement.uniform(ScheduleKind.GPIPE, 8, 128)
    expected = 16 * 12 * 4096 * 4096 * 2 * 8

    assert persistent_bytes(placement, default_model, 0) == expected
    assert expected / 1e9 == pytest.approx(51.5, abs=0.1)


def test_chimera_persistent_bytes_double_gpipe(default_model):
    gpipe = StagePlacement.uniform(ScheduleKind.GPIPE, 8, 128)
    chimera = StagePlacement.uniform(ScheduleKind.CHIMERA, 8, 128)
    for w in range(8):
        assert persistent_bytes(chimera, default_model, w) == 2 * persistent_bytes(gpipe, default_model, w)


def test_asymmetric_persistent_bytes_equal_across_workers(asym_model):
    placement = StagePlacement.asymmetric_chimera(4, 120)
    values = {persistent_bytes(placement, asym_model, w) for w in range(4)}
    assert len(values) == 1


def test_persistent_bytes_optimizer_override(default_model):
    placement = StagePlacement.uniform(ScheduleKind.GPIPE, 8, 128)
    plain = persistent_bytes(placement, default_model, 0, optimizer_multiplier=0)
    assert plain == 16 * weight_bytes_per_block(default_model) * 2
    sgd = persistent_bytes(placement, replace(default_model, optimizer_multiplier=1), 0)
    assert sgd == 16 * weight_bytes_per_block(default_model) * 3
