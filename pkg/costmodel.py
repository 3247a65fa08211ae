# costmodel.py

"""
Hockney communication and roofline compute models plus transformer FLOP/byte accounting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Tuple

from config import ModelConfig, SystemConfig
from schedule_core import Phase

if TYPE_CHECKING:
    from schedule_core import StagePlacement

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostAnnotation:
    """Work attached to a graph node: FLOPs and memory traffic, or bytes on the wire."""

    flops: float = 0.0
    mem_bytes: float = 0.0
    net_bytes: float = 0.0
    transfer: bool = False

    def duration(self, sys: SystemConfig) -> float:
        if self.transfer:
            return comm_time(self.net_bytes, sys)
        return compute_time(self.flops, self.mem_bytes, sys)


# ============================================================================
# Time Models
# ============================================================================

def comm_time(net_bytes: float, sys: SystemConfig) -> float:
    """Hockney model: V_net / BW_net + L_net."""
    if net_bytes < 0:
        raise ValueError(f"negative transfer volume: {net_bytes}")
    return net_bytes / sys.net_bandwidth + sys.net_latency


def compute_time(flops: float, mem_bytes: float, sys: SystemConfig) -> float:
    """Roofline model: the slower of the compute-bound and memory-bound estimates."""
    if flops < 0 or mem_bytes < 0:
        raise ValueError(f"negative work: flops={flops}, mem_bytes={mem_bytes}")
    t_compute = flops / (sys.peak_throughput * sys.compute_efficiency) + sys.compute_latency
    t_memory = mem_bytes / (sys.mem_bandwidth * sys.mem_efficiency) + sys.mem_latency
    return max(t_compute, t_memory)


# ============================================================================
# Transformer Accounting
# ============================================================================

def block_forward_flops(model: ModelConfig, m: int) -> float:
    """Dense projections (QKV, output, two FFN matmuls) plus attention scores and context."""
    d, s = model.hidden, model.seq
    dense = 8 * d * d + 4 * d * model.ffn_dim
    attention = 4 * s * d
    return float(m * s * (dense + attention))


def weight_bytes_per_block(model: ModelConfig) -> int:
    params = 4 * model.hidden * model.hidden + 2 * model.hidden * model.ffn_dim
    return params * model.dtype_bytes


def activation_bytes(model: ModelConfig, m: int) -> int:
    """Size of the stage-boundary tensor for one microbatch of m sequences."""
    if m < 1:
        raise ValueError(f"microbatch size must be >= 1, got {m}")
    return m * model.seq * model.hidden * model.dtype_bytes


def stage_activation_bytes(model: ModelConfig, blocks: int, m: int) -> int:
    """
    Activations a stage of `blocks` blocks retains for one microbatch until its Wgrad.

    `act_bytes` is per token per hidden unit per block, so the hidden size is a factor.
    """
    return model.act_bytes * m * model.seq * model.hidden * blocks


def stage_costs(model: ModelConfig, blocks_in_stage: int, m: int, phase: Phase) -> Tuple[float, float]:
    """
    Return (F, V_m) for one phase of one microbatch on a stage.

    Agrad, Wgrad and Recomp each cost one forward, so a full backward is twice a
    forward. Opt carries no FLOPs and streams parameters, gradients and optimizer
    state once.
    """
    if m < 1:
        raise ValueError(f"microbatch size must be >= 1, got {m}")
    weights = weight_bytes_per_block(model)
    if phase is Phase.OPT:
        mem = weights * (2 + model.optimizer_multiplier)
        return 0.0, float(mem * blocks_in_stage)

    flops = block_forward_flops(model, m)
    mem = weights + stage_activation_bytes(model, 1, m)
    return flops * blocks_in_stage, float(mem * blocks_in_stage)


def persistent_bytes(
    placement: "StagePlacement",
    model: ModelConfig,
    worker: int,
    optimizer_multiplier: int | None = None,
) -> int:
    """Parameters, gradients and optimizer state for every stage hosted on `worker`."""
    mult = model.optimizer_multiplier if optimizer_multiplier is None else optimizer_multiplier
    blocks = placement.worker_blocks(worker)
    if blocks == 0:
        raise ValueError(f"worker {worker} hosts no stage")
    return blocks * weight_bytes_per_block(model) * (1 + 1 + mult)
