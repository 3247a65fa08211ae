# config.py

"""
Configuration management for the pipeline schedule lab using environment variables, JSON files and dataclasses.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional


class ConfigError(ValueError):
    """Raised when a configuration value or file is invalid."""


# ============================================================================
# Helper Functions
# ============================================================================

def _env_str(name: str, default: Optional[str] = None) -> Optional[str]:
    """Safely read string environment variable."""
    value = os.getenv(name)
    return value if value is not None else default


def _env_int(name: str, default: int) -> int:
    """Safely read integer environment variable with fallback."""
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    """Safely read float environment variable with fallback."""
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError:
        return default


def _env_list(name: str, default: List[int]) -> List[int]:
    """Read a comma separated integer list, e.g. PIPELAB_MICROBATCHES=8,16,32."""
    value = os.getenv(name)
    if not value:
        return list(default)
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        return list(default)


def _merge(section: Any, values: Dict[str, Any], section_name: str) -> Any:
    """Return a copy of a dataclass section with keys from a config file applied."""
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{section_name}' must be an object, got {type(values).__name__}")
    known = {f.name for f in fields(section)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in section '{section_name}': {', '.join(unknown)}")
    checked = {key: _coerce(getattr(section, key), value, f"{section_name}.{key}")
               for key, value in values.items()}
    return replace(section, **checked)


def _coerce(current: Any, value: Any, where: str) -> Any:
    """Check a file value against the type of the field it replaces; ints widen to floats."""
    def bad(expected: str) -> ConfigError:
        return ConfigError(f"{where} must be {expected}, got {type(value).__name__} {value!r}")

    is_int = isinstance(value, int) and not isinstance(value, bool)
    if isinstance(current, float):
        if not (is_int or isinstance(value, float)):
            raise bad("a number")
        return float(value)
    if isinstance(current, int):
        if not is_int:
            raise bad("an integer")
        return value
    if isinstance(current, str):
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if isinstance(current, list):
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise bad("a list of integers")
        return list(value)
    return value


# ============================================================================
# Configuration Classes
# ============================================================================


@dataclass(frozen=True)
class SystemConfig:
    """
    Machine description for the Hockney (network) and roofline (compute) models.

    Units: FLOP/s, bytes/s and seconds. Defaults are the baseline system:
    ~1 PFLOP/s compute, 34 TB/s memory bandwidth, 50 GB/s interconnect at 500 ns.
    """
    peak_throughput: float = 1e15        # TP [FLOP/s]
    compute_efficiency: float = 0.5      # e_c
    compute_latency: float = 1e-6        # L_c [s]
    mem_bandwidth: float = 3.4e13        # BW_m [B/s]
    mem_efficiency: float = 0.8          # e_m
    mem_latency: float = 5e-8            # L_m [s]
    net_bandwidth: float = 5e10          # BW_net [B/s]
    net_latency: float = 5e-7            # L_net [s]
    name: str = "baseline"

    @classmethod
    def from_env(cls) -> "SystemConfig":
        return cls(
            peak_throughput=_env_float("PIPELAB_PEAK_THROUGHPUT", 1e15),
            compute_efficiency=_env_float("PIPELAB_COMPUTE_EFFICIENCY", 0.5),
            compute_latency=_env_float("PIPELAB_COMPUTE_LATENCY", 1e-6),
            mem_bandwidth=_env_float("PIPELAB_MEM_BANDWIDTH", 3.4e13),
            mem_efficiency=_env_float("PIPELAB_MEM_EFFICIENCY", 0.8),
            mem_latency=_env_float("PIPELAB_MEM_LATENCY", 5e-8),
            net_bandwidth=_env_float("PIPELAB_NET_BANDWIDTH", 5e10),
            net_latency=_env_float("PIPELAB_NET_LATENCY", 5e-7),
            name=_env_str("PIPELAB_SYSTEM_NAME", "baseline") or "baseline",
        )

    def validate(self) -> "SystemConfig":
        for rate in ("peak_throughput", "mem_bandwidth", "net_bandwidth"):
            if not getattr(self, rate) > 0:
                raise ConfigError(f"system.{rate} must be > 0, got {getattr(self, rate)}")
        for eff in ("compute_efficiency", "mem_efficiency"):
            value = getattr(self, eff)
            if not 0 < value <= 1:
                raise ConfigError(f"system.{eff} must be in (0, 1], got {value}")
        for lat in ("compute_latency", "mem_latency", "net_latency"):
            if getattr(self, lat) < 0:
                raise ConfigError(f"system.{lat} must be >= 0, got {getattr(self, lat)}")
        return self


@dataclass(frozen=True)
class ModelConfig:
    """
    Transformer shape and memory accounting knobs.

    Defaults: 128 blocks, d=4096, 80 heads, s=4096, fp16 with fp32 Adam state.
    `act_bytes` (c_act) is bytes retained per token per hidden unit per block.
    """
    blocks: int = 128
    hidden: int = 4096
    heads: int = 80
    seq: int = 4096
    ffn_dim: int = 4 * 4096
    minibatch: int = 256
    dtype_bytes: int = 2
    act_bytes: int = 16
    optimizer_multiplier: int = 6

    @classmethod
    def from_env(cls) -> "ModelConfig":
        hidden = _env_int("PIPELAB_HIDDEN", 4096)
        return cls(
            blocks=_env_int("PIPELAB_BLOCKS", 128),
            hidden=hidden,
            heads=_env_int("PIPELAB_HEADS", 80),
            seq=_env_int("PIPELAB_SEQ", 4096),
            ffn_dim=_env_int("PIPELAB_FFN_DIM", 4 * hidden),
            minibatch=_env_int("PIPELAB_MINIBATCH", 256),
            dtype_bytes=_env_int("PIPELAB_DTYPE_BYTES", 2),
            act_bytes=_env_int("PIPELAB_ACT_BYTES", 16),
            optimizer_multiplier=_env_int("PIPELAB_OPTIMIZER_MULTIPLIER", 6),
        )

    def validate(self) -> "ModelConfig":
        for name in ("blocks", "hidden", "heads", "seq", "ffn_dim", "minibatch", "dtype_bytes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.act_bytes < 0 or self.optimizer_multiplier < 0:
            raise ConfigError("model.act_bytes and model.optimizer_multiplier must be >= 0")
        return self

    def microbatch_size(self, microbatches: int) -> int:
        """m = M_glob / B; must be integral."""
        if microbatches < 1 or self.minibatch % microbatches:
            raise ConfigError(
                f"minibatch {self.minibatch} is not divisible into {microbatches} microbatches"
            )
        return self.minibatch // microbatches


@dataclass
class SweepConfig:
    """
    Experiment grid - WHICH schedules, stage counts and microbatch counts to run.

    Used by: sweep.run_sweep and the `sweep` CLI verb
    """
    stages: List[int] = field(default_factory=lambda: [4, 8])
    microbatches: List[int] = field(default_factory=lambda: [8, 16, 32, 64, 128, 256])
    plot_stages: int = 8
    hanayo_stages: int = 8
    hanayo_microbatches: int = 8
    asym_blocks: int = 120
    regime_factor: float = 10.0
    concurrency: int = 4
    output_dir: str = "./results"

    @classmethod
    def from_env(cls) -> "SweepConfig":
        return cls(
            stages=_env_list("PIPELAB_STAGES", [4, 8]),
            microbatches=_env_list("PIPELAB_MICROBATCHES", [8, 16, 32, 64, 128, 256]),
            plot_stages=_env_int("PIPELAB_PLOT_STAGES", 8),
            hanayo_stages=_env_int("PIPELAB_HANAYO_STAGES", 8),
            hanayo_microbatches=_env_int("PIPELAB_HANAYO_MICROBATCHES", 8),
            asym_blocks=_env_int("PIPELAB_ASYM_BLOCKS", 120),
            regime_factor=_env_float("PIPELAB_REGIME_FACTOR", 10.0),
            concurrency=_env_int("PIPELAB_CONCURRENCY", 4),
            output_dir=_env_str("PIPELAB_OUTPUT_DIR", "./results") or "./results",
        )

    def validate(self) -> "SweepConfig":
        if not self.stages or not self.microbatches:
            raise ConfigError("sweep.stages and sweep.microbatches must not be empty")
        if self.regime_factor <= 1:
            raise ConfigError(f"sweep.regime_factor must be > 1, got {self.regime_factor}")
        if self.concurrency < 1:
            raise ConfigError(f"sweep.concurrency must be >= 1, got {self.concurrency}")
        return self


# ============================================================================
# Master Configuration
# ============================================================================

@dataclass
class LabConfig:
    """
    Master configuration object for the lab.

    Structure:
    - system: baseline machine (regimes are derived from it)
    - model: transformer shape and memory accounting
    - sweep: experiment grid and execution settings

    Use LabConfig.from_env() for environment driven runs and
    LabConfig.from_file() to overlay a JSON config file on top of it.
    """
    system: SystemConfig
    model: ModelConfig
    sweep: SweepConfig

    @classmethod
    def from_env(cls) -> "LabConfig":
        """Load complete configuration from environment variables."""
        return cls(
            system=SystemConfig.from_env(),
            model=ModelConfig.from_env(),
            sweep=SweepConfig.from_env(),
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base: Optional["LabConfig"] = None) -> "LabConfig":
        base = base or cls.from_env()
        unknown = sorted(set(data) - {"system", "model", "sweep"})
        if unknown:
            raise ConfigError(f"Unknown config sections: {', '.join(unknown)}")
        try:
            cfg = cls(
                system=_merge(base.system, data.get("system", {}), "system"),
                model=_merge(base.model, data.get("model", {}), "model"),
                sweep=_merge(base.sweep, data.get("sweep", {}), "sweep"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def from_file(cls, path: Path, base: Optional["LabConfig"] = None) -> "LabConfig":
        """Load a JSON config file with optional `system`, `model` and `sweep` sections."""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file does not exist: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")
        return cls.from_dict(data, base=base)

    def validate(self) -> "LabConfig":
        self.system.validate()
        self.model.validate()
        self.sweep.validate()
        return self
