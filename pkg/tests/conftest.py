# tests/conftest.py

"""
Global pytest fixtures for the schedule lab: configuration, regimes, models and table factories.
"""

import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import pytest
from dotenv import load_dotenv

# Add project root to Python path to ensure modules can be imported
project_root = Path(__file__).resolve().parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from config import LabConfig, ModelConfig, SystemConfig
from execgraph import ExecGraph, build_exec_graph
from metrics import SweepMetrics
from schedule_core import ScheduleTable, StagePlacement, build_schedule
from sweep import RegimeGrid, build_regimes

# Load .env file from project root
dotenv_path = project_root / ".env"

if dotenv_path.exists():
    load_dotenv(dotenv_path)


@pytest.fixture(scope="session")
def lab_config() -> LabConfig:
    """
    Defaults only: the lab's acceptance numbers are defined against the built-in
    baseline, so environment overrides are ignored here.
    """
    return LabConfig(system=SystemConfig(), model=ModelConfig(), sweep=LabConfig.from_env().sweep)


@pytest.fixture(scope="session")
def baseline_system() -> SystemConfig:
    return SystemConfig()


@pytest.fixture(scope="session")
def default_model() -> ModelConfig:
    """128 blocks, d=4096, s=4096, fp16, 256-sequence minibatch."""
    return ModelConfig()


@pytest.fixture(scope="session")
def asym_model(default_model: ModelConfig) -> ModelConfig:
    """Same model cut to 120 blocks so the 1:2 placement divides evenly."""
    return replace(default_model, blocks=120)


@pytest.fixture(scope="session")
def regimes(baseline_system: SystemConfig) -> RegimeGrid:
    return build_regimes(baseline_system, 10.0)


@pytest.fixture
def sweep_metrics() -> SweepMetrics:
    """Metrics collector for sweep cells."""
    return SweepMetrics()


@pytest.fixture(scope="session")
def make_table() -> Callable[..., ScheduleTable]:
    """Factory: make_table(kind, S, B, **opts)."""
    def _make(kind, stages, microbatches, **opts) -> ScheduleTable:
        return build_schedule(kind, stages, microbatches, **opts)
    return _make


@pytest.fixture(scope="session")
def make_graph(default_model: ModelConfig) -> Callable[..., ExecGraph]:
    """
    Factory: make_graph(kind, S, B, model=None, asym=False, **opts) builds table,
    placement and graph in one step.
    """
    def _make(kind, stages, microbatches, model=None, asym=False, grad_sync=False, **opts) -> ExecGraph:
        model = model or default_model
        if asym:
            placement = StagePlacement.asymmetric_chimera(stages, model.blocks)
        else:
            placement = StagePlacement.uniform(kind, stages, model.blocks)
        table = build_schedule(kind, stages, microbatches, placement, **opts)
        return build_exec_graph(table, placement, model, grad_sync=grad_sync)
    return _make
