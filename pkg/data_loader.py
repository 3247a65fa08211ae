# data_loader.py

"""
Sweep dataset discovery, loading and deterministic CSV writing.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List

import pandas as pd

logger = logging.getLogger(__name__)

DATASET_COLUMNS: Dict[str, List[str]] = {
    "formula_comparison": ["B", "gpipe_formula", "gpipe_table", "onef1b_formula", "onef1b_table",
                           "chimera_formula", "chimera_table"],
    "timeline_comparison_bubble": ["B", "slow_gpipe", "slow_onef1b", "slow_chimera", "mid_gpipe",
                                   "mid_onef1b", "mid_chimera", "fast_gpipe", "fast_onef1b", "fast_chimera"],
    "timeline_comparison_runtime": ["B", "slow_gpipe", "slow_onef1b", "slow_chimera", "mid_gpipe",
                                    "mid_onef1b", "mid_chimera", "fast_gpipe", "fast_onef1b", "fast_chimera"],
    "memory": ["B", "gpipe_s4", "onef1b_s4", "chimera_s4", "gpipe_s8", "onef1b_s8", "chimera_s8"],
    "unbalanced_runtime": ["B", "fast_s4_pct", "fast_s8_pct", "mid_s4_pct", "mid_s8_pct",
                           "slow_s4_pct", "slow_s8_pct"],
    "hanayo_table": ["system", "beta_c", "beta_h", "t_c", "t_h", "delta_t_pct"],
    "cells": ["schedule", "variant", "S", "B", "regime", "blocks", "formula_bubble", "table_bubble",
              "t_sim", "beta_idle", "peak_activation_bytes", "status", "error"],
}

# fixed precision keeps reruns byte-identical
FLOAT_FORMAT = "%.10g"


def is_dataset_file(path: Path) -> bool:
    """Known dataset name with a CSV suffix."""
    return path.suffix == ".csv" and path.stem in DATASET_COLUMNS


def find_datasets(root: Path) -> List[Path]:
    """Find dataset CSVs written by a sweep."""
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"Dataset directory does not exist: {root}")
    files = sorted(p for p in root.glob("*.csv") if is_dataset_file(p))
    if not files:
        raise RuntimeError(f"No sweep datasets found under: {root}")
    return files


def write_dataset(frame: pd.DataFrame, out_dir: Path, name: str) -> Path:
    """Write a dataset, using its canonical column order when the sweep produced all of them."""
    columns = DATASET_COLUMNS.get(name)
    if columns is not None:
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            # non-default stage sets produce differently named columns
            logger.warning(f"Dataset '{name}' lacks canonical columns {missing}; writing as produced")
        else:
            frame = frame[columns]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def load_dataset(path: Path) -> pd.DataFrame:
    """Load a dataset CSV; blank error cells stay empty strings."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset does not exist: {path}")
    frame = pd.read_csv(path, keep_default_na=False, na_values=[""])
    if "error" in frame.columns:
        frame["error"] = frame["error"].fillna("")
    return frame
