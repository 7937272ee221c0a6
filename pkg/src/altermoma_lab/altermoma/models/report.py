from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd


def quartile_means(losses: Sequence[float]) -> tuple:
    """Mean of the first and of the last quarter of a loss curve (NaN for an empty curve)."""
    if not losses:
        return float('nan'), float('nan')
    width = max(1, len(losses) // 4)
    return float(np.mean(losses[:width])), float(np.mean(losses[-width:]))


@dataclass
class PruneReport:
    """Summary row of one pruning run."""
    method: str
    rho: float
    structured: bool
    n: int                  # scored entries (parameters, or channels in structured mode)
    k: int
    kept: int
    n_parameters: int
    n_unmasked: int
    macs_before: int
    macs_after: int
    mask_lidar_loss_first: float = float('nan')
    mask_lidar_loss_last: float = float('nan')
    mask_camera_loss_first: float = float('nan')
    mask_camera_loss_last: float = float('nan')
    val_loss_masked: Optional[float] = None
    val_loss_finetuned: Optional[float] = None

    @property
    def mac_reduction(self) -> float:
        return 1.0 - self.macs_after / self.macs_before if self.macs_before else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{**dataclasses.asdict(self), 'mac_reduction': self.mac_reduction}])

    def with_losses(self, masked: float, finetuned: Optional[float] = None) -> PruneReport:
        return dataclasses.replace(self, val_loss_masked=masked, val_loss_finetuned=finetuned)
