"""Input normalization shared by the operator and the training loop."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NormStats", "normalize_inputs", "TARGET_STD"]

TARGET_STD = 0.25


@dataclass(frozen=True)
class NormStats:
    """Mean and standard deviation of ``a = V_S**2`` over all training voxels."""

    mean: float
    std: float
    target_std: float = TARGET_STD

    def __post_init__(self):
        if not np.isfinite(self.std) or self.std <= 0:
            raise ValueError(f"normalization std must be positive, got {self.std}")

    @classmethod
    def from_inputs(cls, a: np.ndarray, target_std: float = TARGET_STD) -> "NormStats":
        a = np.asarray(a, dtype=np.float64)
        return cls(mean=float(a.mean()), std=float(a.std()), target_std=target_std)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "target_std": self.target_std}


def normalize_inputs(a: np.ndarray, stats: NormStats) -> np.ndarray:
    """Affine map sending the training inputs to mean 0 and std ``stats.target_std``."""
    return stats.target_std * (np.asarray(a, dtype=np.float64) - stats.mean) / stats.std
