"""Per-sample exponential moving average of predictions and its startup-bias correction."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import IncompleteEpochBuffer, ZeroUpdates


@dataclass(frozen=True)
class EnsembleState:
    Z: np.ndarray  # [N, C] accumulated predictions
    z_epoch: np.ndarray  # [N, C] this epoch's predictions, NaN rows not yet seen
    t: int
    alpha: float

    @classmethod
    def empty(cls, n: int, num_classes: int, alpha: float, dtype=np.float64) -> "EnsembleState":
        if not 0 <= alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
        return cls(np.zeros((n, num_classes), dtype=dtype), np.full((n, num_classes), np.nan, dtype=dtype), 0, alpha)

    def with_predictions(self, z_epoch: np.ndarray) -> "EnsembleState":
        if z_epoch.shape != self.Z.shape:
            raise ValueError(f"prediction buffer {z_epoch.shape} vs accumulator {self.Z.shape}")
        return replace(self, z_epoch=z_epoch)


def update_ensemble(state: EnsembleState) -> EnsembleState:
    """Z <- alpha Z + (1 - alpha) z_epoch, then advance t and clear the buffer."""
    missing = np.isnan(state.z_epoch).any(axis=1)
    if missing.any():
        raise IncompleteEpochBuffer(f"{int(missing.sum())} samples have no prediction this epoch, "
                                    f"first at index {int(np.flatnonzero(missing)[0])}")
    Z = state.alpha * state.Z + (1.0 - state.alpha) * state.z_epoch
    return EnsembleState(Z.astype(state.Z.dtype, copy=False), np.full_like(state.z_epoch, np.nan),
                         state.t + 1, state.alpha)


def bias_corrected_targets(state: EnsembleState) -> np.ndarray:
    if state.t == 0:
        raise ZeroUpdates("no targets before the first ensemble update")
    return state.Z / (1.0 - state.alpha ** state.t)
