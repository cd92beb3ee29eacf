"""Temporal-ensembling objective: masked cross-entropy plus a ramped consistency term.

All functions take softmax probabilities ``z`` (not logits) and return the loss
value together with its gradient with respect to ``z``. Targets ``z_tilde`` are
constants; no gradient is produced for them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class RampSchedule:
    max_weight: float = 30.0
    ramp_length: int = 80
    labeled_fraction: float = 1.0

    def __post_init__(self):
        if self.max_weight < 0:
            raise ValueError("max_weight must be >= 0")
        if self.ramp_length < 1:
            raise ValueError("ramp_length must be >= 1")
        if not 0 <= self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class LossBreakdown:
    supervised: float
    unsupervised: float
    w_t: float
    total: float


def masked_cross_entropy(z, y, mask):
    """Mean of -log z[i, y[i]] over the labeled rows; 0 when no row is labeled."""
    z, y, mask = np.asarray(z), np.asarray(y), np.asarray(mask, dtype=bool)
    if z.ndim != 2 or y.shape != (len(z),) or mask.shape != (len(z),):
        raise ShapeMismatch(f"z {z.shape}, y {y.shape}, mask {mask.shape}")
    grad = np.zeros_like(z)
    n = int(mask.sum())
    if n == 0:
        return 0.0, grad
    rows = np.flatnonzero(mask)
    picked = z[rows, y[rows]]
    loss = float(-np.log(picked + LOG_FLOOR).sum() / n)
    grad[rows, y[rows]] = -1.0 / (n * (picked + LOG_FLOOR))
    return loss, grad


def consistency_mse(z, z_tilde):
    """Squared distance to the targets summed over the batch, divided by C * B."""
    z, z_tilde = np.asarray(z), np.asarray(z_tilde)
    if z.shape != z_tilde.shape or z.ndim != 2:
        raise ShapeMismatch(f"z {z.shape} vs z_tilde {z_tilde.shape}")
    b, c = z.shape
    if b == 0:
        return 0.0, np.zeros_like(z)
    diff = z - z_tilde
    loss = float((diff * diff).sum() / (c * b))
    return loss, (2.0 / (c * b)) * diff


def ramp_weight(t: int, schedule: RampSchedule) -> float:
    """Gaussian ramp-up exp(-5 (1 - t/T)^2) scaled by max weight and labeled fraction."""
    if t < 0:
        raise ValueError("epoch index must be >= 0")
    peak = schedule.max_weight * schedule.labeled_fraction
    if t >= schedule.ramp_length:
        return peak
    phase = 1.0 - t / schedule.ramp_length
    return peak * math.exp(-5.0 * phase * phase)


def combined_loss(z, y, mask, z_tilde, t, schedule: RampSchedule, w_t: float | None = None):
    """Supervised plus weighted consistency loss; returns ``(LossBreakdown, dtotal/dz)``.

    ``w_t`` overrides the schedule when given (used to switch the consistency term off).
    """
    sup, g_sup = masked_cross_entropy(z, y, mask)
    unsup, g_unsup = consistency_mse(z, z_tilde)
    w = ramp_weight(t, schedule) if w_t is None else float(w_t)
    total = sup + w * unsup
    return LossBreakdown(sup, unsup, w, total), g_sup + w * g_unsup
