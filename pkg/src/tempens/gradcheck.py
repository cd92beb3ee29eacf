"""Central finite-difference verification of the analytic network gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import NetworkConfig, backward, cast_params, forward

ZERO_GRAD = 1e-12


@dataclass
class LayerCheck:
    name: str
    max_rel_error: float  # ||analytic - numeric|| / max(||analytic||, ||numeric||)
    passed: bool
    entries_checked: int
    worst_entry_error: float  # elementwise, informative only


@dataclass
class GradCheckReport:
    tolerance: float
    layers: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(layer.passed for layer in self.layers)

    def failed(self) -> list:
        return [layer.name for layer in self.layers if not layer.passed]

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<8} rel err {c.max_rel_error:.3e}  "
                f"worst entry {c.worst_entry_error:.1e}  ({c.entries_checked} entries)" for c in self.layers]


def relative_error(analytic, numeric) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|); 0 where both are below 1e-12."""
    a, n = np.abs(analytic), np.abs(numeric)
    scale = np.maximum(a, n)
    out = np.abs(analytic - numeric) / np.where(scale > 0, scale, 1.0)
    return np.where((a < ZERO_GRAD) & (n < ZERO_GRAD), 0.0, out)


def tensor_relative_error(analytic, numeric) -> float:
    """Relative error of a whole gradient tensor in the Euclidean norm.

    Entries with |grad| near 1e-7 carry central-difference roundoff of the same
    order, so an elementwise ratio is noise there; the norm ratio is not.
    """
    a, n = np.linalg.norm(analytic), np.linalg.norm(numeric)
    if a < ZERO_GRAD and n < ZERO_GRAD:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / max(a, n))


def finite_diff_check(params: dict, batch: np.ndarray, loss_fn, cfg: NetworkConfig,
                      step: float = 1e-5, tolerance: float = 1e-4, dropout_seed: int = 0,
                      max_entries: int | None = None, rng_seed: int = 0,
                      backward_fn=backward) -> GradCheckReport:
    """Compare analytic gradients against central differences, per parameter tensor.

    ``loss_fn(probs) -> (loss, dloss/dprobs)``. Every forward reuses the same
    dropout seed so the masks are identical between evaluations. With
    ``max_entries`` only that many randomly chosen entries per tensor are probed.
    """
    params = cast_params(params, np.float64)
    batch = np.asarray(batch, dtype=np.float64)

    def run():
        return forward(params, batch, cfg, "train", np.random.default_rng(dropout_seed))

    probs, cache = run()
    _, dprobs = loss_fn(probs)
    analytic = backward_fn(params, cache, dprobs, cfg)
    pick = np.random.default_rng(rng_seed)

    report = GradCheckReport(tolerance)
    for name, p in params.items():
        flat = p.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(pick.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(entries))
        for j, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(run()[0])[0]
            flat[i] = orig - step
            down = loss_fn(run()[0])[0]
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        a = analytic[name].reshape(-1)[entries]
        err = tensor_relative_error(a, numeric)
        worst = float(relative_error(a, numeric).max()) if len(entries) else 0.0
        report.layers.append(LayerCheck(name, err, err < tolerance, len(entries), worst))
    return report
