"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.u = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One Adam update. Returns fresh parameter and state objects; inputs are left untouched."""
    if set(grads) != set(params):
        raise ValueError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    k = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**k, 1.0 - b2**k
    new_params, new_m, new_u = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = b1 * state.m.get(name, 0) + (1 - b1) * g
        u = b2 * state.u.get(name, 0) + (1 - b2) * g * g
        m_hat, u_hat = m / c1, u / c2
        new_params[name] = (p - state.learning_rate * m_hat / (np.sqrt(u_hat) + state.eps)).astype(p.dtype)
        new_m[name] = np.asarray(m, dtype=p.dtype)
        new_u[name] = np.asarray(u, dtype=p.dtype)
    new_state = AdamState(state.learning_rate, b1, b2, state.eps, k, new_m, new_u)
    return new_params, new_state
