"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class ParameterState:
    values: dict
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def create(cls, values: dict) -> "ParameterState":
        values = {k: np.array(p) for k, p in values.items()}
        return cls(values,
                   {k: np.zeros_like(p) for k, p in values.items()},
                   {k: np.zeros_like(p) for k, p in values.items()})


def adamw_step(state: ParameterState, grads: dict, lr: float, weight_decay: float,
               beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> ParameterState:
    """One update, returned as a new state; the input state is left untouched.

        m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
        p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """
    step = state.step + 1
    bias1 = 1.0 - beta1 ** step
    bias2 = 1.0 - beta2 ** step
    values, m, v = {}, {}, {}
    for name, p in state.values.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = m[name] / bias1
        v_hat = v[name] / bias2
        values[name] = (p - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)).astype(p.dtype)
    return ParameterState(values, m, v, step)
