"""Adam with bias-corrected moments, updating parameters in place."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One update of every parameter; a missing gradient counts as zero."""
    for name, tensor in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        if state.m[name].shape != tensor.shape or state.v[name].shape != tensor.shape:
            raise ShapeError(f"optimizer state for {name} has shape {state.m[name].shape}, parameter has {tensor.shape}")
        g = grads.get(name)
        if g is not None and np.shape(g) != tensor.shape:
            raise ShapeError(f"gradient for {name} has shape {np.shape(g)}, parameter has {tensor.shape}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, tensor in params.items():
        g = grads.get(name)
        g = np.zeros_like(tensor.data) if g is None else np.asarray(g, dtype=np.float64)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
