"""Adaptive-moment (Adam) optimizer over a ParameterSet."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .params import ParameterSet


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: ParameterSet, state: OptimizerState) -> ParameterSet:
    """Apply one Adam update to every unfrozen parameter, in place.

    Gradients are consumed: each updated parameter's ``grad`` is cleared so a
    stale gradient can never be applied twice.
    """
    trainable = params.trainable()
    missing = [k for k, p in trainable.items() if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for unfrozen parameter(s): {', '.join(missing[:5])}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in trainable.items():
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
        p.grad = None
    return params
