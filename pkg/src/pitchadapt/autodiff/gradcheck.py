"""Central finite-difference gradient checking.

Checks run in float64 so the comparison measures the analytic gradient rather
than single-precision round-off in the difference quotient.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def _to_scalar(out: Tensor, projection: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out.reshape(())
    return (out * Tensor(projection)).sum()


def finite_difference_check(op: Callable[..., Tensor], point: Sequence[np.ndarray], step: float = 1e-5,
                            floor: float = 1e-6, seed: int = 0, wrt: Sequence[int] | None = None) -> float:
    """Worst elementwise relative error between analytic and numeric gradients.

    ``op`` receives one Tensor per array in ``point``.  Non-scalar outputs are
    reduced with a fixed random projection so every output element matters.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    wrt = range(len(arrays)) if wrt is None else wrt
    rng = np.random.default_rng(seed)

    probe = op(*[Tensor(a) for a in arrays])
    projection = None if probe.size == 1 else rng.standard_normal(probe.shape)

    def f(vals):
        return float(_to_scalar(op(*[Tensor(v) for v in vals]), projection).data)

    inputs = [Tensor(a, requires_grad=i in wrt) for i, a in enumerate(arrays)]
    loss = _to_scalar(op(*inputs), projection)
    backward(loss)

    worst = 0.0
    for i in wrt:
        analytic = inputs[i].grad if inputs[i].grad is not None else np.zeros_like(arrays[i])
        base = arrays[i]
        flat = base.reshape(-1)
        numeric = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            plus = f(arrays)
            flat[j] = orig - step
            minus = f(arrays)
            flat[j] = orig
            numeric[j] = (plus - minus) / (2.0 * step)
        a = analytic.reshape(-1)
        err = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def parameter_gradient_check(loss_fn: Callable[[], Tensor], params, keys: Sequence[str] | None = None,
                             step: float = 1e-5, floor: float = 1e-6, max_entries: int = 24,
                             seed: int = 0) -> dict[str, float]:
    """Finite-difference check of ``loss_fn()`` w.r.t. entries of a ParameterSet.

    The parameters are promoted to float64 in place.  At most ``max_entries``
    randomly chosen entries per parameter are perturbed; the worst relative
    error per parameter name is returned.
    """
    keys = list(params) if keys is None else list(keys)
    for p in params.values():
        p.data = p.data.astype(np.float64)
    loss = loss_fn()
    if loss.size != 1:
        raise ValueError("loss_fn must return a scalar")
    backward(loss)
    analytic = {k: (params[k].grad.copy() if params[k].grad is not None else np.zeros_like(params[k].data))
                for k in keys}
    rng = np.random.default_rng(seed)
    out = {}
    for k in keys:
        flat = params[k].data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + step
            plus = float(loss_fn().data)
            flat[j] = orig - step
            minus = float(loss_fn().data)
            flat[j] = orig
            num = (plus - minus) / (2.0 * step)
            a = float(analytic[k].reshape(-1)[j])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        out[k] = worst
    return out
