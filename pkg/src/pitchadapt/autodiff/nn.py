"""Neural-network primitives built on the autodiff tensor.

Every function here is differentiable w.r.t. its Tensor arguments and checks
its shape contract up front, raising :class:`ContractError` on violation.
Sequence functions take ``(T, D)`` or batched ``(B, T, D)`` inputs; masks are
plain 0/1 arrays of shape ``(B, T)`` and are never differentiated.
"""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from ..errors import ContractError, OutOfVocabularyError
from . import tensor as T
from .params import dense_init, uniform_fan_in
from .tensor import DEFAULT_DTYPE, Tensor, as_tensor

NEG_INF = -1e9


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape((1,) + x.shape), True
    return x, False


def _expand_mask(mask: np.ndarray | None, ndim: int) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask)
    while mask.ndim < ndim:
        mask = mask[..., None]
    return mask


def mse_loss(prediction: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean of squared differences.

    With ``mask`` (shape equal to a leading prefix of ``prediction.shape``)
    only selected positions count; the mean is over every selected element.
    """
    target = as_tensor(target, like=prediction)
    if prediction.shape != target.shape:
        raise ContractError(f"mse_loss shape mismatch: {prediction.shape} vs {target.shape}")
    diff = prediction - target
    sq = diff * diff
    if mask is None:
        return sq.mean()
    mask = np.asarray(mask, dtype=prediction.dtype)
    if mask.shape != prediction.shape[:mask.ndim]:
        raise ContractError(f"mask shape {mask.shape} is not a prefix of {prediction.shape}")
    per_pos = int(np.prod(prediction.shape[mask.ndim:], dtype=np.int64))
    count = float(mask.sum()) * per_pos
    if count == 0:
        return (sq * 0.0).sum()
    return (sq * _expand_mask(mask, prediction.ndim)).sum() * (1.0 / count)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis."""
    x = as_tensor(x)
    if weight.ndim != 2:
        raise ContractError("linear weight must be 2-D (d_in, d_out)")
    if x.shape[-1] != weight.shape[0]:
        raise ContractError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ContractError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    out = x @ weight
    if bias is not None:
        out = out + bias
    if squeeze:
        out = out.reshape(-1)
    return out


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding="same") -> Tensor:
    """1-D convolution over time; ``x`` is (T, C_in) or (B, T, C_in).

    ``padding="same"`` pads ``(k - 1) // 2`` zeros per side, which keeps the
    length for odd kernels at stride 1.
    """
    x = as_tensor(x)
    xb, squeeze = _batched(x)
    k, c_in, _ = kernel.shape
    if xb.shape[-1] != c_in:
        raise ContractError(f"conv1d: input channels {xb.shape[-1]} != kernel channels {c_in}")
    if stride < 1:
        raise ContractError("conv1d: stride must be >= 1")
    pad = (k - 1) // 2 if padding == "same" else int(padding)
    if k > xb.shape[1] + 2 * pad:
        raise ContractError(f"conv1d: kernel {k} longer than padded input {xb.shape[1] + 2 * pad}")
    out = T.conv1d_raw(xb, kernel, stride, pad)
    if bias is not None:
        out = out + bias
    return out.reshape(out.shape[1:]) if squeeze else out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' 2-D convolution; ``x`` is (B, H, W, C_in)."""
    kh, kw, c_in, _ = kernel.shape
    if x.ndim != 4 or x.shape[-1] != c_in:
        raise ContractError(f"conv2d: expected (B, H, W, {c_in}) input, got {x.shape}")
    out = T.conv2d_raw(x, kernel, ((kh - 1) // 2, (kw - 1) // 2))
    if bias is not None:
        out = out + bias
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids.max()) if ids.max() >= table.shape[0] else int(ids.min())
        raise OutOfVocabularyError(f"token id {bad} outside vocabulary of size {table.shape[0]}")
    return T.take_rows(table, ids)


# -- recurrent ----------------------------------------------------------------
def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate order in the packed weights is (input, forget, candidate, output)."""
    w_ih, w_hh, b = params["w_ih"], params["w_hh"], params["bias"]
    hidden = w_hh.shape[0]
    if w_hh.shape != (hidden, 4 * hidden) or w_ih.shape[1] != 4 * hidden:
        raise ContractError("lstm_cell: packed weights must have 4*hidden columns")
    if h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise ContractError(f"lstm_cell: state size {h.shape[-1]}/{c.shape[-1]} != hidden {hidden}")
    if x.shape[-1] != w_ih.shape[0]:
        raise ContractError(f"lstm_cell: input dim {x.shape[-1]} != {w_ih.shape[0]}")
    gates = linear(x, w_ih) + linear(h, w_hh) + b
    return _lstm_gates(gates, c, hidden)


def _lstm_gates(gates: Tensor, c: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    i = T.sigmoid(gates[..., 0:hidden])
    f = T.sigmoid(gates[..., hidden:2 * hidden])
    g = T.tanh(gates[..., 2 * hidden:3 * hidden])
    o = T.sigmoid(gates[..., 3 * hidden:4 * hidden])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def lstm(x: Tensor, params: Mapping[str, Tensor], mask: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Run an LSTM over (B, T, D); masked steps carry the previous state through."""
    xb, squeeze = _batched(as_tensor(x))
    b, steps, _ = xb.shape
    hidden = params["w_hh"].shape[0]
    x_proj = linear(xb, params["w_ih"]) + params["bias"]
    h = Tensor(np.zeros((b, hidden), dtype=xb.dtype))
    c = Tensor(np.zeros((b, hidden), dtype=xb.dtype))
    outputs: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = x_proj[:, t] + linear(h, params["w_hh"])
        h_new, c_new = _lstm_gates(gates, c, hidden)
        if mask is not None:
            m = np.asarray(mask[:, t], dtype=xb.dtype)[:, None]
            h = h_new * m + h * (1.0 - m)
            c = c_new * m + c * (1.0 - m)
        else:
            h, c = h_new, c_new
        outputs[t] = h
    out = T.stack(outputs, axis=1)
    return out.reshape(out.shape[1:]) if squeeze else out


def bilstm(x: Tensor, forward: Mapping[str, Tensor], backward_params: Mapping[str, Tensor],
           mask: np.ndarray | None = None) -> Tensor:
    fw = lstm(x, forward, mask)
    bw = lstm(x, backward_params, mask, reverse=True)
    return T.concat([fw, bw], axis=-1)


# -- attention / transformer --------------------------------------------------
def scaled_dot_attention(query: Tensor, keys: Tensor, values: Tensor, key_mask: np.ndarray | None = None,
                         return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v.  ``key_mask`` zeroes attention to padded keys."""
    if query.shape[-1] != keys.shape[-1]:
        raise ContractError(f"attention: query dim {query.shape[-1]} != key dim {keys.shape[-1]}")
    if keys.shape[-2] != values.shape[-2]:
        raise ContractError(f"attention: {keys.shape[-2]} keys but {values.shape[-2]} values")
    scale = 1.0 / np.sqrt(query.shape[-1])
    scores = (query @ T.swapaxes(keys, -1, -2)) * scale
    bias = None
    if key_mask is not None:
        km = np.asarray(key_mask)
        bias = np.where(km > 0, 0.0, NEG_INF).astype(scores.dtype)[..., None, :]
    weights = T.softmax(scores, axis=-1, bias=bias)
    out = weights @ values
    return (out, weights) if return_weights else out


def transformer_ffn_block(x: Tensor, params: Mapping[str, Tensor], mask: np.ndarray | None = None) -> Tensor:
    """Post-norm transformer layer: self-attention and a position-wise FFN,
    each followed by residual add and layer normalization."""
    xb, squeeze = _batched(as_tensor(x))
    d = params["wq"].shape[0]
    if xb.shape[-1] != d:
        raise ContractError(f"transformer block width {d} != input dim {xb.shape[-1]}")
    q = linear(xb, params["wq"])
    k = linear(xb, params["wk"])
    v = linear(xb, params["wv"])
    attn = linear(scaled_dot_attention(q, k, v, mask), params["wo"], params["bo"])
    h = T.layer_norm(xb + attn, params["ln1_gain"], params["ln1_bias"])
    ff = linear(T.relu(linear(h, params["w1"], params["b1"])), params["w2"], params["b2"])
    out = T.layer_norm(h + ff, params["ln2_gain"], params["ln2_bias"])
    return out.reshape(out.shape[1:]) if squeeze else out


# -- initializers ----------------------------------------------------------------
def init_lstm(rng: np.random.Generator, d_in: int, hidden: int) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(hidden)
    return {
        "w_ih": rng.uniform(-bound, bound, (d_in, 4 * hidden)).astype(DEFAULT_DTYPE),
        "w_hh": rng.uniform(-bound, bound, (hidden, 4 * hidden)).astype(DEFAULT_DTYPE),
        "bias": np.zeros(4 * hidden, dtype=DEFAULT_DTYPE),
    }


def init_conv1d(rng: np.random.Generator, k: int, c_in: int, c_out: int) -> dict[str, np.ndarray]:
    return {"weight": uniform_fan_in(rng, (k, c_in, c_out), k * c_in), "bias": np.zeros(c_out, DEFAULT_DTYPE)}


def init_conv2d(rng: np.random.Generator, kh: int, kw: int, c_in: int, c_out: int) -> dict[str, np.ndarray]:
    return {"weight": uniform_fan_in(rng, (kh, kw, c_in, c_out), kh * kw * c_in),
            "bias": np.zeros(c_out, DEFAULT_DTYPE)}


def init_transformer_block(rng: np.random.Generator, d: int, d_ff: int) -> dict[str, np.ndarray]:
    p = {name: uniform_fan_in(rng, (d, d), d) for name in ("wq", "wk", "wv", "wo")}
    p["bo"] = np.zeros(d, DEFAULT_DTYPE)
    ffn1 = dense_init(rng, d, d_ff)
    ffn2 = dense_init(rng, d_ff, d)
    p.update(w1=ffn1["weight"], b1=ffn1["bias"], w2=ffn2["weight"], b2=ffn2["bias"])
    for ln in ("ln1", "ln2"):
        p[f"{ln}_gain"] = np.ones(d, DEFAULT_DTYPE)
        p[f"{ln}_bias"] = np.zeros(d, DEFAULT_DTYPE)
    return p
