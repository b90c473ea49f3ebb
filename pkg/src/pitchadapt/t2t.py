"""Self-supervised text-to-text module.

The text encoder (embedding, three ReLU conv1d layers, a bidirectional LSTM)
is the component reused by the supervised model; the decoder (LSTM, attention
over the encoder rows, dense + layer-norm projection, softmax) exists only to
give the encoder a reconstruction objective.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import nn
from .autodiff import tensor as T
from .autodiff.params import ParameterSet, dense_init
from .autodiff.tensor import DEFAULT_DTYPE, Tensor


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    embed_dim: int = 512
    conv_layers: int = 3
    kernel_size: int = 5
    stride: int = 1
    hidden: int = 256
    decoder_hidden: int = 256

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


def scoped(params: ParameterSet, name: str) -> ParameterSet:
    """Accept either a full model ParameterSet or one already scoped to ``name``."""
    if any(k.startswith(name + ".") for k in params):
        return params.scope(name)
    return params


def _as_ids(tokens) -> np.ndarray:
    ids = getattr(tokens, "ids", tokens)
    return np.asarray(ids, dtype=np.int64)


def _batch(ids: np.ndarray, mask):
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None]
    if mask is None:
        mask = np.ones(ids.shape, dtype=np.float32)
    return ids, np.asarray(mask, dtype=np.float32), squeeze


def init_t2t(cfg: TextEncoderConfig, rng: np.random.Generator) -> ParameterSet:
    p = ParameterSet()
    e = cfg.embed_dim
    p["text_encoder.embedding"] = rng.normal(0.0, 0.3, (cfg.vocab_size, e)).astype(DEFAULT_DTYPE)
    for i in range(cfg.conv_layers):
        for k, v in nn.init_conv1d(rng, cfg.kernel_size, e, e).items():
            p[f"text_encoder.conv{i}.{k}"] = v
    for direction in ("lstm_fw", "lstm_bw"):
        for k, v in nn.init_lstm(rng, e, cfg.hidden).items():
            p[f"text_encoder.{direction}.{k}"] = v
    d_enc = cfg.output_dim
    for k, v in nn.init_lstm(rng, d_enc, cfg.decoder_hidden).items():
        p[f"text_decoder.lstm.{k}"] = v
    p["text_decoder.query"] = dense_init(rng, cfg.decoder_hidden, d_enc, bias=False)["weight"]
    out = dense_init(rng, cfg.decoder_hidden + d_enc, cfg.vocab_size)
    p["text_decoder.out.weight"] = out["weight"]
    p["text_decoder.out.bias"] = out["bias"]
    p["text_decoder.norm.gain"] = np.ones(cfg.vocab_size, DEFAULT_DTYPE)
    p["text_decoder.norm.bias"] = np.zeros(cfg.vocab_size, DEFAULT_DTYPE)
    return p


def text_encode(tokens, params: ParameterSet, mask=None) -> Tensor:
    """Phoneme ids (L,) or (B, L) -> latent rows (L, 2H) or (B, L, 2H)."""
    p = scoped(params, "text_encoder")
    ids, mask, squeeze = _batch(_as_ids(tokens), mask)
    if ids.shape[1] == 0:
        raise ValueError("cannot encode an empty token sequence")
    m3 = mask[..., None]
    x = nn.embedding_lookup(p["embedding"], ids) * m3
    layer = 0
    while f"conv{layer}.weight" in p:
        x = T.relu(nn.conv1d(x, p[f"conv{layer}.weight"], p[f"conv{layer}.bias"], stride=1, padding="same")) * m3
        layer += 1
    fw = {k: p[f"lstm_fw.{k}"] for k in ("w_ih", "w_hh", "bias")}
    bw = {k: p[f"lstm_bw.{k}"] for k in ("w_ih", "w_hh", "bias")}
    out = nn.bilstm(x, fw, bw, mask) * m3
    return out.reshape(out.shape[1:]) if squeeze else out


def text_decode(latent: Tensor, params: ParameterSet, mask=None) -> Tensor:
    """Latent rows -> per-position distributions over the vocabulary."""
    p = scoped(params, "text_decoder")
    squeeze = latent.ndim == 2
    if squeeze:
        latent = latent.reshape((1,) + latent.shape)
    if latent.shape[1] == 0:
        raise ValueError("cannot decode an empty latent")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float32)
    h = nn.lstm(latent, {k: p[f"lstm.{k}"] for k in ("w_ih", "w_hh", "bias")}, mask)
    context = nn.scaled_dot_attention(h @ p["query"], latent, latent, mask)
    logits = nn.linear(T.concat([h, context], axis=-1), p["out.weight"], p["out.bias"])
    probs = T.softmax(T.layer_norm(logits, p["norm.gain"], p["norm.bias"]), axis=-1)
    return probs.reshape(probs.shape[1:]) if squeeze else probs


def one_hot(ids: np.ndarray, size: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.eye(size, dtype=dtype)[ids]


def t2t_reconstruction_loss(tokens, params: ParameterSet, mask=None) -> Tensor:
    ids, mask, _ = _batch(_as_ids(tokens), mask)
    probs = text_decode(text_encode(ids, params, mask), params, mask)
    return nn.mse_loss(probs, one_hot(ids, probs.shape[-1], probs.dtype), mask)


def greedy_reconstruct(tokens, params: ParameterSet, mask=None) -> np.ndarray:
    ids, mask, squeeze = _batch(_as_ids(tokens), mask)
    out = text_decode(text_encode(ids, params, mask), params, mask).data.argmax(-1)
    return out[0] if squeeze else out
