"""Finite-difference cases for every differentiable primitive and every training loss.

Each case is a zero-argument callable returning the worst relative error
between analytic and central-difference gradients.  Extents stay <= 8.
"""
from __future__ import annotations

import numpy as np

from pitchadapt.autodiff import nn
from pitchadapt.autodiff import tensor as T
from pitchadapt.autodiff.gradcheck import finite_difference_check, parameter_gradient_check
from pitchadapt.autodiff.params import ParameterSet
from pitchadapt.autodiff.tensor import Tensor
from pitchadapt.data.batching import Utterance, collate
from pitchadapt.dsp.pitch import PitchContour
from pitchadapt.m2m import MelEncoderConfig, init_m2m, m2m_reconstruction_loss, mel_decode, mel_encode
from pitchadapt.t2t import TextEncoderConfig, init_t2t, t2t_reconstruction_loss, text_encode
from pitchadapt.trainer import LossWeights, total_loss
from pitchadapt.variance_adaptor import (
    AdaptorConfig, adaptation_loss, duration_head, duration_loss, fuse, init_variance_adaptor,
    pitch_encode, pitch_regress, pitch_regression_loss, upsample,
)

TOL = 1e-3


def _rng(seed=0):
    return np.random.default_rng(seed)


def _fd(op, *arrays, **kw):
    return finite_difference_check(op, arrays, **kw)


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, shape)


def _primitive_cases():
    r = _rng(1)
    a, b = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    row = r.normal(size=(4,))
    cases = {
        "add": lambda: _fd(lambda x, y: x + y, a, row),
        "sub": lambda: _fd(lambda x, y: x - y, a, b),
        "mul": lambda: _fd(lambda x, y: x * y, a, row),
        "div": lambda: _fd(lambda x, y: x / y, a, _positive(r, (3, 4))),
        "neg": lambda: _fd(lambda x: -x, a),
        "power": lambda: _fd(lambda x: T.power(x, 3.0), a),
        "exp": lambda: _fd(T.exp, a),
        "log": lambda: _fd(T.log, _positive(r, (3, 4))),
        "tanh": lambda: _fd(T.tanh, a),
        "sigmoid": lambda: _fd(T.sigmoid, a),
        "relu": lambda: _fd(T.relu, a + np.sign(a) * 0.05),
        "sum_axis": lambda: _fd(lambda x: T.tsum(x, axis=1, keepdims=True), a),
        "mean": lambda: _fd(lambda x: T.mean(x, axis=0), a),
        "reshape": lambda: _fd(lambda x: x.reshape(2, 6), a),
        "transpose": lambda: _fd(lambda x: T.transpose(x, (2, 0, 1)), r.normal(size=(2, 3, 4))),
        "swapaxes": lambda: _fd(lambda x: T.swapaxes(x, 0, 2), r.normal(size=(2, 3, 4))),
        "getitem_slice": lambda: _fd(lambda x: x[1:, ::2], a),
        "getitem_fancy": lambda: _fd(lambda x: x[np.array([0, 2, 2]), np.array([1, 1, 3])], a),
        "concat": lambda: _fd(lambda x, y: T.concat([x, y], axis=0), a, b),
        "stack": lambda: _fd(lambda x, y: T.stack([x, y], axis=1), a, b),
        "broadcast_to": lambda: _fd(lambda x: T.broadcast_to(x, (5, 4)), row),
        "matmul_2d": lambda: _fd(lambda x, y: x @ y, a, r.normal(size=(4, 5))),
        "matmul_batched": lambda: _fd(lambda x, y: x @ y, r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 2))),
        "matmul_3d_2d": lambda: _fd(lambda x, y: x @ y, r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))),
        "softmax_masked": lambda: _fd(
            lambda x: T.softmax(x, axis=-1, bias=np.where(np.arange(4) < 3, 0.0, -1e9)), a),
        "layer_norm": lambda: _fd(T.layer_norm, a, r.normal(size=4), r.normal(size=4)),
        "take_rows": lambda: _fd(lambda t: T.take_rows(t, np.array([[0, 2], [2, 1]])), r.normal(size=(3, 4))),
        "conv1d_raw_stride2": lambda: _fd(lambda x, k: T.conv1d_raw(x, k, 2, 1),
                                          r.normal(size=(2, 7, 3)), r.normal(size=(3, 3, 2))),
        "conv2d_raw": lambda: _fd(lambda x, k: T.conv2d_raw(x, k, (1, 1)),
                                  r.normal(size=(2, 4, 5, 2)), r.normal(size=(3, 3, 2, 3))),
    }
    return cases


def _layer_cases():
    r = _rng(2)
    lstm_p = {k: v.astype(np.float64) for k, v in nn.init_lstm(r, 3, 4).items()}
    lstm_p["bias"] = r.normal(size=16) * 0.3
    block = {k: v.astype(np.float64) for k, v in nn.init_transformer_block(r, 4, 6).items()}
    block_names = sorted(block)
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=np.float64)

    def lstm_op(x, w_ih, w_hh, bias):
        return nn.lstm(x, {"w_ih": w_ih, "w_hh": w_hh, "bias": bias}, np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]]))

    def bilstm_op(x, w_ih, w_hh, bias):
        p = {"w_ih": w_ih, "w_hh": w_hh, "bias": bias}
        return nn.bilstm(x, p, p, np.array([[1, 1, 0, 0], [1, 1, 1, 1]]))

    def cell_op(x, h, c, w_ih, w_hh, bias):
        return T.concat(list(nn.lstm_cell(x, h, c, {"w_ih": w_ih, "w_hh": w_hh, "bias": bias})), axis=-1)

    def block_op(x, *weights):
        return nn.transformer_ffn_block(x, dict(zip(block_names, weights)), mask)

    pred, target = r.normal(size=(2, 4, 3)), r.normal(size=(2, 4, 3))
    cases = {
        "mse_loss": lambda: _fd(lambda p: nn.mse_loss(p, target), pred),
        "mse_loss_masked": lambda: _fd(lambda p: nn.mse_loss(p, target, mask[:, :4]), pred),
        "linear": lambda: _fd(nn.linear, r.normal(size=(4, 3)), r.normal(size=(3, 2)), r.normal(size=2)),
        "conv1d_same": lambda: _fd(nn.conv1d, r.normal(size=(2, 6, 3)), r.normal(size=(5, 3, 2)),
                                   r.normal(size=2)),
        "conv2d_same": lambda: _fd(nn.conv2d, r.normal(size=(1, 4, 5, 2)), r.normal(size=(3, 3, 2, 2)),
                                   r.normal(size=2)),
        "embedding_lookup": lambda: _fd(lambda t: nn.embedding_lookup(t, np.array([1, 0, 1, 3])),
                                        r.normal(size=(5, 3))),
        "lstm_cell": lambda: _fd(cell_op, r.normal(size=(2, 3)), r.normal(size=(2, 4)), r.normal(size=(2, 4)),
                                 lstm_p["w_ih"], lstm_p["w_hh"], lstm_p["bias"]),
        "lstm_masked": lambda: _fd(lstm_op, r.normal(size=(2, 5, 3)), lstm_p["w_ih"], lstm_p["w_hh"],
                                   lstm_p["bias"]),
        "bilstm_masked": lambda: _fd(bilstm_op, r.normal(size=(2, 4, 3)), lstm_p["w_ih"], lstm_p["w_hh"],
                                     lstm_p["bias"]),
        "attention_masked": lambda: _fd(lambda q, k, v: nn.scaled_dot_attention(q, k, v, mask),
                                        r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 4)),
                                        r.normal(size=(2, 4, 2))),
        "transformer_block": lambda: _fd(block_op, r.normal(size=(2, 4, 4)), *[block[k] for k in block_names]),
    }
    return cases


# -- model losses ----------------------------------------------------------------
TINY_T2T = TextEncoderConfig(vocab_size=7, embed_dim=6, conv_layers=3, kernel_size=5, hidden=3, decoder_hidden=3)
TINY_M2M = MelEncoderConfig(n_mels=8, channels=(2, 2, 2), d_lat=6, decoder_layers=1, decoder_ff=8)
TINY_ADAPTOR = AdaptorConfig(vocab_size=7, n_speakers=2, text_dim=6, d_lat=6, d_spk=3, d_pe=3, d_p=8,
                             pitch_layers=1, pitch_ff=8, duration_hidden=4)


def tiny_models(seed=0) -> ParameterSet:
    r = _rng(seed)
    p = init_t2t(TINY_T2T, r)
    for k, v in init_m2m(TINY_M2M, r).items():
        p[k] = v
    for k, v in init_variance_adaptor(TINY_ADAPTOR, r, mean_log_f0=float(np.log(140.0)), mean_log_duration=1.0).items():
        p[k] = v
    # Non-zero biases so their gradients are exercised.
    for k in p:
        if k.endswith("bias") or k.endswith(".bo") or k.endswith(".b1") or k.endswith(".b2"):
            p[k].data = p[k].data + r.normal(0, 0.1, p[k].shape).astype(p[k].dtype)
    return p


def tiny_batch(params: ParameterSet, seed=0):
    r = _rng(seed)
    items = []
    for i, n_tok in enumerate((3, 2)):
        tokens = r.integers(4, 7, n_tok)
        durations = r.integers(1, 3, n_tok)
        frames = int(durations.sum())
        f0 = r.uniform(100, 200, frames)
        voiced = np.ones(frames, bool)
        voiced[0] = i == 0
        mel = r.normal(size=(frames, 8))
        items.append(Utterance(id=f"u{i}", tokens=tokens, mel=mel, f0=f0, voiced=voiced, durations=durations,
                               speaker=i % 2))
    for u in items:
        u.text_latent = text_encode(u.tokens, params).data.astype(np.float64)
        u.teacher_latent = mel_encode(u.mel, params).data.astype(np.float64)
    return collate(items)


def _keys(params, *prefixes):
    return [k for k in params if any(k == p or k.startswith(p + ".") for p in prefixes)]


def _worst(d):
    return max(d.values())


def _loss_cases():
    def t2t():
        p = tiny_models()
        ids = np.array([[4, 5, 6, 4], [5, 6, 0, 0]])
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]])
        return _worst(parameter_gradient_check(lambda: t2t_reconstruction_loss(ids, p, mask), p,
                                               _keys(p, "text_encoder", "text_decoder")))

    def m2m():
        p = tiny_models()
        mel = _rng(3).normal(size=(2, 4, 8))
        mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]])
        return _worst(parameter_gradient_check(lambda: m2m_reconstruction_loss(mel, p, mask), p,
                                               _keys(p, "mel_encoder", "mel_decoder")))

    def synthesis():
        p = tiny_models()
        batch = tiny_batch(p)

        def loss():
            up = upsample(Tensor(batch.text_latent), batch.durations)
            lf = np.where(batch.voiced, np.log(np.where(batch.voiced, batch.f0, 1.0)), 0.0)
            fused = fuse(up, lf, batch.voiced, batch.speakers, p, batch.frame_mask)
            return nn.mse_loss(mel_decode(fused, p, batch.frame_mask), batch.mel, batch.frame_mask)

        return _worst(parameter_gradient_check(loss, p, _keys(p, "fusion", "speaker_table", "pitch_embedding",
                                                               "mel_decoder")))

    def regression():
        p = tiny_models()
        batch = tiny_batch(p)
        return _worst(parameter_gradient_check(
            lambda: pitch_regression_loss(batch.tokens, (batch.f0, batch.voiced), batch.durations, p,
                                          batch.token_mask, batch.frame_mask),
            p, _keys(p, "pitch_encoder", "pitch_regressor")))

    def adaptation():
        p = tiny_models()
        batch = tiny_batch(p)

        def loss():
            up = upsample(Tensor(batch.text_latent), batch.durations)
            lf = np.where(batch.voiced, np.log(np.where(batch.voiced, batch.f0, 1.0)), 0.0)
            fused = fuse(up, lf, batch.voiced, batch.speakers, p, batch.frame_mask)
            return adaptation_loss(fused, batch.teacher_latent, mask=batch.frame_mask)

        return _worst(parameter_gradient_check(loss, p, _keys(p, "fusion", "speaker_table", "pitch_embedding")))

    def duration():
        p = tiny_models()
        batch = tiny_batch(p)
        return _worst(parameter_gradient_check(
            lambda: duration_loss(duration_head(Tensor(batch.text_latent), p), batch.durations, batch.token_mask),
            p, _keys(p, "duration_predictor")))

    def total():
        p = tiny_models()
        batch = tiny_batch(p)
        for name in ("text_encoder", "mel_encoder", "mel_decoder"):
            p.freeze(name)
        keys = [k for k in p.trainable() if not k.startswith("text_decoder")]
        return _worst(parameter_gradient_check(lambda: total_loss(batch, p, LossWeights())[0], p, keys,
                                               max_entries=6))

    def pitch_path():
        p = tiny_models()
        tokens = np.array([4, 5, 6])

        def op(x):
            return pitch_regress(x, np.array([2, 1, 3]), p)

        p.freeze()
        latent = pitch_encode(tokens, p).data.astype(np.float64)
        return finite_difference_check(op, [latent])

    return {"loss_t2t_reconstruction": t2t, "loss_m2m_reconstruction": m2m, "loss_synthesis": synthesis,
            "loss_pitch_regression": regression, "loss_adaptation": adaptation, "loss_duration": duration,
            "loss_total": total, "pitch_regress_interpolation": pitch_path}


def all_cases() -> dict:
    cases = {}
    cases.update(_primitive_cases())
    cases.update(_layer_cases())
    cases.update(_loss_cases())
    return cases
