"""Pitch/speaker/text disentangling between the text encoder and the mel decoder.

Contains the pitch encoder and regressor, the speaker lookup table, the
duration predictor, length regulation and the fully-connected fusion that
maps ``[text | pitch embedding | speaker]`` into the mel decoder's latent
space.  Pitch is handled in natural-log Hz throughout.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import nn
from .autodiff import tensor as T
from .autodiff.params import ParameterSet, dense_init
from .autodiff.tensor import DEFAULT_DTYPE, Tensor
from .errors import ContractError, UnknownSpeakerError
from .t2t import _as_ids, _batch, scoped

# Normalization applied to log-f0 before the pitch embedding MLP.
LOG_F0_CENTER = float(np.log(150.0))
LOG_F0_SCALE = 0.5

DURATION_LOSS_WEIGHT = 0.1


class DegenerateTargetWarning(UserWarning):
    """A pitch target had no voiced frames; the loss was defined as zero."""


@dataclass(frozen=True)
class AdaptorConfig:
    vocab_size: int
    n_speakers: int
    text_dim: int = 512
    d_lat: int = 256
    d_spk: int = 64
    d_pe: int = 64
    d_p: int = 128
    pitch_layers: int = 2
    pitch_ff: int = 512
    duration_hidden: int = 256

    def to_dict(self) -> dict:
        return asdict(self)


def init_variance_adaptor(cfg: AdaptorConfig, rng: np.random.Generator, mean_log_f0: float = LOG_F0_CENTER,
                          mean_log_duration: float = 0.0) -> ParameterSet:
    p = ParameterSet()
    p["speaker_table"] = rng.normal(0.0, 0.3, (cfg.n_speakers, cfg.d_spk)).astype(DEFAULT_DTYPE)
    p["pitch_encoder.embedding"] = rng.normal(0.0, 0.3, (cfg.vocab_size, cfg.d_p)).astype(DEFAULT_DTYPE)
    for i in range(cfg.pitch_layers):
        for k, v in nn.init_transformer_block(rng, cfg.d_p, cfg.pitch_ff).items():
            p[f"pitch_encoder.block{i}.{k}"] = v
    head = dense_init(rng, cfg.d_p, 1)
    p["pitch_regressor.weight"] = head["weight"]
    p["pitch_regressor.bias"] = np.array([mean_log_f0], dtype=DEFAULT_DTYPE)
    d1 = dense_init(rng, cfg.text_dim, cfg.duration_hidden)
    d2 = dense_init(rng, cfg.duration_hidden, 1)
    p["duration_predictor.w1"], p["duration_predictor.b1"] = d1["weight"], d1["bias"]
    p["duration_predictor.w2"] = d2["weight"]
    p["duration_predictor.b2"] = np.array([mean_log_duration], dtype=DEFAULT_DTYPE)
    e1 = dense_init(rng, 1, cfg.d_pe)
    e1["bias"] = rng.uniform(-1.0, 1.0, cfg.d_pe).astype(DEFAULT_DTYPE)
    e2 = dense_init(rng, cfg.d_pe, cfg.d_pe)
    p["pitch_embedding.w1"], p["pitch_embedding.b1"] = e1["weight"], e1["bias"]
    p["pitch_embedding.w2"], p["pitch_embedding.b2"] = e2["weight"], e2["bias"]
    p["pitch_embedding.unvoiced"] = rng.normal(0.0, 0.3, cfg.d_pe).astype(DEFAULT_DTYPE)
    fc = dense_init(rng, cfg.text_dim + cfg.d_pe + cfg.d_spk, cfg.d_lat)
    p["fusion.weight"], p["fusion.bias"] = fc["weight"], fc["bias"]
    return p


# -- speakers -------------------------------------------------------------------
def speaker_lookup(table: Tensor, speaker) -> Tensor:
    ids = np.asarray(speaker, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise UnknownSpeakerError(f"speaker id {ids.max() if ids.max() >= n else ids.min()} not in [0, {n})")
    return T.take_rows(table, ids)


# -- pitch ------------------------------------------------------------------------
def pitch_encode(tokens, params: ParameterSet, mask=None) -> Tensor:
    p = scoped(params, "pitch_encoder")
    ids, mask, squeeze = _batch(_as_ids(tokens), mask)
    if ids.shape[1] == 0:
        raise ContractError("cannot encode an empty token sequence")
    h = nn.embedding_lookup(p["embedding"], ids)
    layer = 0
    while f"block{layer}.wq" in p:
        h = nn.transformer_ffn_block(h, p.scope(f"block{layer}"), mask)
        layer += 1
    return h.reshape(h.shape[1:]) if squeeze else h


def interpolation_matrix(durations) -> np.ndarray:
    """(F, L) weights that linearly interpolate per-token values to frames.

    Each token with nonzero duration anchors its value at its center frame;
    frames before the first / after the last anchor take the edge value.
    """
    d = np.asarray(durations, dtype=np.int64)
    total = int(d.sum())
    if total <= 0:
        raise ContractError("durations sum to zero")
    starts = np.concatenate([[0], np.cumsum(d)[:-1]])
    tokens = np.flatnonzero(d > 0)
    centers = starts[tokens] + (d[tokens] - 1) / 2.0
    w = np.zeros((total, d.size))
    frames = np.arange(total, dtype=np.float64)
    pos = np.searchsorted(centers, frames, side="right") - 1
    for f in range(total):
        k = pos[f]
        if k < 0:
            w[f, tokens[0]] = 1.0
        elif k >= tokens.size - 1:
            w[f, tokens[-1]] = 1.0
        else:
            frac = (frames[f] - centers[k]) / (centers[k + 1] - centers[k])
            w[f, tokens[k]] = 1.0 - frac
            w[f, tokens[k + 1]] = frac
    return w


def _batched_durations(durations) -> tuple[np.ndarray, bool]:
    d = np.asarray(durations, dtype=np.int64)
    if d.ndim == 1:
        return d[None], True
    return d, False


def batched_interpolation(durations: np.ndarray, dtype=DEFAULT_DTYPE) -> np.ndarray:
    frames = durations.sum(axis=1)
    out = np.zeros((durations.shape[0], int(frames.max()), durations.shape[1]), dtype=dtype)
    for b in range(durations.shape[0]):
        out[b, :frames[b]] = interpolation_matrix(durations[b])
    return out


def token_pitch(latent: Tensor, params: ParameterSet) -> Tensor:
    """Per-token log-f0 from the regressor head, shape (…, L)."""
    p = scoped(params, "pitch_regressor")
    out = nn.linear(latent, p["weight"], p["bias"])
    return out.reshape(out.shape[:-1])


def pitch_regress(latent: Tensor, durations, params: ParameterSet) -> Tensor:
    """Frame-level log-f0 predictions; length is ``sum(durations)``."""
    d, squeeze = _batched_durations(durations)
    if np.any(d.sum(axis=1) <= 0):
        raise ContractError("durations sum to zero")
    values = token_pitch(latent, params)
    if values.ndim == 1:
        values = values.reshape(1, -1)
    if values.shape[-1] != d.shape[1]:
        raise ContractError(f"{d.shape[1]} durations for {values.shape[-1]} tokens")
    interp = Tensor(batched_interpolation(d, values.dtype))
    out = (interp @ values.reshape(values.shape + (1,))).reshape(interp.shape[:2])
    return out.reshape(out.shape[1:]) if squeeze else out


def interpolate_values(values, durations) -> np.ndarray:
    """Plain-array version of the token-to-frame interpolation."""
    return interpolation_matrix(durations) @ np.asarray(values, dtype=np.float64)


def log_pitch_target(f0: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    f0 = np.asarray(f0, dtype=np.float64)
    return np.where(voiced, np.log(np.where(voiced & (f0 > 0), f0, 1.0)), 0.0)


def masked_pitch_loss(pred_log_f0: Tensor, target_log_f0: np.ndarray, mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=pred_log_f0.dtype)
    if mask.sum() == 0:
        warnings.warn("pitch target has no voiced frames; regression loss set to 0", DegenerateTargetWarning,
                      stacklevel=3)
    return nn.mse_loss(pred_log_f0, np.asarray(target_log_f0, dtype=pred_log_f0.dtype), mask)


def pitch_regression_loss(tokens, target_pitch, durations, params: ParameterSet, token_mask=None,
                          frame_mask=None) -> Tensor:
    """MSE in log-Hz between regressed and target pitch, voiced frames only.

    ``target_pitch`` is a PitchContour (single item) or an ``(f0, voiced)``
    pair of (B, F) arrays.
    """
    d, squeeze = _batched_durations(durations)
    if squeeze:
        f0 = np.asarray(target_pitch.f0)[None]
        voiced = np.asarray(target_pitch.voiced)[None]
    else:
        f0, voiced = (np.asarray(a) for a in target_pitch)
    if f0.shape[1] != int(d.sum(axis=1).max()) or np.any(d.sum(axis=1) > f0.shape[1]):
        raise ContractError(f"durations cover {d.sum(axis=1).max()} frames but target has {f0.shape[1]}")
    latent = pitch_encode(np.asarray(_as_ids(tokens)).reshape(d.shape), params, token_mask)
    pred = pitch_regress(latent, d, params)
    mask = voiced.astype(bool)
    if frame_mask is not None:
        mask = mask & (np.asarray(frame_mask) > 0)
    return masked_pitch_loss(pred, log_pitch_target(f0, mask), mask)


# -- durations --------------------------------------------------------------------
def duration_head(text_latent: Tensor, params: ParameterSet) -> Tensor:
    """Per-token log-domain duration, shape (…, L)."""
    p = scoped(params, "duration_predictor")
    h = T.relu(nn.linear(text_latent, p["w1"], p["b1"]))
    out = nn.linear(h, p["w2"], p["b2"])
    return out.reshape(out.shape[:-1])


def durations_from_log(log_durations) -> np.ndarray:
    """Invert the ``log(d + 1)`` training target; at least one frame per token."""
    values = np.asarray(getattr(log_durations, "data", log_durations), dtype=np.float64)
    return np.maximum(1, np.rint(np.exp(values) - 1.0)).astype(np.int64)


def predict_duration(text_latent: Tensor, params: ParameterSet) -> np.ndarray:
    return durations_from_log(duration_head(text_latent, params))


def duration_loss(predicted_log: Tensor, true_durations, mask=None) -> Tensor:
    target = np.log(np.asarray(true_durations, dtype=np.float64) + 1.0)
    if predicted_log.shape != target.shape:
        raise ContractError(f"duration length mismatch: {predicted_log.shape} vs {target.shape}")
    return nn.mse_loss(predicted_log, target.astype(predicted_log.dtype), mask)


# -- length regulation and fusion ------------------------------------------------
def upsample_indices(durations) -> tuple[np.ndarray, np.ndarray]:
    """Gather indices (B, F) and frame mask for nearest-neighbour upsampling."""
    d, _ = _batched_durations(durations)
    if np.any(d < 0):
        raise ContractError("negative duration")
    frames = d.sum(axis=1)
    if np.any(frames <= 0):
        raise ContractError("all durations are zero")
    f_max = int(frames.max())
    idx = np.zeros((d.shape[0], f_max), dtype=np.int64)
    mask = np.zeros((d.shape[0], f_max), dtype=np.float32)
    for b in range(d.shape[0]):
        rep = np.repeat(np.arange(d.shape[1]), d[b])
        idx[b, :rep.size] = rep
        mask[b, :rep.size] = 1.0
    return idx, mask


def upsample(rows: Tensor, durations) -> Tensor:
    """Repeat row ``i`` ``durations[i]`` times (zero-duration rows vanish)."""
    d, squeeze = _batched_durations(durations)
    rows_b = rows.reshape((1,) + rows.shape) if rows.ndim == 2 else rows
    if rows_b.shape[1] != d.shape[1]:
        raise ContractError(f"{d.shape[1]} durations for {rows_b.shape[1]} rows")
    idx, mask = upsample_indices(d)
    batch = np.arange(d.shape[0])[:, None]
    out = rows_b[batch, idx] * mask[..., None]
    return out.reshape(out.shape[1:]) if squeeze else out


def pitch_embedding(log_f0, voiced, params: ParameterSet) -> Tensor:
    """Embed per-frame log-f0; unvoiced frames get a learned vector."""
    p = scoped(params, "pitch_embedding")
    lf = log_f0 if isinstance(log_f0, Tensor) else Tensor(np.asarray(log_f0, dtype=p["w1"].dtype))
    z = (lf - LOG_F0_CENTER) * (1.0 / LOG_F0_SCALE)
    z = z.reshape(z.shape + (1,))
    emb = nn.linear(T.relu(nn.linear(z, p["w1"], p["b1"])), p["w2"], p["b2"])
    v = np.asarray(voiced, dtype=emb.dtype)[..., None]
    return emb * v + p["unvoiced"] * (1.0 - v)


def fuse(text_up: Tensor, log_f0, voiced, speaker, params: ParameterSet, frame_mask=None) -> Tensor:
    """FC over the per-frame concatenation ``[text | pitch embedding | speaker]``."""
    squeeze = text_up.ndim == 2
    text_b = text_up.reshape((1,) + text_up.shape) if squeeze else text_up
    b, f, _ = text_b.shape
    lf = log_f0.reshape(1, -1) if isinstance(log_f0, Tensor) and squeeze else log_f0
    if not isinstance(lf, Tensor):
        lf = np.asarray(lf).reshape(b, -1)
    voiced = np.asarray(voiced).reshape(b, -1)
    if lf.shape[-1] != f or voiced.shape[-1] != f:
        raise ContractError(f"frame mismatch: text {f}, pitch {lf.shape[-1]}, voiced {voiced.shape[-1]}")
    pe = pitch_embedding(lf, voiced, params)
    spk = speaker_lookup(params["speaker_table"], np.atleast_1d(np.asarray(speaker)))
    if spk.shape[0] != b:
        raise ContractError(f"{spk.shape[0]} speakers for a batch of {b}")
    spk_frames = T.broadcast_to(spk.reshape(b, 1, spk.shape[-1]), (b, f, spk.shape[-1]))
    p = scoped(params, "fusion")
    out = nn.linear(T.concat([text_b, pe, spk_frames], axis=-1), p["weight"], p["bias"])
    if frame_mask is not None:
        out = out * np.asarray(frame_mask, dtype=out.dtype).reshape(b, f, 1)
    return out.reshape(out.shape[1:]) if squeeze else out


def adaptation_loss(fused: Tensor, teacher, m2m_params: ParameterSet | None = None, mask=None) -> Tensor:
    """MSE between the fused latent and the (frozen) mel encoder's latent.

    ``teacher`` is a mel spectrogram encoded with ``m2m_params``, or an
    already-computed teacher latent when ``m2m_params`` is None.  No graph is
    built on the teacher side.
    """
    if m2m_params is not None:
        from .m2m import mel_encode

        teacher_latent = mel_encode(getattr(teacher, "values", teacher), m2m_params, mask).data
    else:
        teacher_latent = np.asarray(getattr(teacher, "data", teacher))
    if teacher_latent.shape != fused.shape:
        raise ContractError(f"fused {fused.shape} vs teacher {teacher_latent.shape}")
    return nn.mse_loss(fused, teacher_latent.astype(fused.dtype), mask)
