"""Self-supervised mel-to-mel module (mel encoder + transformer mel decoder)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import nn
from .autodiff import tensor as T
from .autodiff.params import ParameterSet, dense_init
from .autodiff.tensor import Tensor
from .t2t import scoped


@dataclass(frozen=True)
class MelEncoderConfig:
    n_mels: int = 80
    channels: tuple[int, ...] = (32, 32, 32)
    kernel: tuple[int, int] = (3, 3)
    d_lat: int = 256
    decoder_layers: int = 4
    decoder_ff: int = 1024

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["kernel"] = list(self.kernel)
        return d


def _mel_array(mel):
    if isinstance(mel, Tensor):
        return mel
    values = getattr(mel, "values", mel)
    return Tensor(np.asarray(values, dtype=np.float32))


def init_m2m(cfg: MelEncoderConfig, rng: np.random.Generator) -> ParameterSet:
    p = ParameterSet()
    c_in = 1
    for i, c_out in enumerate(cfg.channels):
        for k, v in nn.init_conv2d(rng, cfg.kernel[0], cfg.kernel[1], c_in, c_out).items():
            p[f"mel_encoder.conv{i}.{k}"] = v
        c_in = c_out
    proj = dense_init(rng, c_in * cfg.n_mels, cfg.d_lat)
    p["mel_encoder.proj.weight"] = proj["weight"]
    p["mel_encoder.proj.bias"] = proj["bias"]
    for i in range(cfg.decoder_layers):
        for k, v in nn.init_transformer_block(rng, cfg.d_lat, cfg.decoder_ff).items():
            p[f"mel_decoder.block{i}.{k}"] = v
    out = dense_init(rng, cfg.d_lat, cfg.n_mels)
    p["mel_decoder.proj.weight"] = out["weight"]
    p["mel_decoder.proj.bias"] = out["bias"]
    return p


def mel_encode(mel, params: ParameterSet, mask=None) -> Tensor:
    """(F, M) or (B, F, M) log-mel -> (…, F, d_lat) latent; frame count preserved."""
    p = scoped(params, "mel_encoder")
    x = _mel_array(mel)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.shape[1] == 0:
        raise ValueError("cannot encode an empty mel spectrogram")
    b, f, m = x.shape
    m4 = None if mask is None else np.asarray(mask, dtype=x.dtype)[:, :, None, None]
    h = x.reshape(b, f, m, 1)
    if m4 is not None:
        h = h * m4
    layer = 0
    while f"conv{layer}.weight" in p:
        h = T.relu(nn.conv2d(h, p[f"conv{layer}.weight"], p[f"conv{layer}.bias"]))
        if m4 is not None:
            h = h * m4
        layer += 1
    h = h.reshape(b, f, m * h.shape[-1])
    out = nn.linear(h, p["proj.weight"], p["proj.bias"])
    if mask is not None:
        out = out * np.asarray(mask, dtype=x.dtype)[..., None]
    return out.reshape(out.shape[1:]) if squeeze else out


def mel_decode(latent: Tensor, params: ParameterSet, mask=None) -> Tensor:
    """Latent frames -> log-mel frames through the transformer stack."""
    p = scoped(params, "mel_decoder")
    squeeze = latent.ndim == 2
    h = latent.reshape((1,) + latent.shape) if squeeze else latent
    if h.shape[1] == 0:
        raise ValueError("cannot decode an empty latent")
    layer = 0
    while f"block{layer}.wq" in p:
        h = nn.transformer_ffn_block(h, p.scope(f"block{layer}"), mask)
        layer += 1
    out = nn.linear(h, p["proj.weight"], p["proj.bias"])
    return out.reshape(out.shape[1:]) if squeeze else out


def m2m_reconstruction_loss(mel, params: ParameterSet, mask=None) -> Tensor:
    x = _mel_array(mel)
    recon = mel_decode(mel_encode(x, params, mask), params, mask)
    return nn.mse_loss(recon, x, mask)
