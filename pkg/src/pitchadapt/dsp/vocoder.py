"""Griffin-Lim waveform reconstruction from a log-mel spectrogram."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ContractError
from .audio import Waveform
from .mel import MelConfig, MelSpectrogram, analysis_window, mel_filterbank, stft


@lru_cache(maxsize=16)
def mel_pseudo_inverse(cfg: MelConfig) -> np.ndarray:
    """Least-squares inverse of the filterbank, (n_fft//2 + 1, n_mels)."""
    inv = np.linalg.pinv(mel_filterbank(cfg))
    inv.setflags(write=False)
    return inv


def istft(spec: np.ndarray, cfg: MelConfig, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` for centered frames."""
    frames = np.fft.irfft(spec, cfg.n_fft, axis=-1)
    win = analysis_window(cfg)
    half = cfg.n_fft // 2
    total = length + 2 * half + cfg.n_fft
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(spec.shape[0]):
        start = t * cfg.hop
        out[start:start + cfg.n_fft] += frames[t] * win
        norm[start:start + cfg.n_fft] += win * win
    out = out[half:half + length]
    norm = norm[half:half + length]
    return np.where(norm > 1e-8, out / np.maximum(norm, 1e-8), 0.0)


def griffin_lim(mel: MelSpectrogram, iterations: int = 32, seed: int = 0) -> Waveform:
    """Invert a log-mel spectrogram to a waveform of ``frames * hop`` samples."""
    if iterations < 1:
        raise ContractError("griffin_lim needs at least one iteration")
    cfg = mel.config
    n = mel.frames
    length = n * cfg.hop
    magnitude = np.maximum(np.exp(mel.values.astype(np.float64)) @ mel_pseudo_inverse(cfg).T, 0.0)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    spec = magnitude * phase
    for _ in range(iterations):
        signal = istft(spec, cfg, length)
        rebuilt = stft(signal, cfg)[:n]
        spec = magnitude * np.exp(1j * np.angle(rebuilt))
    signal = istft(spec, cfg, length)
    return Waveform(np.clip(signal, -1.0, 1.0), cfg.sample_rate)
