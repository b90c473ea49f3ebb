"""STFT and log-mel spectrogram extraction."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, EmptyInputError
from .audio import Waveform


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    win_length: int = 1024
    n_mels: int = 80
    fmin: float = 40.0
    fmax: float = 7600.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.hop <= 0 or self.hop > self.n_fft:
            raise ContractError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.win_length > self.n_fft or self.win_length <= 0:
            raise ContractError("win_length must be in (0, n_fft]")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ContractError(f"need 0 <= fmin < fmax <= sr/2, got {self.fmin}, {self.fmax}")
        if self.log_floor <= 0:
            raise ContractError("log_floor must be positive")
        if self.n_mels < 1:
            raise ContractError("n_mels must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (frames, n_mels), natural-log magnitudes
    config: MelConfig

    @property
    def frames(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Center frequency in Hz of each triangular filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters with unit peak, HTK mel scale."""
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=16)
def analysis_window(cfg: MelConfig) -> np.ndarray:
    win = np.hanning(cfg.win_length + 1)[:-1]  # periodic Hann
    left = (cfg.n_fft - cfg.win_length) // 2
    out = np.zeros(cfg.n_fft)
    out[left:left + cfg.win_length] = win
    out.setflags(write=False)
    return out


def center_pad(x: np.ndarray, pad: int) -> np.ndarray:
    mode = "reflect" if x.size > pad else "constant"
    return np.pad(x, pad, mode=mode)


def stft(x: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Complex STFT, shape (1 + len(x)//hop, n_fft//2 + 1), centered frames."""
    padded = center_pad(np.asarray(x, dtype=np.float64), cfg.n_fft // 2)
    frames = sliding_window_view(padded, cfg.n_fft)[::cfg.hop]
    return np.fft.rfft(frames * analysis_window(cfg), axis=-1)


def mel_spectrogram(wave: Waveform, cfg: MelConfig | None = None) -> MelSpectrogram:
    cfg = cfg or MelConfig(sample_rate=wave.sample_rate)
    if wave.samples.size < 1:
        raise EmptyInputError("cannot analyse an empty waveform")
    if wave.sample_rate != cfg.sample_rate:
        raise ContractError(f"waveform rate {wave.sample_rate} != config rate {cfg.sample_rate}")
    mag = np.abs(stft(wave.samples, cfg))
    mel = mag @ mel_filterbank(cfg).T
    values = np.log(np.maximum(mel, cfg.log_floor)).astype(np.float32)
    return MelSpectrogram(values, cfg)


MEL_MAGIC = b"MELF"


def save_mel(path, mel) -> None:
    """Binary mel matrix: ``MELF``, u32 frames, u32 bins, row-major little-endian float32."""
    values = np.ascontiguousarray(getattr(mel, "values", mel), dtype="<f4")
    if values.ndim != 2:
        raise ContractError("a mel matrix must be two-dimensional")
    header = MEL_MAGIC + np.array(values.shape, dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + values.tobytes())


def load_mel(path) -> np.ndarray:
    data = open(path, "rb").read()
    if len(data) < 12 or data[:4] != MEL_MAGIC:
        raise ContractError(f"{path}: not a MELF mel file")
    frames, bins = (int(v) for v in np.frombuffer(data[4:12], dtype="<u4"))
    if len(data) != 12 + 4 * frames * bins:
        raise ContractError(f"{path}: expected {frames}x{bins} floats, file size disagrees")
    return np.frombuffer(data[12:], dtype="<f4").reshape(frames, bins).copy()
