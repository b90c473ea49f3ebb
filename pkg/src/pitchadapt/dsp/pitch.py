"""pYIN-style fundamental frequency tracking.

YIN's cumulative-mean-normalized difference function is evaluated per frame.
Instead of one absolute threshold, a fixed set of thresholds is tried, each
weighted by a beta prior; every threshold that yields a dip contributes its
weight to that lag.  The summed weight is the frame's voicing probability and
a two-state (voiced/unvoiced) Viterbi pass smooths the voicing decisions.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from ..errors import ContractError, EmptyInputError
from .audio import Waveform
from .mel import center_pad


@dataclass(frozen=True)
class PitchConfig:
    sample_rate: int = 22050
    hop: int = 256
    frame_length: int = 1024
    fmin: float = 50.0
    fmax: float = 600.0
    thresholds: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 11))
    beta_a: float = 2.0
    beta_b: float = 18.0
    self_transition: float = 0.99
    energy_floor: float = 1e-6

    def __post_init__(self):
        if not 0 < self.fmin < self.fmax < self.sample_rate / 2:
            raise ContractError("pitch range must satisfy 0 < fmin < fmax < sr/2")
        if self.sample_rate / self.fmin >= self.frame_length:
            raise ContractError("frame_length too short for the lowest detectable pitch")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d


@dataclass
class PitchContour:
    f0: np.ndarray  # Hz, 0 where unvoiced
    voiced: np.ndarray = field(default=None)
    hop: int = 256

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        if self.voiced is None:
            self.voiced = self.f0 > 0
        self.voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if self.voiced.shape != self.f0.shape:
            raise ContractError("f0 and voiced flags differ in length")
        self.f0 = np.where(self.voiced, self.f0, 0.0)

    def __len__(self) -> int:
        return self.f0.size

    def scaled(self, factor: float) -> "PitchContour":
        return PitchContour(self.f0 * factor, self.voiced.copy(), self.hop)


def threshold_prior(cfg: PitchConfig) -> np.ndarray:
    w = stats.beta.pdf(np.asarray(cfg.thresholds), cfg.beta_a, cfg.beta_b)
    return w / w.sum()


def cmnd(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Cumulative-mean-normalized difference for lags 0..max_lag, per frame."""
    n = frames.shape[1]
    width = n - max_lag
    size = 1 << int(np.ceil(np.log2(n + width)))
    spec_full = np.fft.rfft(frames, size, axis=1)
    spec_head = np.fft.rfft(frames[:, :width], size, axis=1)
    corr = np.fft.irfft(spec_full * np.conj(spec_head), size, axis=1)[:, :max_lag + 1]
    sq = frames * frames
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    energy_head = csum[:, width] - csum[:, 0]
    lags = np.arange(max_lag + 1)
    energy_lag = csum[:, lags + width] - csum[:, lags]
    diff = np.maximum(energy_head[:, None] + energy_lag - 2.0 * corr, 0.0)
    out = np.ones_like(diff)
    running = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = diff[:, 1:] * lags[1:] / running
    out[:, 1:] = np.where(running > 0, norm, 1.0)
    return out


def _parabolic_offset(d: np.ndarray, tau: int) -> float:
    if tau <= 0 or tau >= d.size - 1:
        return 0.0
    a, b, c = d[tau - 1], d[tau], d[tau + 1]
    den = a - 2.0 * b + c
    if den <= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / den, -1.0, 1.0))


def viterbi_voicing(p_voiced: np.ndarray, self_transition: float) -> np.ndarray:
    """Most likely voiced/unvoiced state path of a two-state HMM."""
    eps = 1e-6
    pv = np.clip(p_voiced, eps, 1.0 - eps)
    emit = np.log(np.stack([1.0 - pv, pv], axis=1))  # state 0 unvoiced, 1 voiced
    stay, move = np.log(self_transition), np.log(1.0 - self_transition)
    trans = np.array([[stay, move], [move, stay]])
    n = pv.size
    score = np.log(0.5) + emit[0]
    back = np.zeros((n, 2), dtype=np.int64)
    for t in range(1, n):
        cand = score[:, None] + trans  # from -> to
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], [0, 1]] + emit[t]
    path = np.zeros(n, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path.astype(bool)


def estimate_pitch(wave: Waveform, cfg: PitchConfig | None = None) -> PitchContour:
    cfg = cfg or PitchConfig(sample_rate=wave.sample_rate)
    if wave.samples.size == 0:
        raise EmptyInputError("cannot estimate pitch of an empty signal")
    if wave.sample_rate != cfg.sample_rate:
        raise ContractError(f"waveform rate {wave.sample_rate} != config rate {cfg.sample_rate}")
    sr = cfg.sample_rate
    x = center_pad(wave.samples.astype(np.float64), cfg.frame_length // 2)
    frames = sliding_window_view(x, cfg.frame_length)[::cfg.hop]
    n_frames = 1 + wave.samples.size // cfg.hop
    frames = frames[:n_frames]

    tau_min = int(np.ceil(sr / cfg.fmax))
    tau_max = int(np.floor(sr / cfg.fmin))
    d = cmnd(frames, tau_max + 1)
    prior = threshold_prior(cfg)
    energy = np.sqrt(np.mean(frames * frames, axis=1))

    f0 = np.zeros(n_frames)
    p_voiced = np.zeros(n_frames)
    for i in range(n_frames):
        if energy[i] < cfg.energy_floor:
            continue
        row = d[i]
        search = row[tau_min:tau_max + 1]
        mass: dict[int, float] = {}
        for thr, w in zip(cfg.thresholds, prior):
            below = np.flatnonzero(search < thr)
            if below.size == 0:
                continue
            tau = int(below[0]) + tau_min
            while tau < tau_max and row[tau + 1] < row[tau]:
                tau += 1
            mass[tau] = mass.get(tau, 0.0) + float(w)
        if not mass:
            continue
        best = min(mass, key=lambda t: (-mass[t], t))
        p_voiced[i] = sum(mass.values())
        f0[i] = sr / (best + _parabolic_offset(row, best))

    voiced = viterbi_voicing(p_voiced, cfg.self_transition) & (f0 > 0)
    f0 = np.where(voiced, np.clip(f0, cfg.fmin, cfg.fmax), 0.0)
    return PitchContour(f0, voiced, cfg.hop)
