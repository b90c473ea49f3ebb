"""Two-phase training and inference.

Phase one pretrains the text-to-text and mel-to-mel modules separately.
Phase two freezes the text encoder, mel encoder and mel decoder and trains
the variance adaptor (pitch encoder/regressor, duration predictor, pitch
embedding, speaker table and fusion layer) against the weighted total loss.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import nn
from .autodiff.optim import OptimizerState, optimizer_step
from .autodiff.params import ParameterSet
from .autodiff.tensor import Tensor, backward
from .data.batching import Batch, Utterance, endless_batches
from .data.checkpoint import Checkpoint, save_checkpoint
from .data.manifest import ManifestEntry, require
from .dsp.audio import Waveform, load_wav
from .dsp.mel import MelConfig, MelSpectrogram, mel_spectrogram
from .dsp.pitch import PitchConfig, PitchContour, estimate_pitch
from .dsp.text import Vocabulary, text_to_phonemes
from .dsp.vocoder import griffin_lim
from .errors import (
    CheckpointError, ContractError, EmptyInputError, ManifestError, TrainingDivergence, UnknownSpeakerError,
)
from .m2m import MelEncoderConfig, init_m2m, m2m_reconstruction_loss, mel_decode, mel_encode
from .t2t import TextEncoderConfig, greedy_reconstruct, init_t2t, t2t_reconstruction_loss, text_encode
from .variance_adaptor import (
    DURATION_LOSS_WEIGHT, AdaptorConfig, adaptation_loss, duration_head, duration_loss, fuse,
    init_variance_adaptor, log_pitch_target, pitch_encode, pitch_regress, pitch_regression_loss,
    predict_duration, upsample,
)

STAGE2_FROZEN = ("text_encoder", "mel_encoder", "mel_decoder")
INFERENCE_DROPPED = ("text_decoder", "mel_encoder")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.1
    duration: float = DURATION_LOSS_WEIGHT

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.duration) < 0:
            raise ContractError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    max_steps: int
    batch_size: int = 8
    seed: int = 0
    lr: float = 1e-3
    checkpoint_interval: int = 0
    freeze: tuple[str, ...] = ()

    def __post_init__(self):
        if self.stage not in ("t2t", "m2m", "tts"):
            raise ContractError(f"unknown stage {self.stage!r}")
        if self.max_steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ContractError("max_steps >= 0, batch_size >= 1 and lr > 0 are required")
        if self.stage == "tts":
            object.__setattr__(self, "freeze", tuple(dict.fromkeys(STAGE2_FROZEN + tuple(self.freeze))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze"] = list(self.freeze)
        return d


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)

    def series(self, key: str = "total") -> np.ndarray:
        return np.array([h[key] for h in self.history])


@dataclass
class TextFrontend:
    lexicon: dict[str, list[str]]
    vocab: Vocabulary

    @classmethod
    def from_lexicon(cls, lexicon: dict[str, list[str]]) -> "TextFrontend":
        return cls(lexicon, Vocabulary.from_lexicon(lexicon))

    def tokens(self, text: str) -> np.ndarray:
        return text_to_phonemes(text, self.lexicon, self.vocab).ids

    def to_dict(self) -> dict:
        return {"lexicon": self.lexicon, "vocab": self.vocab.symbols}

    @classmethod
    def from_dict(cls, d: dict) -> "TextFrontend":
        return cls({k: list(v) for k, v in d["lexicon"].items()}, Vocabulary(d["vocab"]))


# -- feature preparation --------------------------------------------------------
def _check_nonempty(entries: Sequence) -> None:
    if len(entries) == 0:
        raise EmptyInputError("corpus is empty")


def text_features(entries: Sequence[ManifestEntry], frontend: TextFrontend) -> list[Utterance]:
    _check_nonempty(entries)
    out = []
    for e in entries:
        require(e, "t2t")
        out.append(Utterance(id=e.id, tokens=frontend.tokens(e.text)))
    return out


def audio_features(entries: Sequence[ManifestEntry], mel_cfg: MelConfig) -> list[Utterance]:
    _check_nonempty(entries)
    out = []
    for e in entries:
        require(e, "m2m")
        wave = load_wav(e.path("audio"))
        out.append(Utterance(id=e.id, mel=mel_spectrogram(wave, mel_cfg).values))
    return out


def tts_features(entries: Sequence[ManifestEntry], frontend: TextFrontend, mel_cfg: MelConfig,
                 pitch_cfg: PitchConfig) -> list[Utterance]:
    """Tokens, durations and speaker plus mel and pYIN pitch trimmed to ``sum(durations)`` frames."""
    _check_nonempty(entries)
    out = []
    for e in entries:
        require(e, "tts")
        tokens = frontend.tokens(e.text)
        durations = np.asarray(e.durations, dtype=np.int64)
        if durations.size != tokens.size:
            raise ManifestError(f"entry {e.id!r}: {durations.size} durations for {tokens.size} phonemes")
        wave = load_wav(e.path("audio"))
        mel = mel_spectrogram(wave, mel_cfg).values
        pitch = estimate_pitch(wave, pitch_cfg)
        n = int(durations.sum())
        if mel.shape[0] < n:
            raise ManifestError(f"entry {e.id!r}: durations cover {n} frames but audio has {mel.shape[0]}")
        out.append(Utterance(id=e.id, tokens=tokens, mel=mel[:n], f0=pitch.f0[:n], voiced=pitch.voiced[:n],
                             durations=durations, speaker=int(e.speaker)))
    return out


# -- generic loop --------------------------------------------------------------
class MetricsLog:
    """Line-delimited JSON records, optionally mirrored to a file."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _train_loop(params: ParameterSet, items: Sequence[Utterance], cfg: TrainConfig,
                step_fn: Callable[[Batch], tuple[Tensor, dict]], make_checkpoint: Callable[[int], Checkpoint],
                log: MetricsLog, checkpoint_dir=None) -> None:
    state = OptimizerState(lr=cfg.lr)
    batches = endless_batches(items, cfg.batch_size, cfg.seed)
    for step in range(1, cfg.max_steps + 1):
        loss, terms = step_fn(next(batches))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergence(f"non-finite loss {value} at step {step}")
        backward(loss)
        optimizer_step(params, state)
        log.write({"step": step, **terms, "total": value})
        if checkpoint_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(make_checkpoint(step), Path(checkpoint_dir) / f"step{step:06d}.ckpt")


def _snapshot(**parts) -> dict:
    return {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in parts.items()}


# -- stage 1 ---------------------------------------------------------------------
def run_stage1_t2t(items: Sequence[Utterance], frontend: TextFrontend, cfg: TrainConfig,
                   model_cfg: TextEncoderConfig | None = None, log: MetricsLog | None = None,
                   checkpoint_dir=None) -> TrainResult:
    _check_nonempty(items)
    model_cfg = model_cfg or TextEncoderConfig(vocab_size=len(frontend.vocab))
    if model_cfg.vocab_size != len(frontend.vocab):
        raise ContractError("text encoder vocabulary size does not match the frontend")
    params = init_t2t(model_cfg, np.random.default_rng([cfg.seed, 1]))
    log = log or MetricsLog()

    def step(batch: Batch):
        loss = t2t_reconstruction_loss(batch.tokens, params, batch.token_mask)
        return loss, {"t2t": float(loss.data)}

    def checkpoint(step_no: int) -> Checkpoint:
        config = _snapshot(stage="t2t", frontend=frontend, t2t=model_cfg, train=cfg)
        return Checkpoint(params.copy(), config, step_no, cfg.seed)

    _train_loop(params, items, cfg, step, checkpoint, log, checkpoint_dir)
    return TrainResult(checkpoint(cfg.max_steps), log.records)


def reconstruction_accuracy(items: Sequence[Utterance], params: ParameterSet) -> float:
    correct = total = 0
    for u in items:
        pred = greedy_reconstruct(u.tokens, params)
        correct += int(np.sum(pred == u.tokens))
        total += u.tokens.size
    return correct / total


def run_stage1_m2m(items: Sequence[Utterance], mel_cfg: MelConfig, cfg: TrainConfig,
                   model_cfg: MelEncoderConfig | None = None, log: MetricsLog | None = None,
                   checkpoint_dir=None) -> TrainResult:
    _check_nonempty(items)
    model_cfg = model_cfg or MelEncoderConfig(n_mels=mel_cfg.n_mels)
    params = init_m2m(model_cfg, np.random.default_rng([cfg.seed, 2]))
    # Start the output layer at the corpus mean so the loss measures structure, not offset.
    params["mel_decoder.proj.bias"].data = np.mean(np.concatenate([u.mel for u in items]), axis=0).astype(np.float32)
    log = log or MetricsLog()

    def step(batch: Batch):
        loss = m2m_reconstruction_loss(batch.mel, params, batch.frame_mask)
        return loss, {"m2m": float(loss.data)}

    def checkpoint(step_no: int) -> Checkpoint:
        config = _snapshot(stage="m2m", mel=mel_cfg, m2m=model_cfg, train=cfg)
        return Checkpoint(params.copy(), config, step_no, cfg.seed)

    _train_loop(params, items, cfg, step, checkpoint, log, checkpoint_dir)
    return TrainResult(checkpoint(cfg.max_steps), log.records)


# -- stage 2 ---------------------------------------------------------------------
def total_loss(batch: Batch, params: ParameterSet, weights: LossWeights = LossWeights()) -> tuple[Tensor, dict]:
    """Weighted sum ``alpha*L_syn + beta*L_reg + gamma*L_ada + w_dur*L_dur`` and the raw terms.

    The batch must carry cached text latents and teacher latents (from the
    frozen encoders) plus tokens, durations, mel, pitch and speakers.
    """
    missing = [f for f in ("tokens", "durations", "text_latent", "mel", "f0", "voiced", "teacher_latent", "speakers")
               if getattr(batch, f) is None]
    if missing:
        raise ContractError(f"stage-2 batch lacks {', '.join(missing)}")
    fmask = batch.frame_mask
    text_latent = Tensor(batch.text_latent)
    text_up = upsample(text_latent, batch.durations)
    voiced = batch.voiced.astype(bool) & (fmask > 0)
    fused = fuse(text_up, log_pitch_target(batch.f0, voiced), voiced, batch.speakers, params, fmask)
    mel_pred = mel_decode(fused, params, fmask)
    terms = {
        "syn": nn.mse_loss(mel_pred, batch.mel, fmask),
        "reg": pitch_regression_loss(batch.tokens, (batch.f0, batch.voiced), batch.durations, params,
                                     batch.token_mask, fmask),
        "ada": adaptation_loss(fused, batch.teacher_latent, mask=fmask),
        "dur": duration_loss(duration_head(text_latent, params), batch.durations, batch.token_mask),
    }
    return combine_terms(terms, weights)


def combine_terms(terms: dict, weights: LossWeights) -> tuple:
    """Weighted sum of the named terms; works for Tensors and plain floats."""
    scale = {"syn": weights.alpha, "reg": weights.beta, "ada": weights.gamma, "dur": weights.duration}
    total = None
    report = {}
    for name, value in terms.items():
        contribution = value * scale[name]
        total = contribution if total is None else total + contribution
        report[name] = float(getattr(value, "data", value))
        report[f"weighted_{name}"] = float(getattr(contribution, "data", contribution))
    return total, report


def _cache_latents(items: Sequence[Utterance], params: ParameterSet) -> None:
    for u in items:
        u.text_latent = text_encode(u.tokens, params).data
        u.teacher_latent = mel_encode(u.mel, params).data


def assemble_stage2(t2t_ckpt: Checkpoint, m2m_ckpt: Checkpoint) -> ParameterSet:
    params = ParameterSet()
    for name in ("text_encoder",):
        if name not in t2t_ckpt.components():
            raise CheckpointError(f"text checkpoint lacks {name}")
        params.add_scope(name, t2t_ckpt.params.scope(name))
    for name in ("mel_encoder", "mel_decoder"):
        if name not in m2m_ckpt.components():
            raise CheckpointError(f"mel checkpoint lacks {name}")
        params.add_scope(name, m2m_ckpt.params.scope(name))
    return params.copy()


def run_stage2(items: Sequence[Utterance], t2t_ckpt: Checkpoint, m2m_ckpt: Checkpoint, cfg: TrainConfig,
               weights: LossWeights = LossWeights(), adaptor_cfg: AdaptorConfig | None = None,
               log: MetricsLog | None = None, checkpoint_dir=None) -> TrainResult:
    _check_nonempty(items)
    if cfg.stage != "tts":
        raise ContractError("run_stage2 needs a TrainConfig with stage='tts'")
    frontend = TextFrontend.from_dict(t2t_ckpt.config["frontend"])
    t2t_cfg = TextEncoderConfig(**t2t_ckpt.config["t2t"])
    m2m_dict = dict(m2m_ckpt.config["m2m"])
    m2m_cfg = MelEncoderConfig(**{**m2m_dict, "channels": tuple(m2m_dict["channels"]),
                                  "kernel": tuple(m2m_dict["kernel"])})
    n_speakers = max(u.speaker for u in items) + 1
    adaptor_cfg = adaptor_cfg or AdaptorConfig(vocab_size=len(frontend.vocab), n_speakers=n_speakers,
                                               text_dim=t2t_cfg.output_dim, d_lat=m2m_cfg.d_lat)
    if adaptor_cfg.n_speakers < n_speakers:
        raise ContractError(f"corpus uses {n_speakers} speakers but the table holds {adaptor_cfg.n_speakers}")

    params = assemble_stage2(t2t_ckpt, m2m_ckpt)
    for name in cfg.freeze:
        params.freeze(name)
    _cache_latents(items, params)
    voiced_f0 = np.concatenate([u.f0[u.voiced] for u in items])
    mean_log_f0 = float(np.mean(np.log(voiced_f0))) if voiced_f0.size else float(np.log(150.0))
    mean_log_dur = float(np.mean(np.log(np.concatenate([u.durations for u in items]) + 1.0)))
    for k, p in init_variance_adaptor(adaptor_cfg, np.random.default_rng([cfg.seed, 3]), mean_log_f0,
                                      mean_log_dur).items():
        params[k] = p
    log = log or MetricsLog()
    frozen_digest = {name: params.digest(name) for name in cfg.freeze}

    def step(batch: Batch):
        return total_loss(batch, params, weights)

    def checkpoint(step_no: int) -> Checkpoint:
        config = _snapshot(stage="tts", frontend=frontend, t2t=t2t_cfg, m2m=m2m_cfg, adaptor=adaptor_cfg,
                           mel=m2m_ckpt.config.get("mel", MelConfig().to_dict()), pitch=PitchConfig(),
                           weights=weights, train=cfg)
        return Checkpoint(params.copy(), config, step_no, cfg.seed)

    _train_loop(params, items, cfg, step, checkpoint, log, checkpoint_dir)
    for name, digest in frozen_digest.items():
        if params.digest(name) != digest:
            raise AssertionError(f"frozen component {name} changed during training")
    return TrainResult(checkpoint(cfg.max_steps), log.records)


def strip_for_inference(ckpt: Checkpoint) -> Checkpoint:
    return ckpt.without(*INFERENCE_DROPPED)


def window_means(values: Iterable[float], window: int) -> np.ndarray:
    v = np.asarray(list(values), dtype=np.float64)
    n = v.size // window
    return v[:n * window].reshape(n, window).mean(axis=1)


# -- inference -----------------------------------------------------------------
@dataclass
class Synthesis:
    mel: MelSpectrogram
    durations: np.ndarray
    pitch: PitchContour
    wave: Waveform | None = None

    @property
    def frames(self) -> int:
        return self.mel.frames


def resample_contour(contour: PitchContour, frames: int) -> PitchContour:
    """Linearly stretch a contour to ``frames`` frames; voicing uses the nearest source frame."""
    n = len(contour)
    if n == 0:
        raise EmptyInputError("pitch override is empty")
    if n == frames:
        return contour
    pos = np.linspace(0.0, n - 1, frames) if frames > 1 else np.zeros(1)
    voiced = contour.voiced[np.clip(np.rint(pos).astype(int), 0, n - 1)]
    src = np.flatnonzero(contour.voiced)
    if src.size == 0:
        return PitchContour(np.zeros(frames), np.zeros(frames, bool), contour.hop)
    f0 = np.exp(np.interp(pos, src, np.log(contour.f0[src])))
    return PitchContour(f0, voiced, contour.hop)


def synthesize(text: str, speaker: int, ckpt: Checkpoint, pitch: PitchContour | None = None,
               vocoder: bool = False, vocoder_iterations: int = 32, seed: int = 0) -> Synthesis:
    """Text -> durations -> upsampled text latent + pitch + speaker -> mel (-> waveform).

    Only the text encoder, variance adaptor and mel decoder are used, so the
    checkpoint may have its text decoder and mel encoder stripped.
    """
    cfg = ckpt.config
    if cfg.get("stage") != "tts":
        raise CheckpointError("synthesis needs a stage-2 checkpoint")
    frontend = TextFrontend.from_dict(cfg["frontend"])
    mel_cfg = MelConfig(**cfg["mel"])
    params = ckpt.params
    tokens = frontend.tokens(text)
    n_speakers = params["speaker_table"].shape[0]
    if not 0 <= int(speaker) < n_speakers:
        raise UnknownSpeakerError(f"speaker {speaker} not in [0, {n_speakers})")
    latent = text_encode(tokens, params)
    durations = predict_duration(latent, params)
    frames = int(durations.sum())
    if pitch is None:
        log_f0 = pitch_regress(pitch_encode(tokens, params), durations, params).data.astype(np.float64)
        contour = PitchContour(np.exp(log_f0), np.ones(frames, bool), mel_cfg.hop)
    else:
        contour = resample_contour(pitch, frames)
    lf = log_pitch_target(contour.f0, contour.voiced)
    fused = fuse(upsample(latent, durations), lf, contour.voiced, int(speaker), params)
    mel = MelSpectrogram(mel_decode(fused, params).data.astype(np.float32), mel_cfg)
    wave = griffin_lim(mel, vocoder_iterations, seed) if vocoder else None
    return Synthesis(mel, durations, contour, wave)
