"""Command-line entry point: ``adapitch <command> [flags]``.

Exit codes: 0 success, 2 usage/config error or missing input, 3 training
divergence, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import trainer as tr
from .data.checkpoint import load_checkpoint, save_checkpoint
from .data.corpus import CorpusSpec, generate_toy_corpus, parse_f0
from .data.manifest import load_manifest
from .dsp.audio import load_wav, save_wav
from .dsp.mel import MelConfig, MelSpectrogram, load_mel, mel_spectrogram, save_mel
from .dsp.pitch import PitchConfig, PitchContour, estimate_pitch
from .dsp.text import load_lexicon
from .dsp.vocoder import griffin_lim
from .errors import CheckpointError, ContractError, TrainingDivergence
from .m2m import MelEncoderConfig
from .metrics import aggregate, compare
from .t2t import TextEncoderConfig
from .variance_adaptor import AdaptorConfig

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
SEED_ENV = "ADAPITCH_SEED"

DEFAULT_STEPS = {"pretrain-t2t": 2000, "pretrain-m2m": 2000, "train": 5000}

DEFAULTS = {
    "seed": 0,
    "paths": {},
    "corpus": {"utterances": 32, "speakers": 2, "phonemes": 16},
    "mel": MelConfig().to_dict(),
    "pitch": PitchConfig().to_dict(),
    "model": {"t2t": {}, "m2m": {}, "adaptor": {}},
    "weights": {"alpha": 1.0, "beta": 0.1, "gamma": 0.1, "duration": 0.1},
    "train": {"steps": None, "batch_size": 8, "lr": 1e-3, "checkpoint_interval": 0},
}


class UsageError(Exception):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then ``$ADAPITCH_SEED``, then the ``--config`` file, then explicit flags."""
    cfg = _merge(DEFAULTS, {"seed": _default_seed()})
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, loaded)
    flags = {
        "seed": ("seed",), "manifest": ("paths", "manifest"), "lexicon": ("paths", "lexicon"),
        "t2t": ("paths", "t2t"), "m2m": ("paths", "m2m"), "out": ("paths", "out"),
        "steps": ("train", "steps"), "batch_size": ("train", "batch_size"), "lr": ("train", "lr"),
        "checkpoint_interval": ("train", "checkpoint_interval"),
        "alpha": ("weights", "alpha"), "beta": ("weights", "beta"), "gamma": ("weights", "gamma"),
        "utts": ("corpus", "utterances"), "speakers": ("corpus", "speakers"), "phonemes": ("corpus", "phonemes"),
    }
    for flag, path in flags.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    if cfg["train"].get("steps") is None:
        cfg["train"]["steps"] = DEFAULT_STEPS.get(args.command)
    return cfg


def _require_path(cfg: dict, key: str, flag: str) -> Path:
    value = cfg["paths"].get(key)
    if not value:
        raise UsageError(f"missing required input {flag}")
    p = Path(value)
    if key != "out" and not p.exists():
        raise UsageError(f"{flag}: no such file {p}")
    return p


def _out_dir(cfg: dict) -> Path:
    out = _require_path(cfg, "out", "--out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _archive(cfg: dict, out: Path) -> None:
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")


def _train_config(cfg: dict, stage: str) -> tr.TrainConfig:
    t = cfg["train"]
    return tr.TrainConfig(stage, int(t["steps"]), int(t["batch_size"]), int(cfg["seed"]), float(t["lr"]),
                          int(t["checkpoint_interval"]))


def _lexicon_path(cfg: dict, manifest: Path) -> Path:
    lex = cfg["paths"].get("lexicon") or manifest.parent / "lexicon.txt"
    if not Path(lex).exists():
        raise UsageError(f"--lexicon: no such file {lex}")
    return Path(lex)


def _mel_config(cfg: dict) -> MelConfig:
    return MelConfig(**cfg["mel"])


def _pitch_config(cfg: dict) -> PitchConfig:
    d = dict(cfg["pitch"])
    d["thresholds"] = tuple(d["thresholds"])
    return PitchConfig(**d)


def _finish_training(result: tr.TrainResult, out: Path, name: str, plot: str | None) -> None:
    save_checkpoint(result.checkpoint, out / f"{name}.ckpt")
    if plot and result.history:
        from .plotting import plot_loss_curves

        plot_loss_curves(plot, result.history)


# -- commands --------------------------------------------------------------------
def cmd_gen_corpus(args) -> int:
    cfg = effective_config(args)
    out = _out_dir(cfg)
    c = cfg["corpus"]
    spec = CorpusSpec(num_utterances=int(c["utterances"]), num_speakers=int(c["speakers"]),
                      seed=int(cfg["seed"]), phoneme_vocab_size=int(c["phonemes"]),
                      sample_rate=int(cfg["mel"]["sample_rate"]), hop=int(cfg["mel"]["hop"]))
    entries = generate_toy_corpus(spec, out)
    print(f"wrote {len(entries)} utterances to {out}")
    return EXIT_OK


def cmd_pretrain_t2t(args) -> int:
    cfg = effective_config(args)
    manifest = _require_path(cfg, "manifest", "--manifest")
    out = _out_dir(cfg)
    frontend = tr.TextFrontend.from_lexicon(load_lexicon(_lexicon_path(cfg, manifest)))
    items = tr.text_features(load_manifest(manifest), frontend)
    model = TextEncoderConfig(vocab_size=len(frontend.vocab), **cfg["model"]["t2t"])
    _archive(cfg, out)
    log = tr.MetricsLog(out / "metrics.jsonl")
    try:
        result = tr.run_stage1_t2t(items, frontend, _train_config(cfg, "t2t"), model, log, out)
    finally:
        log.close()
    _finish_training(result, out, "t2t", args.plot)
    print(f"reconstruction accuracy {tr.reconstruction_accuracy(items, result.checkpoint.params):.4f}")
    return EXIT_OK


def _m2m_model(cfg: dict, mel_cfg: MelConfig) -> MelEncoderConfig:
    d = dict(cfg["model"]["m2m"])
    for key in ("channels", "kernel"):
        if key in d:
            d[key] = tuple(d[key])
    return MelEncoderConfig(n_mels=mel_cfg.n_mels, **d)


def cmd_pretrain_m2m(args) -> int:
    cfg = effective_config(args)
    manifest = _require_path(cfg, "manifest", "--manifest")
    out = _out_dir(cfg)
    mel_cfg = _mel_config(cfg)
    items = tr.audio_features(load_manifest(manifest), mel_cfg)
    _archive(cfg, out)
    log = tr.MetricsLog(out / "metrics.jsonl")
    try:
        result = tr.run_stage1_m2m(items, mel_cfg, _train_config(cfg, "m2m"), _m2m_model(cfg, mel_cfg), log, out)
    finally:
        log.close()
    _finish_training(result, out, "m2m", args.plot)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = effective_config(args)
    manifest = _require_path(cfg, "manifest", "--manifest")
    t2t_path = _require_path(cfg, "t2t", "--t2t")
    m2m_path = _require_path(cfg, "m2m", "--m2m")
    out = _out_dir(cfg)
    t2t_ckpt, m2m_ckpt = load_checkpoint(t2t_path), load_checkpoint(m2m_path)
    if t2t_ckpt.config.get("stage") != "t2t" or m2m_ckpt.config.get("stage") != "m2m":
        raise UsageError("--t2t and --m2m must point at text and mel pretraining checkpoints")
    frontend = tr.TextFrontend.from_dict(t2t_ckpt.config["frontend"])
    mel_cfg = MelConfig(**m2m_ckpt.config["mel"])
    items = tr.tts_features(load_manifest(manifest), frontend, mel_cfg, _pitch_config(cfg))
    t2t_cfg = TextEncoderConfig(**t2t_ckpt.config["t2t"])
    adaptor = AdaptorConfig(vocab_size=len(frontend.vocab), n_speakers=max(u.speaker for u in items) + 1,
                            text_dim=t2t_cfg.output_dim, d_lat=int(m2m_ckpt.config["m2m"]["d_lat"]),
                            **cfg["model"]["adaptor"])
    weights = tr.LossWeights(**cfg["weights"])
    _archive(cfg, out)
    log = tr.MetricsLog(out / "metrics.jsonl")
    try:
        result = tr.run_stage2(items, t2t_ckpt, m2m_ckpt, _train_config(cfg, "tts"), weights, adaptor, log, out)
    finally:
        log.close()
    _finish_training(result, out, "tts", args.plot)
    save_checkpoint(tr.strip_for_inference(result.checkpoint), out / "tts_inference.ckpt")
    return EXIT_OK


def read_contour(path, hop: int) -> PitchContour:
    try:
        f0 = parse_f0(Path(path).read_text())
    except ValueError as exc:
        raise ContractError(f"{path}: malformed pitch file ({exc})") from exc
    return PitchContour(f0, f0 > 0, hop)


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if not Path(args.ckpt).exists():
        raise UsageError(f"--ckpt: no such file {args.ckpt}")
    ckpt = load_checkpoint(args.ckpt)
    pitch = None
    if args.pitch:
        if not Path(args.pitch).exists():
            raise UsageError(f"--pitch: no such file {args.pitch}")
        pitch = read_contour(args.pitch, int(ckpt.config["mel"]["hop"]))
        if args.pitch_scale != 1.0:
            pitch = pitch.scaled(args.pitch_scale)
    result = tr.synthesize(args.text, args.speaker, ckpt, pitch, vocoder=bool(args.wav),
                           vocoder_iterations=args.gl_iters, seed=seed)
    save_mel(args.out, result.mel)
    if args.wav:
        save_wav(args.wav, result.wave)
    print(f"frames {result.frames}")
    return EXIT_OK


def _features(path: str, mel_cfg: MelConfig, pitch_cfg: PitchConfig, seed: int):
    """(log-mel matrix, pitch contour) for a WAV or MELF file; mel files are rendered with Griffin-Lim."""
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file {p}")
    if p.suffix.lower() == ".wav":
        wave = load_wav(p)
        mel = mel_spectrogram(wave, mel_cfg).values
    else:
        mel = load_mel(p)
        wave = griffin_lim(MelSpectrogram(mel, mel_cfg), seed=seed)
    pitch = estimate_pitch(wave, pitch_cfg)
    n = min(mel.shape[0], len(pitch))
    return mel[:n], PitchContour(pitch.f0[:n], pitch.voiced[:n], pitch.hop)


def write_plot_data(path, ref: PitchContour, hyp: PitchContour) -> None:
    lines = ["# frame\treference_hz\thypothesis_hz"]
    lines += [f"{i}\t{r:.4f}\t{h:.4f}" for i, (r, h) in enumerate(zip(ref.f0, hyp.f0))]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    cfg = effective_config(args)
    if len(args.ref) != len(args.hyp):
        raise UsageError("--ref and --hyp need the same number of files")
    if (args.plot_data or args.plot) and len(args.ref) != 1:
        raise UsageError("--plot-data/--plot need exactly one reference/hypothesis pair")
    mel_cfg, pitch_cfg = _mel_config(cfg), _pitch_config(cfg)
    seed = int(cfg["seed"])
    align = "dtw" if args.dtw else "none"
    reports, lines = [], []
    for ref_path, hyp_path in zip(args.ref, args.hyp):
        ref_mel, ref_pitch = _features(ref_path, mel_cfg, pitch_cfg, seed)
        hyp_mel, hyp_pitch = _features(hyp_path, mel_cfg, pitch_cfg, seed)
        if align == "none" and ref_mel.shape[0] != hyp_mel.shape[0]:
            raise ContractError(f"{ref_path} has {ref_mel.shape[0]} frames, {hyp_path} has {hyp_mel.shape[0]}; "
                                "pass --dtw to align them")
        report = compare(ref_mel, hyp_mel, ref_pitch, hyp_pitch, align)
        reports.append(report)
        lines.append(json.dumps({"ref": ref_path, "hyp": hyp_path, **report.to_record()}, sort_keys=True))
        if args.plot_data:
            write_plot_data(args.plot_data, ref_pitch, hyp_pitch)
        if args.plot:
            from .plotting import plot_pitch_overlay

            plot_pitch_overlay(args.plot, ref_pitch, hyp_pitch, mel_cfg.hop / mel_cfg.sample_rate)
    lines.append(json.dumps({"aggregate": aggregate(reports)}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adapitch", description="Pitch-controllable TTS training pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON run configuration; flags override its values")
        p.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV} or 0)")
        if out_required:
            p.add_argument("--out", help="output directory")

    def training(p):
        p.add_argument("--manifest", help="JSON-lines corpus manifest")
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--checkpoint-interval", type=int, help="also save every N steps (0 = final only)")
        p.add_argument("--plot", help="write a loss-curve figure to this path")

    p = sub.add_parser("gen-corpus", help="write a synthetic multi-speaker corpus")
    common(p)
    p.add_argument("--utts", type=int)
    p.add_argument("--speakers", type=int)
    p.add_argument("--phonemes", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain-t2t", help="stage one: text reconstruction")
    common(p)
    training(p)
    p.add_argument("--lexicon", help="word/phoneme lexicon (default: lexicon.txt next to the manifest)")
    p.set_defaults(func=cmd_pretrain_t2t)

    p = sub.add_parser("pretrain-m2m", help="stage one: mel reconstruction")
    common(p)
    training(p)
    p.set_defaults(func=cmd_pretrain_m2m)

    p = sub.add_parser("train", help="stage two: supervised training with frozen pretrained parts")
    common(p)
    training(p)
    p.add_argument("--t2t", help="text pretraining checkpoint")
    p.add_argument("--m2m", help="mel pretraining checkpoint")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize a mel spectrogram (and optionally a WAV)")
    p.add_argument("--seed", type=int)
    p.add_argument("--text", required=True)
    p.add_argument("--speaker", type=int, required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output MELF file")
    p.add_argument("--pitch", help=".f0 contour overriding the predicted pitch")
    p.add_argument("--pitch-scale", type=float, default=1.0, help="multiply the --pitch contour")
    p.add_argument("--wav", help="also render a waveform with Griffin-Lim")
    p.add_argument("--gl-iters", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="objective metrics between reference and hypothesis files")
    common(p, out_required=False)
    p.add_argument("--ref", nargs="+", required=True, help="reference WAV or MELF files")
    p.add_argument("--hyp", nargs="+", required=True, help="hypothesis WAV or MELF files")
    p.add_argument("--dtw", action="store_true", help="align frames with dynamic time warping")
    p.add_argument("--plot-data", help="per-frame reference/hypothesis pitch table (TSV)")
    p.add_argument("--plot", help="pitch-overlay figure (PNG/PDF)")
    p.add_argument("--report", help="also write the JSON-lines report here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
