import numpy as np
import pytest

from pitchadapt import trainer as tr
from pitchadapt.data import checkpoint as ck
from pitchadapt.data.corpus import CorpusSpec, generate_toy_corpus
from pitchadapt.dsp.mel import MelConfig
from pitchadapt.dsp.pitch import PitchConfig, PitchContour
from pitchadapt.dsp.text import load_lexicon
from pitchadapt.errors import CheckpointError, ContractError, EmptyInputError, TrainingDivergence, UnknownSpeakerError
from pitchadapt.m2m import MelEncoderConfig
from pitchadapt.t2t import TextEncoderConfig, t2t_reconstruction_loss
from pitchadapt.variance_adaptor import AdaptorConfig

M2M_CFG = MelEncoderConfig(n_mels=80, channels=(2, 2, 2), d_lat=8, decoder_layers=1, decoder_ff=16)


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    entries = generate_toy_corpus(CorpusSpec(num_utterances=4, num_speakers=2, seed=1, max_phonemes=6), out)
    frontend = tr.TextFrontend.from_lexicon(load_lexicon(out / "lexicon.txt"))
    return entries, frontend


def t2t_cfg(frontend):
    return TextEncoderConfig(vocab_size=len(frontend.vocab), embed_dim=8, hidden=4, decoder_hidden=4)


def adaptor_cfg(frontend):
    return AdaptorConfig(vocab_size=len(frontend.vocab), n_speakers=2, text_dim=8, d_lat=8, d_spk=4, d_pe=4, d_p=8,
                         pitch_layers=1, pitch_ff=8, duration_hidden=8)


@pytest.fixture(scope="module")
def stage1(toy):
    entries, frontend = toy
    t2t = tr.run_stage1_t2t(tr.text_features(entries, frontend), frontend, tr.TrainConfig("t2t", 3, batch_size=2),
                            t2t_cfg(frontend))
    m2m = tr.run_stage1_m2m(tr.audio_features(entries, MelConfig()), MelConfig(), tr.TrainConfig("m2m", 2, batch_size=2),
                            M2M_CFG)
    return t2t, m2m


@pytest.fixture(scope="module")
def stage2(toy, stage1):
    entries, frontend = toy
    items = tr.tts_features(entries, frontend, MelConfig(), PitchConfig())
    return tr.run_stage2(items, stage1[0].checkpoint, stage1[1].checkpoint, tr.TrainConfig("tts", 4, batch_size=2),
                         adaptor_cfg=adaptor_cfg(frontend))


# -- loss combination ---------------------------------------------------------------
def test_combine_zero_terms():
    total, _ = tr.combine_terms({"syn": 0.0, "reg": 0.0, "ada": 0.0}, tr.LossWeights())
    assert total == 0.0


def test_combine_hand_case():
    total, report = tr.combine_terms({"syn": 1.0, "reg": 2.0, "ada": 3.0}, tr.LossWeights())
    assert total == pytest.approx(1.5)
    total, _ = tr.combine_terms({"syn": 1.0, "reg": 2.0, "ada": 3.0, "dur": 4.0}, tr.LossWeights())
    assert total == pytest.approx(1.9)
    assert report["weighted_reg"] == pytest.approx(0.2)


def test_doubling_gamma_doubles_adaptation_contribution():
    from .gradient_cases import tiny_batch, tiny_models

    params = tiny_models()
    batch = tiny_batch(params)
    _, a = tr.total_loss(batch, params, tr.LossWeights(gamma=0.1))
    _, b = tr.total_loss(batch, params, tr.LossWeights(gamma=0.2))
    assert b["weighted_ada"] == pytest.approx(2 * a["weighted_ada"], rel=1e-12)
    assert b["weighted_syn"] == a["weighted_syn"]


def test_negative_weight_rejected():
    with pytest.raises(ContractError):
        tr.LossWeights(beta=-1.0)


def test_stage2_config_always_freezes_pretrained_parts():
    cfg = tr.TrainConfig("tts", 1, freeze=("pitch_encoder",))
    assert set(tr.STAGE2_FROZEN) <= set(cfg.freeze)


# -- features ---------------------------------------------------------------------------
def test_empty_corpus(toy):
    _, frontend = toy
    with pytest.raises(EmptyInputError):
        tr.text_features([], frontend)


def test_tts_features_are_frame_aligned(toy):
    entries, frontend = toy
    for u, e in zip(tr.tts_features(entries, frontend, MelConfig(), PitchConfig()), entries):
        n = sum(e.durations)
        assert u.mel.shape == (n, 80) and u.f0.shape == (n,) and u.tokens.size == len(e.durations)


def test_frontend_round_trip(toy):
    _, frontend = toy
    again = tr.TextFrontend.from_dict(frontend.to_dict())
    assert again.vocab == frontend.vocab and again.lexicon == frontend.lexicon


# -- training runs -----------------------------------------------------------------------
def test_stage1_is_deterministic(toy, stage1):
    entries, frontend = toy
    again = tr.run_stage1_t2t(tr.text_features(entries, frontend), frontend,
                              tr.TrainConfig("t2t", 3, batch_size=2), t2t_cfg(frontend))
    assert again.history == stage1[0].history
    assert ck.serialize(again.checkpoint) == ck.serialize(stage1[0].checkpoint)


def test_stage1_components(stage1):
    assert stage1[0].checkpoint.components() == ["text_encoder", "text_decoder"]
    assert stage1[1].checkpoint.components() == ["mel_encoder", "mel_decoder"]


def test_stage2_keeps_frozen_parts_identical(stage1, stage2):
    params = stage2.checkpoint.params
    assert params.digest("text_encoder") == stage1[0].checkpoint.params.digest("text_encoder")
    for name in ("mel_encoder", "mel_decoder"):
        assert params.digest(name) == stage1[1].checkpoint.params.digest(name)
        assert all(params[k].frozen for k in params if k.startswith(name + "."))


def test_stage2_history_terms(stage2):
    assert len(stage2.history) == 4
    for rec in stage2.history:
        assert {"syn", "reg", "ada", "dur", "total", "step"} <= set(rec)
        expected = rec["syn"] + 0.1 * rec["reg"] + 0.1 * rec["ada"] + 0.1 * rec["dur"]
        assert rec["total"] == pytest.approx(expected, rel=1e-5)


def test_stage2_is_deterministic(toy, stage1, stage2):
    entries, frontend = toy
    items = tr.tts_features(entries, frontend, MelConfig(), PitchConfig())
    again = tr.run_stage2(items, stage1[0].checkpoint, stage1[1].checkpoint, tr.TrainConfig("tts", 4, batch_size=2),
                          adaptor_cfg=adaptor_cfg(frontend))
    assert ck.serialize(again.checkpoint) == ck.serialize(stage2.checkpoint)


def test_stage2_needs_mel_components(toy, stage1):
    entries, frontend = toy
    items = tr.tts_features(entries, frontend, MelConfig(), PitchConfig())
    broken = stage1[1].checkpoint.without("mel_decoder")
    with pytest.raises(CheckpointError):
        tr.run_stage2(items, stage1[0].checkpoint, broken, tr.TrainConfig("tts", 1), adaptor_cfg=adaptor_cfg(frontend))


def test_checkpoint_interval_writes_files(toy, tmp_path):
    entries, frontend = toy
    tr.run_stage1_t2t(tr.text_features(entries, frontend), frontend,
                      tr.TrainConfig("t2t", 4, batch_size=2, checkpoint_interval=2), t2t_cfg(frontend),
                      checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["step000002.ckpt", "step000004.ckpt"]


def test_divergence_raises(toy, stage1):
    entries, frontend = toy
    items = tr.text_features(entries, frontend)
    params = stage1[0].checkpoint.params.copy()
    params["text_encoder.embedding"].data[:] = np.nan

    def step(batch):
        loss = t2t_reconstruction_loss(batch.tokens, params, batch.token_mask)
        return loss, {}

    with pytest.raises(TrainingDivergence):
        tr._train_loop(params, items, tr.TrainConfig("t2t", 2, batch_size=2), step, None, tr.MetricsLog())


def test_metrics_log_file(tmp_path):
    log = tr.MetricsLog(tmp_path / "m.jsonl")
    log.write({"step": 1, "total": 0.5})
    log.close()
    assert (tmp_path / "m.jsonl").read_text() == '{"step": 1, "total": 0.5}\n'


def test_window_means():
    np.testing.assert_allclose(tr.window_means([1, 2, 3, 4, 5], 2), [1.5, 3.5])


# -- inference ------------------------------------------------------------------------------
def test_synthesize_on_stripped_checkpoint(toy, stage2):
    entries, _ = toy
    stripped = tr.strip_for_inference(stage2.checkpoint)
    assert "text_decoder" not in stripped.components() and "mel_encoder" not in stripped.components()
    out = tr.synthesize(entries[0].text, 1, stripped)
    assert out.mel.values.shape == (int(out.durations.sum()), 80)
    assert out.durations.min() >= 1
    again = tr.synthesize(entries[0].text, 1, stripped)
    np.testing.assert_array_equal(out.mel.values, again.mel.values)


def test_synthesize_unknown_speaker(toy, stage2):
    with pytest.raises(UnknownSpeakerError):
        tr.synthesize(toy[0][0].text, 99, stage2.checkpoint)


def test_synthesize_pitch_override_changes_output(toy, stage2):
    text = toy[0][0].text
    base = tr.synthesize(text, 0, stage2.checkpoint)
    frames = base.frames
    low = tr.synthesize(text, 0, stage2.checkpoint, pitch=PitchContour(np.full(frames, 100.0)))
    high = tr.synthesize(text, 0, stage2.checkpoint, pitch=PitchContour(np.full(frames, 200.0)))
    assert low.frames == high.frames == frames
    assert not np.array_equal(low.mel.values, high.mel.values)
    np.testing.assert_allclose(high.pitch.f0, 200.0)


def test_synthesize_with_vocoder(toy, stage2):
    out = tr.synthesize(toy[0][0].text, 0, stage2.checkpoint, vocoder=True, vocoder_iterations=2)
    assert out.wave.samples.size == out.frames * 256


def test_synthesis_needs_stage2_checkpoint(toy, stage1):
    with pytest.raises(CheckpointError):
        tr.synthesize(toy[0][0].text, 0, stage1[0].checkpoint)


def test_resample_contour():
    c = PitchContour(np.array([100.0, 0.0, 400.0]), np.array([True, False, True]))
    out = tr.resample_contour(c, 5)
    np.testing.assert_allclose(out.f0[[0, 4]], [100.0, 400.0])
    assert out.voiced.tolist() == [True, True, False, True, True]
    assert out.f0[1] == pytest.approx(100.0 * 4 ** 0.25)
    assert tr.resample_contour(c, 3) is c
