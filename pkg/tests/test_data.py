import json

import numpy as np
import pytest

from pitchadapt.autodiff.params import ParameterSet
from pitchadapt.data import batching, checkpoint, corpus, manifest
from pitchadapt.dsp.audio import load_wav
from pitchadapt.errors import CheckpointError, ManifestError
from pitchadapt.trainer import LossWeights, total_loss

from .gradient_cases import tiny_batch, tiny_models


# -- manifest ------------------------------------------------------------------------------
def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert manifest.load_manifest(tmp_path / "m.jsonl") == []


def test_manifest_preserves_order(tmp_path):
    recs = [{"id": f"u{i}", "text": "ba", "audio": f"{i}.wav", "speaker": 0, "durations": [3]} for i in (2, 0, 1)]
    _write_lines(tmp_path / "m.jsonl", recs)
    assert [e.id for e in manifest.load_manifest(tmp_path / "m.jsonl")] == ["u2", "u0", "u1"]


def test_manifest_missing_stage_field_named(tmp_path):
    _write_lines(tmp_path / "m.jsonl", [{"id": "a", "text": "ba", "stage": "tts", "audio": "a.wav", "speaker": 0}])
    with pytest.raises(ManifestError, match="durations"):
        manifest.load_manifest(tmp_path / "m.jsonl")


def test_manifest_require_for_stage():
    entry = manifest.ManifestEntry(id="a", text="ba")
    manifest.require(entry, "t2t")
    with pytest.raises(ManifestError, match="audio"):
        manifest.require(entry, "m2m")


@pytest.mark.parametrize("line", ['{"id": "a", "speaker": -1}', '{"id": "a", "bogus": 1}', "not json",
                                  '{"id": "a", "durations": [1, -2]}', '{"text": "x"}'])
def test_manifest_rejects_bad_lines(tmp_path, line):
    (tmp_path / "m.jsonl").write_text(line + "\n")
    with pytest.raises(ManifestError):
        manifest.load_manifest(tmp_path / "m.jsonl")


def test_manifest_duplicate_ids(tmp_path):
    _write_lines(tmp_path / "m.jsonl", [{"id": "a"}, {"id": "a"}])
    with pytest.raises(ManifestError, match="duplicate"):
        manifest.load_manifest(tmp_path / "m.jsonl")


def test_manifest_round_trip(tmp_path):
    recs = [{"id": "a", "text": "ba de", "audio": "a.wav", "speaker": 1, "durations": [2, 3], "split": "train"},
            {"id": "b", "text": "ko", "f0": "b.f0", "stage": "t2t"}]
    _write_lines(tmp_path / "m.jsonl", recs)
    first = manifest.load_manifest(tmp_path / "m.jsonl")
    manifest.write_manifest(first, tmp_path / "n.jsonl")
    assert manifest.load_manifest(tmp_path / "n.jsonl") == first


# -- toy corpus ------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = corpus.CorpusSpec(num_utterances=4, num_speakers=2, seed=7)
    return spec, out, corpus.generate_toy_corpus(spec, out)


def test_corpus_durations_match_samples(small_corpus):
    spec, out, entries = small_corpus
    for e in entries:
        assert len(load_wav(e.path("audio"))) == sum(e.durations) * spec.hop


def test_corpus_f0_files_cover_every_frame(small_corpus):
    _, _, entries = small_corpus
    for e in entries:
        f0 = corpus.parse_f0(e.path("f0").read_text())
        assert f0.size == sum(e.durations) and np.all(f0 > 0)


def test_corpus_is_byte_deterministic(small_corpus, tmp_path):
    spec, out, _ = small_corpus
    corpus.generate_toy_corpus(spec, tmp_path)
    for rel in ("manifest.jsonl", "lexicon.txt", "wavs/utt0003.wav", "f0/utt0001.f0"):
        assert (tmp_path / rel).read_bytes() == (out / rel).read_bytes()


def test_corpus_speakers_and_manifest(small_corpus):
    _, out, entries = small_corpus
    assert [e.speaker for e in entries] == [0, 1, 0, 1]
    loaded = manifest.load_manifest(out / "manifest.jsonl")
    for e in loaded:
        manifest.require(e, "tts")


def test_speaker_ranges_are_ordered():
    lo0, hi0 = corpus.speaker_f0_range(0, 2)
    lo1, hi1 = corpus.speaker_f0_range(1, 2)
    assert lo0 < lo1 and hi0 < hi1


# -- batching ------------------------------------------------------------------------------------
def _items(n):
    rng = np.random.default_rng(0)
    return [batching.Utterance(id=f"u{i}", tokens=rng.integers(0, 5, rng.integers(1, 6)), speaker=i % 2)
            for i in range(n)]


def test_one_batch_when_batch_exceeds_corpus():
    batches = list(batching.batch_iterate(_items(5), 8, seed=0))
    assert len(batches) == 1 and sorted(batches[0].ids) == [f"u{i}" for i in range(5)]


def test_batch_order_is_seeded():
    a = [b.ids for b in batching.batch_iterate(_items(10), 3, seed=4, epoch=2)]
    b = [b.ids for b in batching.batch_iterate(_items(10), 3, seed=4, epoch=2)]
    c = [b.ids for b in batching.batch_iterate(_items(10), 3, seed=5, epoch=2)]
    assert a == b and a != c


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        next(batching.batch_iterate([], 2, seed=0))


def test_collate_pads_and_masks():
    items = [batching.Utterance(id="a", tokens=np.array([1, 2, 3])), batching.Utterance(id="b", tokens=np.array([4]))]
    b = batching.collate(items)
    np.testing.assert_array_equal(b.tokens, [[1, 2, 3], [4, 0, 0]])
    np.testing.assert_array_equal(b.token_mask, [[1, 1, 1], [1, 0, 0]])


def test_losses_ignore_padded_contents():
    params = tiny_models()
    clean = tiny_batch(params)
    poisoned = tiny_batch(params)
    for name, mask in (("mel", poisoned.frame_mask), ("f0", poisoned.frame_mask),
                       ("teacher_latent", poisoned.frame_mask), ("text_latent", poisoned.token_mask)):
        arr = getattr(poisoned, name)
        arr[mask == 0] = 1e4
    poisoned.tokens[poisoned.token_mask == 0] = 6
    base, base_report = total_loss(clean, params, LossWeights())
    dirty, dirty_report = total_loss(poisoned, params, LossWeights())
    assert base.item() == pytest.approx(dirty.item(), rel=1e-6)
    for key in ("syn", "reg", "ada", "dur"):
        assert base_report[key] == pytest.approx(dirty_report[key], rel=1e-6)


# -- checkpoints ------------------------------------------------------------------------------------
def _ckpt():
    rng = np.random.default_rng(0)
    ps = ParameterSet({"enc.w": rng.normal(size=(3, 4)).astype(np.float32), "dec.b": np.arange(3.0)})
    ps.freeze("enc")
    return checkpoint.Checkpoint(ps, {"stage": "t2t", "lr": 1e-3}, step=12, seed=3)


def test_checkpoint_round_trip_bytes(tmp_path):
    ck = _ckpt()
    checkpoint.save_checkpoint(ck, tmp_path / "a.ckpt")
    loaded = checkpoint.load_checkpoint(tmp_path / "a.ckpt")
    checkpoint.save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert loaded.step == 12 and loaded.seed == 3 and loaded.config == ck.config
    assert loaded.params["enc.w"].frozen and not loaded.params["dec.b"].frozen
    assert loaded.params["dec.b"].dtype == np.float64
    assert loaded.params.digest() == ck.params.digest()


def test_checkpoint_corruption_detected(tmp_path):
    raw = bytearray(checkpoint.serialize(_ckpt()))
    raw[len(raw) // 2] ^= 0x01
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint.deserialize(bytes(raw))


def test_checkpoint_bad_magic():
    with pytest.raises(CheckpointError):
        checkpoint.deserialize(b"NOPE" + bytes(40))


def test_checkpoint_without_components():
    stripped = _ckpt().without("enc")
    assert stripped.components() == ["dec"]
