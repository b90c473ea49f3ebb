"""Manifests, synthetic corpus generation, batching and checkpoints."""
from .batching import Batch, Utterance, batch_iterate, collate
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import CorpusSpec, generate_toy_corpus, parse_f0
from .manifest import ManifestEntry, load_manifest, require, write_manifest

__all__ = [
    "Batch", "Checkpoint", "CorpusSpec", "ManifestEntry", "Utterance", "batch_iterate", "collate",
    "generate_toy_corpus", "load_checkpoint", "load_manifest", "parse_f0", "require", "save_checkpoint",
    "write_manifest",
]
