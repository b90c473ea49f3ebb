"""Lexicon-based text to phoneme-id conversion with per-character fallback."""
from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EmptyInputError, OutOfVocabularyError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
FALLBACK_CHARS = tuple(string.ascii_lowercase + string.digits + "'")


class Vocabulary:
    """Ordered symbol inventory; specials first, then phonemes, then fallback characters."""

    def __init__(self, symbols):
        self.symbols: list[str] = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")

    @classmethod
    def build(cls, phonemes) -> "Vocabulary":
        syms = list(SPECIALS)
        for p in sorted(set(phonemes)):
            if p not in syms:
                syms.append(p)
        for ch in FALLBACK_CHARS:
            if ch not in syms:
                syms.append(ch)
        return cls(syms)

    @classmethod
    def from_lexicon(cls, lexicon: dict[str, list[str]]) -> "Vocabulary":
        return cls.build(p for phones in lexicon.values() for p in phones)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def id(self, symbol: str) -> int:
        return self.index.get(symbol, self.index[UNK])

    @property
    def pad_id(self) -> int:
        return self.index[PAD]


@dataclass
class PhonemeSequence:
    ids: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if self.ids.size == 0:
            raise EmptyInputError("phoneme sequence is empty")
        if self.ids.min() < 0 or self.ids.max() >= len(self.vocab):
            raise OutOfVocabularyError(f"id outside vocabulary of size {len(self.vocab)}")

    def __len__(self) -> int:
        return self.ids.size

    def symbols(self) -> list[str]:
        return [self.vocab.symbols[i] for i in self.ids]


def parse_lexicon(text: str) -> dict[str, list[str]]:
    lexicon: dict[str, list[str]] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "\t" in line:
            word, phones = line.split("\t", 1)
        else:
            word, _, phones = line.partition(" ")
        lexicon[word.strip().lower()] = phones.split()
    return lexicon


def load_lexicon(path) -> dict[str, list[str]]:
    return parse_lexicon(Path(path).read_text(encoding="utf-8"))


def format_lexicon(lexicon: dict[str, list[str]]) -> str:
    return "".join(f"{w}\t{' '.join(p)}\n" for w, p in lexicon.items())


def text_to_phonemes(text: str, lexicon: dict[str, list[str]], vocab: Vocabulary | None = None) -> PhonemeSequence:
    vocab = vocab or Vocabulary.from_lexicon(lexicon)
    words = text.lower().split()
    if not words:
        raise EmptyInputError("text is empty after normalization")
    ids: list[int] = []
    for word in words:
        phones = lexicon.get(word)
        if phones is None:
            ids.extend(vocab.id(ch) for ch in word)
        else:
            ids.extend(vocab.id(p) for p in phones)
    return PhonemeSequence(np.array(ids), vocab)
