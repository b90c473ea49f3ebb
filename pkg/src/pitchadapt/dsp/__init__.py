"""Signal-processing front end: audio I/O, mel features, pitch, text, vocoder."""
from .audio import Waveform, load_wav, save_wav
from .mel import MelConfig, MelSpectrogram, load_mel, mel_filterbank, mel_spectrogram, save_mel
from .pitch import PitchConfig, PitchContour, estimate_pitch
from .text import PhonemeSequence, Vocabulary, load_lexicon, parse_lexicon, text_to_phonemes
from .vocoder import griffin_lim

__all__ = [
    "MelConfig", "MelSpectrogram", "PhonemeSequence", "PitchConfig", "PitchContour", "Vocabulary", "Waveform",
    "estimate_pitch", "griffin_lim", "load_lexicon", "load_mel", "load_wav", "mel_filterbank", "mel_spectrogram",
    "parse_lexicon", "save_mel", "save_wav", "text_to_phonemes",
]
