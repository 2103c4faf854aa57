"""Deterministic synthetic accented-speech corpus.

Each transcript character owns a fixed two-sinusoid waveform template; an
accent shifts every template's fundamental along the symbol frequency grid
(so at separation 1.0 a symbol under accent a sounds exactly like the
symbol a slots higher under accent 0) and adds a speaker-trait carrier
tone in a separate band. Both effects scale with `separation`, so
separation 0 makes accents statistically indistinguishable. Word
boundaries are silence.

Transcripts come from a seeded sparse character-trigram process, which
keeps the induced word inventory small enough for a word n-gram model to
learn.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

MANIFEST_NAME = "manifest.tsv"
SIGNAL_DIR = "signals"
_TRIGRAM_BRANCH = 2
_MIN_WORD, _MAX_WORD = 2, 5
_MIN_WORDS, _MAX_WORDS = 2, 4


@dataclass
class SynthSpec:
    """Knobs of the generator; corpus content is a pure function of these."""

    n_utterances: int = 200
    n_accents: int = 4
    alphabet: str = "abcdefghijkl"
    samples_per_symbol: int = 16
    separation: float = 1.0
    noise_std: float = 0.01
    seed: int = 0
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.n_accents < 2:
            raise ConfigError(f"need at least 2 accents, got {self.n_accents}")
        if self.separation < 0:
            raise ConfigError(f"separation must be >= 0, got {self.separation}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if len(set(self.alphabet)) != len(self.alphabet) or " " in self.alphabet:
            raise ConfigError("alphabet must be unique characters without the space")


@dataclass
class Utterance:
    id: str
    signal: np.ndarray | None
    transcript: str
    accent: int | None
    split: str = "train"


class _CharTrigram:
    """Sparse seeded trigram process over the alphabet: each two-character
    context allows only a few successors."""

    def __init__(self, alphabet: str, rng):
        self.alphabet = alphabet
        chars = list(alphabet)
        self.table = {}
        pad = "^"
        for c1 in [pad] + chars:
            for c2 in [pad] + chars:
                nxt = rng.choice(len(chars), size=min(_TRIGRAM_BRANCH, len(chars)), replace=False)
                weights = rng.dirichlet(np.ones(len(nxt)) * 2.0)
                self.table[(c1, c2)] = ([chars[i] for i in nxt], weights)

    def sample_word(self, rng) -> str:
        word = ""
        c1 = c2 = "^"
        while True:
            options, weights = self.table[(c1, c2)]
            word += options[rng.choice(len(options), p=weights)]
            if len(word) >= _MAX_WORD:
                return word
            if len(word) >= _MIN_WORD and rng.random() < 0.5:
                return word
            c1, c2 = c2, word[-1]


def _frequencies(spec: SynthSpec):
    """Per-(symbol, accent) fundamental grid plus per-accent carrier band."""
    n_sym = len(spec.alphabet)
    f0 = 0.05
    span = max(n_sym - 1 + spec.separation * (spec.n_accents - 1), 1.0)
    df = (0.19 - f0) / span
    return f0, df


def symbol_wave(spec: SynthSpec, symbol_index: int, accent: int) -> np.ndarray:
    """Noise-free template for one symbol under one accent."""
    f0, df = _frequencies(spec)
    freq = f0 + df * (symbol_index + spec.separation * accent)
    n = np.arange(spec.samples_per_symbol, dtype=np.float64)
    return np.sin(2 * np.pi * freq * n) + 0.4 * np.sin(2 * np.pi * 2 * freq * n)


def render_signal(spec: SynthSpec, transcript: str, accent: int, rng) -> np.ndarray:
    sps = spec.samples_per_symbol
    total = len(transcript) * sps
    signal = np.zeros(total, dtype=np.float64)
    for pos, ch in enumerate(transcript):
        if ch == " ":
            continue
        idx = spec.alphabet.index(ch)
        signal[pos * sps : (pos + 1) * sps] = symbol_wave(spec, idx, accent)
    carrier_freq = 0.40 + 0.08 * accent / max(spec.n_accents - 1, 1)
    carrier_amp = 0.35 * min(spec.separation, 1.0)
    n = np.arange(total, dtype=np.float64)
    signal += carrier_amp * np.sin(2 * np.pi * carrier_freq * n)
    if spec.noise_std > 0:
        signal += rng.normal(0.0, spec.noise_std, size=total)
    return signal.astype(np.float32)


def _split_ids(ids, train_fraction: float):
    """Rank ids by a stable hash; the first fraction (exact count) trains."""
    ranked = sorted(ids, key=lambda u: hashlib.sha1(u.encode()).hexdigest())
    n_train = int(round(train_fraction * len(ranked)))
    return set(ranked[:n_train])


def generate_corpus(spec: SynthSpec, out_dir) -> list[Utterance]:
    """Write signal files and the manifest; fully reproducible from the spec."""
    rng = np.random.default_rng(spec.seed)
    trigram = _CharTrigram(spec.alphabet, rng)
    os.makedirs(os.path.join(out_dir, SIGNAL_DIR), exist_ok=True)

    utterances = []
    for i in range(spec.n_utterances):
        uid = f"utt{i:05d}"
        accent = i % spec.n_accents
        n_words = int(rng.integers(_MIN_WORDS, _MAX_WORDS + 1))
        transcript = " ".join(trigram.sample_word(rng) for _ in range(n_words))
        signal = render_signal(spec, transcript, accent, rng)
        utterances.append(Utterance(uid, signal, transcript, accent))

    train_ids = _split_ids([u.id for u in utterances], spec.train_fraction)
    lines = []
    for u in utterances:
        u.split = "train" if u.id in train_ids else "test"
        rel = f"{SIGNAL_DIR}/{u.id}.f32"
        u.signal.astype("<f4").tofile(os.path.join(out_dir, rel))
        accent_field = "-" if u.accent is None else str(u.accent)
        lines.append(f"{u.id}\t{rel}\t{u.transcript}\t{accent_field}\t{u.split}")
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return utterances


def load_manifest(path, load_signals: bool = True) -> list[Utterance]:
    """Read a manifest; `-` in the accent column means no label. Signal
    paths resolve relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    utterances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
            uid, rel, transcript, accent_s, split = parts
            if not transcript:
                raise DataError(f"{path}:{lineno}: empty transcript")
            if accent_s == "-":
                accent = None
            else:
                try:
                    accent = int(accent_s)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad accent field {accent_s!r}") from None
            signal = None
            if load_signals:
                signal = np.fromfile(os.path.join(base, rel), dtype="<f4")
            utterances.append(Utterance(uid, signal, transcript, accent, split))
    return utterances


def split_dataset(utterances, split: str) -> list[Utterance]:
    return [u for u in utterances if u.split == split]
