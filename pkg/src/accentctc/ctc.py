"""CTC loss, label collapsing, and decoding.

The loss runs the usual forward recursion over the blank-extended label
sequence in log space, built from autodiff ops, so its gradient comes out
of the same graph as everything else and can be checked against finite
differences. A brute-force path enumerator serves as the independent
oracle on tiny instances.

Decoding is lexicon-free prefix beam search with optional word-level
n-gram shallow fusion and a per-word insertion penalty.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError

NEG_INF = float("-inf")


class Vocabulary:
    """Ordered output symbols with the CTC blank fixed at index 0."""

    def __init__(self, symbols, word_boundary: str | None = " "):
        self.symbols = list(symbols)
        if len(self.symbols) < 2:
            raise ConfigError("vocabulary needs the blank plus at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigError("vocabulary symbols must be unique")
        self.blank_index = 0
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if word_boundary is not None and word_boundary not in self._index:
            word_boundary = None
        self.word_boundary = word_boundary

    @staticmethod
    def default() -> "Vocabulary":
        """28 symbols: blank, the 26 lowercase letters, and the space that
        delimits words."""
        return Vocabulary(["<b>"] + list("abcdefghijklmnopqrstuvwxyz") + [" "])

    @property
    def size(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise DataError(f"character {exc.args[0]!r} not in vocabulary") from exc

    def decode(self, ids) -> str:
        return "".join(self.symbols[i] for i in ids)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index


def collapse(path, blank: int = 0) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out, prev = [], None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != blank]


def min_frames(target) -> int:
    """Frames needed to emit `target`: one per symbol plus a separating
    blank between adjacent repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extended_labels(target, blank: int) -> list[int]:
    ext = [blank]
    for t in target:
        ext.extend((t, blank))
    return ext


def ctc_loss(log_probs: Tensor, target, blank: int = 0) -> Tensor:
    """Negative log probability of all alignments collapsing to `target`.

    Rows of `log_probs` must already be normalized log distributions.
    Infeasible targets (too long for the frame count) yield a +inf loss
    rather than an exception.
    """
    log_probs = ad.as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc_loss expects [T x V] log probs, got shape {log_probs.shape}")
    frames, vocab = log_probs.shape
    target = list(target)
    if any(not 0 < t < vocab for t in target):
        raise DataError(f"target symbol outside vocabulary of size {vocab} (blank={blank})")
    if min_frames(target) > frames:
        return Tensor(np.array(np.inf, dtype=log_probs.data.dtype))

    ext = _extended_labels(target, blank)
    s = len(ext)
    lp_ext = ad.gather_cols(log_probs, ext)  # [T x S]

    start_mask = np.full(s, NEG_INF, dtype=np.float64)
    start_mask[: min(2, s)] = 0.0
    skip_mask = np.full(s, NEG_INF, dtype=np.float64)
    for i in range(2, s):
        if ext[i] != blank and ext[i] != ext[i - 2]:
            skip_mask[i] = 0.0
    start_const = Tensor(start_mask.astype(log_probs.data.dtype))
    skip_const = Tensor(skip_mask.astype(log_probs.data.dtype))
    pad1 = Tensor(np.full(min(1, s), NEG_INF, dtype=log_probs.data.dtype))
    pad2 = Tensor(np.full(min(2, s), NEG_INF, dtype=log_probs.data.dtype))

    alpha = ad.add(ad.reshape(ad.narrow(lp_ext, 0, 0, 1), (s,)), start_const)
    for t in range(1, frames):
        stay = alpha
        move = ad.concat([pad1, ad.narrow(alpha, 0, 0, s - 1)], axis=0)
        skip = ad.add(ad.concat([pad2, ad.narrow(alpha, 0, 0, max(s - 2, 0))], axis=0), skip_const)
        row = ad.reshape(ad.narrow(lp_ext, 0, t, 1), (s,))
        alpha = ad.add(row, ad.logaddexp(ad.logaddexp(stay, move), skip))

    if s >= 2:
        total = ad.logaddexp(ad.narrow(alpha, 0, s - 1, 1), ad.narrow(alpha, 0, s - 2, 1))
    else:
        total = ad.narrow(alpha, 0, 0, 1)
    return ad.reshape(ad.mul(total, -1.0), ())


def ctc_brute_force(log_probs, target, blank: int = 0, max_paths: int = 1_000_000) -> float:
    """Exact loss by enumerating every alignment; tiny instances only."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    frames, vocab = lp.shape
    if vocab**frames > max_paths:
        raise ValueError(f"refusing to enumerate {vocab}**{frames} paths")
    target = list(target)
    total = NEG_INF
    for path in itertools.product(range(vocab), repeat=frames):
        if collapse(path, blank) == target:
            total = np.logaddexp(total, sum(lp[t, p] for t, p in enumerate(path)))
    return float(-total)


def greedy_decode(log_probs, vocab: Vocabulary) -> str:
    """Per-frame argmax, then collapse."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return vocab.decode(collapse(np.argmax(lp, axis=1).tolist(), vocab.blank_index))


@dataclass
class Hypothesis:
    """One prefix beam entry: collapsed prefix, its blank/non-blank path
    masses, the LM context, and the fused score used for pruning."""

    prefix: tuple = ()
    log_p_blank: float = NEG_INF
    log_p_nonblank: float = NEG_INF
    lm_state: tuple = ()
    partial_word: str = ""
    fusion: float = 0.0
    score: float = NEG_INF

    def total(self) -> float:
        return np.logaddexp(self.log_p_blank, self.log_p_nonblank)


def beam_decode(log_probs, vocab: Vocabulary, beam_size: int,
                lm=None, lm_weight: float = 0.0, wip: float = 0.0) -> str:
    """Prefix beam search with optional shallow fusion.

    Each completed word (emitted at a word-boundary symbol) contributes
    lm_weight * log P_lm(word | context) + wip to its prefix's score; when
    an LM is active the trailing word of a hypothesis pays the same charge
    at finalization, so prefixes cannot dodge the LM by never closing a
    word. Pruning keeps the `beam_size` best prefixes; ties break
    lexicographically for determinism.
    """
    if beam_size < 1:
        raise ConfigError(f"beam_size must be >= 1, got {beam_size}")
    if lm_weight < 0:
        raise ConfigError(f"lm_weight must be >= 0, got {lm_weight}")
    if lm is not None and vocab.word_boundary is None:
        raise ConfigError("LM fusion needs a word-boundary symbol in the vocabulary")
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    frames, v = lp.shape
    if v != vocab.size:
        raise ShapeError(f"log probs have {v} columns, vocabulary has {vocab.size} symbols")
    blank = vocab.blank_index
    boundary = vocab._index[vocab.word_boundary] if vocab.word_boundary is not None else -1

    beams = {(): Hypothesis(prefix=(), log_p_blank=0.0)}
    for t in range(frames):
        row = lp[t]
        nxt: dict[tuple, Hypothesis] = {}

        def bucket(prefix, parent, completed_word=None):
            hyp = nxt.get(prefix)
            if hyp is None:
                if completed_word is None:
                    hyp = Hypothesis(prefix=prefix, lm_state=parent.lm_state,
                                     partial_word=parent.partial_word, fusion=parent.fusion)
                else:
                    fusion, state = parent.fusion, parent.lm_state
                    if completed_word:
                        if lm is not None:
                            fusion += lm_weight * lm.logp(completed_word, state)
                            tail = lm.order - 1
                            state = (state + (completed_word,))[-tail:] if tail > 0 else ()
                        fusion += wip
                    hyp = Hypothesis(prefix=prefix, lm_state=state, partial_word="", fusion=fusion)
                nxt[prefix] = hyp
            return hyp

        for hyp in beams.values():
            p_total = hyp.total()
            # blank keeps the prefix
            stay = bucket(hyp.prefix, hyp)
            stay.log_p_blank = np.logaddexp(stay.log_p_blank, p_total + row[blank])
            # repeating the last symbol also keeps the prefix
            if hyp.prefix:
                stay.log_p_nonblank = np.logaddexp(stay.log_p_nonblank,
                                                   hyp.log_p_nonblank + row[hyp.prefix[-1]])
            for sym in range(v):
                if sym == blank:
                    continue
                mass = hyp.log_p_blank if hyp.prefix and sym == hyp.prefix[-1] else p_total
                if mass == NEG_INF:
                    continue
                if sym == boundary:
                    ext = bucket(hyp.prefix + (sym,), hyp, completed_word=hyp.partial_word)
                else:
                    ext = bucket(hyp.prefix + (sym,), hyp)
                    if ext.partial_word == hyp.partial_word:
                        ext.partial_word = hyp.partial_word + vocab.symbols[sym]
                ext.log_p_nonblank = np.logaddexp(ext.log_p_nonblank, mass + row[sym])

        for hyp in nxt.values():
            hyp.score = hyp.total() + hyp.fusion
        ranked = sorted(nxt.values(), key=lambda h: (-h.score, h.prefix))
        beams = {h.prefix: h for h in ranked[:beam_size]}

    def final_score(h: Hypothesis) -> float:
        score = h.total() + h.fusion
        if lm is not None and h.partial_word:
            score += lm_weight * lm.logp(h.partial_word, h.lm_state) + wip
        return score

    best = min(beams.values(), key=lambda h: (-final_score(h), h.prefix))
    return vocab.decode(best.prefix)
