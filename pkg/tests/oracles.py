"""Independent reference implementations used as test oracles. These stay
deliberately dumb: plain numpy, brute-force enumeration, two-pass formulas."""

import itertools

import numpy as np

from accentctc.ctc import collapse


def two_pass_mean_std(x: np.ndarray):
    """Column mean/std with explicit two passes and 1/T normalization."""
    t = x.shape[0]
    mean = x.sum(axis=0) / t
    var = ((x - mean) ** 2).sum(axis=0) / t
    return mean, np.sqrt(var)


def conv_stack_length(length: int, layers) -> int:
    for _, kernel, stride in layers:
        length = (length - kernel) // stride + 1
    return length


def random_log_probs(rng, frames: int, vocab: int) -> np.ndarray:
    logits = rng.normal(size=(frames, vocab))
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def fusion_score(ids, vocab, lm, lm_weight: float, wip: float) -> float:
    """LM + word-insertion terms a collapsed string earns during decoding:
    each non-empty word completed at a boundary symbol contributes, and with
    an LM active the trailing word pays the same charge at finalization."""
    if vocab.word_boundary is None:
        return 0.0
    boundary = vocab.symbols.index(vocab.word_boundary)
    total, word, ctx = 0.0, "", ()
    for i in ids:
        if i == boundary:
            if word:
                if lm is not None:
                    total += lm_weight * lm.logp(word, ctx)
                    tail = lm.order - 1
                    ctx = (ctx + (word,))[-tail:] if tail > 0 else ()
                total += wip
            word = ""
        else:
            word += vocab.symbols[i]
    if lm is not None and word:
        total += lm_weight * lm.logp(word, ctx) + wip
    return total


def exhaustive_best_string(log_probs: np.ndarray, vocab, lm=None,
                           lm_weight: float = 0.0, wip: float = 0.0):
    """Group all alignment paths by their collapsed string, score each
    string by total path probability plus fusion terms, return the best
    (ties break on the lexicographically smaller id tuple)."""
    frames, v = log_probs.shape
    totals = {}
    for path in itertools.product(range(v), repeat=frames):
        key = tuple(collapse(path, vocab.blank_index))
        lp = sum(log_probs[t, s] for t, s in enumerate(path))
        totals[key] = np.logaddexp(totals.get(key, -np.inf), lp)
    scored = {
        key: acoustic + fusion_score(key, vocab, lm, lm_weight, wip)
        for key, acoustic in totals.items()
    }
    best = min(scored.items(), key=lambda kv: (-kv[1], kv[0]))
    return vocab.decode(best[0]), best[1]
