"""Back-off n-gram language model over words.

Two smoothing schemes: absolute discounting with Katz-style back-off
(default; discount 0.5), and additive add-k, which is easy to verify by
hand and degenerates to MLE at k=0. Either way, every conditional
distribution (seen context plus back-off mass) sums to 1. Models
serialize to a plain-text table of base-10 log probabilities.
"""

from __future__ import annotations

import math
from collections import Counter

from .errors import ConfigError, DataError

UNK = "<unk>"
LOG10 = math.log(10.0)


class NGramLM:
    """Immutable trained model.

    `probs` maps an n-gram tuple to its natural-log conditional probability;
    `backoffs` maps a context tuple to its natural-log back-off weight.
    Scoring uses the longest stored n-gram, otherwise adds the context's
    back-off weight (log 1 = 0 when absent) and retries one order lower.
    """

    def __init__(self, order: int, probs: dict, backoffs: dict, vocab: set):
        self.order = order
        self.probs = probs
        self.backoffs = backoffs
        self.vocab = vocab

    def _map(self, word: str) -> str:
        return word if word in self.vocab else UNK

    def logp(self, word: str, context=()) -> float:
        word = self._map(word)
        if self.order > 1:
            context = tuple(self._map(w) for w in context)[-(self.order - 1):]
        else:
            context = ()
        return self._backoff_logp(word, context)

    def _backoff_logp(self, word: str, context: tuple) -> float:
        gram = context + (word,)
        if gram in self.probs:
            return self.probs[gram]
        if not context:
            return self.probs.get((word,), self.probs[(UNK,)])
        return self.backoffs.get(context, 0.0) + self._backoff_logp(word, context[1:])


def train_lm(corpus, order: int = 4, smoothing: str = "katz",
             add_k: float = 1.0, discount: float = 0.5, extra_vocab=()) -> NGramLM:
    """Train on an iterable of token sequences.

    smoothing='katz': absolute discounting; the discounted mass of each
    context backs off to the next lower order with a weight that restores
    normalization. smoothing='add_k': additive counts, materialized for
    every vocabulary word at every observed context (intended for small,
    hand-checkable corpora); unobserved contexts back off with full weight.
    """
    sentences = [list(s) for s in corpus]
    if not sentences or all(len(s) == 0 for s in sentences):
        raise DataError("cannot train a language model on an empty corpus")
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    if smoothing not in ("katz", "add_k"):
        raise ConfigError(f"unknown smoothing {smoothing!r}")

    counts = [Counter() for _ in range(order + 1)]  # counts[n] holds n-grams
    for sent in sentences:
        for n in range(1, order + 1):
            for i in range(len(sent) - n + 1):
                counts[n][tuple(sent[i : i + n])] += 1

    vocab = {w for (w,) in counts[1]} | set(extra_vocab)
    vocab.add(UNK)
    total_tokens = sum(counts[1].values())
    probs: dict = {}
    backoffs: dict = {}

    if smoothing == "add_k":
        v = len(vocab)
        words = sorted(vocab)
        for w in words:
            probs[(w,)] = _log((counts[1][(w,)] + add_k) / (total_tokens + add_k * v))
        for n in range(2, order + 1):
            for ctx in {g[:-1] for g in counts[n]}:
                ctx_count = counts[n - 1][ctx]
                for w in words:
                    probs[ctx + (w,)] = _log((counts[n][ctx + (w,)] + add_k) / (ctx_count + add_k * v))
        return NGramLM(order, probs, backoffs, vocab)

    d = discount
    n_seen = len(counts[1])
    unseen_unigrams = sorted(w for w in vocab if (w,) not in counts[1])
    for (w,), c in counts[1].items():
        probs[(w,)] = math.log((c - d) / total_tokens)
    if unseen_unigrams:
        share = d * n_seen / total_tokens / len(unseen_unigrams)
        for w in unseen_unigrams:
            probs[(w,)] = _log(share)
    else:
        for (w,), c in counts[1].items():
            probs[(w,)] = math.log(c / total_tokens)

    for n in range(2, order + 1):
        contexts: dict[tuple, list] = {}
        for gram, c in counts[n].items():
            contexts.setdefault(gram[:-1], []).append((gram[-1], c))
        for ctx, items in contexts.items():
            ctx_count = sum(c for _, c in items)
            lower_mass = 0.0
            for w, c in items:
                probs[ctx + (w,)] = math.log((c - d) / ctx_count)
                lower_mass += math.exp(_chain_logp(probs, backoffs, ctx[1:], w))
            leftover = d * len(items) / ctx_count
            denom = 1.0 - lower_mass
            if denom <= 1e-12:
                # every vocabulary word observed in this context: undo the discount
                for w, c in items:
                    probs[ctx + (w,)] = math.log(c / ctx_count)
                backoffs[ctx] = -math.inf
            else:
                backoffs[ctx] = math.log(leftover / denom)
    return NGramLM(order, probs, backoffs, vocab)


def _chain_logp(probs, backoffs, context, word) -> float:
    gram = context + (word,)
    if gram in probs:
        return probs[gram]
    if not context:
        return probs.get((word,), probs[(UNK,)])
    return backoffs.get(context, 0.0) + _chain_logp(probs, backoffs, context[1:], word)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def score(lm: NGramLM, tokens) -> float:
    """Total natural-log probability of the token sequence under back-off."""
    tokens = list(tokens)
    if not tokens:
        raise DataError("cannot score an empty token sequence")
    total = 0.0
    for i, tok in enumerate(tokens):
        ctx = tuple(tokens[max(0, i - lm.order + 1) : i])
        total += lm.logp(tok, ctx)
    return total


def perplexity(lm: NGramLM, corpus) -> float:
    """exp(mean negative log probability per token) over token sequences."""
    total, count = 0.0, 0
    for sent in corpus:
        sent = list(sent)
        if not sent:
            continue
        total += score(lm, sent)
        count += len(sent)
    if count == 0:
        raise DataError("cannot compute perplexity of an empty corpus")
    return math.exp(-total / count)


def save_lm(lm: NGramLM, path):
    """Plain-text table: header `NGLM <order>`, then per-order sections of
    lines `log10prob<TAB>ngram<TAB>log10backoff`, the backoff field present
    only where the n-gram acts as a context of a longer one."""
    lines = [f"NGLM {lm.order}"]
    for n in range(1, lm.order + 1):
        grams = sorted(g for g in lm.probs if len(g) == n)
        lines.append(f"\\{n}-grams: {len(grams)}")
        for gram in grams:
            logp10 = _fmt(lm.probs[gram] / LOG10)
            if n < lm.order and gram in lm.backoffs:
                lines.append(f"{logp10}\t{' '.join(gram)}\t{_fmt(lm.backoffs[gram] / LOG10)}")
            else:
                lines.append(f"{logp10}\t{' '.join(gram)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_lm(path) -> NGramLM:
    probs, backoffs, vocab = {}, {}, set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "NGLM":
            raise DataError(f"{path}: not a recognized LM file")
        order = int(header[1])
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line or line.startswith("\\"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise DataError(f"{path}:{lineno}: malformed LM line")
            gram = tuple(parts[1].split(" "))
            probs[gram] = float(parts[0]) * LOG10
            if len(parts) == 3:
                backoffs[gram] = float(parts[2]) * LOG10
            if len(gram) == 1:
                vocab.add(gram[0])
    return NGramLM(order, probs, backoffs, vocab)


def _fmt(x: float) -> str:
    return f"{x:.6f}" if math.isfinite(x) else "-99.000000"
