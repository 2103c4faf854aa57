import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accentctc import autodiff as ad
from accentctc.autodiff import Tensor, grad_check
from accentctc.ctc import (
    Hypothesis,
    Vocabulary,
    beam_decode,
    collapse,
    ctc_brute_force,
    ctc_loss,
    greedy_decode,
    min_frames,
)
from accentctc.errors import ConfigError, DataError
from accentctc.ngram import train_lm

from oracles import exhaustive_best_string, fusion_score, random_log_probs

ABC = Vocabulary(["-", "a", "b", "c"], word_boundary=None)


def peaked_log_probs(rng, frames, vocab):
    peaks = rng.integers(0, vocab, size=frames)
    mass = rng.uniform(0.85, 0.98, size=frames)
    p = np.zeros((frames, vocab))
    for t in range(frames):
        p[t] = (1 - mass[t]) / (vocab - 1)
        p[t, peaks[t]] = mass[t]
    return np.log(p)


# -- vocabulary -----------------------------------------------------------------

def test_default_vocabulary_is_28_symbols_with_blank_and_space():
    v = Vocabulary.default()
    assert v.size == 28
    assert v.blank_index == 0
    assert v.word_boundary == " "
    assert v.encode("ab c") == [1, 2, 27, 3]
    assert v.decode([3, 1, 20]) == "cat"


def test_vocabulary_rejects_duplicates_and_unknown_chars():
    with pytest.raises(ConfigError):
        Vocabulary(["-", "a", "a"])
    with pytest.raises(DataError):
        ABC.encode("xyz")


# -- collapse ---------------------------------------------------------------------

def test_collapse_examples():
    assert ABC.decode(collapse(ABC.encode("aa-b"))) == "ab"
    assert ABC.decode(collapse(ABC.encode("a-a"))) == "aa"
    assert collapse(ABC.encode("----")) == []


@settings(max_examples=100)
@given(st.text(alphabet="abc", max_size=12))
def test_collapse_idempotent_on_repeat_free_text(text):
    squeezed = "".join(ch for ch, prev in zip(text, [None] + list(text)) if ch != prev)
    ids = ABC.encode(squeezed)
    assert collapse(ids) == ids


# -- ctc loss ----------------------------------------------------------------------

def test_ctc_single_frame_single_path():
    lp = np.log(np.array([[0.4, 0.6]]))
    assert ctc_loss(Tensor(lp), [1]).item() == pytest.approx(-math.log(0.6), abs=1e-9)


def test_ctc_two_frame_uniform_sums_three_paths():
    lp = np.log(np.full((2, 2), 0.5))
    assert ctc_loss(Tensor(lp), [1]).item() == pytest.approx(-math.log(0.75), abs=1e-9)


def test_ctc_repeat_needs_blank_separator():
    lp = np.log(np.full((2, 2), 0.5))
    assert ctc_loss(Tensor(lp), [1, 1]).item() == math.inf
    assert min_frames([1, 1]) == 3


def test_ctc_loss_nonnegative_and_peaked_path_approaches_zero():
    rng = np.random.default_rng(0)
    for _ in range(20):
        lp = random_log_probs(rng, 5, 3)
        target = [1, 2]
        val = ctc_loss(Tensor(lp), target).item()
        assert val >= 0
    sharp = np.full((3, 3), -50.0)
    for t, s in enumerate([1, 0, 2]):
        sharp[t, s] = 0.0
    sharp = sharp - np.log(np.exp(sharp).sum(1, keepdims=True))
    assert ctc_loss(Tensor(sharp), [1, 2]).item() < 1e-6


def test_ctc_matches_brute_force_on_200_instances():
    checked_infeasible = 0
    for i in range(200):
        rng = np.random.default_rng(10_000 + i)
        frames = int(rng.integers(1, 7))
        vocab = int(rng.integers(2, 5))
        lp = random_log_probs(rng, frames, vocab)
        target = [int(x) for x in rng.integers(1, vocab, size=int(rng.integers(0, 4)))]
        dp = ctc_loss(Tensor(lp), target).item()
        brute = ctc_brute_force(lp, target)
        if math.isinf(brute):
            assert math.isinf(dp)
            checked_infeasible += 1
        else:
            assert dp == pytest.approx(brute, abs=1e-9)
    assert checked_infeasible > 0


def test_ctc_empty_target_is_all_blank_mass():
    lp = np.log(np.array([[0.9, 0.1], [0.8, 0.2]]))
    assert ctc_loss(Tensor(lp), []).item() == pytest.approx(-math.log(0.72), abs=1e-9)
    assert ctc_brute_force(lp, []) == pytest.approx(-math.log(0.72), abs=1e-9)


def test_ctc_loss_never_nan_in_log_space():
    lp = np.full((4, 3), -np.inf)
    lp[:, 1] = 0.0  # all mass on symbol 1 every frame
    val = ctc_loss(Tensor(lp), [1]).item()
    assert not math.isnan(val)
    assert val == pytest.approx(0.0)
    impossible = ctc_loss(Tensor(lp), [2]).item()
    assert impossible == math.inf and not math.isnan(impossible)


def test_ctc_gradient_matches_finite_differences():
    for trial in range(20):
        rng = np.random.default_rng(20_000 + trial)
        logits = rng.normal(size=(4, 3))
        target = [int(x) for x in rng.integers(1, 3, size=2)]
        if min_frames(target) > 4:
            continue

        def f(t):
            return ctc_loss(ad.log_softmax(t, axis=-1), target)

        assert grad_check(f, Tensor(logits)) < 1e-4


def test_ctc_brute_force_refuses_large_instances():
    with pytest.raises(ValueError):
        ctc_brute_force(np.zeros((30, 4)), [1])


def test_ctc_rejects_bad_targets():
    lp = np.log(np.full((3, 3), 1 / 3))
    with pytest.raises(DataError):
        ctc_loss(Tensor(lp), [0])  # blank cannot appear in a target
    with pytest.raises(DataError):
        ctc_loss(Tensor(lp), [7])


# -- greedy decoding -----------------------------------------------------------------

def test_greedy_decodes_peaked_spelling():
    lp = np.full((6, 4), -20.0)
    for t, s in enumerate(ABC.encode("-ca-b-")):
        lp[t, s] = 0.0
    assert greedy_decode(lp, ABC) == "cab"


def test_greedy_all_blank_is_empty():
    lp = np.zeros((5, 4))
    lp[:, 0] = 10.0
    assert greedy_decode(lp, ABC) == ""


def test_greedy_equals_beam_one_on_peaked_instances():
    for i in range(100):
        rng = np.random.default_rng(9000 + i)
        frames = int(rng.integers(2, 10))
        lp = peaked_log_probs(rng, frames, 4)
        assert greedy_decode(lp, ABC) == beam_decode(lp, ABC, 1)


# -- beam search ----------------------------------------------------------------------

def test_beam_matches_exhaustive_search_without_lm():
    for i in range(40):
        rng = np.random.default_rng(30_000 + i)
        frames = int(rng.integers(1, 5))
        lp = random_log_probs(rng, frames, 3)
        vocab = Vocabulary(["-", "a", "b"], word_boundary=None)
        best, _ = exhaustive_best_string(lp, vocab)
        assert beam_decode(lp, vocab, beam_size=3**frames + 1) == best


def test_beam_matches_exhaustive_search_with_lm():
    vocab = Vocabulary(["-", "a", " "])
    lm = train_lm([["a", "aa"], ["aa", "a"], ["a"]], order=2)
    for i in range(40):
        rng = np.random.default_rng(40_000 + i)
        frames = int(rng.integers(1, 5))
        lp = random_log_probs(rng, frames, 3)
        best, _ = exhaustive_best_string(lp, vocab, lm=lm, lm_weight=1.3, wip=-0.4)
        assert beam_decode(lp, vocab, beam_size=3**frames + 1, lm=lm,
                           lm_weight=1.3, wip=-0.4) == best


def test_beam_score_at_least_greedy_score():
    # the returned hypothesis never scores worse than the greedy string
    for i in range(50):
        rng = np.random.default_rng(50_000 + i)
        frames = int(rng.integers(2, 6))
        lp = random_log_probs(rng, frames, 3)
        vocab = Vocabulary(["-", "a", "b"], word_boundary=None)
        _, scores = _string_scores(lp, vocab)
        greedy = greedy_decode(lp, vocab)
        chosen = beam_decode(lp, vocab, beam_size=4)
        assert scores[chosen] >= scores[greedy] - 1e-12


def _string_scores(lp, vocab):
    best, _ = exhaustive_best_string(lp, vocab)
    import itertools

    totals = {}
    frames, v = lp.shape
    for path in itertools.product(range(v), repeat=frames):
        key = vocab.decode(collapse(path, vocab.blank_index))
        acoustic = sum(lp[t, s] for t, s in enumerate(path))
        totals[key] = np.logaddexp(totals.get(key, -np.inf), acoustic)
    return best, totals


def test_wip_monotonicity_on_word_count():
    vocab = Vocabulary(["-", "a", "b", " "])
    lm = train_lm([["a", "b"], ["ab", "a"], ["b", "ab"]], order=2)
    rng = np.random.default_rng(77)
    counts = []
    lp = random_log_probs(rng, 6, 4)
    for wip in (0.0, -0.52, -2.0):
        text = beam_decode(lp, vocab, beam_size=4**6, lm=lm, lm_weight=0.5, wip=wip)
        counts.append(len(text.split()))
    assert counts[0] >= counts[1] >= counts[2]


def test_lm_weight_zero_ignores_the_lm():
    vocab = Vocabulary(["-", "a", "b", " "])
    lm_a = train_lm([["a"] * 5], order=2)
    lm_b = train_lm([["b", "b", "ab"]], order=2)
    for i in range(20):
        rng = np.random.default_rng(60_000 + i)
        lp = random_log_probs(rng, 5, 4)
        base = beam_decode(lp, vocab, beam_size=8, lm=None, lm_weight=0.0, wip=0.0)
        assert beam_decode(lp, vocab, beam_size=8, lm=lm_a, lm_weight=0.0, wip=0.0) == base
        assert beam_decode(lp, vocab, beam_size=8, lm=lm_b, lm_weight=0.0, wip=0.0) == base


def test_beam_requires_word_boundary_for_lm():
    lm = train_lm([["a", "b"]], order=2)
    with pytest.raises(ConfigError):
        beam_decode(np.log(np.full((2, 4), 0.25)), ABC, 4, lm=lm, lm_weight=1.0)


def test_beam_rejects_bad_parameters():
    lp = np.log(np.full((2, 4), 0.25))
    with pytest.raises(ConfigError):
        beam_decode(lp, ABC, 0)
    with pytest.raises(ConfigError):
        beam_decode(lp, ABC, 2, lm_weight=-1.0)


def test_hypothesis_score_definition():
    h = Hypothesis(prefix=(1,), log_p_blank=math.log(0.2), log_p_nonblank=math.log(0.3),
                   fusion=-0.1)
    assert h.total() == pytest.approx(math.log(0.5))


def test_fusion_score_skips_empty_words():
    vocab = Vocabulary(["-", "a", " "])
    ids = vocab.encode(" a a")
    assert fusion_score(ids, vocab, None, 0.0, -1.0) == pytest.approx(-1.0)
