import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accentctc.errors import DataError
from accentctc.evaluate import (
    accent_eval,
    edit_distance,
    format_accent_report,
    format_wer_report,
    relative_reduction,
    wer_corpus,
    wer_utterance,
)

words = st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=0, max_size=6)


def test_single_substitution():
    assert edit_distance("a b c".split(), "a x c".split()) == (1, 0, 0)
    assert wer_utterance("a b c", "a x c").wer == pytest.approx(100 / 3)


def test_identical_is_zero():
    assert edit_distance(["a", "b"], ["a", "b"]) == (0, 0, 0)
    assert wer_corpus(["x y", "z"], ["x y", "z"]).wer == 0.0


def test_empty_hypothesis_is_all_deletions():
    assert edit_distance(["a"], []) == (0, 1, 0)
    assert wer_utterance("a", "").wer == 100.0


def test_empty_reference_rejected():
    with pytest.raises(DataError):
        edit_distance([], ["a"])
    with pytest.raises(DataError):
        wer_corpus([""], ["a"])


def test_substitution_preferred_over_insert_plus_delete():
    s, d, i = edit_distance(["a", "b"], ["x", "y"])
    assert (s, d, i) == (2, 0, 0)


def test_corpus_pooling_is_not_mean_of_rates():
    # lengths 1 and 9: pooled (1+0)/(1+9) = 10% vs mean of (100%, 0%) = 50%
    refs = ["q", "a b c d e f g h i"]
    hyps = ["x", "a b c d e f g h i"]
    pooled = wer_corpus(refs, hyps)
    assert pooled.wer == pytest.approx(10.0)
    mean_of_rates = np.mean([wer_utterance(r, h).wer for r, h in zip(refs, hyps)])
    assert mean_of_rates == pytest.approx(50.0)
    assert pooled.wer != mean_of_rates


def test_relative_reduction_reference_values():
    assert round(relative_reduction(7.37, 6.89), 1) == 6.5


def test_scoring_case_folds():
    assert wer_corpus(["Hello World"], ["hello world"]).wer == 0.0


def test_length_mismatch_rejected():
    with pytest.raises(DataError):
        wer_corpus(["a"], ["a", "b"])


def test_wer_invariant_to_retokenization_of_identical_strings():
    assert wer_corpus(["a  b   c"], ["a b c"]).wer == 0.0
    assert wer_corpus([" a b "], ["a b"]).wer == 0.0


def test_swap_exchanges_deletions_and_insertions():
    ref, hyp = "a b c d".split(), "a c".split()
    s1, d1, i1 = edit_distance(ref, hyp)
    s2, d2, i2 = edit_distance(hyp, ref)
    assert (s1, d1, i1) == (0, 2, 0)
    assert (s2, d2, i2) == (0, 0, 2)
    assert s1 == s2 and d1 == i2 and i1 == d2


@settings(max_examples=150)
@given(words.filter(len), words.filter(len), words.filter(len))
def test_triangle_inequality_on_total_edits(a, b, c):
    def total(x, y):
        return sum(edit_distance(x, y))

    assert total(a, c) <= total(a, b) + total(b, c)


@settings(max_examples=100)
@given(words.filter(len), words)
def test_symmetry_of_total_edit_count(a, b):
    if not b:
        assert sum(edit_distance(a, b)) == len(a)
        return
    assert sum(edit_distance(a, b)) == sum(edit_distance(b, a))


def test_accent_eval_all_correct():
    rep = accent_eval([0, 1, 2, 3], [0, 1, 2, 3], 4)
    assert rep.per_class == [100.0] * 4
    assert rep.overall == 100.0


def test_accent_eval_constant_predictor_on_balanced_classes():
    labels = [0, 1, 2, 3] * 25
    rep = accent_eval([2] * 100, labels, 4)
    assert rep.overall == pytest.approx(25.0)
    assert rep.per_class == [0.0, 0.0, 100.0, 0.0]


def test_confusion_trace_identity():
    rng = np.random.default_rng(0)
    labels = [int(x) for x in rng.integers(0, 3, size=60)]
    preds = [int(x) for x in rng.integers(0, 3, size=60)]
    rep = accent_eval(preds, labels, 3)
    assert rep.overall == pytest.approx(100.0 * np.trace(rep.confusion) / rep.confusion.sum())
    for c in range(3):
        assert rep.confusion[c].sum() == labels.count(c)


def test_report_rendering_has_per_class_and_all_columns():
    rep = accent_eval([0, 1, 1, 0], [0, 1, 0, 0], 2)
    text, csv = format_accent_report(rep)
    assert "All" in text.splitlines()[0]
    assert csv.splitlines()[0] == "metric,0,1,All"

    per_accent = {0: wer_corpus(["a b"], ["a b"]), 1: wer_corpus(["c"], ["x"])}
    overall = wer_corpus(["a b", "c"], ["a b", "x"])
    text, csv = format_wer_report(per_accent, overall)
    assert text.splitlines()[0].split()[-1] == "All"
    assert "33.33" in csv  # pooled: 1 error over 3 reference words
