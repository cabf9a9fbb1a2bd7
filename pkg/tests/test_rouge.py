import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_lcs
from superae.rouge import (METRICS, RougeScore, corpus_rouge, format_table, lcs_length, rouge_l, rouge_n,
                           score_pair, tokenize)

seqs = st.lists(st.sampled_from("abcd"), max_size=10)


def test_rouge_n_examples():
    assert rouge_n(list("abc"), list("abc"), 1) == RougeScore(1.0, 1.0, 1.0)
    s = rouge_n(list("abc"), list("abd"), 1)
    assert s.precision == pytest.approx(2 / 3) and s.recall == pytest.approx(2 / 3) and s.f1 == pytest.approx(2 / 3)
    assert rouge_n(list("abc"), list("xyz"), 1).f1 == 0.0


def test_rouge_n_clips_repeated_ngrams():
    s = rouge_n(list("aaaa"), list("ab"), 1)
    assert s.precision == pytest.approx(0.25) and s.recall == pytest.approx(0.5)


def test_rouge_n_empty_ngram_sets_and_bad_n():
    assert rouge_n(["a"], ["a"], 2) == RougeScore(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 0)


def test_lcs_examples():
    assert lcs_length("abcde", "ace") == 3
    assert lcs_length("abc", "abc") == 3
    assert lcs_length("", "abc") == 0 and lcs_length("abc", "") == 0


def test_lcs_matches_brute_force_on_random_pairs():
    rng = random.Random(0)
    for _ in range(300):
        a = [rng.choice("abc") for _ in range(rng.randint(0, 10))]
        b = [rng.choice("abc") for _ in range(rng.randint(0, 10))]
        assert lcs_length(a, b) == brute_force_lcs(a, b)


def test_rouge_l_examples():
    s = rouge_l(list("ace"), list("abcde"))
    assert (s.precision, s.recall, s.f1) == (1.0, 0.6, 0.75)
    assert rouge_l(list("xy"), list("xy")).f1 == 1.0
    assert rouge_l([], list("abc")).f1 == 0.0


@given(seqs)
def test_rouge_n_self_is_one(x):
    for n in (1, 2):
        if len(x) >= n:
            assert rouge_n(x, x, n).f1 == pytest.approx(1.0)


@given(seqs, seqs)
def test_swapping_arguments_swaps_precision_and_recall(a, b):
    for m, s in score_pair(a, b).items():
        t = score_pair(b, a)[m]
        assert s.precision == t.recall and s.recall == t.precision
        assert s.f1 == pytest.approx(t.f1)
        assert 0.0 <= s.f1 <= 1.0


def test_corpus_rouge_examples():
    single = corpus_rouge([(list("abc"), list("abd"))])
    assert single == score_pair(list("abc"), list("abd"))
    mixed = corpus_rouge([(list("ab"), list("ab")), (list("x"), list("y"))])
    assert mixed["rouge-l"].f1 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        corpus_rouge([])


def test_corpus_rouge_permutation_invariant():
    rng = random.Random(1)
    pairs = [([rng.choice("abcd") for _ in range(5)], [rng.choice("abcd") for _ in range(4)]) for _ in range(20)]
    shuffled = pairs[:]
    rng.shuffle(shuffled)
    a, b = corpus_rouge(pairs), corpus_rouge(shuffled)
    for m in METRICS:
        assert a[m].f1 == pytest.approx(b[m].f1, abs=1e-12)


def test_tokenize_units():
    assert tokenize("今天 好") == ["今", "天", "好"]
    assert tokenize("the cat", "whitespace") == ["the", "cat"]
    with pytest.raises(ValueError):
        tokenize("x", "word")


def test_format_table_lists_every_metric():
    table = format_table(corpus_rouge([(list("ab"), list("ab"))]))
    for m in METRICS:
        assert m.upper() in table
    assert "1.0000" in table


@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
def test_count_form_agrees_with_harmonic_mean(overlap, extra_c, extra_r):
    s = RougeScore.from_counts(overlap, overlap + extra_c, overlap + extra_r)
    assert s.f1 == pytest.approx(RougeScore.from_pr(s.precision, s.recall).f1, abs=1e-12)
