import math

import numpy as np
import pytest

from unbiasedwm.models import (NGramLM, TableLM, Vocabulary, load_model, ngram_lm, read_corpus,
                               toy_ngram, toy_table, uniform_lm, warmup_table)
from unbiasedwm.prob import renyi2_entropy


def test_uniform_lm():
    lm = uniform_lm(Vocabulary.numbered(4))
    np.testing.assert_array_equal(lm.next_distribution([1, 2]), [0.25] * 4)
    assert renyi2_entropy(lm.next_distribution([])) == pytest.approx(math.log(4))
    assert np.array_equal(lm.next_distribution([0]), lm.next_distribution([3, 3, 3]))
    assert lm.spec == "uniform:size=4"


def test_ngram_count_ratio_limit():
    lm = ngram_lm([list("abab")], order=2, alpha=1e-9)
    v = lm.vocab
    assert lm.next_distribution([v.id("a")])[v.id("b")] == pytest.approx(1.0, abs=1e-8)


def test_ngram_smoothing_formula():
    # corpus a b a a ; contexts of length 1: a->b once, b->a once, a->a once
    lm = ngram_lm([list("abaa")], order=2, alpha=0.5)
    a, b = lm.vocab.id("a"), lm.vocab.id("b")
    p = lm.next_distribution([b, a])
    np.testing.assert_allclose(p[[a, b]], [(1 + 0.5) / 3, (1 + 0.5) / 3])
    # empty prefix uses unigram counts: a x3, b x1
    np.testing.assert_allclose(lm.next_distribution([])[[a, b]], [3.5 / 5, 1.5 / 5])


def test_ngram_unseen_context_and_large_alpha():
    v = Vocabulary(["a", "b", "c"])
    lm = NGramLM([[0, 1, 0, 1]], v, order=2, alpha=0.1)
    np.testing.assert_allclose(lm.next_distribution([2]), [1 / 3] * 3)
    big = NGramLM([[0, 1, 0, 1]], v, order=3, alpha=1e12)
    np.testing.assert_allclose(big.next_distribution([0, 1]), [1 / 3] * 3, atol=1e-9)


def test_ngram_validation():
    v = Vocabulary(["a"])
    with pytest.raises(ValueError):
        NGramLM([[0]], v, order=0)
    with pytest.raises(ValueError):
        NGramLM([[0]], v, alpha=0)
    with pytest.raises(ValueError, match="empty corpus"):
        ngram_lm([[]])


def test_toy_models():
    lm = toy_ngram()
    assert lm.vocab_size > 200
    p = lm.next_distribution([0, 1, 2])
    assert abs(p.sum() - 1) < 1e-12 and np.all(p > 0)
    t = toy_table()
    assert t.vocab_size == 3 and t.depth == 3
    assert len(t.rows) == 13
    np.testing.assert_array_equal(warmup_table().next_distribution([]), [0.5, 0.5])


def test_table_lm(tmp_path):
    text = "# comment\n | 0.25 0.75\n0 | 1 0\n1 | 0.5 0.5\n"
    path = tmp_path / "m.table"
    path.write_text(text)
    lm = load_model(f"table:path={path}")
    np.testing.assert_array_equal(lm.next_distribution([0]), [1, 0])
    np.testing.assert_array_equal(lm.next_distribution([]), [0.25, 0.75])
    with pytest.raises(KeyError):
        lm.next_distribution([0, 0])
    assert TableLM.parse(lm.to_text()).rows.keys() == lm.rows.keys()
    for bad in ("| 0.5 0.6\n", "| 0.5 0.5\n0 | 1\n", "0 0.5 0.5\n", "| 1 0\n| 1 0\n", "5 | 1 0\n"):
        with pytest.raises(ValueError):
            TableLM.parse(bad)


def test_load_model_specs(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("a b c\nc b a\n")
    assert read_corpus(corpus) == [["a", "b", "c"], ["c", "b", "a"]]
    lm = load_model(f"ngram:corpus={corpus},order=3,alpha=0.2")
    assert lm.vocab_size == 3 and lm.order == 3
    assert load_model("uniform:size=7").vocab_size == 7
    assert load_model("toy:order=3").order == 3
    assert load_model("warmup").vocab_size == 2
    assert load_model("toy-table").spec == "toy-table"
    for bad in ("nope", "ngram", "table", "uniform:size"):
        with pytest.raises(ValueError):
            load_model(bad)
