import functools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrckit.metrics import (
    MetricReport,
    exact_match,
    lcs_length,
    normalize_tokens,
    rouge_l,
    token_f1,
)

token_lists = st.lists(st.sampled_from("a b c d e the .".split()), max_size=8)


class TestExactMatch:
    def test_identity(self):
        assert exact_match(["the", "cat"], ["the", "cat"]) == 1

    def test_normalization_rules(self):
        # articles and punctuation-only tokens are dropped, case is folded
        assert exact_match(["The", "cat", "."], ["cat"]) == 1

    def test_mismatch(self):
        assert exact_match(["cat"], ["dog"]) == 0

    def test_normalize_tokens(self):
        assert normalize_tokens(["An", "Apple", ",", "..."]) == ["apple"]


class TestTokenF1:
    def test_partial_overlap(self):
        # overlap 2 of 3 on both sides -> P = R = 2/3
        assert token_f1("x y z".split(), "y z w".split()) == pytest.approx(2 / 3)

    def test_identity(self):
        assert token_f1(["x"], ["x"]) == 1.0

    def test_empty_rules(self):
        assert token_f1([], ["z"]) == 0.0
        assert token_f1(["z"], []) == 0.0
        assert token_f1([], []) == 1.0

    def test_article_only_sides_count_as_empty(self):
        # articles vanish under normalization, so these are both empty
        assert token_f1(["the"], ["an"]) == 1.0

    def test_multiset_counting(self):
        # repeated tokens only match as many times as they occur
        assert token_f1(["z", "z"], ["z"]) == pytest.approx(2 / 3)

    @given(token_lists, token_lists)
    def test_symmetric_and_bounded(self, a, b):
        assert token_f1(a, b) == pytest.approx(token_f1(b, a))
        assert 0.0 <= token_f1(a, b) <= 1.0


class TestRougeL:
    def test_example(self):
        # LCS("a b c d", "a c d") = 3 -> P = 3/4, R = 1, F = 6/7
        assert rouge_l("a b c d".split(), "a c d".split()) == pytest.approx(6 / 7)
        assert rouge_l("a b c d".split(), "a c d".split()) == pytest.approx(0.857, abs=5e-4)

    def test_identity(self):
        assert rouge_l(["x"], ["x"]) == 1.0

    def test_disjoint(self):
        assert rouge_l(["a"], ["b"]) == 0.0

    def test_empty(self):
        assert rouge_l([], ["a"]) == 0.0
        assert rouge_l(["a"], []) == 0.0

    @given(token_lists, token_lists)
    def test_bounded(self, a, b):
        assert 0.0 <= rouge_l(a, b) <= 1.0

    @given(st.lists(st.sampled_from("a b c".split()), min_size=1, max_size=8))
    def test_self_is_one(self, a):
        assert rouge_l(a, a) == 1.0


def _lcs_recursive(a, b):
    """Independent LCS oracle (memoized recursion, not the DP in metrics)."""

    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def test_lcs_agrees_with_recursive_oracle():
    rng = np.random.default_rng(2024)
    alphabet = list("abcde")
    for _ in range(500):
        a = [alphabet[i] for i in rng.integers(0, 5, size=rng.integers(0, 13))]
        b = [alphabet[i] for i in rng.integers(0, 5, size=rng.integers(0, 13))]
        assert lcs_length(a, b) == _lcs_recursive(tuple(a), tuple(b))


def test_metric_report_round_trip():
    report = MetricReport(em=0.5, f1=0.625, rouge_l=0.75, accuracy=0.0, n=8)
    assert MetricReport.from_json(report.to_json()) == report
