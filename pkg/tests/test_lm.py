import math

import numpy as np
import pytest

from mrckit.errors import TrainingError
from mrckit.lm import (
    OOV,
    AnswerLengthModel,
    answer_length_score,
    load_answer_length_model,
    load_question_lm,
    question_cross_entropy,
    save_answer_length_model,
    save_question_lm,
    train_answer_length_model,
    train_question_lm,
)


def random_questions(rng, words, n, max_len=8):
    return [
        [words[i] for i in rng.integers(0, len(words), size=rng.integers(1, max_len + 1))]
        for _ in range(n)
    ]


class TestTrainQuestionLm:
    def test_unsmoothed_unigram_ratios(self):
        lm = train_question_lm([["a", "a", "b"]], order=1, add_k=0.0)
        assert lm.prob("a") == pytest.approx(2 / 3)
        assert lm.prob("b") == pytest.approx(1 / 3)

    def test_context_probabilities_sum_to_one(self):
        rng = np.random.default_rng(3)
        words = [f"w{i}" for i in range(12)]
        lm = train_question_lm(random_questions(rng, words, 30), order=3, vocab_size=8)
        events = sorted(lm.vocab) + [OOV]
        histories = [[], ["w0"], ["w1", "w0"], ["w5", "w5"], ["unseen", "w3"]]
        for history in histories:
            total = sum(lm.prob(w, history) for w in events)
            assert total == pytest.approx(1.0, abs=1e-9)
            assert all(lm.prob(w, history) > 0 for w in events)

    def test_vocab_cap_keeps_top_words_plus_oov(self):
        questions = [[f"w{i}"] * (2 if i < 50 else 1) for i in range(200)]
        lm = train_question_lm(questions, order=2, vocab_size=100)
        assert len(lm.vocab) == 100
        assert lm.event_space_size == 101
        # the doubled words must all have survived the cut
        assert all(f"w{i}" in lm.vocab for i in range(50))

    def test_empty_corpus_rejected(self):
        with pytest.raises(TrainingError):
            train_question_lm([], order=2)
        with pytest.raises(TrainingError):
            train_question_lm([[]], order=2)

    def test_bad_interpolation_rejected(self):
        with pytest.raises(TrainingError):
            train_question_lm([["a"]], order=2, interpolation=[0.9, 0.9])


class TestQuestionCrossEntropy:
    def test_hand_computed_unigram(self):
        lm = train_question_lm([["a", "a", "b"]], order=1, add_k=0.0)
        got = question_cross_entropy(lm, ["a", "b"])
        assert got == pytest.approx(-(math.log(2 / 3) + math.log(1 / 3)) / 2)
        assert got == pytest.approx(0.752, abs=5e-4)

    def test_certain_event_scores_zero(self):
        lm = train_question_lm([["a"], ["a"]], order=1, add_k=0.0)
        assert question_cross_entropy(lm, ["a"]) == pytest.approx(0.0)

    def test_oov_question_is_finite(self):
        lm = train_question_lm([["a", "b"]], order=3, add_k=0.1)
        score = question_cross_entropy(lm, ["zzz", "yyy", "xxx"])
        assert math.isfinite(score) and score > 0

    def test_invariant_to_sample_order(self):
        rng = np.random.default_rng(9)
        words = [f"w{i}" for i in range(6)]
        questions = random_questions(rng, words, 20)
        lm1 = train_question_lm(questions, order=2)
        lm2 = train_question_lm(list(reversed(questions)), order=2)
        probe = ["w0", "w3", "w5", "w1"]
        assert question_cross_entropy(lm1, probe) == pytest.approx(
            question_cross_entropy(lm2, probe), abs=1e-12
        )

    def test_in_distribution_text_scores_lower(self):
        rng = np.random.default_rng(17)
        x_words = [f"x{i}" for i in range(20)]
        y_words = [f"y{i}" for i in range(20)]
        x_train = random_questions(rng, x_words, 60)
        y_train = random_questions(rng, y_words, 60)
        x_held = random_questions(rng, x_words, 30)
        lm_x = train_question_lm(x_train, order=3)
        lm_y = train_question_lm(y_train, order=3)
        mean_x = np.mean([question_cross_entropy(lm_x, q) for q in x_held])
        mean_y = np.mean([question_cross_entropy(lm_y, q) for q in x_held])
        assert mean_x < mean_y

    def test_empty_question_rejected(self):
        lm = train_question_lm([["a"]], order=1)
        with pytest.raises(ValueError):
            question_cross_entropy(lm, [])


class TestAnswerLengthModel:
    def test_probabilities_sum_to_one(self):
        alm = train_answer_length_model([1, 1, 2, 3, 8])
        assert sum(alm.probs.values()) == pytest.approx(1.0, abs=1e-9)
        assert alm.max_len == 13
        assert all(p > 0 for p in alm.probs.values())

    def test_score_is_negative_log(self):
        alm = AnswerLengthModel(probs={1: 0.5, 2: 0.5}, max_len=2)
        assert answer_length_score(alm, 1) == pytest.approx(math.log(2))
        assert answer_length_score(alm, 1) == pytest.approx(0.693, abs=5e-4)

    def test_single_length_scores_near_zero(self):
        alm = train_answer_length_model([3] * 1000)
        assert answer_length_score(alm, 3) < 0.01

    def test_unseen_length_is_finite(self):
        alm = train_answer_length_model([1, 2, 3])
        score = answer_length_score(alm, 40)
        assert math.isfinite(score) and score > 0
        # clamped to the largest smoothed length
        assert score == pytest.approx(answer_length_score(alm, alm.max_len))

    def test_empty_rejected(self):
        with pytest.raises(TrainingError):
            train_answer_length_model([])


def test_question_lm_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    words = [f"w{i}" for i in range(10)]
    lm = train_question_lm(random_questions(rng, words, 25), order=3, vocab_size=6)
    path = tmp_path / "lm.json"
    save_question_lm(lm, str(path))
    again = load_question_lm(str(path))
    assert again.vocab == lm.vocab
    assert again.counts == lm.counts
    probe = ["w0", "w9", "w2"]
    assert question_cross_entropy(again, probe) == question_cross_entropy(lm, probe)


def test_answer_model_serialization_round_trip(tmp_path):
    alm = train_answer_length_model([1, 2, 2, 5])
    path = tmp_path / "alm.json"
    save_answer_length_model(alm, str(path))
    again = load_answer_length_model(str(path))
    assert again == alm
