"""Synthetic dataset builders shared across the test suite.

Two families:

* key_value_task: passages are "key value" pair lists, the question is one
  key and the answer is the value token right after it. Learnable by the
  reference model through exact-match features plus attention, which makes
  it the workhorse for training tests.
* text_task: passages/questions/answers drawn from a word distribution with
  controllable vocabulary and answer lengths; used to exercise the language
  model scoring and weighting pipeline.
"""

import numpy as np

from mrckit.corpus import (
    Sample,
    Span,
    TaskDataset,
    build_vocab,
    dataset_stats,
    make_token,
)


def _tokens(words):
    return tuple(make_token(w) for w in words)


def _dataset(task_id, samples):
    return TaskDataset(task_id, samples, build_vocab(samples), dataset_stats(samples))


def key_value_task(
    rng: np.random.Generator,
    n_samples: int,
    n_keys: int = 30,
    n_values: int = 30,
    pairs_range: tuple[int, int] = (4, 6),
    key_prefix: str = "k",
    value_prefix: str = "v",
    question_prefix: str | None = None,
    task_id: int = 1,
    answer_offset: int = 1,
    answer_len: int = 1,
) -> TaskDataset:
    """Lookup task: answer starts ``answer_offset`` after the asked key.

    By default the question repeats the key verbatim, which the model can
    solve through its exact-match features. With ``question_prefix`` set, the
    question uses a synonym token (``q7`` asks for ``k7``) and the key-synonym
    correspondence must be learned from data, making performance data-bound.
    An ``answer_offset`` of 0 makes the (useless) answer the key itself,
    handy for building deliberately harmful auxiliary data.
    """
    samples = []
    for i in range(n_samples):
        n_pairs = int(rng.integers(pairs_range[0], pairs_range[1] + 1))
        keys = rng.choice(n_keys, size=n_pairs, replace=False)
        values = rng.integers(0, n_values, size=n_pairs)
        words = []
        for k, v in zip(keys, values):
            words.extend([f"{key_prefix}{k}", f"{value_prefix}{v}"])
        asked = int(rng.integers(n_pairs))
        begin = 2 * asked + answer_offset
        end = min(begin + answer_len - 1, len(words) - 1)
        q_word = (
            f"{question_prefix}{keys[asked]}"
            if question_prefix is not None
            else f"{key_prefix}{keys[asked]}"
        )
        samples.append(
            Sample(
                sample_id=f"t{task_id}-{i}",
                task_id=task_id,
                question=_tokens([q_word]),
                passage=_tokens(words),
                answer=Span(begin, end),
            )
        )
    return _dataset(task_id, samples)


def text_task(
    rng: np.random.Generator,
    n_samples: int,
    vocab_words: list[str],
    q_len_range: tuple[int, int] = (5, 10),
    a_len_range: tuple[int, int] = (1, 3),
    passage_len: int = 20,
    task_id: int = 1,
) -> TaskDataset:
    """Zipf-ish text with span answers of controllable length."""
    n_words = len(vocab_words)
    probs = 1.0 / np.arange(1, n_words + 1)
    probs /= probs.sum()

    def draw(k):
        return [vocab_words[j] for j in rng.choice(n_words, size=k, p=probs)]

    samples = []
    for i in range(n_samples):
        q_len = int(rng.integers(q_len_range[0], q_len_range[1] + 1))
        a_len = int(rng.integers(a_len_range[0], a_len_range[1] + 1))
        words = draw(passage_len)
        begin = int(rng.integers(0, passage_len - a_len + 1))
        samples.append(
            Sample(
                sample_id=f"t{task_id}-{i}",
                task_id=task_id,
                question=_tokens(draw(q_len)),
                passage=_tokens(words),
                answer=Span(begin, begin + a_len - 1),
            )
        )
    return _dataset(task_id, samples)


def word_list(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]
