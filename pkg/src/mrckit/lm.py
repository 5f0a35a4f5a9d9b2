"""Per-task probability models behind the cross-entropy sample scores.

Questions are scored by an interpolated add-k n-gram model over the task's
most frequent words (everything else maps to a single out-of-vocabulary
token). Answers are scored by their token length against a smoothed length
histogram. Both models are immutable after training and scoring is pure, so
samples can be scored in parallel.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

from .errors import ParseError, TrainingError

BOS = "<s>"
OOV = "<oov>"

DEFAULT_ORDER = 3
DEFAULT_ADD_K = 0.1
DEFAULT_VOCAB_SIZE = 10000
LENGTH_SMOOTHING_EXTRA = 5


@dataclass(frozen=True)
class QuestionLanguageModel:
    """Interpolated add-k n-gram model.

    ``counts[o]`` maps an (o+1)-gram to its count and ``context_counts[o]``
    maps the corresponding o-token context to the number of events observed
    after it. The event space is the retained vocabulary plus the OOV token;
    begin-of-sequence padding appears only inside contexts, never as a
    scored event, matching the per-word cross-entropy definition.
    """

    order: int
    add_k: float
    interpolation: tuple[float, ...]
    vocab: frozenset[str]
    counts: tuple[dict[tuple[str, ...], int], ...]
    context_counts: tuple[dict[tuple[str, ...], int], ...]

    @property
    def event_space_size(self) -> int:
        return len(self.vocab) + 1  # words + OOV

    def map_word(self, word: str) -> str:
        return word if word in self.vocab else OOV

    def prob(self, word: str, history: Sequence[str] = ()) -> float:
        """P(word | history) under the interpolated model.

        ``history`` is the raw preceding words (unmapped, unpadded); only the
        most recent order-1 of them matter.
        """
        word = self.map_word(word)
        history = [self.map_word(w) for w in history]
        padded = [BOS] * (self.order - 1) + list(history)
        total = 0.0
        for o in range(1, self.order + 1):
            context = tuple(padded[len(padded) - (o - 1) :]) if o > 1 else ()
            ngram = context + (word,)
            num = self.counts[o - 1].get(ngram, 0) + self.add_k
            den = (
                self.context_counts[o - 1].get(context, 0)
                + self.add_k * self.event_space_size
            )
            total += self.interpolation[o - 1] * (num / den if den > 0 else 0.0)
        return total


@dataclass(frozen=True)
class AnswerLengthModel:
    """Add-one smoothed histogram over answer token lengths 1..max_len."""

    probs: dict[int, float]
    max_len: int


def train_question_lm(
    questions: Sequence[Sequence[str]],
    order: int = DEFAULT_ORDER,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    add_k: float = DEFAULT_ADD_K,
    interpolation: Sequence[float] | None = None,
) -> QuestionLanguageModel:
    """Count n-grams of sizes 1..order over OOV-mapped questions.

    The vocabulary keeps the ``vocab_size`` most frequent words (ties broken
    alphabetically) and every rarer word becomes the OOV token.
    """
    if order < 1:
        raise TrainingError("n-gram order must be >= 1")
    if not questions or all(len(q) == 0 for q in questions):
        raise TrainingError("cannot train a language model on an empty corpus")
    if interpolation is None:
        weights = tuple(1.0 / order for _ in range(order))
    else:
        if len(interpolation) != order or not math.isclose(sum(interpolation), 1.0):
            raise TrainingError("interpolation weights must sum to 1, one per order")
        weights = tuple(float(w) for w in interpolation)

    freq = Counter()
    for q in questions:
        freq.update(q)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = frozenset(w for w, _ in ranked[:vocab_size])

    counts = tuple(Counter() for _ in range(order))
    context_counts = tuple(Counter() for _ in range(order))
    for q in questions:
        mapped = [w if w in vocab else OOV for w in q]
        padded = [BOS] * (order - 1) + mapped
        for i, word in enumerate(mapped):
            pos = i + order - 1  # position of the event in the padded sequence
            for o in range(1, order + 1):
                context = tuple(padded[pos - (o - 1) : pos])
                counts[o - 1][context + (word,)] += 1
                context_counts[o - 1][context] += 1
    return QuestionLanguageModel(
        order=order,
        add_k=add_k,
        interpolation=weights,
        vocab=vocab,
        counts=tuple(dict(c) for c in counts),
        context_counts=tuple(dict(c) for c in context_counts),
    )


def question_cross_entropy(lm: QuestionLanguageModel, question: Sequence[str]) -> float:
    """Mean negative natural log-probability of the question's words."""
    if not question:
        raise ValueError("cannot score an empty question")
    total = 0.0
    for i, word in enumerate(question):
        total -= math.log(lm.prob(word, question[:i]))
    return total / len(question)


def train_answer_length_model(
    lengths: Sequence[int], extra: int = LENGTH_SMOOTHING_EXTRA
) -> AnswerLengthModel:
    """Add-one smoothing over lengths 1..max(observed)+extra."""
    if not lengths:
        raise TrainingError("cannot train a length model without answers")
    if any(n < 1 for n in lengths):
        raise TrainingError("answer lengths must be >= 1")
    max_len = max(lengths) + extra
    counts = Counter(lengths)
    denom = len(lengths) + max_len
    probs = {n: (counts.get(n, 0) + 1) / denom for n in range(1, max_len + 1)}
    return AnswerLengthModel(probs=probs, max_len=max_len)


def answer_length_score(alm: AnswerLengthModel, answer_len: int) -> float:
    """Negative log frequency of the answer length.

    Lengths beyond the smoothed range are clamped to the largest supported
    length so the score stays finite.
    """
    if answer_len < 1:
        raise ValueError("answer length must be >= 1")
    clamped = min(answer_len, alm.max_len)
    return -math.log(alm.probs[clamped])


# --- serialization (versioned JSON count tables) ---

_LM_FORMAT = "mrckit-question-lm"
_ALM_FORMAT = "mrckit-answer-length-model"
_VERSION = 1
_SEP = "\x1f"


def save_question_lm(lm: QuestionLanguageModel, path: str) -> None:
    payload = {
        "format": _LM_FORMAT,
        "version": _VERSION,
        "order": lm.order,
        "add_k": lm.add_k,
        "interpolation": list(lm.interpolation),
        "vocab": sorted(lm.vocab),
        "counts": [
            {_SEP.join(ngram): c for ngram, c in table.items()}
            for table in lm.counts
        ],
        "context_counts": [
            {_SEP.join(ctx): c for ctx, c in table.items()}
            for table in lm.context_counts
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def _split_key(key: str) -> tuple[str, ...]:
    return tuple(key.split(_SEP)) if key else ()


def load_question_lm(path: str) -> QuestionLanguageModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _LM_FORMAT or payload.get("version") != _VERSION:
        raise ParseError(f"{path}: not a version-{_VERSION} question LM file")
    return QuestionLanguageModel(
        order=payload["order"],
        add_k=payload["add_k"],
        interpolation=tuple(payload["interpolation"]),
        vocab=frozenset(payload["vocab"]),
        counts=tuple(
            {_split_key(k): v for k, v in table.items()} for table in payload["counts"]
        ),
        context_counts=tuple(
            {_split_key(k): v for k, v in table.items()}
            for table in payload["context_counts"]
        ),
    )


def save_answer_length_model(alm: AnswerLengthModel, path: str) -> None:
    payload = {
        "format": _ALM_FORMAT,
        "version": _VERSION,
        "max_len": alm.max_len,
        "probs": {str(n): p for n, p in alm.probs.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_answer_length_model(path: str) -> AnswerLengthModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _ALM_FORMAT or payload.get("version") != _VERSION:
        raise ParseError(f"{path}: not a version-{_VERSION} answer length file")
    return AnswerLengthModel(
        probs={int(n): p for n, p in payload["probs"].items()},
        max_len=payload["max_len"],
    )
