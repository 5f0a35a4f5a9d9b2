"""Dataset ingestion, tokenization, span conversion and minibatch partitioning.

Input files are UTF-8 JSON lists. Three record layouts are understood:

* span:       {"id", "question", "passage", "answer_begin", "answer_end"}
              with answer indices referring to tokens of the tokenized passage
* cloze:      {"id", "question", "passage", "candidates": [[int, ...], ...],
              "gold": int} where each candidate is the list of passage token
              positions at which that candidate entity occurs
* generative: {"id", "question", "passage", "answer_text"} -- converted to
              span records via ROUGE-L search before training

A loaded TaskDataset is immutable in spirit: nothing in this module mutates it
after construction, so it can be shared across threads read-only.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .errors import DataError, ParseError
from .metrics import rouge_l

SPAN_JSON = "span-json"
CLOZE_JSON = "cloze-json"
GENERATIVE_JSON = "generative-json"

DEFAULT_MAX_PASSAGE_TOKENS = 1000
DEFAULT_ROUGE_THRESHOLD = 0.5

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# Heuristic lemmatizer: strip the first matching suffix, longest first,
# keeping a stem of at least 4 letters.
_SUFFIXES = ("ing", "es", "ed", "s")
_MIN_STEM = 4


@dataclass(frozen=True)
class Token:
    surface: str
    lower: str
    lemma: str


@dataclass(frozen=True)
class Span:
    begin: int
    end: int


@dataclass(frozen=True)
class Cloze:
    candidates: tuple[tuple[int, ...], ...]
    gold: int


@dataclass(frozen=True)
class FreeText:
    """Unaligned answer text; valid only as input to span conversion."""

    tokens: tuple[Token, ...]


Answer = Union[Span, Cloze, FreeText]


@dataclass
class Sample:
    sample_id: str
    task_id: int
    question: tuple[Token, ...]
    passage: tuple[Token, ...]
    answer: Answer
    weight: float = 1.0

    def answer_token_count(self) -> Optional[int]:
        """Token length of the answer; None for cloze samples."""
        if isinstance(self.answer, Span):
            return self.answer.end - self.answer.begin + 1
        if isinstance(self.answer, FreeText):
            return len(self.answer.tokens)
        return None


@dataclass(frozen=True)
class DatasetStats:
    count: int
    avg_passage_tokens: float
    avg_answer_tokens: Optional[float]


@dataclass(frozen=True)
class Minibatch:
    task_id: int
    indices: tuple[int, ...]


@dataclass
class TaskDataset:
    task_id: int
    samples: list[Sample]
    vocab: dict[str, int] = field(default_factory=dict)
    stats: DatasetStats = DatasetStats(0, 0.0, None)

    def __len__(self) -> int:
        return len(self.samples)


def lemma_of(lower: str) -> str:
    for suffix in _SUFFIXES:
        if lower.endswith(suffix) and len(lower) - len(suffix) >= _MIN_STEM:
            return lower[: -len(suffix)]
    return lower


def make_token(surface: str) -> Token:
    lower = surface.casefold()
    return Token(surface=surface, lower=lower, lemma=lemma_of(lower))


def tokenize(text: str) -> tuple[Token, ...]:
    """Split on whitespace and punctuation boundaries; deterministic."""
    return tuple(make_token(m.group(0)) for m in _TOKEN_RE.finditer(text))


def build_vocab(samples: list[Sample]) -> dict[str, int]:
    """Frequency-ranked map of lower-cased word forms to contiguous ids."""
    counts = Counter()
    for s in samples:
        counts.update(t.lower for t in s.question)
        counts.update(t.lower for t in s.passage)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {word: idx for idx, (word, _) in enumerate(ordered)}


def dataset_stats(samples: list[Sample]) -> DatasetStats:
    """Exact means over the samples; the answer mean skips cloze samples."""
    if not samples:
        return DatasetStats(0, 0.0, None)
    passage_mean = sum(len(s.passage) for s in samples) / len(samples)
    answer_lengths = [
        n for s in samples if (n := s.answer_token_count()) is not None
    ]
    answer_mean = (
        sum(answer_lengths) / len(answer_lengths) if answer_lengths else None
    )
    return DatasetStats(len(samples), passage_mean, answer_mean)


def _require(obj: dict, key: str, kind, sample_id: str, path: str):
    if key not in obj:
        raise ParseError(f"{path}: sample {sample_id!r} missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise ParseError(
            f"{path}: sample {sample_id!r} field {key!r} has wrong type"
        )
    return value


def _parse_span_answer(obj, n_tokens, sample_id, path) -> Span:
    begin = _require(obj, "answer_begin", int, sample_id, path)
    end = _require(obj, "answer_end", int, sample_id, path)
    if begin < 0 or begin > end or end >= n_tokens:
        raise DataError(
            f"sample {sample_id!r}: span ({begin}, {end}) out of range for "
            f"passage of {n_tokens} tokens"
        )
    return Span(begin, end)


def _parse_cloze_answer(obj, n_tokens, sample_id, path) -> Cloze:
    raw = _require(obj, "candidates", list, sample_id, path)
    gold = _require(obj, "gold", int, sample_id, path)
    if not raw:
        raise DataError(f"sample {sample_id!r}: empty candidate list")
    candidates = []
    for ci, occ in enumerate(raw):
        if not isinstance(occ, list) or not occ:
            raise DataError(
                f"sample {sample_id!r}: candidate {ci} has zero occurrences"
            )
        for pos in occ:
            if not isinstance(pos, int) or pos < 0 or pos >= n_tokens:
                raise DataError(
                    f"sample {sample_id!r}: candidate {ci} occurrence {pos} "
                    f"outside passage of {n_tokens} tokens"
                )
        candidates.append(tuple(occ))
    if gold < 0 or gold >= len(candidates):
        raise DataError(f"sample {sample_id!r}: gold index {gold} out of range")
    return Cloze(tuple(candidates), gold)


def _truncate(sample: Sample, limit: int) -> Optional[Sample]:
    """Truncate the passage to ``limit`` tokens.

    Span samples whose answer ends at or beyond the limit are dropped, as are
    cloze samples where any candidate would lose all of its occurrences.
    """
    if len(sample.passage) <= limit:
        return sample
    passage = sample.passage[:limit]
    answer = sample.answer
    if isinstance(answer, Span):
        if answer.end >= limit:
            return None
    elif isinstance(answer, Cloze):
        kept = []
        for occ in answer.candidates:
            occ = tuple(p for p in occ if p < limit)
            if not occ:
                return None
            kept.append(occ)
        answer = Cloze(tuple(kept), answer.gold)
    return replace(sample, passage=passage, answer=answer)


def _load_json_list(path: str):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, list):
        raise ParseError(f"{path}: top level must be a JSON list")
    return data


def load_dataset(
    path: str,
    fmt: str,
    task_id: int = 1,
    max_passage_tokens: int = DEFAULT_MAX_PASSAGE_TOKENS,
) -> TaskDataset:
    """Load and tokenize a span or cloze dataset file."""
    if fmt not in (SPAN_JSON, CLOZE_JSON):
        raise ParseError(f"unknown dataset format {fmt!r}")
    data = _load_json_list(path)
    samples = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: entry {i} is not an object")
        sample_id = str(obj.get("id", i))
        question = tokenize(_require(obj, "question", str, sample_id, path))
        passage = tokenize(_require(obj, "passage", str, sample_id, path))
        if fmt == SPAN_JSON:
            answer = _parse_span_answer(obj, len(passage), sample_id, path)
        else:
            answer = _parse_cloze_answer(obj, len(passage), sample_id, path)
        sample = Sample(sample_id, task_id, question, passage, answer)
        sample = _truncate(sample, max_passage_tokens)
        if sample is not None:
            samples.append(sample)
    return TaskDataset(task_id, samples, build_vocab(samples), dataset_stats(samples))


def load_generative_samples(path: str, task_id: int = 1) -> list[Sample]:
    """Load free-text answer records for span conversion."""
    data = _load_json_list(path)
    samples = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: entry {i} is not an object")
        sample_id = str(obj.get("id", i))
        question = tokenize(_require(obj, "question", str, sample_id, path))
        passage = tokenize(_require(obj, "passage", str, sample_id, path))
        answer = FreeText(tokenize(_require(obj, "answer_text", str, sample_id, path)))
        samples.append(Sample(sample_id, task_id, question, passage, answer))
    return samples


def convert_generative_to_span(
    sample: Sample, rouge_threshold: float = DEFAULT_ROUGE_THRESHOLD
) -> Optional[Sample]:
    """Find the passage span with maximal ROUGE-L against the answer text.

    Comparison is on lower-cased forms. Ties break to the earliest begin and
    then the shortest span. Returns None when the best score is below the
    threshold, which mirrors dropping unalignable samples from training.
    """
    if not isinstance(sample.answer, FreeText):
        raise DataError(
            f"sample {sample.sample_id!r}: expected a free-text answer"
        )
    passage = [t.lower for t in sample.passage]
    answer = [t.lower for t in sample.answer.tokens]
    if not passage:
        raise DataError(f"sample {sample.sample_id!r}: empty passage")
    n, m = len(passage), len(answer)
    best_score, best_span = 0.0, None
    for begin in range(n):
        # Grow the span one token at a time, updating one LCS row per step.
        prev = [0] * (m + 1)
        for end in range(begin, n):
            tok = passage[end]
            cur = [0] * (m + 1)
            for j in range(1, m + 1):
                if tok == answer[j - 1]:
                    cur[j] = prev[j - 1] + 1
                else:
                    cur[j] = max(prev[j], cur[j - 1])
            prev = cur
            lcs = cur[m]
            if lcs == 0 or m == 0:
                continue
            length = end - begin + 1
            precision = lcs / length
            recall = lcs / m
            score = 2 * precision * recall / (precision + recall)
            if score > best_score + 1e-12:
                best_score, best_span = score, Span(begin, end)
    if best_span is None or best_score < rouge_threshold:
        return None
    return replace(sample, answer=best_span)


def make_minibatches(
    ds: TaskDataset, batch_size: int, rng: np.random.Generator
) -> list[Minibatch]:
    """Shuffle sample indices with ``rng`` and chunk into ceil(n/b) batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(ds.samples))
    n_batches = math.ceil(len(ds.samples) / batch_size)
    return [
        Minibatch(ds.task_id, tuple(int(i) for i in order[b * batch_size : (b + 1) * batch_size]))
        for b in range(n_batches)
    ]


# --- tokenized serialization (round-trips bit-exactly) ---

_FORMAT = "mrckit-dataset"
_VERSION = 1


def _answer_to_json(answer: Answer) -> dict:
    if isinstance(answer, Span):
        return {"kind": "span", "begin": answer.begin, "end": answer.end}
    if isinstance(answer, Cloze):
        return {
            "kind": "cloze",
            "candidates": [list(c) for c in answer.candidates],
            "gold": answer.gold,
        }
    return {"kind": "freetext", "tokens": [[t.surface, t.lower, t.lemma] for t in answer.tokens]}


def _answer_from_json(obj: dict) -> Answer:
    kind = obj["kind"]
    if kind == "span":
        return Span(obj["begin"], obj["end"])
    if kind == "cloze":
        return Cloze(tuple(tuple(c) for c in obj["candidates"]), obj["gold"])
    return FreeText(tuple(Token(*triple) for triple in obj["tokens"]))


def save_dataset(ds: TaskDataset, path: str) -> None:
    payload = {
        "format": _FORMAT,
        "version": _VERSION,
        "task_id": ds.task_id,
        "samples": [
            {
                "id": s.sample_id,
                "question": [[t.surface, t.lower, t.lemma] for t in s.question],
                "passage": [[t.surface, t.lower, t.lemma] for t in s.passage],
                "answer": _answer_to_json(s.answer),
                "weight": s.weight,
            }
            for s in ds.samples
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_saved_dataset(path: str) -> TaskDataset:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if payload.get("format") != _FORMAT or payload.get("version") != _VERSION:
        raise ParseError(f"{path}: not a version-{_VERSION} tokenized dataset")
    samples = [
        Sample(
            sample_id=obj["id"],
            task_id=payload["task_id"],
            question=tuple(Token(*t) for t in obj["question"]),
            passage=tuple(Token(*t) for t in obj["passage"]),
            answer=_answer_from_json(obj["answer"]),
            weight=obj.get("weight", 1.0),
        )
        for obj in payload["samples"]
    ]
    return TaskDataset(
        payload["task_id"], samples, build_vocab(samples), dataset_stats(samples)
    )
