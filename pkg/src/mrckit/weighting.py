"""Cross-entropy-difference sample weights for auxiliary-task data.

Every auxiliary sample is scored four ways: its question under the target
task's language model and under its own task's model, and its answer length
under both tasks' length histograms. Each score family is min-max normalized
(target-model scores over the union of all auxiliary samples, own-task scores
within the task), the two differences are summed into a single score, and the
negated, re-normalized result becomes the sample's loss weight in [0, 1].
Target-task samples always have weight 1.

Weights are computed once, before training, and frozen.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

from .corpus import Cloze, FreeText, Sample, Span, TaskDataset
from .errors import ConfigError
from .lm import (
    AnswerLengthModel,
    QuestionLanguageModel,
    answer_length_score,
    question_cross_entropy,
)

TARGET_TASK_ID = 1


@dataclass(frozen=True)
class TaskModels:
    question_lm: QuestionLanguageModel
    answer_model: AnswerLengthModel


@dataclass(frozen=True)
class ScoreRow:
    sample_id: str
    task_id: int
    h1q: float
    hkq: float
    h1a: float
    hka: float
    h1q_norm: Optional[float]
    hkq_norm: Optional[float]
    h1a_norm: Optional[float]
    hka_norm: Optional[float]
    ced: Optional[float]
    ced_prime: float


@dataclass
class ScoreTable:
    rows: list[ScoreRow]

    def aux_rows(self) -> list[ScoreRow]:
        return [r for r in self.rows if r.task_id != TARGET_TASK_ID]

    def task_mean_weight(self, task_id: int) -> float:
        weights = [r.ced_prime for r in self.rows if r.task_id == task_id]
        return sum(weights) / len(weights) if weights else float("nan")


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    """(x - min) / (max - min); an all-equal input maps to all zeros."""
    if len(scores) == 0:
        raise ValueError("cannot normalize an empty score list")
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [0.0] * len(scores)
    return [(x - lo) / (hi - lo) for x in scores]


def ced(h1q_norm: float, hkq_norm: float, h1a_norm: float, hka_norm: float) -> float:
    """Cross-entropy difference of the normalized scores; range [-2, 2].

    Low values mean the sample reads like the target task but is atypical
    for its own task, i.e. high importance.
    """
    return (h1q_norm - hkq_norm) + (h1a_norm - hka_norm)


def answer_length(sample: Sample) -> int:
    """Token length of a sample's answer as used for length scoring.

    Cloze candidates are per-token occurrence sets, so their effective
    answer length is 1.
    """
    answer = sample.answer
    if isinstance(answer, Span):
        return answer.end - answer.begin + 1
    if isinstance(answer, FreeText):
        return max(1, len(answer.tokens))
    if isinstance(answer, Cloze):
        return 1
    raise TypeError(f"unknown answer type {type(answer).__name__}")


def question_words(sample: Sample) -> list[str]:
    return [t.lower for t in sample.question]


def assign_weights(
    target: TaskDataset,
    auxiliaries: Sequence[TaskDataset],
    models: dict[int, TaskModels],
) -> ScoreTable:
    """Score every auxiliary sample and write the weights into the samples.

    Target-model scores are normalized over the union of all auxiliary
    samples; own-task scores within each task. The final negated min-max
    also runs over all auxiliary samples jointly, target samples excluded
    (their weight is defined to be 1 regardless).
    """
    for ds in (target, *auxiliaries):
        if ds.task_id not in models:
            raise ConfigError(f"no language/length models for task {ds.task_id}")
    if target.task_id != TARGET_TASK_ID:
        raise ConfigError(f"target dataset must have task id {TARGET_TASK_ID}")

    target_models = models[TARGET_TASK_ID]
    aux_samples: list[tuple[int, Sample]] = [
        (ds.task_id, s) for ds in auxiliaries for s in ds.samples
    ]

    h1q = [
        question_cross_entropy(target_models.question_lm, question_words(s))
        for _, s in aux_samples
    ]
    h1a = [
        answer_length_score(target_models.answer_model, answer_length(s))
        for _, s in aux_samples
    ]
    hkq = [
        question_cross_entropy(models[k].question_lm, question_words(s))
        for k, s in aux_samples
    ]
    hka = [
        answer_length_score(models[k].answer_model, answer_length(s))
        for k, s in aux_samples
    ]

    # Target-model scores normalize over all auxiliary samples jointly.
    h1q_norm = minmax_normalize(h1q) if aux_samples else []
    h1a_norm = minmax_normalize(h1a) if aux_samples else []
    # Own-task scores normalize within each task.
    hkq_norm = [0.0] * len(aux_samples)
    hka_norm = [0.0] * len(aux_samples)
    for ds in auxiliaries:
        idx = [i for i, (k, _) in enumerate(aux_samples) if k == ds.task_id]
        if not idx:
            continue
        for i, v in zip(idx, minmax_normalize([hkq[i] for i in idx])):
            hkq_norm[i] = v
        for i, v in zip(idx, minmax_normalize([hka[i] for i in idx])):
            hka_norm[i] = v

    ceds = [
        ced(h1q_norm[i], hkq_norm[i], h1a_norm[i], hka_norm[i])
        for i in range(len(aux_samples))
    ]
    weights = [1.0 - v for v in minmax_normalize(ceds)] if aux_samples else []

    rows = []
    for s in target.samples:
        s.weight = 1.0
        q_score = question_cross_entropy(target_models.question_lm, question_words(s))
        a_score = answer_length_score(target_models.answer_model, answer_length(s))
        rows.append(
            ScoreRow(
                sample_id=s.sample_id,
                task_id=TARGET_TASK_ID,
                h1q=q_score,
                hkq=q_score,
                h1a=a_score,
                hka=a_score,
                h1q_norm=None,
                hkq_norm=None,
                h1a_norm=None,
                hka_norm=None,
                ced=None,
                ced_prime=1.0,
            )
        )
    for i, (k, s) in enumerate(aux_samples):
        s.weight = weights[i]
        rows.append(
            ScoreRow(
                sample_id=s.sample_id,
                task_id=k,
                h1q=h1q[i],
                hkq=hkq[i],
                h1a=h1a[i],
                hka=hka[i],
                h1q_norm=h1q_norm[i],
                hkq_norm=hkq_norm[i],
                h1a_norm=h1a_norm[i],
                hka_norm=hka_norm[i],
                ced=ceds[i],
                ced_prime=weights[i],
            )
        )
    return ScoreTable(rows)


TSV_HEADER = ("id", "task", "H1Q", "HkQ", "H1A", "HkA", "CED", "CEDprime")


def write_score_tsv(table: ScoreTable, path: str) -> None:
    """Auxiliary-sample scores, 6 decimal places, ordered by (task, id)."""
    rows = sorted(table.aux_rows(), key=lambda r: (r.task_id, r.sample_id))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TSV_HEADER) + "\n")
        for r in rows:
            fields = (
                r.sample_id,
                str(r.task_id),
                f"{r.h1q:.6f}",
                f"{r.hkq:.6f}",
                f"{r.h1a:.6f}",
                f"{r.hka:.6f}",
                f"{r.ced:.6f}",
                f"{r.ced_prime:.6f}",
            )
            fh.write("\t".join(fields) + "\n")
