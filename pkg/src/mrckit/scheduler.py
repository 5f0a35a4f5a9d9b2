"""Epoch-level minibatch ordering for multi-task training.

Two strategies: shuffle every task's batches together, or keep all target
batches and mix in a fixed ratio of auxiliary batches drawn without
replacement from the pooled auxiliary tasks (re-drawn every epoch).
Schedules are pure functions of (batch counts, alpha, rng) and can be
precomputed for all epochs up front.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import IO, Iterable, Optional

import numpy as np

from .errors import ScheduleError

TARGET_TASK_ID = 1

# Guards against 0.3 * 10 == 2.9999... style float noise in the floor.
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class BatchSchedule:
    epoch: int
    entries: tuple[tuple[int, int], ...]  # (task_id, batch_index)
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.entries)

    def task_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for task, _ in self.entries:
            counts[task] = counts.get(task, 0) + 1
        return counts


def _validate_counts(batch_counts: Mapping[int, int]) -> None:
    if not batch_counts:
        raise ScheduleError("at least one task is required")
    for task, n in batch_counts.items():
        if n < 0:
            raise ScheduleError(f"task {task} has negative batch count {n}")


def schedule_simple(
    batch_counts: Mapping[int, int],
    rng: np.random.Generator,
    epoch: int = 0,
    seed: Optional[int] = None,
) -> BatchSchedule:
    """Uniform random permutation of every task's batches."""
    _validate_counts(batch_counts)
    pool = [
        (task, i) for task in sorted(batch_counts) for i in range(batch_counts[task])
    ]
    order = rng.permutation(len(pool))
    return BatchSchedule(epoch, tuple(pool[i] for i in order), seed)


def schedule_mixture(
    batch_counts: Mapping[int, int],
    alpha: float,
    rng: np.random.Generator,
    epoch: int = 0,
    seed: Optional[int] = None,
) -> BatchSchedule:
    """All target batches plus floor(alpha * N_1) pooled auxiliary batches.

    Auxiliary picks are uniform without replacement within the epoch; callers
    re-draw each epoch for cross-epoch coverage.
    """
    _validate_counts(batch_counts)
    if TARGET_TASK_ID not in batch_counts:
        raise ScheduleError(f"mixture scheduling requires target task {TARGET_TASK_ID}")
    if alpha < 0:
        raise ScheduleError(f"mixture ratio must be >= 0, got {alpha}")
    n_target = batch_counts[TARGET_TASK_ID]
    n_aux_pick = int(math.floor(alpha * n_target + _FLOOR_EPS))
    aux_pool = [
        (task, i)
        for task in sorted(batch_counts)
        if task != TARGET_TASK_ID
        for i in range(batch_counts[task])
    ]
    if n_aux_pick > len(aux_pool):
        raise ScheduleError(
            f"alpha={alpha} requests {n_aux_pick} auxiliary batches but only "
            f"{len(aux_pool)} exist; lower alpha or sample with replacement"
        )
    entries = [(TARGET_TASK_ID, i) for i in range(n_target)]
    if n_aux_pick > 0:
        picked = rng.choice(len(aux_pool), size=n_aux_pick, replace=False)
        entries.extend(aux_pool[i] for i in picked)
    order = rng.permutation(len(entries))
    return BatchSchedule(epoch, tuple(entries[i] for i in order), seed)


def dump_schedules(schedules: Iterable[BatchSchedule], out: IO[str]) -> None:
    """One line per entry: epoch<TAB>task<TAB>batch."""
    for schedule in schedules:
        for task, batch in schedule.entries:
            out.write(f"{schedule.epoch}\t{task}\t{batch}\n")
