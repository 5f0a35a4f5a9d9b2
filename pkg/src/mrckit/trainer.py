"""Training loop tying the scheduler, sample weights and the model together.

Each epoch re-partitions every task into minibatches, builds a batch schedule
for the configured mode (plain shuffle of everything, mixture-ratio, or
weighted loss over the plain shuffle), and applies Adamax updates with a
global-norm gradient clip. A zero-initialized exponential moving average of
the parameters is maintained per optimizer step and used for dev evaluation;
the checkpoint with the best target dev score (F1 for span tasks, accuracy
for cloze) is returned, ties going to the earlier epoch.

All randomness flows from one root seed through per-purpose child streams
(model init; per-task data shuffles; schedule; dropout), so a run is
reproducible bit-exactly and mixture training with alpha=0 consumes exactly
the same stream as single-task training.
"""

from __future__ import annotations

import json
import time
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Cloze, Sample, Span, TaskDataset, make_minibatches
from .errors import ConfigError, NumericError
from .metrics import MetricReport, exact_match, rouge_l, token_f1
from .model import ModelConfig, ReaderModel, build_model_vocab
from .scheduler import schedule_mixture, schedule_simple

MODES = ("none", "mixture", "ced")

# Seed-stream tags: keep stable so runs stay reproducible across versions.
_STREAM_INIT = 0
_STREAM_DATA = 1
_STREAM_SCHEDULE = 2
_STREAM_DROPOUT = 3


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.002
    dropout: float = 0.3
    epochs: int = 50
    mode: str = "none"
    alpha: Optional[float] = None
    seed: int = 0
    ema_decay: float = 0.995
    emb_dim: int = 16
    hidden_dim: int = 16
    steps: int = 5
    enc_layers: int = 1
    vocab_size: int = 50000
    max_span_len: int = 30
    grad_clip: float = 5.0
    deterministic: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "mixture":
            if self.alpha is None or self.alpha < 0:
                raise ConfigError("mixture mode requires alpha >= 0")
        elif self.alpha is not None:
            raise ConfigError(f"alpha is only meaningful in mixture mode, not {self.mode!r}")
        if not 0 < self.lr <= 1:
            raise ConfigError(f"learning rate must be in (0, 1], got {self.lr}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0 <= self.ema_decay <= 1:
            raise ConfigError(f"ema decay must be in [0, 1], got {self.ema_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            emb_dim=self.emb_dim,
            hidden_dim=self.hidden_dim,
            steps=self.steps,
            enc_layers=self.enc_layers,
            dropout=self.dropout,
            dtype="float64" if self.deterministic else "float32",
        )


@dataclass
class AdamaxState:
    m: dict[str, np.ndarray]
    u: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: Mapping[str, Tensor], **kwargs) -> "AdamaxState":
        return cls(
            m={k: np.zeros_like(v.data) for k, v in params.items()},
            u={k: np.zeros_like(v.data) for k, v in params.items()},
            **kwargs,
        )


def adamax_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamaxState,
    lr: float,
) -> AdamaxState:
    """First moment + infinity-norm update with bias-corrected step size."""
    state.t += 1
    bias = 1.0 - state.beta1 ** state.t
    for name, tensor in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.u[name] = np.maximum(state.beta2 * state.u[name], np.abs(g))
        tensor.data = tensor.data - (lr / bias) * state.m[name] / (state.u[name] + state.eps)
    return state


@dataclass
class EmaState:
    shadow: dict[str, np.ndarray]
    decay: float

    @classmethod
    def init(cls, params: Mapping[str, Tensor], decay: float) -> "EmaState":
        return cls({k: np.zeros_like(v.data) for k, v in params.items()}, decay)


def ema_update(ema: EmaState, params: Mapping[str, Tensor]) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * params, after every step."""
    for name, tensor in params.items():
        ema.shadow[name] = ema.decay * ema.shadow[name] + (1.0 - ema.decay) * tensor.data
    return ema


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def evaluate(
    model: ReaderModel,
    samples: Sequence[Sample],
    params_override: Optional[dict[str, np.ndarray]] = None,
    batch_size: int = 32,
    max_span_len: int = 30,
) -> MetricReport:
    """Mean EM/F1/ROUGE-L (span) or accuracy (cloze) over the samples.

    Runs with graph recording off; an override (e.g. the EMA shadow) is
    swapped in and restored, never mutating the live parameters.
    """
    if not samples:
        return MetricReport()
    em_sum = f1_sum = rouge_sum = acc_sum = 0.0
    is_span = isinstance(samples[0].answer, Span)

    def run():
        nonlocal em_sum, f1_sum, rouge_sum, acc_sum
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            trace = model.forward(chunk, train=False)
            if is_span:
                for s, (b, e) in zip(chunk, model.decode_spans(trace, max_span_len)):
                    pred = s.passage[b : e + 1]
                    gold = s.passage[s.answer.begin : s.answer.end + 1]
                    em_sum += exact_match([t.surface for t in pred], [t.surface for t in gold])
                    f1_sum += token_f1([t.surface for t in pred], [t.surface for t in gold])
                    rouge_sum += rouge_l([t.lower for t in pred], [t.lower for t in gold])
            else:
                for s, pred in zip(chunk, model.decode_cloze(trace)):
                    acc_sum += pred == s.answer.gold

    with ag.no_grad():
        if params_override is not None:
            with model.using_parameters(params_override):
                run()
        else:
            run()
    n = len(samples)
    return MetricReport(em_sum / n, f1_sum / n, rouge_sum / n, acc_sum / n, n)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_em: float
    dev_f1: float
    dev_accuracy: float
    lr: float
    wall_ms: float
    aux_dev: dict[int, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    best_epoch: int
    best_metric: float
    best_report: MetricReport
    history: list[EpochLog]
    loss_trajectory: list[float]
    params: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    model: ReaderModel
    vocab: dict[str, int]


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def train(
    target: TaskDataset,
    auxiliaries: Sequence[TaskDataset],
    cfg: TrainConfig,
    dev: TaskDataset,
    dev_aux: Optional[Mapping[int, TaskDataset]] = None,
    vocab: Optional[dict[str, int]] = None,
) -> TrainResult:
    """Run the configured multi-task loop and return the best checkpoint.

    In "ced" mode the loss uses whatever weights the auxiliary samples carry
    (assign them with the weighting module first); the other modes train with
    uniform weight 1. The word vocabulary defaults to all training tasks
    jointly; pass one explicitly to compare runs across task subsets.
    """
    cfg.validate()
    if not target.samples or not dev.samples:
        raise ConfigError("target training and dev datasets must be nonempty")
    datasets = {target.task_id: target}
    for ds in auxiliaries:
        if ds.task_id in datasets:
            raise ConfigError(f"duplicate task id {ds.task_id}")
        datasets[ds.task_id] = ds
    if vocab is None:
        vocab = build_model_vocab([target, *auxiliaries], cfg.vocab_size)

    model = ReaderModel(cfg.model_config(), vocab, _stream(cfg.seed, _STREAM_INIT))
    opt_state = AdamaxState.init(model.params)
    ema = EmaState.init(model.params, cfg.ema_decay)

    history: list[EpochLog] = []
    trajectory: list[float] = []
    best_metric = -1.0
    best_epoch = 0
    best_report = MetricReport()
    best_params = model.parameter_arrays()
    best_ema = {k: v.copy() for k, v in ema.shadow.items()}
    dev_is_span = isinstance(dev.samples[0].answer, Span)

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        batches = {
            task_id: make_minibatches(ds, cfg.batch_size, _stream(cfg.seed, _STREAM_DATA, epoch, task_id))
            for task_id, ds in datasets.items()
        }
        counts = {task_id: len(mbs) for task_id, mbs in batches.items()}
        sched_rng = _stream(cfg.seed, _STREAM_SCHEDULE, epoch)
        if cfg.mode == "mixture":
            schedule = schedule_mixture(counts, cfg.alpha, sched_rng, epoch=epoch, seed=cfg.seed)
        else:
            schedule = schedule_simple(counts, sched_rng, epoch=epoch, seed=cfg.seed)
        drop_rng = _stream(cfg.seed, _STREAM_DROPOUT, epoch)

        loss_sum = 0.0
        for position, (task_id, batch_index) in enumerate(schedule.entries):
            ds = datasets[task_id]
            chunk = [ds.samples[i] for i in batches[task_id][batch_index].indices]
            encoded = model.encode_batch(chunk)
            if cfg.mode != "ced":
                encoded.weights = np.ones_like(encoded.weights)
            try:
                loss_value, grads, _ = model.gradients(encoded, train=True, rng=drop_rng)
            except NumericError as exc:
                raise NumericError(
                    f"diverged at epoch {epoch}, schedule position {position} "
                    f"(task {task_id}, batch {batch_index}): {exc}"
                ) from exc
            grads = clip_gradients(grads, cfg.grad_clip)
            adamax_step(model.params, grads, opt_state, cfg.lr)
            ema_update(ema, model.params)
            loss_sum += loss_value
            trajectory.append(loss_value)

        report = evaluate(model, dev.samples, ema.shadow, cfg.batch_size, cfg.max_span_len)
        aux_reports = {}
        if dev_aux:
            for task_id, aux_dev_ds in sorted(dev_aux.items()):
                aux_reports[task_id] = asdict(
                    evaluate(model, aux_dev_ds.samples, ema.shadow, cfg.batch_size, cfg.max_span_len)
                )
        metric = report.f1 if dev_is_span else report.accuracy
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_report = report
            best_params = model.parameter_arrays()
            best_ema = {k: v.copy() for k, v in ema.shadow.items()}
        history.append(
            EpochLog(
                epoch=epoch,
                train_loss=loss_sum / max(1, len(schedule.entries)),
                dev_em=report.em,
                dev_f1=report.f1,
                dev_accuracy=report.accuracy,
                lr=cfg.lr,
                wall_ms=(time.perf_counter() - started) * 1000.0,
                aux_dev=aux_reports,
            )
        )

    return TrainResult(
        best_epoch=best_epoch,
        best_metric=best_metric,
        best_report=best_report,
        history=history,
        loss_trajectory=trajectory,
        params=best_params,
        ema=best_ema,
        model=model,
        vocab=vocab,
    )
