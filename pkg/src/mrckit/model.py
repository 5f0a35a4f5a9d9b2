"""Desk-scale reading-comprehension network with exact reverse-mode gradients.

The network reads a (question, passage) pair and produces begin/end
distributions over passage positions (span tasks) or a distribution over
candidate entities (cloze tasks):

* lexicon layer: trainable word embeddings, 3-dim exact-match features
  (surface/lower/lemma membership in the other sequence), and an aligned
  attention feature built from ReLU-projected embeddings; a shared linear
  ReLU reduction and a highway transform finish the layer
* contextual layer: bidirectional GRU (configurable depth) plus highway
* fusion layer: scaled-dot cross attention from passage to question, then
  self attention over the fused representation with the diagonal excluded
  from each softmax row, then a bidirectional GRU and highway into a memory
* span head: a question summary state is refined for T steps by a GRU with
  attention over the memory; every step emits bilinear begin/end softmaxes
  and the final prediction averages the (optionally step-dropped) steps
* cloze head: attention of the summary state over the memory, occurrence
  masses summed per candidate and renormalized

Batches are padded to the longest sequence and masked everywhere softmaxes
or pooling occur, so samples of different lengths share one tape. All
parameters live in an ordered name -> Tensor map; gradients come from the
autograd tape and are checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Cloze, Sample, Span, TaskDataset
from .errors import DataError, NumericError, ParseError, ShapeError

PROB_FLOOR = 1e-12
OOV_ID = 0


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 16
    hidden_dim: int = 16
    steps: int = 5
    enc_layers: int = 1
    dropout: float = 0.0
    dtype: str = "float64"

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def build_model_vocab(datasets: Sequence[TaskDataset], max_size: int = 50000) -> dict[str, int]:
    """Frequency-ranked lower-form vocabulary over all tasks; id 0 is OOV."""
    counts: dict[str, int] = {}
    for ds in datasets:
        for s in ds.samples:
            for t in s.question:
                counts[t.lower] = counts.get(t.lower, 0) + 1
            for t in s.passage:
                counts[t.lower] = counts.get(t.lower, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return {word: i + 1 for i, (word, _) in enumerate(ranked)}


@dataclass
class EncodedBatch:
    kind: str  # "span" or "cloze"
    samples: list[Sample]
    p_ids: np.ndarray  # (B, n) int
    q_ids: np.ndarray  # (B, m) int
    p_mask: np.ndarray  # (B, n) bool
    q_mask: np.ndarray  # (B, m) bool
    p_match: np.ndarray  # (B, n, 3)
    q_match: np.ndarray  # (B, m, 3)
    weights: np.ndarray  # (B,)
    begins: Optional[np.ndarray] = None
    ends: Optional[np.ndarray] = None
    cloze: Optional[list[tuple[tuple[tuple[int, ...], ...], int]]] = None

    @property
    def size(self) -> int:
        return len(self.samples)

    def passage_length(self, i: int) -> int:
        return int(self.p_mask[i].sum())


@dataclass
class ForwardTrace:
    """Intermediate activations kept for inspection and the backward pass."""

    batch: EncodedBatch
    gamma: Tensor  # (B, n, m) passage-to-question lexicon alignment
    delta: Tensor  # (B, m, n) question-to-passage lexicon alignment
    cross_attention: Tensor  # (B, n, m), pre-dropout
    self_attention: Tensor  # (B, n, n), diagonal excluded
    memory: Tensor  # (B, n, 2d)
    summary_attention: Tensor  # (B, m)
    step_begin: list[Tensor] = field(default_factory=list)
    step_end: list[Tensor] = field(default_factory=list)
    retained_steps: list[int] = field(default_factory=list)
    p_begin: Optional[Tensor] = None
    p_end: Optional[Tensor] = None
    cloze_attention: Optional[Tensor] = None  # (B, n) state-over-memory attention
    cloze_probs: Optional[list[Tensor]] = None
    per_sample_loss: Optional[Tensor] = None
    batch_loss: Optional[Tensor] = None


class ReaderModel:
    def __init__(self, config: ModelConfig, vocab: dict[str, int], rng: np.random.Generator):
        self.config = config
        self.vocab = vocab
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._init_params(rng)
        self.num_params = sum(int(np.prod(t.shape)) for t in self.params.values())

    # --- parameters ---

    def _add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value.astype(self.config.np_dtype()), requires_grad=True)

    def _glorot(self, rng, shape, fan_in, fan_out) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def _add_highway(self, rng, site: str, dim: int) -> None:
        self._add_param(f"hw_{site}_wg", self._glorot(rng, (dim, dim), dim, dim))
        self._add_param(f"hw_{site}_bg", np.full(dim, -1.0))
        self._add_param(f"hw_{site}_wt", self._glorot(rng, (dim, dim), dim, dim))
        # ReLU-feeding biases start slightly positive so that all-zero input
        # rows do not park the preactivation exactly on the ReLU kink.
        self._add_param(f"hw_{site}_bt", np.full(dim, 0.01))

    def _add_gru(self, rng, prefix: str, in_dim: int, hidden: int) -> None:
        self._add_param(f"{prefix}_wx", self._glorot(rng, (in_dim, 3 * hidden), in_dim, hidden))
        self._add_param(f"{prefix}_wh", self._glorot(rng, (hidden, 3 * hidden), hidden, hidden))
        self._add_param(f"{prefix}_b", np.zeros(3 * hidden))

    def _init_params(self, rng) -> None:
        e, d = self.config.emb_dim, self.config.hidden_dim
        n_words = len(self.vocab) + 1  # + OOV row
        self._add_param("embedding", rng.normal(0.0, 0.1, size=(n_words, e)))
        self._add_param("align_w1", self._glorot(rng, (e, e), e, e))
        self._add_param("reduce_w", self._glorot(rng, (2 * e + 3, d), 2 * e + 3, d))
        self._add_param("reduce_b", np.full(d, 0.01))
        self._add_highway(rng, "lex", d)
        for layer in range(self.config.enc_layers):
            in_dim = d if layer == 0 else 2 * d
            self._add_gru(rng, f"enc{layer}_f", in_dim, d)
            self._add_gru(rng, f"enc{layer}_b", in_dim, d)
        self._add_highway(rng, "ctx", 2 * d)
        self._add_param("cross_wq", self._glorot(rng, (2 * d, d), 2 * d, d))
        self._add_param("cross_wk", self._glorot(rng, (2 * d, d), 2 * d, d))
        self._add_param("self_wq", self._glorot(rng, (4 * d, d), 4 * d, d))
        self._add_param("self_wk", self._glorot(rng, (4 * d, d), 4 * d, d))
        self._add_gru(rng, "mem_f", 8 * d, d)
        self._add_gru(rng, "mem_b", 8 * d, d)
        self._add_highway(rng, "mem", 2 * d)
        self._add_param("ans_w4", self._glorot(rng, (2 * d,), 2 * d, 1))
        self._add_highway(rng, "s0", 2 * d)
        self._add_param("ans_w5", self._glorot(rng, (2 * d, 2 * d), 2 * d, 2 * d))
        self._add_gru(rng, "ans_gru", 2 * d, 2 * d)
        self._add_param("ans_w6", self._glorot(rng, (2 * d, 2 * d), 2 * d, 2 * d))
        self._add_param("ans_w7", self._glorot(rng, (2 * d, 2 * d), 2 * d, 2 * d))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def set_parameter_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if arrays[name].shape != t.data.shape:
                raise ShapeError(f"parameter {name}: shape {arrays[name].shape} != {t.data.shape}")
            t.data = arrays[name].astype(self.config.np_dtype())

    @contextmanager
    def using_parameters(self, arrays: dict[str, np.ndarray]):
        """Temporarily evaluate with different parameter values (e.g. EMA)."""
        saved = {name: t.data for name, t in self.params.items()}
        try:
            for name, t in self.params.items():
                t.data = arrays[name]
            yield
        finally:
            for name, t in self.params.items():
                t.data = saved[name]

    # --- batching ---

    def encode_batch(self, samples: Sequence[Sample]) -> EncodedBatch:
        if not samples:
            raise ShapeError("cannot encode an empty batch")
        kinds = {type(s.answer) for s in samples}
        if kinds == {Span}:
            kind = "span"
        elif kinds == {Cloze}:
            kind = "cloze"
        else:
            raise DataError("a minibatch must contain a single answer type")
        for s in samples:
            if not s.passage or not s.question:
                raise ShapeError(f"sample {s.sample_id!r}: empty passage or question")
        n = max(len(s.passage) for s in samples)
        m = max(len(s.question) for s in samples)
        b = len(samples)
        dtype = self.config.np_dtype()
        p_ids = np.zeros((b, n), dtype=np.int64)
        q_ids = np.zeros((b, m), dtype=np.int64)
        p_mask = np.zeros((b, n), dtype=bool)
        q_mask = np.zeros((b, m), dtype=bool)
        p_match = np.zeros((b, n, 3), dtype=dtype)
        q_match = np.zeros((b, m, 3), dtype=dtype)
        weights = np.array([s.weight for s in samples], dtype=dtype)
        for i, s in enumerate(samples):
            q_surface = {t.surface for t in s.question}
            q_lower = {t.lower for t in s.question}
            q_lemma = {t.lemma for t in s.question}
            p_surface = {t.surface for t in s.passage}
            p_lower = {t.lower for t in s.passage}
            p_lemma = {t.lemma for t in s.passage}
            for j, t in enumerate(s.passage):
                p_ids[i, j] = self.vocab.get(t.lower, OOV_ID)
                p_mask[i, j] = True
                p_match[i, j] = (
                    t.surface in q_surface,
                    t.lower in q_lower,
                    t.lemma in q_lemma,
                )
            for j, t in enumerate(s.question):
                q_ids[i, j] = self.vocab.get(t.lower, OOV_ID)
                q_mask[i, j] = True
                q_match[i, j] = (
                    t.surface in p_surface,
                    t.lower in p_lower,
                    t.lemma in p_lemma,
                )
        batch = EncodedBatch(
            kind, list(samples), p_ids, q_ids, p_mask, q_mask, p_match, q_match, weights
        )
        if kind == "span":
            batch.begins = np.array([s.answer.begin for s in samples], dtype=np.int64)
            batch.ends = np.array([s.answer.end for s in samples], dtype=np.int64)
        else:
            batch.cloze = [(s.answer.candidates, s.answer.gold) for s in samples]
        return batch

    # --- building blocks ---

    def _float_mask(self, mask: np.ndarray) -> np.ndarray:
        return mask.astype(self.config.np_dtype())

    def _dropout(self, x: Tensor, train: bool, rng) -> Tensor:
        rate = self.config.dropout
        if not train or rate <= 0.0:
            return x
        keep = (rng.random(x.shape) >= rate).astype(self.config.np_dtype())
        return x * Tensor(keep / (1.0 - rate))

    def _highway(self, site: str, x: Tensor) -> Tensor:
        p = self.params
        gate = ag.sigmoid(ag.matmul(x, p[f"hw_{site}_wg"]) + p[f"hw_{site}_bg"])
        transformed = ag.relu(ag.matmul(x, p[f"hw_{site}_wt"]) + p[f"hw_{site}_bt"])
        return gate * transformed + (1.0 - gate) * x

    def _gru_gates(self, prefix: str, gx: Tensor, h: Tensor) -> Tensor:
        hidden = h.shape[-1]
        gh = ag.matmul(h, self.params[f"{prefix}_wh"])
        r = ag.sigmoid(ag.narrow(gx, 1, 0, hidden) + ag.narrow(gh, 1, 0, hidden))
        z = ag.sigmoid(ag.narrow(gx, 1, hidden, hidden) + ag.narrow(gh, 1, hidden, hidden))
        n = ag.tanh(
            ag.narrow(gx, 1, 2 * hidden, hidden) + r * ag.narrow(gh, 1, 2 * hidden, hidden)
        )
        return (1.0 - z) * n + z * h

    def gru_cell(self, prefix: str, x: Tensor, h: Tensor) -> Tensor:
        gx = ag.matmul(x, self.params[f"{prefix}_wx"]) + self.params[f"{prefix}_b"]
        return self._gru_gates(prefix, gx, h)

    def _gru_direction(self, prefix: str, x_seq: Tensor, mask: np.ndarray, reverse: bool) -> Tensor:
        return ag.gru_sequence(
            x_seq,
            self.params[f"{prefix}_wx"],
            self.params[f"{prefix}_wh"],
            self.params[f"{prefix}_b"],
            mask,
            reverse=reverse,
        )

    def _bigru(self, prefix: str, x_seq: Tensor, mask: np.ndarray) -> Tensor:
        fwd = self._gru_direction(f"{prefix}_f", x_seq, mask, reverse=False)
        bwd = self._gru_direction(f"{prefix}_b", x_seq, mask, reverse=True)
        out = ag.concat([fwd, bwd], axis=2)
        return out * Tensor(self._float_mask(mask)[:, :, None])

    def _attention(self, site: str, x: Tensor, y: Tensor, y_mask: np.ndarray, drop_diag: bool = False) -> Tensor:
        """Row-normalized scaled-dot attention of x over y positions."""
        d_att = self.params[f"{site}_wq"].shape[-1]
        q = ag.matmul(x, self.params[f"{site}_wq"])
        k = ag.matmul(y, self.params[f"{site}_wk"])
        scores = ag.matmul(q, ag.transpose_last(k)) * (1.0 / math.sqrt(d_att))
        b, lx, ly = scores.shape
        mask = np.broadcast_to(y_mask[:, None, :], (b, lx, ly)).copy()
        if drop_diag:
            if lx != ly:
                raise ShapeError("diagonal drop requires square attention")
            idx = np.arange(lx)
            mask[:, idx, idx] = False
        return ag.masked_softmax(scores, mask)

    # --- network stages ---

    def lexicon_encode(self, batch: EncodedBatch, train: bool = False, rng=None):
        """Embeddings + exact-match features + aligned attention features."""
        p = self.params
        pe = ag.embedding(p["embedding"], batch.p_ids)
        qe = ag.embedding(p["embedding"], batch.q_ids)
        pg = ag.relu(ag.matmul(pe, p["align_w1"]))
        qg = ag.relu(ag.matmul(qe, p["align_w1"]))
        scores = ag.matmul(pg, ag.transpose_last(qg))  # (B, n, m)
        gamma = ag.masked_softmax(scores, batch.q_mask[:, None, :])
        align_p = ag.matmul(gamma, qg)
        delta = ag.masked_softmax(ag.transpose_last(scores), batch.p_mask[:, None, :])
        align_q = ag.matmul(delta, pg)
        p_in = ag.concat([pe, Tensor(batch.p_match), align_p], axis=2)
        q_in = ag.concat([qe, Tensor(batch.q_match), align_q], axis=2)
        p_red = ag.relu(ag.matmul(p_in, p["reduce_w"]) + p["reduce_b"])
        q_red = ag.relu(ag.matmul(q_in, p["reduce_w"]) + p["reduce_b"])
        p0 = self._dropout(self._highway("lex", p_red), train, rng)
        q0 = self._dropout(self._highway("lex", q_red), train, rng)
        p0 = p0 * Tensor(self._float_mask(batch.p_mask)[:, :, None])
        q0 = q0 * Tensor(self._float_mask(batch.q_mask)[:, :, None])
        return p0, q0, gamma, delta

    def contextual_encode(self, p0: Tensor, q0: Tensor, batch: EncodedBatch, train: bool = False, rng=None):
        hp, hq = p0, q0
        for layer in range(self.config.enc_layers):
            hp = self._highway("ctx", self._bigru(f"enc{layer}", hp, batch.p_mask))
            hq = self._highway("ctx", self._bigru(f"enc{layer}", hq, batch.q_mask))
            hp = self._dropout(hp, train, rng)
            hq = self._dropout(hq, train, rng)
        return hq, hp

    def attention_fuse(self, hq: Tensor, hp: Tensor, batch: EncodedBatch, train: bool = False, rng=None):
        cross = self._attention("cross", hp, hq, batch.q_mask)
        cross_used = self._dropout(cross, train, rng)
        fused = ag.concat([hp, ag.matmul(cross_used, hq)], axis=2)  # (B, n, 4d)
        self_att = self._attention("self", fused, fused, batch.p_mask, drop_diag=True)
        rearranged = ag.matmul(self_att, fused)
        mem_in = ag.concat([fused, rearranged], axis=2)  # (B, n, 8d)
        memory = self._highway("mem", self._bigru("mem", mem_in, batch.p_mask))
        memory = self._dropout(memory, train, rng)
        memory = memory * Tensor(self._float_mask(batch.p_mask)[:, :, None])
        return memory, cross, self_att

    def _question_summary(self, hq: Tensor, batch: EncodedBatch):
        b, m, dd = hq.shape
        w4 = ag.reshape(self.params["ans_w4"], (dd, 1))
        scores = ag.reshape(ag.matmul(hq, w4), (b, m))
        alpha = ag.masked_softmax(scores, batch.q_mask)
        pooled = ag.reshape(ag.matmul(ag.reshape(alpha, (b, 1, m)), hq), (b, dd))
        return self._highway("s0", pooled), alpha

    def answer_span(self, hq: Tensor, memory: Tensor, batch: EncodedBatch, train: bool = False, rng=None):
        """T-step pointer: per-step begin/end softmaxes averaged at the end."""
        p = self.params
        b, n, dd = memory.shape
        state, alpha = self._question_summary(hq, batch)
        states = [state]
        for _ in range(1, self.config.steps):
            sw = ag.matmul(state, p["ans_w5"])
            scores = ag.reshape(ag.matmul(memory, ag.reshape(sw, (b, dd, 1))), (b, n))
            beta = ag.masked_softmax(scores, batch.p_mask)
            x_t = ag.reshape(ag.matmul(ag.reshape(beta, (b, 1, n)), memory), (b, dd))
            state = self.gru_cell("ans_gru", x_t, state)
            states.append(state)
        step_begin, step_end = [], []
        for s_t in states:
            begin_scores = ag.reshape(ag.matmul(memory, ag.reshape(ag.matmul(s_t, p["ans_w6"]), (b, dd, 1))), (b, n))
            end_scores = ag.reshape(ag.matmul(memory, ag.reshape(ag.matmul(s_t, p["ans_w7"]), (b, dd, 1))), (b, n))
            step_begin.append(ag.masked_softmax(begin_scores, batch.p_mask))
            step_end.append(ag.masked_softmax(end_scores, batch.p_mask))
        if train and self.config.dropout > 0.0:
            retained = [t for t in range(len(states)) if rng.random() >= self.config.dropout]
            if not retained:
                retained = [0]
        else:
            retained = list(range(len(states)))
        inv = 1.0 / len(retained)
        p_begin = step_begin[retained[0]]
        p_end = step_end[retained[0]]
        for t in retained[1:]:
            p_begin = p_begin + step_begin[t]
            p_end = p_end + step_end[t]
        p_begin = p_begin * inv
        p_end = p_end * inv
        return p_begin, p_end, step_begin, step_end, retained, alpha

    def answer_cloze(self, hq: Tensor, memory: Tensor, batch: EncodedBatch):
        """Occurrence-summed attention mass per candidate, renormalized."""
        b, n, dd = memory.shape
        state, alpha = self._question_summary(hq, batch)
        scores = ag.reshape(ag.matmul(memory, ag.reshape(state, (b, dd, 1))), (b, n))
        attention = ag.masked_softmax(scores, batch.p_mask)
        probs = []
        for i, (candidates, _) in enumerate(batch.cloze):
            row = ag.reshape(ag.narrow(attention, 0, i, 1), (n,))
            masses = [
                ag.reshape(ag.tsum(ag.gather1d(row, np.asarray(c, dtype=np.int64))), (1,))
                for c in candidates
            ]
            mass_vec = ag.concat(masses, axis=0)
            probs.append(mass_vec / ag.tsum(mass_vec))
        return attention, probs, alpha

    # --- top level ---

    def forward(self, samples: Sequence[Sample], train: bool = False, rng=None) -> ForwardTrace:
        if train and self.config.dropout > 0.0 and rng is None:
            raise ValueError("training forward with dropout requires an rng")
        batch = samples if isinstance(samples, EncodedBatch) else self.encode_batch(samples)
        p0, q0, gamma, delta = self.lexicon_encode(batch, train, rng)
        hq, hp = self.contextual_encode(p0, q0, batch, train, rng)
        memory, cross, self_att = self.attention_fuse(hq, hp, batch, train, rng)
        if batch.kind == "span":
            p_begin, p_end, step_b, step_e, retained, alpha = self.answer_span(
                hq, memory, batch, train, rng
            )
            return ForwardTrace(
                batch, gamma, delta, cross, self_att, memory, alpha,
                step_b, step_e, retained, p_begin, p_end,
            )
        attention, probs, alpha = self.answer_cloze(hq, memory, batch)
        trace = ForwardTrace(batch, gamma, delta, cross, self_att, memory, alpha)
        trace.cloze_attention = attention
        trace.cloze_probs = probs
        return trace

    def loss(self, trace: ForwardTrace) -> Tensor:
        """Per-sample negative log-likelihood, weighted and summed."""
        batch = trace.batch
        if batch.kind == "span":
            rows = np.arange(batch.size)
            pb = ag.gather_pairs(trace.p_begin, rows, batch.begins)
            pe = ag.gather_pairs(trace.p_end, rows, batch.ends)
            per_sample = -(ag.log(ag.clip_min(pb, PROB_FLOOR)) + ag.log(ag.clip_min(pe, PROB_FLOOR)))
        else:
            pieces = []
            for probs, (_, gold) in zip(trace.cloze_probs, batch.cloze):
                gold_p = ag.narrow(probs, 0, gold, 1)
                pieces.append(-ag.log(ag.clip_min(gold_p, PROB_FLOOR)))
            per_sample = ag.concat(pieces, axis=0)
        trace.per_sample_loss = per_sample
        trace.batch_loss = ag.tsum(per_sample * Tensor(batch.weights))
        return trace.batch_loss

    def sample_loss(self, trace: ForwardTrace, index: int) -> float:
        if trace.per_sample_loss is None:
            self.loss(trace)
        return float(trace.per_sample_loss.data[index])

    def gradients(self, samples: Sequence[Sample], train: bool = False, rng=None):
        """Weighted batch loss and its exact gradients for every parameter."""
        self.zero_grad()
        trace = self.forward(samples, train=train, rng=rng)
        batch_loss = self.loss(trace)
        if not np.isfinite(batch_loss.data):
            raise NumericError("non-finite loss")
        batch_loss.backward()
        grads = {}
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            grads[name] = g
        return float(batch_loss.data), grads, trace

    # --- decoding ---

    def decode_spans(self, trace: ForwardTrace, max_span_len: int = 30) -> list[tuple[int, int]]:
        """Argmax begin, then argmax end within [begin, begin+max_span_len)."""
        out = []
        pb, pe = trace.p_begin.data, trace.p_end.data
        for i in range(trace.batch.size):
            n_i = trace.batch.passage_length(i)
            begin = int(np.argmax(pb[i, :n_i]))
            stop = min(begin + max_span_len, n_i)
            end = begin + int(np.argmax(pe[i, begin:stop]))
            out.append((begin, end))
        return out

    def decode_cloze(self, trace: ForwardTrace) -> list[int]:
        return [int(np.argmax(p.data)) for p in trace.cloze_probs]


# --- checkpointing ---

_CKPT_FORMAT = "mrckit-checkpoint"
_CKPT_VERSION = 1


def save_checkpoint(
    path: str,
    config: ModelConfig,
    vocab: dict[str, int],
    params: dict[str, np.ndarray],
    ema: dict[str, np.ndarray],
    meta: Optional[dict] = None,
) -> None:
    words = [w for w, _ in sorted(vocab.items(), key=lambda kv: kv[1])]
    header = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "config": asdict(config),
        "vocab": words,
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays.update({f"ema/{k}": v for k, v in ema.items()})
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str):
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header.get("format") != _CKPT_FORMAT or header.get("version") != _CKPT_VERSION:
            raise ParseError(f"{path}: not a version-{_CKPT_VERSION} checkpoint")
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        ema = {k[len("ema/"):]: data[k] for k in data.files if k.startswith("ema/")}
    config = ModelConfig(**header["config"])
    vocab = {w: i + 1 for i, w in enumerate(header["vocab"])}
    return config, vocab, params, ema, header["meta"]


def model_from_checkpoint(path: str) -> tuple["ReaderModel", dict[str, np.ndarray], dict]:
    config, vocab, params, ema, meta = load_checkpoint(path)
    model = ReaderModel(config, vocab, np.random.default_rng(0))
    model.set_parameter_arrays(params)
    return model, ema, meta
