"""Answer-matching metrics: exact match, token F1, ROUGE-L, cloze accuracy.

Exact match and token F1 operate on normalized token sequences (case-folded,
punctuation-only tokens and the articles a/an/the removed). ROUGE-L is the
LCS-based F-measure with beta=1 and is computed on the raw sequences, since
it is also used to align free-text answers to passage spans where the caller
controls casing.
"""

from __future__ import annotations

import json
import string
from collections.abc import Sequence
from dataclasses import asdict, dataclass

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = frozenset(string.punctuation)


def normalize_tokens(tokens: Sequence[str]) -> list[str]:
    """Case-fold, drop punctuation-only tokens, drop articles."""
    out = []
    for tok in tokens:
        tok = tok.casefold()
        if tok in _ARTICLES:
            continue
        if tok and all(ch in _PUNCT for ch in tok):
            continue
        out.append(tok)
    return out


def exact_match(pred: Sequence[str], gold: Sequence[str]) -> int:
    """1 iff the normalized token sequences are identical."""
    return int(normalize_tokens(pred) == normalize_tokens(gold))


def token_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    """Harmonic mean of precision/recall over normalized token multisets.

    Both sequences empty after normalization counts as a perfect match (1.0);
    exactly one empty scores 0.0.
    """
    pred_norm = normalize_tokens(pred)
    gold_norm = normalize_tokens(gold)
    if not pred_norm and not gold_norm:
        return 1.0
    if not pred_norm or not gold_norm:
        return 0.0
    counts = {}
    for tok in pred_norm:
        counts[tok] = counts.get(tok, 0) + 1
    overlap = 0
    for tok in gold_norm:
        if counts.get(tok, 0) > 0:
            counts[tok] -= 1
            overlap += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_norm)
    recall = overlap / len(gold_norm)
    return 2 * precision * recall / (precision + recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence (classic dynamic program)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(cand: Sequence[str], ref: Sequence[str]) -> float:
    """LCS F-measure with beta=1: P = LCS/|cand|, R = LCS/|ref|, F = 2PR/(P+R).

    Returns 0.0 when either sequence is empty or the LCS is empty.
    """
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricReport:
    """Mean evaluation scores over ``n`` samples; every field lies in [0, 1]."""

    em: float = 0.0
    f1: float = 0.0
    rouge_l: float = 0.0
    accuracy: float = 0.0
    n: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))
