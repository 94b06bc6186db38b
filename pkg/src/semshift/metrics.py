"""Numeric scoring kernel: ARI, macro-F1, sentence BLEU, BERTScore, greedy alignment.

All functions are pure and safe to call concurrently. Labelings are
sequences of (item_id, label) pairs; both sides of a comparison must
cover the same item ids.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Collection, Sequence, Tuple

import numpy as np

LabelPairs = Sequence[Tuple[str, str]]

BLEU_MAX_ORDER = 4
# Printed into every report so scores can be audited against the exact variant.
BLEU_SIGNATURE = "bleu4|clipped|smooth:add1-orders2-4|brevity-penalty|tok:lower+punct"
GREEDY_TIE_RULE = "ties:lowest-target-index,then-lowest-hypothesis-index"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class MetricInputError(ValueError):
    """Raised when metric inputs violate their contract."""


def _index_labeling(pairs: LabelPairs, side: str) -> dict[str, str]:
    by_id: dict[str, str] = {}
    for item_id, label in pairs:
        if not label:
            raise MetricInputError(f"{side} labeling has an empty label for item {item_id!r}")
        if item_id in by_id:
            raise MetricInputError(f"{side} labeling repeats item id {item_id!r}")
        by_id[item_id] = label
    return by_id


def _require_same_items(gold: dict[str, str], pred: dict[str, str]) -> None:
    if gold.keys() == pred.keys():
        return
    only_gold = sorted(gold.keys() - pred.keys())
    only_pred = sorted(pred.keys() - gold.keys())
    raise MetricInputError(
        f"item sets differ: only in gold {only_gold}, only in prediction {only_pred}"
    )


def adjusted_rand_index(gold: LabelPairs, pred: LabelPairs) -> float:
    """Permutation-model adjusted Rand index between two labelings.

    Label names are irrelevant, only the induced partitions matter.
    Degenerate cases where the adjusted formula is 0/0 (single item, or
    both sides trivial in the same way) return 1.0: the partitions are
    identical.
    """
    if not gold:
        raise MetricInputError("at least one item is required")
    pred_by_id = _index_labeling(pred, "prediction")
    n = len(gold)

    contingency: dict[tuple[str, str], int] = {}
    row_sizes: dict[str, int] = {}
    col_sizes: dict[str, int] = {}
    gold_ids = set()
    for item_id, gold_label in gold:
        if not gold_label:
            raise MetricInputError(f"gold labeling has an empty label for item {item_id!r}")
        if item_id in gold_ids:
            raise MetricInputError(f"gold labeling repeats item id {item_id!r}")
        gold_ids.add(item_id)
        pred_label = pred_by_id.get(item_id)
        if pred_label is None:
            _require_same_items(dict(gold), pred_by_id)
        key = (gold_label, pred_label)
        contingency[key] = contingency.get(key, 0) + 1
        row_sizes[gold_label] = row_sizes.get(gold_label, 0) + 1
        col_sizes[pred_label] = col_sizes.get(pred_label, 0) + 1
    if len(pred_by_id) != n:
        _require_same_items(dict(gold), pred_by_id)

    if n == 1:
        return 1.0
    index = sum(c * (c - 1) // 2 for c in contingency.values())
    sum_rows = sum(c * (c - 1) // 2 for c in row_sizes.values())
    sum_cols = sum(c * (c - 1) // 2 for c in col_sizes.values())
    total_pairs = n * (n - 1) // 2
    expected = sum_rows * sum_cols / total_pairs
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def macro_f1(gold: LabelPairs, pred: LabelPairs, classes: Collection[str]) -> float:
    """Macro-averaged F1 over a fixed class universe.

    Gold labels must all belong to ``classes``; predicted labels outside it
    (novel sense ids) simply never produce a true positive. Classes with no
    predicted or no gold items use the zero convention.
    """
    if not classes:
        raise MetricInputError("empty class universe")
    gold_by_id = _index_labeling(gold, "gold")
    pred_by_id = _index_labeling(pred, "prediction")
    _require_same_items(gold_by_id, pred_by_id)
    class_set = set(classes)
    outside = sorted({label for label in gold_by_id.values() if label not in class_set})
    if outside:
        raise MetricInputError(f"gold labels outside the class universe: {outside}")

    f1_sum = 0.0
    for cls in class_set:
        tp = fp = fn = 0
        for item_id, gold_label in gold_by_id.items():
            pred_label = pred_by_id[item_id]
            if pred_label == cls:
                if gold_label == cls:
                    tp += 1
                else:
                    fp += 1
            elif gold_label == cls:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1_sum += 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1_sum / len(class_set)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


def sentence_bleu(hypothesis: str, reference: str) -> float:
    """Sentence BLEU up to 4-grams with add-one smoothing on orders 2..4.

    Uses clipped n-gram precisions and the standard brevity penalty. The
    empty hypothesis scores 0.0; an empty reference is a contract violation.
    """
    ref_tokens = tokenize(reference)
    if not ref_tokens:
        raise MetricInputError("reference must contain at least one token")
    hyp_tokens = tokenize(hypothesis)
    if not hyp_tokens:
        return 0.0

    log_precision_sum = 0.0
    for order in range(1, BLEU_MAX_ORDER + 1):
        hyp_counts = _ngram_counts(hyp_tokens, order)
        ref_counts = _ngram_counts(ref_tokens, order)
        matched = sum(min(count, ref_counts.get(ngram, 0)) for ngram, count in hyp_counts.items())
        total = max(len(hyp_tokens) - order + 1, 0)
        if order == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1)
        log_precision_sum += math.log(precision)

    if len(hyp_tokens) >= len(ref_tokens):
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1.0 - len(ref_tokens) / len(hyp_tokens))
    return brevity_penalty * math.exp(log_precision_sum / BLEU_MAX_ORDER)


def _ngram_counts(tokens: list[str], order: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - order + 1):
        ngram = tuple(tokens[i : i + order])
        counts[ngram] = counts.get(ngram, 0) + 1
    return counts


@dataclass(frozen=True)
class TokenEmbeddingSeq:
    """A tokenized text with one vector per token (all of one dimensionality)."""

    tokens: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.ndim != 2:
            raise MetricInputError("vectors must be a 2-D array (tokens x dimension)")
        if len(self.tokens) == 0:
            raise MetricInputError("a token sequence needs at least one token")
        if vectors.shape[0] != len(self.tokens):
            raise MetricInputError(
                f"{len(self.tokens)} tokens but {vectors.shape[0]} vectors"
            )
        if not np.all(np.isfinite(vectors)):
            raise MetricInputError("vectors must be finite")
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # zero vectors stay zero, cosine 0
    return matrix / norms


def bertscore_f1(hyp: TokenEmbeddingSeq, ref: TokenEmbeddingSeq) -> float:
    """Greedy token-matching F1 over cosine similarities.

    Precision is the mean over hypothesis tokens of the best cosine against
    any reference token; recall is symmetric; F is their harmonic mean with
    F = 0 when P + R = 0. No IDF weighting, no baseline rescaling.
    """
    if hyp.dim != ref.dim:
        raise MetricInputError(f"dimension mismatch: {hyp.dim} vs {ref.dim}")
    sim = _unit_rows(hyp.vectors) @ _unit_rows(ref.vectors).T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class AlignmentResult:
    """Greedy one-to-one pairing of targets and hypotheses with its mean score."""

    pairs: tuple[tuple[int, int, float], ...]
    mean_score: float


def greedy_pair_selection(scores: np.ndarray) -> list[tuple[int, int, float]]:
    """Iteratively pick the highest-scoring (target, hypothesis) cell.

    Each picked pair removes its row and column; selection stops when either
    side is exhausted. Ties break on the lowest target index, then the
    lowest hypothesis index (row-major argmax order).
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise MetricInputError("score matrix must be 2-D")
    n_targets, n_hyps = scores.shape
    pairs: list[tuple[int, int, float]] = []
    if n_targets == 0 or n_hyps == 0:
        return pairs
    work = scores.copy()
    for _ in range(min(n_targets, n_hyps)):
        flat = int(np.argmax(work))
        t, h = divmod(flat, n_hyps)
        pairs.append((t, h, float(scores[t, h])))
        work[t, :] = -np.inf
        work[:, h] = -np.inf
    return pairs


def greedy_align(
    targets: Sequence[TokenEmbeddingSeq],
    hypotheses: Sequence[TokenEmbeddingSeq],
) -> AlignmentResult:
    """Greedily match target explanations to hypothesis explanations.

    The pair score is ``bertscore_f1``; the mean is the running sum divided
    by the number of pairs actually formed. No hypotheses means no pairs
    and a mean of 0.0.
    """
    if not targets:
        raise MetricInputError("targets must be non-empty")
    if not hypotheses:
        return AlignmentResult(pairs=(), mean_score=0.0)
    scores = np.array(
        [[bertscore_f1(hyp, ref) for hyp in hypotheses] for ref in targets], dtype=float
    )
    pairs = greedy_pair_selection(scores)
    mean = sum(score for _, _, score in pairs) / len(pairs)
    return AlignmentResult(pairs=tuple(pairs), mean_score=mean)
