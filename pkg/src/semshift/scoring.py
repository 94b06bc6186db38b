"""Per-word scoring for both subtasks and score-report rendering.

Subtask 1 scores new-period sense assignments (ARI over all new entries,
macro-F1 over entries whose gold sense already existed in the old
inventory). Subtask 2 scores gained-sense definitions by greedy
BERTScore alignment, with BLEU over the same pairs. Aggregates are
unweighted means across target words.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, TypeVar

from .corpus import (
    Subtask1Prediction,
    Subtask2Prediction,
    UsageRecord,
    build_inventories,
)
from .embeddings import EmbeddingProvider, MissingEmbeddingError
from .metrics import (
    BLEU_SIGNATURE,
    GREEDY_TIE_RULE,
    adjusted_rand_index,
    greedy_align,
    macro_f1,
    sentence_bleu,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Keys the combine command is allowed to average across reports.
NUMERIC_METRIC_KEYS = (
    "ari",
    "f1",
    "bertscore",
    "bleu",
    "coverage",
    "bertscore_penalized",
    "bleu_penalized",
)


class ScoringError(Exception):
    """Raised when gold data or a submission breaks the scoring contract."""


@dataclass(frozen=True)
class WordScore:
    """One per-word result row; fields not applicable to the subtask stay None."""

    word: str
    covered: bool
    n_new: int = 0
    n_old_sense_entries: int = 0
    ari: float | None = None
    f1: float | None = None
    n_gained_senses: int = 0
    n_predicted_glosses: int = 0
    bertscore: float | None = None
    bleu: float | None = None
    iou: float | None = None


@dataclass(frozen=True)
class ScoreReport:
    subtask: int
    rows: tuple[WordScore, ...]
    aggregates: Mapping[str, float]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def with_metadata(self, extra: Mapping[str, str]) -> "ScoreReport":
        merged = dict(self.metadata)
        merged.update(extra)
        return ScoreReport(self.subtask, self.rows, self.aggregates, merged)

    def to_kv_text(self) -> str:
        lines = [f"{key}\t{value:.4f}" for key, value in self.aggregates.items()]
        lines += [f"{key}\t{value}" for key, value in self.metadata.items()]
        return "\n".join(lines) + "\n"

    def to_table_text(self) -> str:
        title = f"subtask {self.subtask} score report"
        lines = [title, "=" * len(title)]
        width = max(len(k) for k in self.aggregates) if self.aggregates else 1
        for key, value in self.aggregates.items():
            lines.append(f"{key:<{width}}  {value:.4f}")
        lines.append(f"{'words':<{width}}  {len(self.rows)}")
        if self.metadata:
            lines.append("metadata:")
            for key, value in self.metadata.items():
                lines.append(f"  {key}\t{value}")
        return "\n".join(lines) + "\n"

    def to_detail_tsv(self) -> str:
        if self.subtask == 1:
            header = ["word", "n_new", "n_old_sense_entries", "covered", "ari", "f1"]
            rows = [
                [
                    row.word,
                    str(row.n_new),
                    str(row.n_old_sense_entries),
                    str(int(row.covered)),
                    _fmt(row.ari),
                    _fmt(row.f1),
                ]
                for row in self.rows
            ]
        else:
            header = [
                "word",
                "n_gained_senses",
                "n_predicted_glosses",
                "covered",
                "bertscore",
                "bleu",
                "iou",
            ]
            rows = [
                [
                    row.word,
                    str(row.n_gained_senses),
                    str(row.n_predicted_glosses),
                    str(int(row.covered)),
                    _fmt(row.bertscore),
                    _fmt(row.bleu),
                    _fmt(row.iou),
                ]
                for row in self.rows
            ]
        lines = ["\t".join(header)] + ["\t".join(r) for r in rows]
        return "\n".join(lines) + "\n"


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def _pmap(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    # Per-word scoring is independent; assembly order is the caller's concern.
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _new_records_by_word(records: Sequence[UsageRecord]) -> dict[str, list[UsageRecord]]:
    by_word: dict[str, list[UsageRecord]] = {}
    for rec in records:
        if rec.is_new:
            by_word.setdefault(rec.word, []).append(rec)
    return by_word


def score_subtask1(
    gold_records: Sequence[UsageRecord],
    prediction: Subtask1Prediction,
    jobs: int = 1,
) -> ScoreReport:
    """Score predicted sense ids for every new-period entry of every word.

    A word absent from the submission is a wrong answer and scores 0 on
    both metrics; a word whose new entries all have novel gold senses is
    excluded from the macro-F1 mean (it has no applicable entries).
    Partially covered words are an error.
    """
    new_by_word = _new_records_by_word(gold_records)
    if not new_by_word:
        raise ScoringError("gold corpus has no new-period entries to score")
    inventories = build_inventories(gold_records)

    known_ids = {rec.usage_id for recs in new_by_word.values() for rec in recs}
    unknown = [uid for uid in prediction.senses if uid not in known_ids]
    if unknown:
        logger.warning(
            "ignoring %d predicted usage ids not present in the gold data (e.g. %r)",
            len(unknown), unknown[0],
        )

    def score_word(word: str) -> WordScore:
        entries = new_by_word[word]
        for rec in entries:
            if not rec.sense_id:
                raise ScoringError(f"gold new-period usage {rec.usage_id!r} has no sense_id")
        old_ids = set(inventories[word].sense_ids) if word in inventories else set()
        old_sense_entries = [rec for rec in entries if rec.sense_id in old_ids]

        submitted = [rec.usage_id in prediction.senses for rec in entries]
        if not any(submitted):
            return WordScore(
                word=word,
                covered=False,
                n_new=len(entries),
                n_old_sense_entries=len(old_sense_entries),
                ari=0.0,
                f1=0.0 if old_sense_entries else None,
            )
        if not all(submitted):
            n_present = sum(submitted)
            raise ScoringError(
                f"word {word!r} submitted with partial coverage: "
                f"{n_present} of {len(entries)} new entries"
            )

        gold_pairs = [(rec.usage_id, rec.sense_id) for rec in entries]
        pred_pairs = [(rec.usage_id, prediction.senses[rec.usage_id]) for rec in entries]
        ari = adjusted_rand_index(gold_pairs, pred_pairs)
        f1 = None
        if old_sense_entries:
            gold_sub = [(rec.usage_id, rec.sense_id) for rec in old_sense_entries]
            pred_sub = [
                (rec.usage_id, prediction.senses[rec.usage_id]) for rec in old_sense_entries
            ]
            classes = {rec.sense_id for rec in old_sense_entries}
            f1 = macro_f1(gold_sub, pred_sub, classes)
        return WordScore(
            word=word,
            covered=True,
            n_new=len(entries),
            n_old_sense_entries=len(old_sense_entries),
            ari=ari,
            f1=f1,
        )

    words = sorted(new_by_word)
    rows = _pmap(score_word, words, jobs)

    ari_values = [row.ari for row in rows]
    f1_values = [row.f1 for row in rows if row.f1 is not None]
    aggregates = {
        "ari": sum(ari_values) / len(ari_values),
        "f1": sum(f1_values) / len(f1_values) if f1_values else 0.0,
    }
    metadata = {
        "n_words": str(len(rows)),
        "n_f1_words": str(len(f1_values)),
        "f1_skip_rule": "words whose new entries all have novel gold senses are excluded from the f1 mean",
    }
    return ScoreReport(subtask=1, rows=tuple(rows), aggregates=aggregates, metadata=metadata)


def gained_senses(records: Sequence[UsageRecord]) -> dict[str, list[tuple[str, str]]]:
    """Per word, the (sense_id, gloss) list of new-period senses absent from
    the old inventory, in first-occurrence order. Words without gained
    senses are omitted."""
    inventories = build_inventories(records)
    gained: dict[str, dict[str, str]] = {}
    for rec in records:
        if not rec.is_new:
            continue
        if not rec.sense_id:
            raise ScoringError(f"gold new-period usage {rec.usage_id!r} has no sense_id")
        old_ids = inventories[rec.word].sense_ids if rec.word in inventories else ()
        if rec.sense_id in old_ids:
            continue
        word_gained = gained.setdefault(rec.word, {})
        if rec.sense_id not in word_gained:
            word_gained[rec.sense_id] = rec.gloss
    result: dict[str, list[tuple[str, str]]] = {}
    for word, senses in gained.items():
        for sense_id, gloss in senses.items():
            if not gloss.strip():
                raise ScoringError(
                    f"gained sense {sense_id!r} of word {word!r} has no gold gloss"
                )
        result[word] = list(senses.items())
    return result


def score_subtask2(
    gold_records: Sequence[UsageRecord],
    prediction: Subtask2Prediction,
    provider: EmbeddingProvider,
    penalized: bool = False,
    jobs: int = 1,
) -> ScoreReport:
    """Score gained-sense definitions by greedy BERTScore alignment.

    Only words with gained senses that appear in both gold and submission
    enter the metric means; skipped words only lower coverage, redundant
    submitted words are ignored. Submitted entries that reuse an old
    inventory sense id are not definitions of gained senses and are
    dropped before alignment.
    """
    inventories = build_inventories(gold_records)
    gold_gained = gained_senses(gold_records)
    if not gold_gained:
        raise ScoringError("gold corpus has no gained senses to score")

    hypotheses: dict[str, list[tuple[str, str]]] = {}
    for word, senses in prediction.glosses.items():
        old_ids = set(inventories[word].sense_ids) if word in inventories else set()
        kept = [(sid, gloss) for sid, gloss in senses.items() if sid not in old_ids]
        if kept:
            hypotheses[word] = kept

    redundant = sorted(set(hypotheses) - set(gold_gained))
    if redundant:
        logger.warning(
            "ignoring %d submitted words without gold gained senses (e.g. %r)",
            len(redundant), redundant[0],
        )

    covered_words = [w for w in sorted(gold_gained) if w in hypotheses]
    all_glosses = [g for w in covered_words for _, g in gold_gained[w] + hypotheses[w]]
    try:
        provider.prefetch(all_glosses, "tokens")
    except MissingEmbeddingError:
        pass  # per-word lookup below names the offending word and sense

    def embed(word: str, sense_id: str, gloss: str):
        try:
            return provider.get_tokens(gloss)
        except MissingEmbeddingError as exc:
            raise MissingEmbeddingError(
                f"missing token embedding for gloss of word {word!r} sense {sense_id!r}: {exc}"
            ) from exc

    def score_word(word: str) -> WordScore:
        targets = gold_gained[word]
        hyps = hypotheses[word]
        target_seqs = [embed(word, sid, gloss) for sid, gloss in targets]
        hyp_seqs = [embed(word, sid, gloss) for sid, gloss in hyps]
        alignment = greedy_align(target_seqs, hyp_seqs)
        bleu_values = [
            sentence_bleu(hyps[h][1], targets[t][1]) for t, h, _ in alignment.pairs
        ]
        bleu = sum(bleu_values) / len(bleu_values) if bleu_values else 0.0
        iou = iou_penalty(len(targets), len(alignment.pairs), len(hyps))
        return WordScore(
            word=word,
            covered=True,
            n_gained_senses=len(targets),
            n_predicted_glosses=len(hyps),
            bertscore=alignment.mean_score,
            bleu=bleu,
            iou=iou,
        )

    scored = {row.word: row for row in _pmap(score_word, covered_words, jobs)}
    rows = []
    for word in sorted(gold_gained):
        if word in scored:
            rows.append(scored[word])
        else:
            rows.append(
                WordScore(
                    word=word,
                    covered=False,
                    n_gained_senses=len(gold_gained[word]),
                )
            )

    covered_rows = [row for row in rows if row.covered]
    n_gold = len(gold_gained)

    def mean(values: list[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    aggregates = {
        "bertscore": mean([row.bertscore for row in covered_rows]),
        "bleu": mean([row.bleu for row in covered_rows]),
        "coverage": len(covered_rows) / n_gold,
    }
    if penalized:
        aggregates["bertscore_penalized"] = mean(
            [row.bertscore * row.iou for row in covered_rows]
        )
        aggregates["bleu_penalized"] = mean([row.bleu * row.iou for row in covered_rows])
    metadata = {
        "n_gained_words": str(n_gold),
        "n_scored_words": str(len(covered_rows)),
        "n_redundant_words": str(len(redundant)),
        "iou_penalty_applied": str(penalized).lower(),
        "bleu_signature": BLEU_SIGNATURE,
        "alignment_tie_rule": GREEDY_TIE_RULE,
        "provider_provenance": provider.provenance,
    }
    return ScoreReport(subtask=2, rows=tuple(rows), aggregates=aggregates, metadata=metadata)


def iou_penalty(n_gold_senses: int, n_pairs: int, n_pred_senses: int) -> float:
    """Intersection-over-union shrink factor for mismatched inventory sizes."""
    if min(n_gold_senses, n_pairs, n_pred_senses) < 0:
        raise ValueError("sense and pair counts must be non-negative")
    if n_pairs > min(n_gold_senses, n_pred_senses):
        raise ValueError(
            f"{n_pairs} pairs cannot exceed min({n_gold_senses}, {n_pred_senses})"
        )
    denominator = n_gold_senses + n_pred_senses - n_pairs
    if denominator == 0:
        raise ValueError("at least one side must have a sense")
    return n_pairs / denominator


def combine_aggregates(reports: Sequence[Mapping[str, str]]) -> dict[str, float]:
    """Unweighted mean of the numeric metric keys shared by all reports."""
    if not reports:
        raise ScoringError("no reports to combine")
    combined: dict[str, float] = {}
    for key in NUMERIC_METRIC_KEYS:
        if all(key in report for report in reports):
            values = [float(report[key]) for report in reports]
            combined[key] = sum(values) / len(values)
    if not combined:
        raise ScoringError("reports share no numeric metric keys")
    return combined


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse one key<TAB>value per line; later duplicates win."""
    result: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("\t")
        if not sep:
            raise ScoringError(f"malformed report line (no tab): {line!r}")
        result[key] = value
    return result
