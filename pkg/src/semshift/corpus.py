"""Diachronic usage corpus I/O: TSV parsing, validation, sense inventories and stats.

The corpus format is a UTF-8 TSV with a header row and nine named columns
(any column order accepted on input, canonical order on output). Fields
may not contain tabs or newlines; there is no quoting or escaping.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

COLUMNS = (
    "usage_id",
    "word",
    "orth",
    "sense_id",
    "gloss",
    "example",
    "indices_target_token",
    "date",
    "period",
)

PERIOD_OLD = "old"
PERIOD_NEW = "new"

PARSE_MODES = ("gold", "test", "permissive")


class CorpusError(Exception):
    """Base class for corpus file problems."""


class CorpusFormatError(CorpusError):
    """Structural problem: wrong header, missing or unknown column."""


class CorpusValidationError(CorpusError):
    """Content problem: bad period, duplicate ids, missing required labels."""


@dataclass(frozen=True)
class UsageRecord:
    """One usage example row. Empty string means the field is absent."""

    usage_id: str
    word: str
    orth: str
    sense_id: str
    gloss: str
    example: str
    indices_target_token: str
    date: str
    period: str

    @property
    def is_old(self) -> bool:
        return self.period == PERIOD_OLD

    @property
    def is_new(self) -> bool:
        return self.period == PERIOD_NEW

    def spans(self) -> list[tuple[int, int]] | None:
        """Parsed target-token character spans, or None when absent/unparseable."""
        if not self.indices_target_token:
            return None
        try:
            return parse_spans(self.indices_target_token)
        except ValueError:
            return None

    def as_row(self) -> tuple[str, ...]:
        return tuple(getattr(self, col) for col in COLUMNS)


@dataclass(frozen=True)
class Sense:
    gloss: str
    examples: tuple[str, ...]  # usage ids, corpus order


@dataclass(frozen=True)
class SenseInventory:
    """Old-period senses of one target word."""

    word: str
    senses: Mapping[str, Sense]

    @property
    def sense_ids(self) -> tuple[str, ...]:
        return tuple(self.senses)


@dataclass(frozen=True)
class WordStats:
    n_old: int
    n_new: int
    senses_old: int
    senses_new: int
    senses_all: int

    @property
    def n_total(self) -> int:
        return self.n_old + self.n_new


@dataclass(frozen=True)
class CorpusStats:
    """Per-period sample counts plus per-word sense/example histograms."""

    samples_old: int
    samples_new: int
    per_word: Mapping[str, WordStats]

    @property
    def samples_total(self) -> int:
        return self.samples_old + self.samples_new

    @property
    def target_words(self) -> int:
        return len(self.per_word)

    def senses_per_word(self, which: str = "all") -> list[int]:
        attr = {"old": "senses_old", "new": "senses_new", "all": "senses_all"}[which]
        return [getattr(ws, attr) for ws in self.per_word.values()]

    def examples_per_word(self) -> list[int]:
        return [ws.n_total for ws in self.per_word.values()]

    def to_kv_lines(self) -> list[str]:
        lines = [
            f"samples_new\t{self.samples_new}",
            f"samples_old\t{self.samples_old}",
            f"samples_total\t{self.samples_total}",
            f"target_words\t{self.target_words}",
        ]
        for which in ("old", "new", "all"):
            counts = self.senses_per_word(which)
            if counts:
                lines.append(f"senses_per_word_{which}_min\t{min(counts)}")
                lines.append(f"senses_per_word_{which}_mean\t{sum(counts) / len(counts):.4f}")
                lines.append(f"senses_per_word_{which}_max\t{max(counts)}")
        examples = self.examples_per_word()
        if examples:
            lines.append(f"examples_per_word_min\t{min(examples)}")
            lines.append(f"examples_per_word_mean\t{sum(examples) / len(examples):.4f}")
            lines.append(f"examples_per_word_max\t{max(examples)}")
        return lines

    def to_table(self) -> str:
        rows = [
            ("samples (new)", str(self.samples_new)),
            ("samples (old)", str(self.samples_old)),
            ("samples (total)", str(self.samples_total)),
            ("target words", str(self.target_words)),
        ]
        out = ["corpus statistics", "-----------------"]
        width = max(len(name) for name, _ in rows)
        for name, value in rows:
            out.append(f"{name:<{width}}  {value:>8}")
        for which, label in (("old", "old"), ("new", "new"), ("all", "both")):
            hist = Counter(self.senses_per_word(which))
            if hist:
                dist = "  ".join(f"{k}:{v}" for k, v in sorted(hist.items()))
                out.append(f"senses/word ({label}): {dist}")
        return "\n".join(out)


@dataclass(frozen=True)
class Subtask1Prediction:
    """Predicted sense id per new-period usage id."""

    senses: Mapping[str, str]
    words: Mapping[str, tuple[str, ...]]  # word -> its usage ids, file order

    def __len__(self) -> int:
        return len(self.senses)


@dataclass(frozen=True)
class Subtask2Prediction:
    """Predicted gloss per (word, sense id); one gloss kept per sense id."""

    glosses: Mapping[str, Mapping[str, str]]

    def words_covered(self) -> tuple[str, ...]:
        return tuple(w for w, g in self.glosses.items() if g)


def parse_spans(value: str) -> list[tuple[int, int]]:
    """Parse a span list like ``12:17;30:35`` into (start, end) pairs."""
    spans = []
    for part in value.split(";"):
        start_s, sep, end_s = part.partition(":")
        if not sep:
            raise ValueError(f"span {part!r} is not start:end")
        start, end = int(start_s), int(end_s)
        if start < 0 or end < start:
            raise ValueError(f"span {part!r} is not a valid range")
        spans.append((start, end))
    return spans


def _read_lines(path: str | Path) -> list[str]:
    # utf-8-sig tolerates a leading BOM; files without one decode identically
    text = Path(path).read_text(encoding="utf-8-sig")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line[:-1] if line.endswith("\r") else line for line in lines]


def _parse_header(line: str) -> dict[str, int]:
    names = line.split("\t")
    positions: dict[str, int] = {}
    for idx, name in enumerate(names):
        if name not in COLUMNS:
            raise CorpusFormatError(f"unknown column {name!r} in header")
        if name in positions:
            raise CorpusFormatError(f"column {name!r} appears twice in header")
        positions[name] = idx
    for col in COLUMNS:
        if col not in positions:
            raise CorpusFormatError(f"missing required column {col!r}")
    return positions


def parse_corpus(path: str | Path, mode: str = "gold") -> list[UsageRecord]:
    """Parse one corpus/prediction TSV into records, preserving row order.

    Modes: ``gold`` requires a sense_id on every row; ``test`` allows empty
    sense_id/gloss on new-period rows only; ``permissive`` drops the
    sense_id requirement entirely (prediction files, partial data).
    """
    if mode not in PARSE_MODES:
        raise ValueError(f"unknown parse mode {mode!r}")
    lines = _read_lines(path)
    if not lines:
        raise CorpusFormatError(f"{path}: file is empty, expected a header row")
    positions = _parse_header(lines[0])
    n_cols = len(positions)

    records: list[UsageRecord] = []
    seen: dict[str, int] = {}
    duplicates: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != n_cols:
            raise CorpusValidationError(
                f"{path}: line {lineno}: expected {n_cols} fields, found {len(fields)}"
            )
        rec = UsageRecord(**{col: fields[positions[col]] for col in COLUMNS})
        if not rec.usage_id:
            raise CorpusValidationError(f"{path}: line {lineno}: empty usage_id")
        if rec.period not in (PERIOD_OLD, PERIOD_NEW):
            raise CorpusValidationError(
                f"{path}: line {lineno}: invalid period {rec.period!r}"
            )
        if mode == "gold" and not rec.sense_id:
            raise CorpusValidationError(
                f"{path}: line {lineno}: empty sense_id in gold mode"
            )
        if mode == "test" and rec.is_old and not rec.sense_id:
            raise CorpusValidationError(
                f"{path}: line {lineno}: old-period row without sense_id"
            )
        if rec.usage_id in seen:
            duplicates.add(rec.usage_id)
        seen[rec.usage_id] = lineno
        _check_spans(rec, path, lineno)
        records.append(rec)

    if duplicates:
        listing = ", ".join(sorted(duplicates))
        raise CorpusValidationError(f"{path}: duplicate usage_id(s): {listing}")
    return records


def _check_spans(rec: UsageRecord, path: str | Path, lineno: int) -> None:
    # Unparseable or out-of-bounds spans are kept verbatim; scoring ignores them.
    if not rec.indices_target_token:
        return
    try:
        spans = parse_spans(rec.indices_target_token)
    except ValueError as exc:
        logger.warning("%s: line %d: unparseable indices_target_token (%s)", path, lineno, exc)
        return
    for start, end in spans:
        if end > len(rec.example):
            logger.warning(
                "%s: line %d: span %d:%d exceeds example length %d",
                path, lineno, start, end, len(rec.example),
            )


def serialize_corpus(records: Iterable[UsageRecord]) -> str:
    """Render records as canonical-order TSV text (header included)."""
    lines = ["\t".join(COLUMNS)]
    for rec in records:
        row = rec.as_row()
        for col, value in zip(COLUMNS, row):
            if "\t" in value or "\n" in value or "\r" in value:
                raise CorpusValidationError(
                    f"field {col!r} of usage {rec.usage_id!r} contains a tab or newline"
                )
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def write_corpus(records: Iterable[UsageRecord], path: str | Path) -> None:
    Path(path).write_text(serialize_corpus(records), encoding="utf-8")


def usage_texts(records: Iterable[UsageRecord]) -> dict[str, str]:
    """usage_id -> example text, for prototype and sense-text lookups."""
    return {rec.usage_id: rec.example for rec in records}


def build_inventories(records: Sequence[UsageRecord]) -> dict[str, SenseInventory]:
    """Group old-period records into one sense inventory per word.

    Conflicting glosses for one (word, sense_id) keep the first occurrence.
    Words that only appear in the new period are flagged with a warning and
    get no inventory.
    """
    glosses: dict[str, dict[str, str]] = {}
    examples: dict[str, dict[str, list[str]]] = {}
    new_only: dict[str, bool] = {}
    for rec in records:
        if rec.is_new:
            new_only.setdefault(rec.word, True)
            continue
        new_only[rec.word] = False
        word_glosses = glosses.setdefault(rec.word, {})
        word_examples = examples.setdefault(rec.word, {})
        if rec.sense_id in word_glosses:
            if rec.gloss and rec.gloss != word_glosses[rec.sense_id]:
                logger.warning(
                    "conflicting gloss for word %r sense %r; keeping first occurrence",
                    rec.word, rec.sense_id,
                )
        else:
            word_glosses[rec.sense_id] = rec.gloss
        word_examples.setdefault(rec.sense_id, []).append(rec.usage_id)

    for word, only_new in new_only.items():
        if only_new:
            logger.warning("word %r has no old-period records, no inventory built", word)

    inventories = {}
    for word, word_glosses in glosses.items():
        senses = {
            sid: Sense(gloss=word_glosses[sid], examples=tuple(examples[word][sid]))
            for sid in word_glosses
        }
        inventories[word] = SenseInventory(word=word, senses=senses)
    return inventories


def compute_stats(records: Sequence[UsageRecord]) -> CorpusStats:
    """Count samples per period and sense/example counts per target word."""
    samples = Counter(rec.period for rec in records)
    senses_old: dict[str, set[str]] = {}
    senses_new: dict[str, set[str]] = {}
    counts_old: Counter[str] = Counter()
    counts_new: Counter[str] = Counter()
    words: list[str] = []
    seen_words: set[str] = set()
    for rec in records:
        if rec.word not in seen_words:
            seen_words.add(rec.word)
            words.append(rec.word)
        old = senses_old.setdefault(rec.word, set())
        new = senses_new.setdefault(rec.word, set())
        if rec.is_old:
            counts_old[rec.word] += 1
            if rec.sense_id:
                old.add(rec.sense_id)
        else:
            counts_new[rec.word] += 1
            if rec.sense_id:
                new.add(rec.sense_id)
    per_word = {
        word: WordStats(
            n_old=counts_old[word],
            n_new=counts_new[word],
            senses_old=len(senses_old[word]),
            senses_new=len(senses_new[word]),
            senses_all=len(senses_old[word] | senses_new[word]),
        )
        for word in words
    }
    return CorpusStats(
        samples_old=samples.get(PERIOD_OLD, 0),
        samples_new=samples.get(PERIOD_NEW, 0),
        per_word=per_word,
    )


def parse_subtask1_prediction(path: str | Path) -> Subtask1Prediction:
    """Extract the usage_id -> sense_id map from a filled-in test file.

    Only new-period rows count; every one of them must carry a sense id.
    """
    records = parse_corpus(path, mode="permissive")
    senses: dict[str, str] = {}
    words: dict[str, list[str]] = {}
    for rec in records:
        if not rec.is_new:
            continue
        if not rec.sense_id:
            raise CorpusValidationError(
                f"{path}: new-period usage {rec.usage_id!r} has no predicted sense_id"
            )
        senses[rec.usage_id] = rec.sense_id
        words.setdefault(rec.word, []).append(rec.usage_id)
    return Subtask1Prediction(
        senses=senses,
        words={w: tuple(ids) for w, ids in words.items()},
    )


def parse_subtask2_prediction(path: str | Path) -> Subtask2Prediction:
    """Extract word -> {sense_id: gloss} from a filled-in test file.

    New-period rows with an empty gloss are not part of the submission and
    are skipped. The first gloss wins when a sense id repeats.
    """
    records = parse_corpus(path, mode="permissive")
    glosses: dict[str, dict[str, str]] = {}
    for rec in records:
        if not rec.is_new or not rec.gloss:
            continue
        if not rec.sense_id:
            raise CorpusValidationError(
                f"{path}: usage {rec.usage_id!r} has a gloss but no sense_id"
            )
        word_glosses = glosses.setdefault(rec.word, {})
        if rec.sense_id in word_glosses:
            if word_glosses[rec.sense_id] != rec.gloss:
                logger.warning(
                    "conflicting predicted gloss for word %r sense %r; keeping first",
                    rec.word, rec.sense_id,
                )
            continue
        word_glosses[rec.sense_id] = rec.gloss
    return Subtask2Prediction(glosses=glosses)
