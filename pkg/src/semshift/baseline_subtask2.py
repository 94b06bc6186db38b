"""Retrieval baseline for gained-sense definitions.

For every novel sense cluster found in a Subtask 1 prediction, emit the
candidate gloss whose sentence embedding is most similar to the cluster's
prototype usage. The default candidate pool is just the word's old
inventory glosses, which makes this a deliberately weak reference point;
an external word<TAB>gloss list can widen the pool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import (
    SenseInventory,
    Subtask1Prediction,
    Subtask2Prediction,
    UsageRecord,
    build_inventories,
)
from .embeddings import (
    EmbeddingProvider,
    GRANULARITY_SENTENCE,
    MissingEmbeddingError,
    cosine,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlossCandidatePool:
    """Ordered candidate gloss strings per word."""

    candidates: Mapping[str, tuple[str, ...]]
    source: str

    def for_word(self, word: str) -> tuple[str, ...]:
        return self.candidates.get(word, ())


def pool_from_inventories(inventories: Mapping[str, SenseInventory]) -> GlossCandidatePool:
    candidates = {
        word: tuple(s.gloss for s in inv.senses.values() if s.gloss)
        for word, inv in inventories.items()
    }
    return GlossCandidatePool(
        candidates={w: c for w, c in candidates.items() if c},
        source="old-inventory-glosses",
    )


def load_gloss_list(path: str | Path) -> dict[str, list[str]]:
    """Read an external word<TAB>gloss TSV (one candidate per line)."""
    result: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        word, sep, gloss = line.partition("\t")
        if not sep or not word or not gloss:
            raise ValueError(f"{path}: line {lineno}: expected word<TAB>gloss")
        result.setdefault(word, []).append(gloss)
    return result


def build_pool(
    inventories: Mapping[str, SenseInventory],
    extra_glosses: Mapping[str, Sequence[str]] | None = None,
) -> GlossCandidatePool:
    """Old inventory glosses, extended by an external gloss list when given."""
    base = pool_from_inventories(inventories)
    if not extra_glosses:
        return base
    merged: dict[str, list[str]] = {w: list(c) for w, c in base.candidates.items()}
    for word, glosses in extra_glosses.items():
        bucket = merged.setdefault(word, [])
        for gloss in glosses:
            if gloss not in bucket:
                bucket.append(gloss)
    return GlossCandidatePool(
        candidates={w: tuple(c) for w, c in merged.items() if c},
        source=f"{base.source}+external",
    )


def retrieve_glosses(
    subtask1_output: Subtask1Prediction,
    records: Sequence[UsageRecord],
    provider: EmbeddingProvider,
    pool: GlossCandidatePool,
) -> tuple[Subtask2Prediction, dict[str, str]]:
    """Pick, per novel sense, the pool gloss closest to the prototype usage.

    Novel senses are predicted sense ids absent from the word's old
    inventory; the prototype is the sense's first member in file order.
    Words with an empty pool are omitted from the output (they count
    against coverage downstream). Ties break on the lowest candidate index.
    """
    inventories = build_inventories(records)
    examples = {rec.usage_id: rec.example for rec in records}

    novel_members: dict[str, dict[str, str]] = {}  # word -> sense_id -> prototype usage id
    for rec in records:
        if not rec.is_new:
            continue
        predicted = subtask1_output.senses.get(rec.usage_id)
        if predicted is None:
            continue
        old_ids = inventories[rec.word].sense_ids if rec.word in inventories else ()
        if predicted in old_ids:
            continue
        word_senses = novel_members.setdefault(rec.word, {})
        word_senses.setdefault(predicted, rec.usage_id)

    glosses: dict[str, dict[str, str]] = {}
    omitted: list[str] = []
    for word, senses in novel_members.items():
        candidates = pool.for_word(word)
        if not candidates:
            logger.warning("word %r has no candidate glosses, omitting from the prediction", word)
            omitted.append(word)
            continue
        try:
            provider.prefetch(list(candidates), GRANULARITY_SENTENCE)
            candidate_vectors = [provider.get_sentence(c) for c in candidates]
            for sense_id, prototype_usage in senses.items():
                prototype = provider.get_sentence(examples[prototype_usage])
                similarities = [cosine(prototype, cv) for cv in candidate_vectors]
                best = max(range(len(candidates)), key=lambda i: (similarities[i], -i))
                glosses.setdefault(word, {})[sense_id] = candidates[best]
        except MissingEmbeddingError as exc:
            logger.warning("skipping word %r: %s", word, exc)
            omitted.append(word)
            glosses.pop(word, None)

    metadata = {
        "pool_source": pool.source,
        "n_words": str(len(glosses)),
        "n_omitted_words": str(len(omitted)),
        "provider_provenance": provider.provenance,
    }
    return Subtask2Prediction(glosses=glosses), metadata
