"""Clustering baseline for novel-sense detection.

Per target word: embed the new-period usage examples, cluster them with
Affinity Propagation on cosine similarities, then map each cluster to the
most similar old sense (gloss merged with its examples) when that cosine
clears the threshold, otherwise mint a novel sense id. The cluster
representative is its first-in-file member.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .corpus import SenseInventory, Subtask1Prediction, UsageRecord, build_inventories, usage_texts
from .embeddings import EmbeddingProvider, GRANULARITY_SENTENCE, MissingEmbeddingError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.3


@dataclass(frozen=True)
class APConfig:
    """Affinity Propagation parameters; preference is "median" or a fixed value.

    The convergence window must cover several damping time constants
    (1/(1-damping) iterations): with heavy damping the exemplar set can sit
    still for a dozen iterations while messages are still drifting, and a
    short window declares convergence on such transients.
    """

    damping: float = 0.9
    max_iter: int = 500
    convergence_window: int = 50
    preference: float | str = "median"

    def __post_init__(self) -> None:
        if not 0.5 <= self.damping < 1.0:
            raise ValueError(f"damping must be in [0.5, 1), got {self.damping}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not 1 <= self.convergence_window <= self.max_iter:
            raise ValueError("convergence_window must be in [1, max_iter]")
        if isinstance(self.preference, str) and self.preference != "median":
            raise ValueError(f"preference must be 'median' or a number, got {self.preference!r}")

    def describe(self) -> dict[str, str]:
        return {
            "ap_damping": str(self.damping),
            "ap_max_iter": str(self.max_iter),
            "ap_convergence_window": str(self.convergence_window),
            "ap_preference": str(self.preference),
        }


@dataclass(frozen=True)
class APResult:
    """Exemplar index per point, the exemplar set, and convergence status."""

    labels: np.ndarray
    exemplars: tuple[int, ...]
    converged: bool
    iterations: int


def _preference_value(similarity: np.ndarray, config: APConfig) -> float:
    if isinstance(config.preference, str):
        n = similarity.shape[0]
        off_diag = similarity[~np.eye(n, dtype=bool)]
        return float(np.median(off_diag))
    return float(config.preference)


def affinity_propagation(similarity: np.ndarray, config: APConfig = APConfig()) -> APResult:
    """Exemplar clustering by damped responsibility/availability passing.

    The diagonal is overwritten with the preference. A fixed-seed jitter
    (scaled far below similarity resolution) breaks the oscillations that
    exactly symmetric inputs cause, keeping runs reproducible. If the
    exemplar set is not stable for ``convergence_window`` iterations within
    ``max_iter``, the result falls back to a single cluster with a warning.
    """
    S = np.asarray(similarity, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix must be finite")
    n = S.shape[0]
    if n == 0:
        raise ValueError("similarity matrix is empty")
    if n == 1:
        return APResult(labels=np.zeros(1, dtype=int), exemplars=(0,), converged=True, iterations=0)

    S = S.copy()
    preference = _preference_value(S, config)
    off_diag = S[~np.eye(n, dtype=bool)]
    if float(np.ptp(off_diag)) == 0.0:
        # Uniform similarities (e.g. identical points) make every partition
        # equally good; pick the canonical answer instead of message passing.
        uniform = float(off_diag[0])
        if preference > uniform:
            labels = np.arange(n)
            return APResult(
                labels=labels, exemplars=tuple(range(n)), converged=True, iterations=0
            )
        return APResult(
            labels=np.zeros(n, dtype=int), exemplars=(0,), converged=True, iterations=0
        )
    np.fill_diagonal(S, preference)
    rng = np.random.default_rng(0)
    S += (np.finfo(float).eps * S + np.finfo(float).tiny * 100) * rng.standard_normal((n, n))

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    idx = np.arange(n)
    window = config.convergence_window
    exemplar_history = np.zeros((n, window), dtype=bool)
    converged = False
    iteration = 0

    for iteration in range(1, config.max_iter + 1):
        # responsibilities: r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
        AS = A + S
        best_idx = np.argmax(AS, axis=1)
        best = AS[idx, best_idx]
        AS[idx, best_idx] = -np.inf
        second = AS.max(axis=1)
        R_new = S - best[:, None]
        R_new[idx, best_idx] = S[idx, best_idx] - second
        R = (1 - config.damping) * R_new + config.damping * R

        # availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
        Rp = np.maximum(R, 0)
        Rp[idx, idx] = R[idx, idx]
        col_sums = Rp.sum(axis=0)
        A_new = col_sums[None, :] - Rp
        diag = A_new[idx, idx].copy()
        A_new = np.minimum(A_new, 0)
        A_new[idx, idx] = diag
        A = (1 - config.damping) * A_new + config.damping * A

        is_exemplar = (np.diag(A) + np.diag(R)) > 0
        exemplar_history[:, (iteration - 1) % window] = is_exemplar
        if iteration >= window:
            stable = np.all(exemplar_history == exemplar_history[:, [0]])
            if stable and is_exemplar.any():
                converged = True
                break

    if not converged or not is_exemplar.any():
        logger.warning(
            "affinity propagation did not converge after %d iterations, "
            "falling back to a single cluster", iteration,
        )
        return APResult(
            labels=np.zeros(n, dtype=int), exemplars=(0,), converged=False, iterations=iteration
        )

    exemplars = np.flatnonzero(is_exemplar)
    labels = exemplars[np.argmax(S[:, exemplars], axis=1)]
    labels[exemplars] = exemplars
    return APResult(
        labels=labels,
        exemplars=tuple(int(e) for e in exemplars),
        converged=True,
        iterations=iteration,
    )


def build_sense_texts(
    inventory: SenseInventory, texts_by_usage: Mapping[str, str]
) -> dict[str, str]:
    """Merge each old gloss with its example texts, single-space separated."""
    merged: dict[str, str] = {}
    for sense_id, sense in inventory.senses.items():
        parts = [sense.gloss] if sense.gloss else []
        if not sense.gloss:
            logger.warning(
                "sense %r of word %r has an empty gloss, using examples only",
                sense_id, inventory.word,
            )
        parts.extend(texts_by_usage[uid] for uid in sense.examples if texts_by_usage.get(uid))
        merged[sense_id] = " ".join(parts)
    return merged


@dataclass(frozen=True)
class BaselineRun:
    prediction: Subtask1Prediction
    metadata: dict[str, str]
    skipped_words: tuple[str, ...]
    fallback_words: tuple[str, ...]


def run_baseline(
    records: Sequence[UsageRecord],
    provider: EmbeddingProvider,
    threshold: float = DEFAULT_THRESHOLD,
    config: APConfig = APConfig(),
    centroid_prototypes: bool = False,
    jobs: int = 1,
) -> BaselineRun:
    """Cluster new-period usages per word and map clusters to old senses.

    A cluster maps to the old sense with the highest cosine between the
    cluster prototype (first member in file order, or the centroid when
    ``centroid_prototypes``) and the merged sense text, provided that
    cosine reaches ``threshold``; otherwise the cluster gets a fresh
    ``<word>_novel_<k>`` id. Words whose embeddings are missing are
    skipped with a warning and excluded from the prediction.
    """
    inventories = build_inventories(records)
    texts = usage_texts(records)
    new_by_word: dict[str, list[UsageRecord]] = {}
    for rec in records:
        if rec.is_new:
            new_by_word.setdefault(rec.word, []).append(rec)

    def process_word(word: str) -> tuple[str, dict[str, str] | None, bool]:
        entries = new_by_word[word]
        inventory = inventories.get(word)
        sense_texts = (
            build_sense_texts(inventory, texts) if inventory is not None else {}
        )
        needed = [rec.example for rec in entries] + list(sense_texts.values())
        try:
            provider.prefetch(needed, GRANULARITY_SENTENCE)
            example_vectors = np.stack([provider.get_sentence(rec.example) for rec in entries])
            sense_vectors = {
                sid: provider.get_sentence(text) for sid, text in sense_texts.items()
            }
        except MissingEmbeddingError as exc:
            logger.warning("skipping word %r: %s", word, exc)
            return word, None, False

        norms = np.linalg.norm(example_vectors, axis=1, keepdims=True)
        unit = example_vectors / np.where(norms == 0, 1.0, norms)
        similarity = np.clip(unit @ unit.T, -1.0, 1.0)
        result = affinity_propagation(similarity, config)

        clusters: dict[int, list[int]] = {}
        for point, exemplar in enumerate(result.labels):
            clusters.setdefault(int(exemplar), []).append(point)
        ordered = sorted(clusters.values(), key=min)

        old_ids = tuple(inventory.sense_ids) if inventory is not None else ()
        assignments: dict[str, str] = {}
        novel_count = 0
        for members in ordered:
            if centroid_prototypes:
                prototype = example_vectors[members].mean(axis=0)
            else:
                prototype = example_vectors[min(members)]
            best_sense, best_sim = None, -np.inf
            for sid in old_ids:
                sim = _cosine(prototype, sense_vectors[sid])
                if sim > best_sim:
                    best_sense, best_sim = sid, sim
            if best_sense is not None and best_sim >= threshold:
                chosen = best_sense
            else:
                novel_count += 1
                chosen = f"{word}_novel_{novel_count}"
                while chosen in old_ids:
                    novel_count += 1
                    chosen = f"{word}_novel_{novel_count}"
            for point in members:
                assignments[entries[point].usage_id] = chosen
        return word, assignments, not result.converged

    words = list(new_by_word)
    if jobs <= 1 or len(words) <= 1:
        outcomes = [process_word(w) for w in words]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(process_word, words))

    senses: dict[str, str] = {}
    by_word: dict[str, tuple[str, ...]] = {}
    skipped: list[str] = []
    fallbacks: list[str] = []
    for word, assignments, fell_back in outcomes:
        if assignments is None:
            skipped.append(word)
            continue
        if fell_back:
            fallbacks.append(word)
        senses.update(assignments)
        by_word[word] = tuple(rec.usage_id for rec in new_by_word[word])

    metadata = {
        "threshold": f"{threshold:.4f}",
        **config.describe(),
        "prototype_rule": "centroid" if centroid_prototypes else "first-in-file",
        "provider_provenance": provider.provenance,
        "n_words": str(len(by_word)),
        "n_skipped_words": str(len(skipped)),
        "n_fallback_words": str(len(fallbacks)),
    }
    return BaselineRun(
        prediction=Subtask1Prediction(senses=senses, words=by_word),
        metadata=metadata,
        skipped_words=tuple(sorted(skipped)),
        fallback_words=tuple(sorted(fallbacks)),
    )


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def fill_prediction(
    records: Sequence[UsageRecord], prediction: Subtask1Prediction
) -> list[UsageRecord]:
    """Mirror the test records with predicted sense ids on new-period rows.

    Rows without an assignment are dropped: omitting a word is a valid
    submission, empty sense ids are not.
    """
    filled = []
    for rec in records:
        if not rec.is_new:
            filled.append(rec)
            continue
        predicted = prediction.senses.get(rec.usage_id)
        if predicted is None:
            continue
        filled.append(replace(rec, sense_id=predicted))
    return filled


__all__ = [
    "APConfig",
    "APResult",
    "BaselineRun",
    "DEFAULT_THRESHOLD",
    "affinity_propagation",
    "build_sense_texts",
    "fill_prediction",
    "run_baseline",
]
