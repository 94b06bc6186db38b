"""Affinity Propagation and the cluster-to-sense mapping baseline."""

from __future__ import annotations

import numpy as np
import pytest

from semshift.baseline_subtask1 import (
    APConfig,
    affinity_propagation,
    build_sense_texts,
    fill_prediction,
    run_baseline,
)
from semshift.corpus import build_inventories, usage_texts
from semshift.embeddings import EmbeddingStore

from conftest import record
from oracles import partition_of, reference_affinity_propagation


def planted_points(rng, group_sizes, dim=32, noise=0.025):
    """Well-separated unit vectors: orthogonal centers plus small noise."""
    points, labels = [], []
    for group, size in enumerate(group_sizes):
        center = np.zeros(dim)
        center[group] = 1.0
        for _ in range(size):
            vec = center + noise * rng.standard_normal(dim)
            points.append(vec / np.linalg.norm(vec))
            labels.append(group)
    return np.array(points), labels


def cosine_matrix(points):
    return np.clip(points @ points.T, -1.0, 1.0)


class TestAPConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="damping"):
            APConfig(damping=0.3)
        with pytest.raises(ValueError, match="convergence_window"):
            APConfig(max_iter=10, convergence_window=50)
        with pytest.raises(ValueError, match="preference"):
            APConfig(preference="mean")


class TestAffinityPropagation:
    def test_single_point_is_its_own_exemplar(self):
        result = affinity_propagation(np.array([[0.7]]))
        assert result.labels.tolist() == [0]
        assert result.exemplars == (0,)
        assert result.converged

    def test_identical_points_form_one_cluster(self):
        result = affinity_propagation(np.ones((6, 6)))
        assert len(set(result.labels.tolist())) == 1
        assert result.converged

    def test_two_tight_groups_recovered(self):
        rng = np.random.default_rng(3)
        points, labels = planted_points(rng, [8, 7])
        S = cosine_matrix(points)
        config = APConfig(preference=float(S[~np.eye(len(S), dtype=bool)].min()))
        result = affinity_propagation(S, config)
        assert result.converged
        assert partition_of(result.labels.tolist()) == partition_of(labels)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_reference_message_passing(self, seed):
        rng = np.random.default_rng(seed)
        sizes = rng.integers(4, 9, size=rng.integers(2, 4)).tolist()
        points, _ = planted_points(rng, sizes)
        S = cosine_matrix(points)
        preference = float(S[~np.eye(len(S), dtype=bool)].min())
        config = APConfig(preference=preference)
        fast = affinity_propagation(S, config)
        slow_labels = reference_affinity_propagation(S, preference, damping=0.9, iterations=500)
        assert fast.converged
        assert partition_of(fast.labels.tolist()) == partition_of(slow_labels)

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError, match="square"):
            affinity_propagation(np.zeros((2, 3)))

    def test_non_finite_rejected(self):
        S = np.ones((3, 3))
        S[0, 1] = np.nan
        with pytest.raises(ValueError, match="finite"):
            affinity_propagation(S)

    @pytest.mark.parametrize("seed", range(6))
    def test_arbitrary_symmetric_matrices_do_not_crash(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        half = rng.uniform(-1, 1, size=(n, n))
        S = (half + half.T) / 2
        result = affinity_propagation(S)
        assert len(result.labels) == n
        assert set(result.labels.tolist()) <= set(range(n))
        for exemplar in result.exemplars:
            assert result.labels[exemplar] == exemplar

    def test_nonconvergence_falls_back_to_single_cluster(self, caplog):
        rng = np.random.default_rng(11)
        points, _ = planted_points(rng, [5, 5, 5])
        S = cosine_matrix(points)
        config = APConfig(damping=0.5, max_iter=2, convergence_window=2)
        with caplog.at_level("WARNING"):
            result = affinity_propagation(S, config)
        assert not result.converged
        assert result.labels.tolist() == [0] * len(S)
        assert "did not converge" in caplog.text


class TestSenseTexts:
    def test_gloss_only(self):
        records = [record("o1", "w", "old", "s1", "just the gloss", example="ex one")]
        inv = build_inventories(records)["w"]
        merged = build_sense_texts(inv, usage_texts(records))
        assert merged == {"s1": "just the gloss ex one"}

    def test_gloss_with_examples_in_order(self):
        records = [
            record("o1", "w", "old", "s1", "g", example="e1"),
            record("o2", "w", "old", "s1", "g", example="e2"),
        ]
        inv = build_inventories(records)["w"]
        assert build_sense_texts(inv, usage_texts(records))["s1"] == "g e1 e2"

    def test_empty_gloss_warns_and_uses_example(self, caplog):
        records = [record("o1", "w", "old", "s1", "", example="only example")]
        inv = build_inventories(records)["w"]
        with caplog.at_level("WARNING"):
            merged = build_sense_texts(inv, usage_texts(records))
        assert merged == {"s1": "only example"}
        assert "empty gloss" in caplog.text


def planted_word_store(dim=24):
    """One word, one old sense near cluster A, one unrelated cluster B.

    Returns (records, store). Cluster A examples sit on the sense-text
    direction (cosine ~0.95); cluster B examples are orthogonal to it.
    """
    rng = np.random.default_rng(17)
    sense_axis = np.zeros(dim)
    sense_axis[0] = 1.0
    novel_axis = np.zeros(dim)
    novel_axis[1] = 1.0

    records = [record("o1", "w", "old", "w_s1", "the established meaning", example="old usage")]
    store = EmbeddingStore(dim=dim, provenance="planted")
    store.add_sentence("the established meaning old usage", sense_axis)

    vectors = {}
    for i in range(4):
        vec = sense_axis + 0.02 * rng.standard_normal(dim)
        vectors[f"mapped {i}"] = vec / np.linalg.norm(vec)
    for i in range(4):
        vec = novel_axis + 0.02 * rng.standard_normal(dim)
        vectors[f"novel {i}"] = vec / np.linalg.norm(vec)

    for i in range(4):
        records.append(record(f"m{i}", "w", "new", example=f"mapped {i}"))
    for i in range(4):
        records.append(record(f"n{i}", "w", "new", example=f"novel {i}"))
    for text, vec in vectors.items():
        store.add_sentence(text, vec)
    return records, store


class TestRunBaseline:
    def test_planted_mapped_and_novel_clusters(self):
        records, store = planted_word_store()
        run = run_baseline(records, store, threshold=0.3)
        senses = run.prediction.senses
        assert {senses[f"m{i}"] for i in range(4)} == {"w_s1"}
        novel = {senses[f"n{i}"] for i in range(4)}
        assert novel == {"w_novel_1"}
        assert run.metadata["threshold"] == "0.3000"
        assert run.metadata["prototype_rule"] == "first-in-file"

    def test_every_new_usage_assigned(self):
        records, store = planted_word_store()
        run = run_baseline(records, store)
        new_ids = {r.usage_id for r in records if r.is_new}
        assert set(run.prediction.senses) == new_ids

    def test_threshold_monotonicity(self):
        records, store = planted_word_store()
        mapped_sets = []
        for threshold in np.arange(0.1, 0.95, 0.1):
            run = run_baseline(records, store, threshold=float(threshold))
            mapped = {
                uid for uid, sid in run.prediction.senses.items() if not sid.startswith("w_novel")
            }
            mapped_sets.append(mapped)
        for looser, stricter in zip(mapped_sets, mapped_sets[1:]):
            assert stricter <= looser

    def test_identical_embedding_maps_to_sense(self):
        dim = 8
        store = EmbeddingStore(dim=dim, provenance="t")
        axis = np.eye(dim)[0]
        store.add_sentence("old gloss old example", axis)
        store.add_sentence("the new usage", axis)
        records = [
            record("o1", "w", "old", "w_s1", "old gloss", example="old example"),
            record("n1", "w", "new", example="the new usage"),
        ]
        run = run_baseline(records, store)
        assert run.prediction.senses == {"n1": "w_s1"}

    def test_novel_ids_avoid_collisions_with_old_ids(self):
        dim = 8
        store = EmbeddingStore(dim=dim, provenance="t")
        store.add_sentence("g old example", np.eye(dim)[0])
        store.add_sentence("something else entirely", np.eye(dim)[1])
        records = [
            record("o1", "w", "old", "w_novel_1", "g", example="old example"),
            record("n1", "w", "new", example="something else entirely"),
        ]
        run = run_baseline(records, store)
        assert run.prediction.senses["n1"] == "w_novel_2"

    def test_word_without_inventory_is_all_novel(self):
        dim = 8
        store = EmbeddingStore(dim=dim, provenance="t")
        store.add_sentence("brand new usage", np.eye(dim)[0])
        records = [record("n1", "w", "new", example="brand new usage")]
        run = run_baseline(records, store)
        assert run.prediction.senses["n1"] == "w_novel_1"

    def test_missing_embedding_skips_word_only(self, caplog):
        records, store = planted_word_store()
        records = records + [record("x1", "other", "new", example="unembedded text")]
        with caplog.at_level("WARNING"):
            run = run_baseline(records, store)
        assert run.skipped_words == ("other",)
        assert "x1" not in run.prediction.senses
        assert {f"m{i}" for i in range(4)} <= set(run.prediction.senses)

    def test_centroid_mode(self):
        records, store = planted_word_store()
        run = run_baseline(records, store, centroid_prototypes=True)
        assert run.metadata["prototype_rule"] == "centroid"
        assert {run.prediction.senses[f"m{i}"] for i in range(4)} == {"w_s1"}

    def test_fill_prediction_drops_unassigned_rows(self):
        records, store = planted_word_store()
        records = records + [record("x1", "other", "new", example="unembedded text")]
        run = run_baseline(records, store)
        filled = fill_prediction(records, run.prediction)
        ids = [r.usage_id for r in filled]
        assert "x1" not in ids
        assert "o1" in ids  # old rows pass through
        filled_new = [r for r in filled if r.is_new]
        assert all(r.sense_id for r in filled_new)

    def test_jobs_parallel_equals_serial(self):
        records, store = planted_word_store()
        serial = run_baseline(records, store, jobs=1)
        parallel = run_baseline(records, store, jobs=4)
        assert serial.prediction.senses == parallel.prediction.senses

    def test_positive_scaling_of_vectors_changes_nothing(self):
        # cosine is scale-invariant, so uniformly rescaled embeddings must
        # yield identical clusters and identical sense decisions
        records, store = planted_word_store()
        scaled = EmbeddingStore(dim=store.dim, provenance=store.provenance)
        for text, vec in store._sentences.items():
            scaled.add_sentence(text, 3.7 * vec)
        base = run_baseline(records, store, threshold=0.3)
        rescaled = run_baseline(records, scaled, threshold=0.3)
        assert base.prediction.senses == rescaled.prediction.senses
