"""semshift: scoring harness and baselines for explainable semantic change.

Submodules: ``corpus`` (TSV parsing, inventories, stats), ``metrics``
(ARI, macro-F1, BLEU, BERTScore, greedy alignment), ``embeddings``
(file stores and the HTTP embedding service client), ``scoring``
(per-word orchestration and reports), ``baseline_subtask1`` /
``baseline_subtask2`` (reference systems), ``cli``.
"""

__version__ = "0.1.0"
