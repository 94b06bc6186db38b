"""Offline embedding exporter for semshift corpora.

Encodes the texts a scoring or baseline run will need (merged sense
texts, new-period usage examples, glosses) and writes them into the
semshift-emb JSONL store format.
"""

__version__ = "0.1.0"
