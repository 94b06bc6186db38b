"""Embedding access: JSONL file stores and an HTTP embedding service client.

Both providers expose the same lookup surface (sentence vectors and
per-token vector sequences) so scoring and baselines do not care where
vectors come from. Stores are immutable after loading; the service client
caches every response and can persist the cache in the store format.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import requests

from .metrics import TokenEmbeddingSeq

logger = logging.getLogger(__name__)

FORMAT_NAME = "semshift-emb"
FORMAT_VERSION = 1
GRANULARITY_SENTENCE = "sentence"
GRANULARITY_TOKENS = "tokens"
GRANULARITIES = (GRANULARITY_SENTENCE, GRANULARITY_TOKENS)

EMB_URL_ENV = "SEMSHIFT_EMB_URL"


class EmbeddingError(Exception):
    """Base class for embedding-layer failures."""


class EmbeddingFormatError(EmbeddingError):
    """Malformed store file: bad header, inconsistent dimensions."""


class MissingEmbeddingError(EmbeddingError):
    """A required text has no stored vector."""


class EmbeddingServiceError(EmbeddingError):
    """The embedding service could not be reached or answered garbage."""


def text_hash(text: str) -> str:
    """Short stable identifier for a text, safe to put in error messages."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; zero vectors yield 0.0 with a warning."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        logger.warning("cosine of a zero vector, returning 0.0")
        return 0.0
    return float(np.dot(u, v) / (norm_u * norm_v))


def _format_vector(vector: np.ndarray) -> list[float]:
    # 9 significant decimal digits bound round-trip drift below 1e-8/component.
    return [float(f"{x:.9g}") for x in vector]


class EmbeddingProvider:
    """Common lookup surface for stores and service clients."""

    dim: int | None
    provenance: str

    def get_sentence(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def get_tokens(self, text: str) -> TokenEmbeddingSeq:
        raise NotImplementedError

    def prefetch(self, texts: Iterable[str], granularity: str) -> None:
        """Batch warm-up; default checks nothing beyond individual gets."""


class EmbeddingStore(EmbeddingProvider):
    """Immutable in-memory index of sentence and token embeddings."""

    def __init__(self, dim: int, provenance: str):
        if dim <= 0:
            raise EmbeddingFormatError(f"dimension must be positive, got {dim}")
        if not provenance:
            raise EmbeddingFormatError("provenance must be non-empty")
        self.dim = dim
        self.provenance = provenance
        self._sentences: dict[str, np.ndarray] = {}
        self._tokens: dict[str, TokenEmbeddingSeq] = {}

    def __len__(self) -> int:
        return len(self._sentences) + len(self._tokens)

    def add_sentence(self, text: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dim,):
            raise EmbeddingFormatError(
                f"sentence vector for hash {text_hash(text)} has shape {vector.shape}, "
                f"store dimension is {self.dim}"
            )
        if text in self._sentences:
            logger.warning("duplicate sentence key %s, last wins", text_hash(text))
        vector = vector.copy()
        vector.flags.writeable = False
        self._sentences[text] = vector

    def add_tokens(self, text: str, seq: TokenEmbeddingSeq) -> None:
        if seq.dim != self.dim:
            raise EmbeddingFormatError(
                f"token vectors for hash {text_hash(text)} have dimension {seq.dim}, "
                f"store dimension is {self.dim}"
            )
        if text in self._tokens:
            logger.warning("duplicate tokens key %s, last wins", text_hash(text))
        self._tokens[text] = seq

    def has(self, text: str, granularity: str) -> bool:
        table = self._sentences if granularity == GRANULARITY_SENTENCE else self._tokens
        return text in table

    def get_sentence(self, text: str) -> np.ndarray:
        try:
            return self._sentences[text]
        except KeyError:
            raise MissingEmbeddingError(
                f"no sentence embedding for text hash {text_hash(text)}"
            ) from None

    def get_tokens(self, text: str) -> TokenEmbeddingSeq:
        try:
            return self._tokens[text]
        except KeyError:
            raise MissingEmbeddingError(
                f"no token embeddings for text hash {text_hash(text)}"
            ) from None

    def prefetch(self, texts: Iterable[str], granularity: str) -> None:
        # File-backed lookups are already local; fail fast on the first hole.
        for text in texts:
            if not self.has(text, granularity):
                raise MissingEmbeddingError(
                    f"no {granularity} embedding for text hash {text_hash(text)}"
                )


def load_store(path: str | Path) -> EmbeddingStore:
    """Load a JSONL embedding file; duplicate keys keep the last record."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        header_line = handle.readline()
        if not header_line.strip():
            raise EmbeddingFormatError(f"{path}: missing header line")
        header = _parse_json_line(path, 1, header_line)
        if header.get("format") != FORMAT_NAME:
            raise EmbeddingFormatError(f"{path}: not a {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported version {header.get('version')!r}")
        dim = header.get("dim")
        if not isinstance(dim, int) or dim <= 0:
            raise EmbeddingFormatError(f"{path}: bad dim in header: {dim!r}")
        store = EmbeddingStore(dim=dim, provenance=str(header.get("provenance", "")) or "unknown")
        for lineno, line in enumerate(handle, start=2):
            if not line.strip():
                continue
            record = _parse_json_line(path, lineno, line)
            _load_record(store, record, path, lineno)
    return store


def _parse_json_line(path: Path, lineno: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EmbeddingFormatError(f"{path}: line {lineno}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise EmbeddingFormatError(f"{path}: line {lineno}: expected a JSON object")
    return obj


def _load_record(store: EmbeddingStore, record: dict, path: Path, lineno: int) -> None:
    text = record.get("text")
    granularity = record.get("granularity")
    vectors = record.get("vectors")
    if not isinstance(text, str) or not text:
        raise EmbeddingFormatError(f"{path}: line {lineno}: missing or empty text")
    if granularity not in GRANULARITIES:
        raise EmbeddingFormatError(f"{path}: line {lineno}: bad granularity {granularity!r}")
    if record.get("dim") != store.dim:
        raise EmbeddingFormatError(
            f"{path}: line {lineno}: record dim {record.get('dim')!r} "
            f"does not match store dim {store.dim}"
        )
    array = np.asarray(vectors, dtype=float)
    if array.ndim != 2 or array.shape[1] != store.dim:
        raise EmbeddingFormatError(
            f"{path}: line {lineno}: vectors have shape {array.shape}, expected (*, {store.dim})"
        )
    if granularity == GRANULARITY_SENTENCE:
        if array.shape[0] != 1:
            raise EmbeddingFormatError(
                f"{path}: line {lineno}: sentence record must hold exactly one vector"
            )
        if text in store._sentences:
            logger.warning("%s: line %d: duplicate sentence key, last wins", path, lineno)
            del store._sentences[text]
        store.add_sentence(text, array[0])
    else:
        tokens = record.get("tokens")
        if not isinstance(tokens, list) or not tokens or len(tokens) != array.shape[0]:
            raise EmbeddingFormatError(
                f"{path}: line {lineno}: tokens/vectors length mismatch"
            )
        if text in store._tokens:
            logger.warning("%s: line %d: duplicate tokens key, last wins", path, lineno)
            del store._tokens[text]
        store.add_tokens(text, TokenEmbeddingSeq(tokens=tuple(tokens), vectors=array))


class StoreWriter:
    """Writes the JSONL embedding format (header first, one record per line)."""

    def __init__(self, path: str | Path, dim: int, provenance: str):
        if dim <= 0:
            raise EmbeddingFormatError(f"dimension must be positive, got {dim}")
        self._dim = dim
        self._handle = Path(path).open("w", encoding="utf-8")
        header = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dim": dim,
            "provenance": provenance,
        }
        self._handle.write(json.dumps(header, ensure_ascii=False) + "\n")

    def add_sentence(self, text: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self._dim,):
            raise EmbeddingFormatError(
                f"sentence vector has shape {vector.shape}, expected ({self._dim},)"
            )
        self._write_record(text, GRANULARITY_SENTENCE, None, [_format_vector(vector)])

    def add_tokens(self, text: str, tokens: Sequence[str], vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape != (len(tokens), self._dim):
            raise EmbeddingFormatError(
                f"token vectors have shape {vectors.shape}, expected ({len(tokens)}, {self._dim})"
            )
        self._write_record(
            text, GRANULARITY_TOKENS, list(tokens), [_format_vector(v) for v in vectors]
        )

    def _write_record(self, text, granularity, tokens, vectors) -> None:
        record = {
            "text": text,
            "granularity": granularity,
            "dim": self._dim,
            "tokens": tokens,
            "vectors": vectors,
        }
        self._handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "StoreWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class ServiceProvider(EmbeddingProvider):
    """Client for a remote embedding service speaking the /embed protocol.

    Every fetched vector is cached in memory, so repeated lookups never
    re-issue requests. With ``cache_path`` set, fetched records are also
    appended to a store file that can be reloaded later.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 3,
        cache_path: str | Path | None = None,
        session: requests.Session | None = None,
    ):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        self._endpoint = url.rstrip("/") + "/embed"
        self._timeout = timeout
        self._retries = retries
        self._session = session or requests.Session()
        self._lock = threading.Lock()
        self._sentences: dict[str, np.ndarray] = {}
        self._tokens: dict[str, TokenEmbeddingSeq] = {}
        self.dim: int | None = None
        self.provenance = f"service:{url}"
        self._cache_path = Path(cache_path) if cache_path else None
        if self._cache_path and self._cache_path.exists():
            cached = load_store(self._cache_path)
            self.dim = cached.dim
            self._sentences.update(cached._sentences)
            self._tokens.update(cached._tokens)

    def get_sentence(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._sentences.get(text)
        if hit is None:
            self._fetch([text], GRANULARITY_SENTENCE)
            hit = self._sentences[text]
        return hit

    def get_tokens(self, text: str) -> TokenEmbeddingSeq:
        with self._lock:
            hit = self._tokens.get(text)
        if hit is None:
            self._fetch([text], GRANULARITY_TOKENS)
            hit = self._tokens[text]
        return hit

    def prefetch(self, texts: Iterable[str], granularity: str) -> None:
        table = self._sentences if granularity == GRANULARITY_SENTENCE else self._tokens
        with self._lock:
            missing = [t for t in dict.fromkeys(texts) if t not in table]
        if missing:
            self._fetch(missing, granularity)

    def _fetch(self, texts: list[str], granularity: str) -> None:
        payload = {"texts": texts, "granularity": granularity}
        last_error: Exception | None = None
        for attempt in range(1, self._retries + 1):
            try:
                response = self._session.post(self._endpoint, json=payload, timeout=self._timeout)
                if response.status_code != 200:
                    raise EmbeddingServiceError(
                        f"service returned HTTP {response.status_code}"
                    )
                self._ingest(texts, granularity, response.json())
                return
            except (requests.RequestException, ValueError, EmbeddingServiceError) as exc:
                last_error = exc
                if attempt < self._retries:
                    time.sleep(0.05 * attempt)
        raise EmbeddingServiceError(
            f"embedding service failed after {self._retries} attempts: {last_error}"
        )

    def _ingest(self, texts: list[str], granularity: str, body: dict) -> None:
        dim = body.get("dim")
        results = body.get("results")
        if not isinstance(dim, int) or dim <= 0:
            raise EmbeddingServiceError(f"service response has bad dim: {dim!r}")
        if not isinstance(results, list) or len(results) != len(texts):
            raise EmbeddingServiceError(
                f"service returned {len(results) if isinstance(results, list) else 'no'} "
                f"results for {len(texts)} texts"
            )
        with self._lock:
            if self.dim is None:
                self.dim = dim
            elif dim != self.dim:
                raise EmbeddingServiceError(
                    f"service dim changed from {self.dim} to {dim}"
                )
            for text, result in zip(texts, results):
                vectors = np.asarray(result.get("vectors"), dtype=float)
                if vectors.ndim != 2 or vectors.shape[1] != dim:
                    raise EmbeddingServiceError(
                        f"bad vectors shape {vectors.shape} for text hash {text_hash(text)}"
                    )
                # Round exactly as the cache file does, so a reloaded cache
                # returns bit-identical vectors to this session.
                vectors = np.array([_format_vector(v) for v in vectors], dtype=float)
                if granularity == GRANULARITY_SENTENCE:
                    if vectors.shape[0] != 1:
                        raise EmbeddingServiceError("sentence result must hold one vector")
                    vec = vectors[0]
                    vec.flags.writeable = False
                    self._sentences[text] = vec
                    self._append_cache(text, granularity, None, vec.reshape(1, -1))
                else:
                    tokens = result.get("tokens")
                    if not isinstance(tokens, list) or len(tokens) != vectors.shape[0]:
                        raise EmbeddingServiceError(
                            f"tokens/vectors mismatch for text hash {text_hash(text)}"
                        )
                    seq = TokenEmbeddingSeq(tokens=tuple(tokens), vectors=vectors)
                    self._tokens[text] = seq
                    self._append_cache(text, granularity, tokens, vectors)

    def _append_cache(self, text, granularity, tokens, vectors) -> None:
        # Caller holds the lock: cache writes are single-writer by construction.
        if self._cache_path is None:
            return
        new_file = not self._cache_path.exists()
        with self._cache_path.open("a", encoding="utf-8") as handle:
            if new_file:
                header = {
                    "format": FORMAT_NAME,
                    "version": FORMAT_VERSION,
                    "dim": self.dim,
                    "provenance": self.provenance,
                }
                handle.write(json.dumps(header, ensure_ascii=False) + "\n")
            record = {
                "text": text,
                "granularity": granularity,
                "dim": self.dim,
                "tokens": tokens,
                "vectors": [_format_vector(v) for v in np.asarray(vectors, dtype=float)],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
