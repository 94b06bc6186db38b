"""Encoder backends: a deterministic hash encoder and Hugging Face models.

The hash encoder (``hash:<dim>``) exists so pipelines and tests can run
without model weights. Its derivation is part of the contract and must not
change: the sentence vector for a text is standard_normal noise from a
PCG64 generator seeded with the first 8 bytes of
sha256("sentence\\x00" + text), L2-normalized; token vectors use
whitespace tokens (the whole text when there is no whitespace token) and
seeds sha256("token\\x00" + token).
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

logger = logging.getLogger(__name__)


class HashEncoder:
    """Deterministic stand-in encoder, no model weights required."""

    def __init__(self, dim: int, normalize: bool = True):
        if dim <= 0:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.truncated = 0
        # hash vectors are unit norm by construction, whatever the flag says
        self.provenance = f"hash:{dim}|norm=l2"

    def _vector(self, key: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def encode_sentences(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vector("sentence\x00" + t) for t in texts])

    def encode_tokens(self, text: str) -> tuple[list[str], np.ndarray]:
        tokens = text.split() or [text]
        return tokens, np.stack([self._vector("token\x00" + t) for t in tokens])


class HFEncoder:
    """Pretrained transformer encoder (pooler output when available)."""

    def __init__(self, model_id: str, normalize: bool = False, device: str = "cpu"):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModel.from_pretrained(model_id).to(device).eval()
        self.device = device
        self.normalize = normalize
        self.truncated = 0
        self.max_length = min(self.tokenizer.model_max_length, 512)
        # probe once: not every model exposes a pooler output
        with torch.no_grad():
            probe = self.tokenizer("probe", return_tensors="pt").to(device)
            out = self.model(**probe)
            self.pooling = "pooler" if getattr(out, "pooler_output", None) is not None else "mean"
        hidden = out.last_hidden_state.shape[-1]
        self.dim = int(
            out.pooler_output.shape[-1] if self.pooling == "pooler" else hidden
        )
        self.provenance = (
            f"{model_id}|pool={self.pooling}|norm={'l2' if normalize else 'none'}"
            f"|trunc={self.max_length}"
        )

    def _maybe_normalize(self, array: np.ndarray) -> np.ndarray:
        if not self.normalize:
            return array
        norms = np.linalg.norm(array, axis=-1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return array / norms

    def _count_truncations(self, texts: list[str]) -> None:
        for text in texts:
            if len(self.tokenizer(text)["input_ids"]) > self.max_length:
                self.truncated += 1

    def encode_sentences(self, texts: list[str]) -> np.ndarray:
        self._count_truncations(texts)
        batch = self.tokenizer(
            texts, return_tensors="pt", padding=True, truncation=True, max_length=self.max_length
        ).to(self.device)
        with self._torch.no_grad():
            out = self.model(**batch)
        if self.pooling == "pooler":
            vectors = out.pooler_output.cpu().numpy()
        else:
            hidden = out.last_hidden_state
            mask = batch["attention_mask"].unsqueeze(-1)
            vectors = ((hidden * mask).sum(1) / mask.sum(1)).cpu().numpy()
        return self._maybe_normalize(np.asarray(vectors, dtype=float))

    def encode_tokens(self, text: str) -> tuple[list[str], np.ndarray]:
        self._count_truncations([text])
        encoded = self.tokenizer(
            text,
            return_tensors="pt",
            truncation=True,
            max_length=self.max_length,
            return_special_tokens_mask=True,
        )
        special_mask = encoded.pop("special_tokens_mask")[0].tolist()
        batch = encoded.to(self.device)
        with self._torch.no_grad():
            hidden = self.model(**batch).last_hidden_state[0].cpu().numpy()
        ids = batch["input_ids"][0].tolist()
        tokens = self.tokenizer.convert_ids_to_tokens(ids)
        # drop structural tokens (CLS/SEP/...) but keep content UNKs
        keep = [i for i, is_special in enumerate(special_mask) if not is_special]
        if not keep:
            keep = list(range(len(ids)))
        kept_tokens = [tokens[i] for i in keep]
        return kept_tokens, self._maybe_normalize(np.asarray(hidden[keep], dtype=float))


def build_encoder(model: str, normalize: bool):
    if model.startswith("hash:"):
        return HashEncoder(dim=int(model.split(":", 1)[1]), normalize=normalize)
    return HFEncoder(model, normalize=normalize)
