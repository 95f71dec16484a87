#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Embedding providers and the per-provider vector cache used by decontamination."""
import hashlib
import json
import os
import re
import threading
from typing import Dict, List, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
from cachetools import LRUCache
from pydantic import BaseModel, ValidationError, model_validator
from ivcap_service import getLogger

from .agents.client import ChatClient
from .core import Problem
from .errors import DataError

logger = getLogger("dataset")

_WORD_RE = re.compile(r"\w+")


class EmbeddingVector(BaseModel):
    problem_id: str
    vector: List[float]
    provider: str = ""
    dimension: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.dimension and self.dimension != len(self.vector):
            raise ValueError(f"{self.problem_id}: dimension {self.dimension} != {len(self.vector)}")
        if not any(self.vector):
            raise ValueError(f"{self.problem_id}: zero-norm embedding")
        return self


@runtime_checkable
class EmbeddingProvider(Protocol):
    name: str

    def embed(self, texts: List[str]) -> List[List[float]]:
        ...


class HashingEmbedder:
    """Deterministic local bag-of-words vectors (signed feature hashing of words and word pairs)."""

    def __init__(self, dimension: int = 512):
        self.dimension = dimension
        self.name = f"hashing-{dimension}"

    def embed(self, texts: List[str]) -> List[List[float]]:
        return [self._one(t).tolist() for t in texts]

    def _one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        words = _WORD_RE.findall(text.lower())
        for feat in words + [f"{a} {b}" for a, b in zip(words, words[1:])]:
            h = int.from_bytes(hashlib.sha256(feat.encode("utf-8")).digest()[:8], "big")
            v[h % self.dimension] += 1.0 if (h >> 63) == 0 else -1.0
        if not v.any():
            raise DataError(f"cannot embed text without words: {text[:40]!r}")
        return v


class EndpointEmbedder:
    """OpenAI-compatible `/embeddings` endpoint, memoised per text."""

    def __init__(self, client: ChatClient, *, batch_size: int = 64, cache_size: int = 10000):
        self.client = client
        self.batch_size = batch_size
        self.name = f"endpoint-{client.cfg.model}"
        self._memo = LRUCache(maxsize=cache_size)
        self._lock = threading.Lock()

    def embed(self, texts: List[str]) -> List[List[float]]:
        with self._lock:
            todo = [t for t in dict.fromkeys(texts) if t not in self._memo]
        for i in range(0, len(todo), self.batch_size):
            batch = todo[i:i + self.batch_size]
            vectors = self.client.embed(batch)
            with self._lock:
                for t, v in zip(batch, vectors):
                    self._memo[t] = v
        with self._lock:
            return [self._memo[t] for t in texts]


class FileEmbedder:
    """Precomputed vectors from `.npz` (arrays `ids`, `vectors`) or JSONL of EmbeddingVector."""

    def __init__(self, path: str, name: Optional[str] = None):
        self.path = path
        self.name = name or f"file-{os.path.splitext(os.path.basename(path))[0]}"
        self.vectors = load_embedding_file(path)

    def embed(self, texts: List[str]) -> List[List[float]]:
        raise DataError(f"{self.path} holds precomputed vectors only; it cannot embed new text")


def load_embedding_file(path: str) -> Dict[str, np.ndarray]:
    if path.endswith(".npz"):
        with np.load(path, allow_pickle=False) as data:
            ids = [str(i) for i in data["ids"]]
            m = np.asarray(data["vectors"], dtype=float)
        if m.ndim != 2 or len(ids) != m.shape[0]:
            raise DataError(f"{path}: expected {len(ids)} row(s) of vectors, found shape {m.shape}")
        return dict(zip(ids, m))
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                ev = EmbeddingVector.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as ex:
                raise DataError(f"{path}:{lineno}: invalid embedding - {ex}")
            out[ev.problem_id] = np.asarray(ev.vector, dtype=float)
    return out


class EmbeddingCache:
    """Sidecar `embeddings.<provider>.npz` keyed by problem id."""

    def __init__(self, directory: str, provider: str):
        self.path = os.path.join(directory, f"embeddings.{_safe(provider)}.npz")
        self.vectors: Dict[str, np.ndarray] = {}
        if os.path.exists(self.path):
            self.vectors = load_embedding_file(self.path)
            logger.debug(f"loaded {len(self.vectors)} cached embedding(s) from {self.path}")

    def save(self):
        ids = sorted(self.vectors)
        d = os.path.dirname(self.path)
        if d:
            os.makedirs(d, exist_ok=True)
        partial = f"{self.path}.partial.npz"
        np.savez(partial, ids=np.array(ids), vectors=np.array([self.vectors[i] for i in ids]))
        os.replace(partial, self.path)


def _safe(name: str) -> str:
    return re.sub(r"[^\w.-]+", "_", name)


def embed_problems(problems: Sequence[Problem], provider, cache_dir: Optional[str] = None) -> Dict[str, np.ndarray]:
    """Embeddings for every problem; only problems missing from the cache are sent to `provider`.

    A FileEmbedder never embeds: its missing problems stay missing.
    """
    if isinstance(provider, FileEmbedder):
        return {p.id: provider.vectors[p.id] for p in problems if p.id in provider.vectors}
    cache = EmbeddingCache(cache_dir, provider.name) if cache_dir else None
    known = dict(cache.vectors) if cache else {}
    todo = [p for p in problems if p.id not in known]
    if todo:
        logger.info(f"embedding {len(todo)} problem(s) with {provider.name}")
        vectors = provider.embed([p.statement for p in todo])
        for p, v in zip(todo, vectors):
            known[p.id] = np.asarray(v, dtype=float)
        if cache:
            cache.vectors = known
            cache.save()
    return {p.id: known[p.id] for p in problems}
