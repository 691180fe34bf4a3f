"""Node features: precomputed embedding files and a deterministic hashing embedder."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import ArgumentError, FormatError, IdLookupError
from .graph import ConversationGraph

logger = logging.getLogger(__name__)

DEFAULT_DIM = 768

_TOKEN = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class FeatureMatrix:
    ids: tuple
    data: np.ndarray

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass
class EmbeddingStore:
    vectors: dict
    d: int
    source: str = "memory"

    def __post_init__(self):
        if self.d < 1:
            raise ArgumentError("embedding dimension must be >= 1")
        for key, vec in self.vectors.items():
            if vec.shape != (self.d,):
                raise FormatError(f"embedding for {key!r} has shape {vec.shape}, expected ({self.d},)")

    def __contains__(self, comment_id) -> bool:
        return comment_id in self.vectors

    def __getitem__(self, comment_id) -> np.ndarray:
        return self.vectors[comment_id]

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def from_texts(cls, texts: Mapping[str, Optional[str]], d: int, seed: int = 0) -> "EmbeddingStore":
        return cls({i: hash_embed(t, d, seed) for i, t in texts.items()}, d, source="hash")


def load_embeddings(path) -> EmbeddingStore:
    """Read ``id<TAB>v0<TAB>...`` rows, with an optional ``#dim=<d>`` header."""
    vectors = {}
    d = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#dim="):
                    try:
                        d = int(line[5:])
                    except ValueError:
                        raise FormatError(f"bad header {line!r}", lineno) from None
                continue
            key, *values = line.split("\t")
            if not key or not values:
                raise FormatError("expected an id followed by at least one value", lineno)
            if d is None:
                d = len(values)
            if len(values) != d:
                raise FormatError(f"row for {key!r} has {len(values)} values, expected {d}", lineno)
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(str(exc), lineno) from None
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"non-finite value in row for {key!r}", lineno)
            if key in vectors:
                logger.warning("%s:%d: duplicate embedding id %r, keeping the last one", path, lineno, key)
            vectors[key] = vec
    if d is None:
        raise FormatError(f"{path}: no embedding rows")
    return EmbeddingStore(vectors, d, source=str(path))


def save_embeddings(store: EmbeddingStore, path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"#dim={store.d}\n")
        for key, vec in store.vectors.items():
            fh.write(key + "\t" + "\t".join(repr(float(v)) for v in vec) + "\n")


def _token_vector(token: str, d: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16, key=str(seed).encode()).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return rng.standard_normal(d)


def hash_embed(text: Optional[str], d: int, seed: int = 0) -> np.ndarray:
    """Unit-norm bag-of-tokens embedding; texts without tokens map to zeros.

    Each lower-cased token gets a Gaussian vector drawn from a generator keyed
    on (seed, token), so texts sharing words land near each other.
    """
    if d < 1:
        raise ArgumentError("d must be >= 1")
    vec = np.zeros(d)
    for token in _TOKEN.findall((text or "").lower()):
        vec += _token_vector(token, d, seed)
    norm = math.sqrt(float(vec @ vec))
    return vec / norm if norm > 0 else vec


def bind_features(graph: ConversationGraph, store: EmbeddingStore, missing: str = "error") -> FeatureMatrix:
    """Stack embeddings in ``graph.nodes`` order."""
    if missing not in ("error", "zero"):
        raise ArgumentError(f"unknown missing-id policy {missing!r}")
    data = np.zeros((len(graph.nodes), store.d))
    for row, node in enumerate(graph.nodes):
        if node in store:
            data[row] = store[node]
        elif missing == "error":
            raise IdLookupError(f"no embedding for comment {node!r}", node)
        else:
            logger.warning("no embedding for comment %r; using zeros", node)
    return FeatureMatrix(tuple(graph.nodes), data)
