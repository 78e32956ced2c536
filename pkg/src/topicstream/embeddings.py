"""Dense text embeddings keyed by query/document id.

Vectors are unit-normalized (L2) at load time, so cosine similarity is a
plain dot product everywhere downstream. The table only stores vectors that
some other tool produced; it never computes embeddings itself.

File format: first line ``#dim D``, then ``id<TAB>f1 f2 ... fD`` per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

_MIN_NORM = 1e-9


@dataclass
class EmbeddingTable:
    """Unit vectors keyed by id. Immutable by convention after load."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def ids(self) -> list[str]:
        return sorted(self.vectors)

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise KeyError(f"unknown embedding id {key!r}") from None

    def matrix(self, keys) -> np.ndarray:
        """Stack vectors for the given ids into a (n, dim) array."""
        return np.stack([self.vector(k) for k in keys]) if keys else np.empty((0, self.dim))

    def cosine(self, a: str, b: str) -> float:
        """Cosine similarity between two stored ids (dot of unit vectors)."""
        return float(np.dot(self.vector(a), self.vector(b)))

    def centroid(self, keys) -> np.ndarray:
        """Unit-normalized mean of the given ids' vectors."""
        keys = list(keys)
        if not keys:
            raise InputError("centroid of an empty id set")
        mean = self.matrix(keys).mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < _MIN_NORM:
            raise InputError("degenerate centroid: member vectors cancel out")
        return mean / norm

    def nearest(self, src: str, candidates) -> tuple[str, float]:
        """Candidate with the highest cosine to src; ties go to the earliest
        position in the candidate list."""
        candidates = list(candidates)
        if not candidates:
            raise InputError("nearest() needs at least one candidate")
        v = self.vector(src)
        best_key, best_sim = candidates[0], float(np.dot(v, self.vector(candidates[0])))
        for key in candidates[1:]:
            sim = float(np.dot(v, self.vector(key)))
            if sim > best_sim:
                best_key, best_sim = key, sim
        return best_key, best_sim


def normalize(raw: np.ndarray) -> np.ndarray:
    vec = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise InputError("embedding vector has non-finite components")
    norm = float(np.linalg.norm(vec))
    if norm < _MIN_NORM:
        raise InputError("zero-norm embedding vector")
    return vec / norm


def make_table(raw_vectors: dict[str, object]) -> EmbeddingTable:
    """Build a table from in-memory vectors (normalizing and validating)."""
    if not raw_vectors:
        raise InputError("empty embedding table")
    vecs = {key: normalize(np.asarray(v)) for key, v in raw_vectors.items()}
    dims = {v.shape[0] for v in vecs.values()}
    if len(dims) != 1:
        raise InputError(f"inconsistent embedding dimensions: {sorted(dims)}")
    return EmbeddingTable(dim=dims.pop(), vectors=vecs)


def load_vectors(path: str | Path) -> EmbeddingTable:
    """Load an embedding file, normalizing every vector to unit length."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#dim "):
            raise FormatError(f"{path}:1: expected `#dim D` header, got {header!r}")
        try:
            dim = int(header.split()[1])
        except (IndexError, ValueError):
            raise FormatError(f"{path}:1: malformed dimension header {header!r}") from None
        if dim < 1:
            raise FormatError(f"{path}:1: dimension must be positive")
        for lineno, raw in enumerate(fh, 2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError(f"{path}:{lineno}: expected `id<TAB>floats`")
            key, payload = line.split("\t", 1)
            if key in vectors:
                raise FormatError(f"{path}:{lineno}: duplicate embedding id {key!r}")
            try:
                vec = np.array([float(x) for x in payload.split()], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector component") from None
            if vec.shape[0] != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} components, got {vec.shape[0]}"
                )
            try:
                vectors[key] = normalize(vec)
            except InputError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return EmbeddingTable(dim=dim, vectors=vectors)


def write_vectors(vectors: dict[str, object], dim: int, path: str | Path) -> None:
    """Write vectors in the load_vectors file format (ids sorted)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim {dim}\n")
        for key in sorted(vectors):
            comps = " ".join(repr(float(x)) for x in np.asarray(vectors[key]))
            fh.write(f"{key}\t{comps}\n")
