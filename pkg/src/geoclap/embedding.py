"""Shared embedding space: unit-norm vectors, batches, and cosine similarity.

All arithmetic is float64. Embeddings live on the unit sphere; cosine
similarity between unit vectors is a plain dot product.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatchError, ZeroVectorError

DEFAULT_EMBED_DIM = 512

NORM_TOL = 1e-6
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class EmbeddingVector:
    """A single unit-norm embedding."""

    values: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"expected non-empty 1-d vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite entries")
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"embedding norm {norm} deviates from 1 by more than {NORM_TOL}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dim", values.size)


@dataclass(frozen=True)
class EmbeddingBatch:
    """N unit-norm rows with one id per row."""

    rows: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"expected 2-d row matrix, got shape {rows.shape}")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != rows.shape[0]:
            raise ValueError(f"{len(ids)} ids for {rows.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique within a batch")
        norms = np.linalg.norm(rows, axis=1)
        if rows.shape[0] and np.max(np.abs(norms - 1.0)) > NORM_TOL:
            raise ValueError("all rows must be unit norm")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "ids", ids)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities between two embedding batches."""

    entries: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2:
            raise ValueError(f"expected 2-d matrix, got shape {entries.shape}")
        if entries.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError("entry shape does not match id counts")
        if not np.all(np.isfinite(entries)):
            raise ValueError("similarities contain non-finite entries")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def l2_normalize(v: np.ndarray) -> EmbeddingVector:
    """Scale ``v`` to unit Euclidean norm.

    Raises ZeroVectorError when the norm is below 1e-12: a zero vector here
    always means a degenerate encoder output upstream, never valid data.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot normalize non-finite vector")
    norm = float(np.linalg.norm(v))
    if norm < _ZERO_NORM:
        raise ZeroVectorError(f"vector norm {norm} below {_ZERO_NORM}")
    return EmbeddingVector(v / norm)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise l2 normalization of a feature matrix (plain array in, array out)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms < _ZERO_NORM):
        raise ZeroVectorError("matrix contains a (near-)zero row")
    return matrix / norms


def cosine_similarity_matrix(a: EmbeddingBatch, b: EmbeddingBatch) -> SimilarityMatrix:
    """All pairwise dot products between two unit-norm batches."""
    if a.dim != b.dim:
        raise DimMismatchError(f"dim {a.dim} vs {b.dim}")
    return SimilarityMatrix(a.rows @ b.rows.T, a.ids, b.ids)
