"""Cross-modal retrieval evaluation: ranks, Recall@K, Median Rank.

Rank uses the optimistic tie rule: only strictly greater similarities push
the ground truth down (rank = 1 + #{j != i : s_ij > s_ii}). The even-count
median is the mean of the two middle values. Both conventions are pinned by
the sort-based oracles in the test suite.
"""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass

import numpy as np

from .data import TripletFeatureStore
from .embedding import SimilarityMatrix, cosine_similarity_matrix
from .encoders import ModelSnapshot
from .errors import EmptyInputError, NonSquareError

# direction name -> (query modality, gallery modality)
DIRECTIONS = {
    "image2sound": ("image", "audio"),
    "sound2image": ("audio", "image"),
    "text2sound": ("text", "audio"),
    "sound2text": ("audio", "text"),
    "image2text": ("image", "text"),
    "text2image": ("text", "image"),
}


@dataclass(frozen=True)
class RankVector:
    """Rank of each query's ground truth within its gallery ordering."""

    ranks: np.ndarray
    gallery_size: int

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64)
        if ranks.size and (ranks.min() < 1 or ranks.max() > self.gallery_size):
            raise ValueError("ranks must lie in [1, gallery_size]")
        object.__setattr__(self, "ranks", ranks)

    def __len__(self) -> int:
        return self.ranks.size


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    recall_at_k: dict[int, float]
    median_rank: float
    gallery_size: int


def ranks_from_similarity(sim) -> RankVector:
    """Ground-truth ranks for a square similarity matrix with the matched
    item of query i in column i."""
    entries = sim.entries if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise NonSquareError(f"expected square matrix, got {entries.shape}")
    diag = np.diagonal(entries)
    ranks = 1 + (entries > diag[:, None]).sum(axis=1)
    return RankVector(ranks, entries.shape[0])


def recall_at_k(ranks: RankVector, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranks) == 0:
        raise EmptyInputError("no ranks")
    return float((ranks.ranks <= k).mean())


def median_rank(ranks: RankVector) -> float:
    if len(ranks) == 0:
        raise EmptyInputError("no ranks")
    return float(statistics.median(ranks.ranks.tolist()))


def evaluate_crossmodal(
    snapshot: ModelSnapshot,
    gallery: TripletFeatureStore,
    directions=("image2sound", "sound2image"),
    k_list=(1, 10, 100),
) -> dict[str, RetrievalReport]:
    """Embed the gallery once per modality and score every direction.

    Features are assumed to come from the evaluation preprocessing path
    (center crops / center audio windows).
    """
    needed = {m for d in directions for m in DIRECTIONS[d]}
    embedded = {}
    for modality in needed:
        features = {"audio": gallery.audio, "text": gallery.text, "image": gallery.image}[modality]
        embedded[modality] = snapshot.embed(modality, features, ids=gallery.ids)
    reports = {}
    for direction in directions:
        query_mod, gallery_mod = DIRECTIONS[direction]
        sim = cosine_similarity_matrix(embedded[query_mod], embedded[gallery_mod])
        ranks = ranks_from_similarity(sim)
        reports[direction] = RetrievalReport(
            direction=direction,
            recall_at_k={k: recall_at_k(ranks, k) for k in k_list},
            median_rank=median_rank(ranks),
            gallery_size=len(gallery),
        )
    return reports


def report_to_json(reports: dict[str, RetrievalReport]) -> str:
    payload = {
        d: {
            "recall_at_k": {str(k): v for k, v in r.recall_at_k.items()},
            "median_rank": r.median_rank,
            "gallery_size": r.gallery_size,
        }
        for d, r in reports.items()
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def format_report_table(reports: dict[str, RetrievalReport]) -> str:
    """Aligned-column text table, one row per direction."""
    k_values = sorted({k for r in reports.values() for k in r.recall_at_k})
    header = ["direction"] + [f"R@{k}" for k in k_values] + ["Median-R", "gallery"]
    rows = [header]
    for direction in sorted(reports):
        r = reports[direction]
        rows.append(
            [direction]
            + [f"{r.recall_at_k.get(k, float('nan')):.3f}" for k in k_values]
            + [f"{r.median_rank:g}", str(r.gallery_size)]
        )
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip() for row in rows]
    return "\n".join(lines)
