"""Full-catalog ranking metrics with pessimistic tie handling.

The rank of the target is the count of items scoring at least as high as
it does (ties count against the model), so rank 1 means the unique top
score. NDCG and MRR are the single-relevant-item forms 1/log2(1+r) and
1/r; the @k variants are zero once the target falls outside the cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

METRIC_COLUMNS = ("NDCG@5", "NDCG@10", "MRR@5", "MRR@10", "NDCG", "MRR")


def rank_of_target(scores: np.ndarray, target: int) -> int:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError(f"scores must be a non-empty vector, got shape {scores.shape}")
    if not 0 <= target < scores.size:
        raise IndexError(f"target {target} out of range for catalog of {scores.size}")
    return int(np.count_nonzero(scores >= scores[target]))


def ndcg(rank: int) -> float:
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1.0 / math.log2(1.0 + rank)


def mrr(rank: int) -> float:
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1.0 / rank


def ndcg_at(rank: int, k: int) -> float:
    return ndcg(rank) if rank <= k else 0.0


def mrr_at(rank: int, k: int) -> float:
    return mrr(rank) if rank <= k else 0.0


@dataclass
class MetricReport:
    """Mean metric values over a set of queries."""

    means: dict[str, float] = field(default_factory=dict)
    query_count: int = 0

    def csv_row(self, run_id: str, loss: str, seed: int) -> str:
        cells = [run_id, loss, str(seed)]
        cells += [f"{self.means[name]:.6f}" for name in METRIC_COLUMNS]
        return ",".join(cells)


CSV_HEADER = "run_id,loss,seed," + ",".join(METRIC_COLUMNS)


def aggregate(ranks, ks=(5, 10)) -> MetricReport:
    """Mean NDCG/MRR (@k and untruncated) over 1-based ranks.

    Summation follows the given query order, so a fixed ordering of users
    gives bitwise-reproducible means.
    """
    ranks = list(ranks)
    if not ranks:
        raise ValueError("aggregate needs at least one query")
    n = len(ranks)
    means: dict[str, float] = {}
    for k in ks:
        means[f"NDCG@{k}"] = sum(ndcg_at(r, k) for r in ranks) / n
        means[f"MRR@{k}"] = sum(mrr_at(r, k) for r in ranks) / n
    means["NDCG"] = sum(ndcg(r) for r in ranks) / n
    means["MRR"] = sum(mrr(r) for r in ranks) / n
    return MetricReport(means=means, query_count=n)
