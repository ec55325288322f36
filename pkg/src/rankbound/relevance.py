"""Relevance functions mapping a level partition to graded relevances.

Each constructor yields a RelevanceVector whose values strictly increase
with the shared level; relevances are query dependent because the level
set sizes differ per query.  Empty level sets simply contribute no
instances, so their normalizers are never evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LevelPartition, RelevanceVector

KINDS = ("hierarchical", "weighted_ap", "ndcg", "binary")


@dataclass(frozen=True)
class RelevanceSpec:
    """Choice of relevance function plus its parameters.

    kind:    one of hierarchical | weighted_ap | ndcg | binary
    alpha:   decay exponent of the hierarchical relevance (> 0)
    weights: per-level weights of the weighted-AP relevance, summing to 1
    """

    kind: str = "hierarchical"
    alpha: float = 1.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown relevance kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be non-negative and sum to 1")

    def build(self, partition: LevelPartition) -> RelevanceVector:
        if self.kind == "hierarchical":
            return hierarchical_relevance(partition, self.alpha)
        if self.kind == "weighted_ap":
            if self.weights is None:
                raise ValueError("weighted_ap relevance needs weights")
            return weighted_ap_relevance(partition, self.weights)
        if self.kind == "ndcg":
            return ndcg_relevance(partition)
        return binary_relevance(partition)


def hierarchical_relevance(partition: LevelPartition, alpha: float = 1.0) -> RelevanceVector:
    """Level l gets total weight (l/L)**alpha, split uniformly over its members.

    alpha controls how fast relevance decays towards coarse levels; large
    alpha concentrates weight on the fine-grained level.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if partition.num_positives == 0:
        raise ValueError("no positive instances for this query")
    L = partition.depth
    counts = partition.counts()
    per_level = np.zeros(L + 1)
    for l in range(1, L + 1):
        if counts[l]:
            per_level[l] = (l / L) ** alpha / counts[l]
    return RelevanceVector(values=per_level[partition.levels],
                           levels=partition.levels, depth=L)


def weighted_ap_relevance(partition: LevelPartition,
                          weights: Sequence[float]) -> RelevanceVector:
    """Relevance whose graded AP equals the w-weighted mean of per-level APs.

    rel(k) for k at level l is sum over p <= l of w_p divided by the size
    of the level->=p positive set.
    """
    w = np.asarray(weights, dtype=np.float64)
    L = partition.depth
    if w.size != L:
        raise ValueError(f"need {L} weights, got {w.size}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    if partition.num_positives == 0:
        raise ValueError("no positive instances for this query")
    cum_pos = partition.cumulative_positive_counts()  # |levels >= p|, p = 1..L
    per_level = np.zeros(L + 1)
    acc = 0.0
    for p in range(1, L + 1):
        if cum_pos[p - 1]:
            acc += w[p - 1] / cum_pos[p - 1]
        per_level[p] = acc
    return RelevanceVector(values=per_level[partition.levels],
                           levels=partition.levels, depth=L)


def ndcg_relevance(partition: LevelPartition) -> RelevanceVector:
    """Exponential gain 2**l - 1, the standard graded-gain choice."""
    per_level = np.power(2.0, np.arange(partition.depth + 1)) - 1.0
    return RelevanceVector(values=per_level[partition.levels],
                           levels=partition.levels, depth=partition.depth)


def binary_relevance(partition: LevelPartition) -> RelevanceVector:
    """Fine-grained indicator relevance: 1 on the deepest level, else 0."""
    mask = partition.levels == partition.depth
    return RelevanceVector.binary(mask)
