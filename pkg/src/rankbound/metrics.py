"""Exact (non-differentiable) retrieval metrics.

These are the ground truth every smooth surrogate is verified against.
All rank quantities use the tie-pessimistic convention of
:func:`rankbound.core.exact_ranks`; all values lie in [0, 1] and are
invariant under strictly increasing transforms of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (HierarchyTree, LevelPartition, RankingProblem,
                   build_hierarchy, rank_stats)
from .relevance import (RelevanceSpec, binary_relevance, ndcg_relevance)


class NoPositivesError(ValueError):
    """The query has no relevant instance, so the metric is undefined."""


class NotPositiveRank(ValueError):
    """The requested cutoff does not fall on a positive instance."""


def _check_positives(problem: RankingProblem) -> None:
    if problem.num_positives == 0:
        raise NoPositivesError("metric undefined: query has no positives")


def _check_binary(problem: RankingProblem, name: str) -> None:
    if not problem.is_binary:
        raise ValueError(f"{name} is defined for binary relevance only")


def average_precision(problem: RankingProblem) -> float:
    """Mean over positives of rank_plus / rank."""
    _check_positives(problem)
    _check_binary(problem, "average_precision")
    rp, rm, _ = rank_stats(problem)
    return float(np.mean(rp / (rp + rm)))


def map_at_r(problem: RankingProblem) -> float:
    """AP truncated at R = number of positives and normalized by R.

    Positives ranked beyond R contribute zero; the definition follows the
    metric-learning convention for the mAP@R column.
    """
    _check_positives(problem)
    _check_binary(problem, "map_at_r")
    rp, rm, _ = rank_stats(problem)
    rank = rp + rm
    r = problem.num_positives
    return float(np.sum(np.where(rank <= r, rp / rank, 0.0)) / r)


def recall_at_k(problem: RankingProblem, k: int) -> float:
    """1.0 if any positive appears in the top-k by score, else 0.0."""
    _check_positives(problem)
    if k < 1:
        raise ValueError("k must be >= 1")
    order = problem.descending_order()[: min(k, problem.n)]
    return float(np.any(problem.rel[order] > 0))


def true_recall_at_k(problem: RankingProblem, k: int) -> float:
    """Number of positives in the top-k over min(k, number of positives)."""
    _check_positives(problem)
    if k < 1:
        raise ValueError("k must be >= 1")
    order = problem.descending_order()[: min(k, problem.n)]
    hits = int(np.count_nonzero(problem.rel[order] > 0))
    return hits / min(k, problem.num_positives)


def ndcg(problem: RankingProblem) -> float:
    """Discounted cumulative gain over its ideal value."""
    _check_positives(problem)
    rp, rm, _ = rank_stats(problem)
    rank = rp + rm
    rel_pos = problem.rel[problem.pos_indices]
    dcg = float(np.sum(rel_pos / np.log2(1.0 + rank)))
    ideal = np.sort(problem.rel)[::-1]
    ideal = ideal[ideal > 0]
    idcg = float(np.sum(ideal / np.log2(2.0 + np.arange(ideal.size))))
    if idcg == 0.0:
        raise NoPositivesError("iDCG is zero")
    return dcg / idcg


def h_ap(problem: RankingProblem) -> float:
    """Graded average precision: mean of graded_rank_plus / rank, weighted
    by total relevance mass.  Coincides with AP under binary relevance."""
    _check_positives(problem)
    rp, rm, hrp = rank_stats(problem)
    total = float(problem.rel.sum())
    return float(np.sum(hrp / (rp + rm)) / total)


def _sorted_rel(problem: RankingProblem) -> np.ndarray:
    return problem.rel[problem.descending_order()]


def h_recall_at_k(problem: RankingProblem, k: int) -> float:
    """Relevance mass in the top-k over the total relevance mass."""
    _check_positives(problem)
    if k < 0:
        raise ValueError("k must be >= 0")
    rel = _sorted_rel(problem)
    k = min(k, problem.n)
    return float(rel[:k].sum() / rel.sum())


def h_precision_at_k(problem: RankingProblem, k: int) -> float:
    """Graded precision at a cutoff that falls on a positive instance."""
    _check_positives(problem)
    if not 1 <= k <= problem.n:
        raise ValueError("k must be in [1, n]")
    rel = _sorted_rel(problem)
    if rel[k - 1] <= 0:
        raise NotPositiveRank(f"instance at rank {k} is not a positive")
    return float(np.minimum(rel[:k], rel[k - 1]).sum() / (k * rel[k - 1]))


def asi(problem: RankingProblem) -> float:
    """Average set intersection between the predicted and ideal rankings.

    At each prefix length n up to the number of positives, the predicted
    and relevance-sorted top-n are compared as multisets of relevance
    values, which makes the result invariant to permutations within a
    relevance class and well defined under ties.
    """
    _check_positives(problem)
    n = problem.num_positives
    pred = _sorted_rel(problem)[:n]
    ideal = np.sort(problem.rel)[::-1][:n]
    inter = np.zeros(n)
    for v in np.unique(problem.rel):
        if v <= 0:
            continue
        inter += np.minimum(np.cumsum(pred == v), np.cumsum(ideal == v))
    return float(np.mean(inter / np.arange(1, n + 1)))


def per_level_ap(problem: RankingProblem, level: int) -> float:
    """Binary AP with the positive set widened to all instances sharing at
    least an ancestor of the given level with the query."""
    depth = problem.relevance.depth
    if not 1 <= level <= depth:
        raise ValueError(f"level must be in [1, {depth}]")
    mask = problem.relevance.levels >= level
    if not mask.any():
        raise NoPositivesError(f"no positives at level {level}")
    return average_precision(RankingProblem.binary(problem.scores, mask))


# -- whole-dataset evaluation ----------------------------------------------

@dataclass
class MetricReport:
    """Per-query metric values and their means over evaluated queries.

    Queries without any positive instance are skipped and only counted.
    Entries that are undefined for a particular query (e.g. binary metrics
    when the query has no fine-grained positive, or graded precision at a
    cutoff that lands on a negative) are stored as NaN and excluded from
    the mean.
    """

    k_values: tuple[int, ...]
    depth: int
    num_queries: int
    num_skipped: int
    per_query: dict[str, np.ndarray] = field(repr=False)

    def mean(self, name: str) -> float:
        vals = self.per_query[name]
        if np.all(np.isnan(vals)):
            return float("nan")
        return float(np.nanmean(vals))

    def means(self) -> dict[str, float]:
        return {name: self.mean(name) for name in self.per_query}

    def csv_rows(self) -> list[tuple[str, str, str, str]]:
        """Rows (metric, level, k, value) with aggregate means."""
        rows: list[tuple[str, str, str, str]] = []

        def add(metric, level, k, value):
            rows.append((metric, str(level), str(k), repr(float(value))))

        add("queries_evaluated", "", "", self.num_queries)
        add("queries_skipped", "", "", self.num_skipped)
        for name in ("ap", "map_at_r", "ndcg", "h_ap", "asi"):
            add(name, "", "", self.mean(name))
        for l in range(1, self.depth + 1):
            add("ap_level", l, "", self.mean(f"ap_level_{l}"))
        for k in self.k_values:
            add("r_at_k", "", k, self.mean(f"r_at_{k}"))
            add("tr_at_k", "", k, self.mean(f"tr_at_{k}"))
            add("h_r_at_k", "", k, self.mean(f"h_r_at_{k}"))
            add("h_p_at_k", "", k, self.mean(f"h_p_at_{k}"))
        return rows


def shared_level_matrix(tree: HierarchyTree,
                        label_paths: Sequence[Sequence[str]]) -> np.ndarray:
    """Pairwise deepest-shared-ancestor levels for a list of labels."""
    n = len(label_paths)
    ids = np.empty((tree.depth, n), dtype=np.int64)
    for j, path in enumerate(label_paths):
        if path not in tree:
            raise ValueError(f"unknown label: {tuple(path)}")
        for l in range(1, tree.depth + 1):
            ids[l - 1, j] = tree.node_id(l, path)
    lvl = np.zeros((n, n), dtype=np.int64)
    for l in range(tree.depth):
        lvl += ids[l][:, None] == ids[l][None, :]
    return lvl


def cosine_scores(embeddings: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity of row embeddings."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("embeddings must be a 2-d array")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("embeddings contain a zero row")
    u = x / norms[:, None]
    return u @ u.T


def evaluate_all(embeddings: np.ndarray,
                 label_paths: Sequence[Sequence[str]],
                 relevance_spec: RelevanceSpec = RelevanceSpec(),
                 k_values: Sequence[int] = (1, 2, 4, 8),
                 tree: HierarchyTree | None = None) -> MetricReport:
    """Score every instance as a query against all others and average.

    The query is excluded from its own retrieval set.  Binary metrics use
    the fine-grained indicator relevance; the graded metrics use
    ``relevance_spec`` except NDCG, which always uses the exponential
    gain.
    """
    label_paths = [tuple(str(c) for c in p) for p in label_paths]
    scores_all = cosine_scores(embeddings)
    if scores_all.shape[0] != len(label_paths):
        raise ValueError("embeddings and labels must have equal length")
    if tree is None:
        tree = build_hierarchy(label_paths)
    depth = tree.depth
    k_values = tuple(int(k) for k in k_values)
    lvl = shared_level_matrix(tree, label_paths)
    n = len(label_paths)

    names = ["ap", "map_at_r", "ndcg", "h_ap", "asi"]
    names += [f"ap_level_{l}" for l in range(1, depth + 1)]
    for k in k_values:
        names += [f"r_at_{k}", f"tr_at_{k}", f"h_r_at_{k}", f"h_p_at_{k}"]
    cols: dict[str, list[float]] = {name: [] for name in names}
    skipped = 0

    keep = ~np.eye(n, dtype=bool)
    for i in range(n):
        levels_i = lvl[i][keep[i]]
        if not np.any(levels_i > 0):
            skipped += 1
            continue
        scores_i = scores_all[i][keep[i]]
        part = LevelPartition(levels=levels_i, depth=depth)
        graded = RankingProblem(scores_i, relevance_spec.build(part))
        gain = RankingProblem(scores_i, ndcg_relevance(part))
        binary = RankingProblem(scores_i, binary_relevance(part))

        row: dict[str, float] = {}
        row["ndcg"] = ndcg(gain)
        row["h_ap"] = h_ap(graded)
        row["asi"] = asi(graded)
        has_fine = binary.num_positives > 0
        row["ap"] = average_precision(binary) if has_fine else np.nan
        row["map_at_r"] = map_at_r(binary) if has_fine else np.nan
        for l in range(1, depth + 1):
            ok = np.any(levels_i >= l)
            row[f"ap_level_{l}"] = per_level_ap(graded, l) if ok else np.nan
        for k in k_values:
            row[f"r_at_{k}"] = recall_at_k(binary, k) if has_fine else np.nan
            row[f"tr_at_{k}"] = true_recall_at_k(binary, k) if has_fine else np.nan
            row[f"h_r_at_{k}"] = h_recall_at_k(graded, k)
            try:
                row[f"h_p_at_{k}"] = h_precision_at_k(graded, min(k, graded.n))
            except NotPositiveRank:
                row[f"h_p_at_{k}"] = np.nan
        for name in names:
            cols[name].append(row[name])

    per_query = {name: np.asarray(vals, dtype=np.float64)
                 for name, vals in cols.items()}
    return MetricReport(k_values=k_values, depth=depth,
                        num_queries=n - skipped, num_skipped=skipped,
                        per_query=per_query)
