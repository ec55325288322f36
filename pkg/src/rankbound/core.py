"""Domain types: label hierarchies, level partitions, ranking problems.

A hierarchy is a fixed-depth label taxonomy; every instance carries a full
path from the coarsest level down to its fine-grained class.  For a given
query, instances partition into disjoint level sets by the depth of the
longest label prefix they share with the query; level 0 is the negative
set.  All types are immutable after construction and all operations are
pure functions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels

LabelPath = tuple[str, ...]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, order="C")  # always copy: never mutate caller flags
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HierarchyTree:
    """A depth-L taxonomy given by the set of full label paths.

    Paths run coarse to fine and are the canonical node encoding: two
    paths sharing a length-p prefix agree on all levels <= p by
    construction.  Node ids per level are assigned in first-appearance
    order and are stable for a fixed path list.
    """

    depth: int
    paths: tuple[LabelPath, ...]
    _node_ids: tuple[dict[LabelPath, int], ...] = field(repr=False)
    _path_set: frozenset[LabelPath] = field(repr=False)

    def __contains__(self, path: Sequence[str]) -> bool:
        return tuple(path) in self._path_set

    def node_id(self, level: int, path: Sequence[str]) -> int:
        """Stable integer id of the level-``level`` node on ``path``."""
        return self._node_ids[level - 1][tuple(path)[:level]]

    def nodes_at_level(self, level: int) -> int:
        return len(self._node_ids[level - 1])

    def shared_level(self, a: Sequence[str], b: Sequence[str]) -> int:
        """Depth of the longest common prefix of two label paths."""
        level = 0
        for x, y in zip(a, b):
            if x != y:
                break
            level += 1
        return level


def build_hierarchy(label_paths: Iterable[Sequence[str]]) -> HierarchyTree:
    """Validate label paths and build the taxonomy they span.

    Raises ValueError on empty input or on a ragged hierarchy (paths of
    differing lengths).
    """
    paths = tuple(tuple(str(c) for c in p) for p in label_paths)
    if not paths:
        raise ValueError("cannot build a hierarchy from an empty path list")
    depth = len(paths[0])
    if depth == 0:
        raise ValueError("label paths must have at least one level")
    if any(len(p) != depth for p in paths):
        raise ValueError("ragged hierarchy: all label paths must have the "
                         f"same length (expected {depth})")
    node_ids: list[dict[LabelPath, int]] = [dict() for _ in range(depth)]
    for p in paths:
        for level in range(1, depth + 1):
            prefix = p[:level]
            node_ids[level - 1].setdefault(prefix, len(node_ids[level - 1]))
    return HierarchyTree(depth=depth, paths=paths,
                         _node_ids=tuple(node_ids),
                         _path_set=frozenset(paths))


@dataclass(frozen=True)
class LevelPartition:
    """Per-instance level indices for one query.

    ``levels[k]`` is the depth of the deepest ancestor instance k shares
    with the query: 0 for negatives, up to ``depth`` for instances of the
    query's fine-grained class.
    """

    levels: np.ndarray
    depth: int

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.int64)
        if levels.ndim != 1:
            raise ValueError("levels must be a 1-d array")
        if levels.size and (levels.min() < 0 or levels.max() > self.depth):
            raise ValueError("levels must lie in [0, depth]")
        object.__setattr__(self, "levels", _freeze(levels))

    @property
    def n(self) -> int:
        return int(self.levels.size)

    def counts(self) -> np.ndarray:
        """Size of each level set, indexed 0..depth; sums to n."""
        return np.bincount(self.levels, minlength=self.depth + 1)

    def cumulative_positive_counts(self) -> np.ndarray:
        """Size of the union of level sets >= l, indexed l = 1..depth."""
        c = self.counts()
        return np.cumsum(c[::-1])[::-1][1:]

    @property
    def num_positives(self) -> int:
        return int(np.count_nonzero(self.levels))


def level_partition(tree: HierarchyTree, query_label: Sequence[str],
                    instance_labels: Iterable[Sequence[str]]) -> LevelPartition:
    """Partition instances of one query's retrieval set by shared level."""
    q = tuple(str(c) for c in query_label)
    if q not in tree:
        raise ValueError(f"unknown label: {q}")
    levels = []
    for lab in instance_labels:
        p = tuple(str(c) for c in lab)
        if p not in tree:
            raise ValueError(f"unknown label: {p}")
        levels.append(tree.shared_level(q, p))
    return LevelPartition(levels=np.asarray(levels, dtype=np.int64),
                          depth=tree.depth)


@dataclass(frozen=True)
class RelevanceVector:
    """Graded relevance of each instance to one query.

    rel(k) = 0 exactly on the negative set.  Relevance normally increases
    with the shared level, but per-instance monotonicity is not enforced:
    the count-normalized hierarchical relevance can invert it on strongly
    unbalanced level partitions.  All rank quantities compare relevance
    values directly, so they stay well defined either way.
    """

    values: np.ndarray
    levels: np.ndarray
    depth: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        levels = np.asarray(self.levels, dtype=np.int64)
        if values.shape != levels.shape or values.ndim != 1:
            raise ValueError("values and levels must be 1-d arrays of equal length")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("relevance values must be finite and non-negative")
        if np.any((values == 0) != (levels == 0)):
            raise ValueError("rel(k) = 0 must hold exactly on level 0")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "levels", _freeze(levels))

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "RelevanceVector":
        """Derive levels from raw graded values (one level per distinct value)."""
        values = np.asarray(values, dtype=np.float64)
        pos_vals = np.unique(values[values > 0])
        levels = np.searchsorted(pos_vals, values) + (values > 0)
        return cls(values=values, levels=levels.astype(np.int64),
                   depth=max(1, pos_vals.size))

    @classmethod
    def binary(cls, positive_mask: Sequence[bool]) -> "RelevanceVector":
        mask = np.asarray(positive_mask, dtype=bool)
        return cls(values=mask.astype(np.float64),
                   levels=mask.astype(np.int64), depth=1)

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class RankingProblem:
    """One query's similarity scores and graded relevances.

    The query itself is excluded from the instance list; scores are
    cosine similarities in [-1, 1] (any real scores are accepted, since
    every quantity below depends on score comparisons only).
    """

    scores: np.ndarray
    relevance: RelevanceVector

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size != self.relevance.n:
            raise ValueError("scores and relevances must have equal length")
        if scores.size < 1:
            raise ValueError("a ranking problem needs at least one instance")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", _freeze(scores))

    @classmethod
    def binary(cls, scores: Sequence[float],
               positive_mask: Sequence[bool]) -> "RankingProblem":
        return cls(scores=np.asarray(scores, dtype=np.float64),
                   relevance=RelevanceVector.binary(positive_mask))

    @classmethod
    def graded(cls, scores: Sequence[float],
               rel_values: Sequence[float]) -> "RankingProblem":
        return cls(scores=np.asarray(scores, dtype=np.float64),
                   relevance=RelevanceVector.from_values(rel_values))

    @property
    def n(self) -> int:
        return int(self.scores.size)

    @property
    def rel(self) -> np.ndarray:
        return self.relevance.values

    @property
    def pos_indices(self) -> np.ndarray:
        return np.flatnonzero(self.relevance.values > 0)

    @property
    def num_positives(self) -> int:
        return int(self.pos_indices.size)

    @property
    def is_binary(self) -> bool:
        vals = self.relevance.values
        return np.unique(vals[vals > 0]).size <= 1

    def descending_order(self) -> np.ndarray:
        """Indices sorted by decreasing score (stable for ties)."""
        return np.argsort(-self.scores, kind="stable")


def _require_positive(problem: RankingProblem, k: int) -> None:
    if not 0 <= k < problem.n:
        raise IndexError(f"instance index {k} out of range")
    if problem.rel[k] <= 0:
        raise ValueError(f"instance {k} is not a positive for this query")


def exact_ranks(problem: RankingProblem, k: int) -> tuple[int, int, int]:
    """Hard (rank_plus, rank_minus, rank) of positive instance k.

    Instances tied in score with k count as ranked above it; k itself
    contributes the leading 1 of rank_plus.
    """
    _require_positive(problem, k)
    s, rel = problem.scores, problem.rel
    ge = s >= s[k]
    rank_plus = int(np.count_nonzero(ge & (rel >= rel[k])))
    rank_minus = int(np.count_nonzero(ge & (rel < rel[k])))
    return rank_plus, rank_minus, rank_plus + rank_minus


def h_rank_plus(problem: RankingProblem, k: int) -> float:
    """Graded rank_plus of positive k: rel(k) plus, for every other
    positive scored at or above k, the relevance of the deepest ancestor
    it shares with the query (min of the two relevances)."""
    _require_positive(problem, k)
    s, rel = problem.scores, problem.rel
    others = (rel > 0) & (s >= s[k])
    others[k] = False
    return float(problem.rel[k] + np.minimum(rel[others], rel[k]).sum())


def rank_stats(problem: RankingProblem):
    """Kernel-backed (rank_plus, rank_minus, graded_rank_plus) over all
    positives in index order."""
    return kernels.exact_rank_stats(problem.scores, problem.rel)


# -- label file round-trip ------------------------------------------------
#
# CSV with header id,level_1,...,level_L (coarse to fine), one row per
# instance, UTF-8.

def write_label_csv(path, ids: Sequence[str],
                    label_paths: Sequence[Sequence[str]]) -> None:
    if len(ids) != len(label_paths):
        raise ValueError("ids and label paths must have equal length")
    depth = len(label_paths[0]) if label_paths else 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id"] + [f"level_{l}" for l in range(1, depth + 1)])
        for i, p in zip(ids, label_paths):
            if len(p) != depth:
                raise ValueError("ragged hierarchy: all label paths must "
                                 "have the same length")
            w.writerow([i, *p])


def read_label_csv(path) -> tuple[list[str], list[LabelPath]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError("empty label file")
    header = rows[0]
    if len(header) < 2 or header[0] != "id":
        raise ValueError("label file header must be id,level_1,...,level_L")
    expected = ["id"] + [f"level_{l}" for l in range(1, len(header))]
    if header != expected:
        raise ValueError(f"unexpected label file header {header!r}")
    ids, paths = [], []
    for row in rows[1:]:
        if len(row) != len(header):
            raise ValueError("label row length does not match header")
        ids.append(row[0])
        paths.append(tuple(row[1:]))
    return ids, paths
