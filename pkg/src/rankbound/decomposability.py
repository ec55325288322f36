"""Decomposability gap diagnostics and the score-calibration objectives.

Rank metrics averaged over mini-batches overestimate their full-set value;
the gap is measured by :func:`decomposability_gap` and bounded in closed
form for juxtaposed worst-case constructions.  Two objectives shrink it:
a pair-margin hinge on raw scores and a proxy softmax on embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import RankingProblem, RelevanceVector
from .surrogates import LossResult


class EmptyBatchError(ValueError):
    """A batch contains no positive; the caller should resample the split."""


@dataclass(frozen=True)
class DecompConfig:
    """Hyper-parameters of the decomposability objectives.

    kind selects the objective (none | pair | proxy); lam is the mixing
    weight of the combined loss; pos_margin / neg_margin are the hinge
    thresholds on cosine scores; proxy_temperature scales the proxy
    softmax logits.
    """

    kind: str = "pair"
    lam: float = 0.1
    pos_margin: float = 0.9
    neg_margin: float = 0.6
    proxy_temperature: float = 0.05

    def __post_init__(self):
        if self.kind not in ("none", "pair", "proxy"):
            raise ValueError(f"unknown decomposability objective {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not -1.0 <= self.neg_margin < self.pos_margin <= 1.0:
            raise ValueError("margins must satisfy -1 <= neg < pos <= 1")
        if self.proxy_temperature <= 0:
            raise ValueError("proxy_temperature must be positive")


@dataclass(frozen=True)
class BatchSplit:
    """Equal-size disjoint index sets covering a retrieval set."""

    batches: tuple[np.ndarray, ...]

    def __post_init__(self):
        batches = tuple(np.asarray(b, dtype=np.int64) for b in self.batches)
        if not batches:
            raise ValueError("a split needs at least one batch")
        size = batches[0].size
        if any(b.size != size for b in batches):
            raise ValueError("batches must have equal sizes")
        all_idx = np.concatenate(batches)
        n = all_idx.size
        if not np.array_equal(np.sort(all_idx), np.arange(n)):
            raise ValueError("batches must disjointly cover 0..n-1")
        object.__setattr__(self, "batches", batches)

    @property
    def num_batches(self) -> int:
        return len(self.batches)

    @classmethod
    def contiguous(cls, n: int, num_batches: int) -> "BatchSplit":
        if n % num_batches:
            raise ValueError("batch count must divide the set size")
        return cls(tuple(np.split(np.arange(n), num_batches)))

    @classmethod
    def random(cls, n: int, num_batches: int, rng: np.random.Generator) -> "BatchSplit":
        if n % num_batches:
            raise ValueError("batch count must divide the set size")
        return cls(tuple(np.split(rng.permutation(n), num_batches)))


def _restrict(problem: RankingProblem, idx: np.ndarray) -> RankingProblem:
    rv = problem.relevance
    return RankingProblem(
        scores=problem.scores[idx],
        relevance=RelevanceVector(values=rv.values[idx], levels=rv.levels[idx],
                                  depth=rv.depth))


def decomposability_gap(metric_fn: Callable[[RankingProblem], float],
                        problem: RankingProblem, split: BatchSplit) -> float:
    """Mean batch metric minus the full-set metric for one query."""
    batch_vals = []
    for idx in split.batches:
        sub = _restrict(problem, idx)
        if sub.num_positives == 0:
            raise EmptyBatchError("a batch has no positive instance")
        batch_vals.append(metric_fn(sub))
    return float(np.mean(batch_vals) - metric_fn(problem))


def dg_upper_bound_plain(batch_positive_counts: Sequence[int],
                         batch_negative_counts: Sequence[int]) -> float:
    """Worst-case gap when every batch is perfectly ranked and the global
    ranking is the juxtaposition of the batches."""
    pos = np.asarray(batch_positive_counts, dtype=np.int64)
    neg = np.asarray(batch_negative_counts, dtype=np.int64)
    if pos.shape != neg.shape or pos.ndim != 1:
        raise ValueError("need one positive and one negative count per batch")
    if np.any(pos < 0) or np.any(neg < 0):
        raise ValueError("counts must be non-negative")
    total = int(pos.sum())
    if total == 0:
        raise ValueError("no positives in any batch")
    pos_before = np.concatenate([[0], np.cumsum(pos)[:-1]])
    neg_before = np.concatenate([[0], np.cumsum(neg)[:-1]])
    acc = 0.0
    for b in range(pos.size):
        j = np.arange(1, pos[b] + 1, dtype=np.float64)
        acc += np.sum((j + pos_before[b]) / (j + pos_before[b] + neg_before[b]))
    return 1.0 - acc / total


def dg_upper_bound_calibrated(calibrated_pos: Sequence[int],
                              violating_pos: Sequence[int],
                              calibrated_neg: Sequence[int],
                              violating_neg: Sequence[int]) -> float:
    """Worst-case gap refined by margin-calibration counts.

    Calibrated positives rank after previous batches' calibrated positives
    and violating negatives only; violating positives rank after all
    previous instances plus the current batch's calibrated positives.
    With no violations the bound collapses to zero; with every instance
    violating it reduces to the plain bound.  It is guaranteed to tighten
    the plain bound when the violations are one-sided (no violating
    positives, or no violating negatives); with violations on both sides
    simultaneously it remains a valid worst-case bound but may exceed the
    plain one.
    """
    gp = np.asarray(calibrated_pos, dtype=np.int64)
    ep = np.asarray(violating_pos, dtype=np.int64)
    gn = np.asarray(calibrated_neg, dtype=np.int64)
    en = np.asarray(violating_neg, dtype=np.int64)
    if not (gp.shape == ep.shape == gn.shape == en.shape) or gp.ndim != 1:
        raise ValueError("need four equal-length per-batch count vectors")
    if min(gp.min(initial=0), ep.min(initial=0),
           gn.min(initial=0), en.min(initial=0)) < 0:
        raise ValueError("counts must be non-negative")
    pos = gp + ep
    neg = gn + en
    total = int(pos.sum())
    if total == 0:
        raise ValueError("no positives in any batch")
    pos_before = np.concatenate([[0], np.cumsum(pos)[:-1]])
    neg_before = np.concatenate([[0], np.cumsum(neg)[:-1]])
    gp_before = np.concatenate([[0], np.cumsum(gp)[:-1]])
    en_before = np.concatenate([[0], np.cumsum(en)[:-1]])
    acc = 0.0
    for b in range(gp.size):
        j = np.arange(1, gp[b] + 1, dtype=np.float64)
        acc += np.sum((j + gp_before[b]) / (j + gp_before[b] + en_before[b]))
        j = np.arange(1, ep[b] + 1, dtype=np.float64)
        acc += np.sum((j + gp[b] + pos_before[b]) /
                      (j + gp[b] + pos_before[b] + neg_before[b]))
    return 1.0 - acc / total


def margin_violation_counts(scores: np.ndarray, positive_mask: np.ndarray,
                            pos_margin: float, neg_margin: float):
    """Per-batch (calibrated_pos, violating_pos, calibrated_neg,
    violating_neg) counts feeding the calibrated bound."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(positive_mask, dtype=bool)
    pos_s = scores[mask]
    neg_s = scores[~mask]
    return (int(np.count_nonzero(pos_s >= pos_margin)),
            int(np.count_nonzero(pos_s < pos_margin)),
            int(np.count_nonzero(neg_s <= neg_margin)),
            int(np.count_nonzero(neg_s > neg_margin)))


def l_dg(scores: np.ndarray, positive_mask: np.ndarray,
         pos_margin: float = 0.9, neg_margin: float = 0.6) -> LossResult:
    """Pair-margin calibration hinge on one query's batch scores.

    Positives are pushed above pos_margin, negatives below neg_margin; the
    subgradient at an exactly-met margin is zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(positive_mask, dtype=bool)
    if mask.shape != scores.shape:
        raise ValueError("scores and positive mask must have equal length")
    npos = int(np.count_nonzero(mask))
    nneg = int(mask.size - npos)
    if npos == 0 or nneg == 0:
        raise EmptyBatchError("the hinge needs at least one positive and "
                              "one negative in the batch")
    pos_gap = pos_margin - scores[mask]
    neg_gap = scores[~mask] - neg_margin
    value = (float(np.sum(np.maximum(pos_gap, 0.0))) / npos
             + float(np.sum(np.maximum(neg_gap, 0.0))) / nneg)
    grad = np.zeros_like(scores)
    grad[mask] = np.where(pos_gap > 0, -1.0 / npos, 0.0)
    grad[~mask] = np.where(neg_gap > 0, 1.0 / nneg, 0.0)
    return LossResult(value=value, grad_scores=(grad,))


def l_dg_star(embeddings: np.ndarray, proxies: np.ndarray,
              class_ids: np.ndarray, eta: float = 0.05) -> LossResult:
    """Proxy softmax calibration: cross-entropy of each embedding against
    the unit-norm proxy of its fine-grained class."""
    v = np.asarray(embeddings, dtype=np.float64)
    p = np.asarray(proxies, dtype=np.float64)
    y = np.asarray(class_ids, dtype=np.int64)
    if eta <= 0:
        raise ValueError("eta must be positive")
    if v.ndim != 2 or p.ndim != 2 or v.shape[1] != p.shape[1]:
        raise ValueError("embeddings and proxies must share the feature dim")
    if y.shape != (v.shape[0],):
        raise ValueError("need one class id per embedding")
    if np.any(y < 0) or np.any(y >= p.shape[0]):
        raise ValueError("unknown class id")
    norms = np.linalg.norm(p, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("proxies must be unit-norm")
    logits = v @ p.T / eta
    logits -= logits.max(axis=1, keepdims=True)
    ex = np.exp(logits)
    probs = ex / ex.sum(axis=1, keepdims=True)
    b = v.shape[0]
    value = float(-np.mean(np.log(probs[np.arange(b), y])))
    dz = probs.copy()
    dz[np.arange(b), y] -= 1.0
    dz /= b
    return LossResult(value=value,
                      grad_embeddings=dz @ p / eta,
                      grad_proxies=dz.T @ v / eta)


def combined_loss(surrogate: LossResult, dg: LossResult, lam: float) -> LossResult:
    """Convex combination (1 - lam) * surrogate + lam * dg.

    Both results must carry gradients over the same variables with
    matching shapes.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    value = (1.0 - lam) * surrogate.value + lam * dg.value

    def mix(a, b):
        if a is None and b is None:
            return None
        if a is None or b is None:
            raise ValueError("cannot combine gradients over different variables")
        if a.shape != b.shape:
            raise ValueError("gradient dimension mismatch")
        return (1.0 - lam) * a + lam * b

    if (surrogate.grad_scores is None) != (dg.grad_scores is None):
        raise ValueError("cannot combine gradients over different variables")
    grad_scores = None
    if surrogate.grad_scores is not None:
        if len(surrogate.grad_scores) != len(dg.grad_scores):
            raise ValueError("gradient lists have different lengths")
        grad_scores = tuple(mix(a, b) for a, b in
                            zip(surrogate.grad_scores, dg.grad_scores))
    return LossResult(value=value, grad_scores=grad_scores,
                      grad_embeddings=mix(surrogate.grad_embeddings,
                                          dg.grad_embeddings),
                      grad_proxies=mix(surrogate.grad_proxies, dg.grad_proxies))
