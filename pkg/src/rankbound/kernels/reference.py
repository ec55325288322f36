"""NumPy implementations of the per-query ranking kernels.

These are the fallback backend for the compiled extension in ``_fast``.
Both backends implement the same contracts on float64 arrays:

* scores: similarity of each retrieved instance to the query, shape (N,)
* rel:    non-negative graded relevance of each instance, shape (N,);
          positives are the instances with rel > 0

All rank quantities follow the tie-pessimistic convention: an instance
tied in score with k counts as ranked above k.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def step_bound(t: np.ndarray, tau: float, delta: float, rho: float) -> np.ndarray:
    """Smooth upper bound of the unit step, evaluated elementwise.

    Sigmoid below zero (margin), shifted sigmoid on [0, delta], linear with
    slope rho beyond delta.  At t = 0 the shifted branch applies, so the
    value is 1.0 and the bound survives exact score ties.
    """
    t = np.asarray(t, dtype=np.float64)
    s = sigmoid(t / tau)
    out = np.where(t < 0.0, s, s + 0.5)
    sat = 1.0 / (1.0 + np.exp(-delta / tau))
    return np.where(t > delta, rho * (t - delta) + sat + 0.5, out)


def step_bound_grad(t: np.ndarray, tau: float, delta: float, rho: float) -> np.ndarray:
    """Derivative of :func:`step_bound` (the [0, delta] branch owns t = delta)."""
    t = np.asarray(t, dtype=np.float64)
    s = sigmoid(t / tau)
    return np.where(t > delta, rho, s * (1.0 - s) / tau)


def exact_rank_stats(scores: np.ndarray, rel: np.ndarray):
    """Hard rank statistics for every positive instance.

    Returns (rank_plus, rank_minus, graded_rank_plus) over positives in
    index order.  rank_plus counts instances of relevance >= rel(k) scored
    at or above k (k itself supplies the leading 1); rank_minus counts
    strictly-lower-relevance instances scored at or above k;
    graded_rank_plus replaces the positive count with a sum of
    min(rel(k), rel(j)) over positives scored at or above k.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    pos = np.flatnonzero(rel > 0.0)
    s_pos = scores[pos]
    r_pos = rel[pos]
    ge = scores[None, :] >= s_pos[:, None]
    rank_plus = (ge & (rel[None, :] >= r_pos[:, None])).sum(axis=1).astype(np.float64)
    rank_minus = (ge & (rel[None, :] < r_pos[:, None])).sum(axis=1).astype(np.float64)
    contrib = np.where(ge & (rel[None, :] > 0.0),
                       np.minimum(rel[None, :], r_pos[:, None]), 0.0)
    graded_rank_plus = contrib.sum(axis=1)
    return rank_plus, rank_minus, graded_rank_plus


def smooth_rank_minus(scores: np.ndarray, rel: np.ndarray,
                      tau: float, delta: float, rho: float) -> np.ndarray:
    """Smooth upper bound of rank_minus for every positive, in index order."""
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    pos = np.flatnonzero(rel > 0.0)
    diff = scores[None, :] - scores[pos][:, None]
    lower = rel[None, :] < rel[pos][:, None]
    h = step_bound(diff, tau, delta, rho)
    return np.where(lower, h, 0.0).sum(axis=1)


def smooth_rank_minus_backward(scores: np.ndarray, rel: np.ndarray,
                               weights: np.ndarray,
                               tau: float, delta: float, rho: float) -> np.ndarray:
    """Backpropagate per-positive upstream weights through smooth_rank_minus.

    Given w(k) = d loss / d smooth_rank_minus(k), returns d loss / d scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    pos = np.flatnonzero(rel > 0.0)
    diff = scores[None, :] - scores[pos][:, None]
    lower = rel[None, :] < rel[pos][:, None]
    g = np.where(lower, step_bound_grad(diff, tau, delta, rho), 0.0)
    g *= weights[:, None]
    grad = g.sum(axis=0)
    np.add.at(grad, pos, -g.sum(axis=1))
    return grad


def smooth_ap_sigmoid(scores: np.ndarray, rel: np.ndarray, tau: float):
    """Sigmoid-rank approximation of average precision, with gradient.

    Both the positive and the lower-relevance rank counts are relaxed with
    a temperature-tau sigmoid, so the result is a two-sided approximation
    (not a bound).  Gradient flows through every pairwise term.

    Returns (ap_value, d ap / d scores).
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    pos = np.flatnonzero(rel > 0.0)
    npos = pos.size
    pos_col = rel > 0.0
    neg_col = ~pos_col
    diff = scores[None, :] - scores[pos][:, None]
    sig = sigmoid(diff / tau)
    num = 1.0 + np.where(pos_col[None, :], sig, 0.0).sum(axis=1) - 0.5
    ng = np.where(neg_col[None, :], sig, 0.0).sum(axis=1)
    den = num + ng
    ap = float(np.mean(num / den))

    inv_d2 = 1.0 / (den * den) / npos
    coef = np.where(pos_col[None, :], (ng * inv_d2)[:, None],
                    (-num * inv_d2)[:, None])
    g = coef * sig * (1.0 - sig) / tau
    g[np.arange(npos), pos] = 0.0
    grad = g.sum(axis=0)
    np.add.at(grad, pos, -g.sum(axis=1))
    return ap, grad
