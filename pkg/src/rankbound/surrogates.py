"""Smooth upper-bound rank surrogates and their losses.

The lower-relevance rank count is replaced by a smooth upper bound built
from a piecewise sigmoid-linear step bound; the same-or-higher-relevance
count keeps the hard step and is treated as a constant by the gradients.
The AP, graded-AP and NDCG losses therefore upper-bound one minus their
target metric; all of them keep a nonvanishing gradient on misranked
pairs (constant slope rho beyond the sigmoid's saturation point delta)
and enforce a margin of width ~tau on correctly ranked pairs.  The recall
loss relaxes the cutoff comparison a second time and the sigmoid baseline
relaxes both rank counts, so neither is a bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .core import RankingProblem
from .metrics import NoPositivesError


@dataclass(frozen=True)
class SurrogateConfig:
    """Hyper-parameters of the smooth rank bound and its losses.

    tau:            sigmoid temperature
    rho:            linear slope past the saturation point
    saturation_eps: sigmoid-gradient level defining the saturation point
                    delta = tau * ln((1 - eps) / eps)
    tau_star:       temperature of the outer sigmoid of the recall loss
    k_values:       recall cutoffs averaged by the recall loss
    """

    tau: float = 0.01
    rho: float = 100.0
    saturation_eps: float = 1e-2
    tau_star: float = 0.01
    k_values: tuple[int, ...] = (1, 2, 4, 8)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not 0 < self.saturation_eps < 0.5:
            raise ValueError("saturation_eps must lie in (0, 0.5)")
        if self.tau_star <= 0:
            raise ValueError("tau_star must be positive")
        if any(k < 1 for k in self.k_values):
            raise ValueError("recall cutoffs must be >= 1")

    @property
    def delta(self) -> float:
        eps = self.saturation_eps
        return self.tau * math.log((1.0 - eps) / eps)


@dataclass(frozen=True)
class LossResult:
    """A loss value with analytic gradients.

    grad_scores holds one gradient array per input problem (d loss /
    d scores of that problem).  The proxy loss populates grad_embeddings
    and grad_proxies instead.
    """

    value: float
    grad_scores: tuple[np.ndarray, ...] | None = None
    grad_embeddings: np.ndarray | None = None
    grad_proxies: np.ndarray | None = None


def _elementwise(kernel, t, cfg: SurrogateConfig):
    arr = np.asarray(t, dtype=np.float64)
    out = kernel(arr.reshape(-1), cfg.tau, cfg.delta, cfg.rho)
    if arr.ndim == 0:
        return float(out[0])
    return np.asarray(out).reshape(arr.shape)


def h_minus(t, cfg: SurrogateConfig = SurrogateConfig()):
    """Smooth upper bound of the unit step (elementwise).

    At t = 0 the shifted-sigmoid branch applies, giving 1.0, so the bound
    also holds under exact score ties.
    """
    return _elementwise(kernels.step_bound, t, cfg)


def h_minus_prime(t, cfg: SurrogateConfig = SurrogateConfig()):
    """Derivative of :func:`h_minus`; equals rho beyond the saturation point."""
    return _elementwise(kernels.step_bound_grad, t, cfg)


def smooth_rank_minus(problem: RankingProblem, k: int,
                      cfg: SurrogateConfig = SurrogateConfig()) -> float:
    """Smooth upper bound of rank_minus for positive instance k."""
    if problem.rel[k] <= 0:
        raise ValueError(f"instance {k} is not a positive for this query")
    lower = problem.rel < problem.rel[k]
    diffs = problem.scores[lower] - problem.scores[k]
    return float(np.sum(kernels.step_bound(diffs, cfg.tau, cfg.delta, cfg.rho)))


def _as_problems(problems) -> list[RankingProblem]:
    if isinstance(problems, RankingProblem):
        problems = [problems]
    problems = list(problems)
    if not problems:
        raise ValueError("need at least one ranking problem")
    for p in problems:
        if p.num_positives == 0:
            raise NoPositivesError("loss undefined: query has no positives")
    return problems


def _check_binary(problems: Sequence[RankingProblem], name: str) -> None:
    for p in problems:
        if not p.is_binary:
            raise ValueError(f"{name} is defined for binary relevance only")


def _assemble(per_query_vals, per_query_grads) -> LossResult:
    m = len(per_query_vals)
    value = 1.0 - float(np.mean(per_query_vals))
    grads = tuple(-g / m for g in per_query_grads)
    return LossResult(value=value, grad_scores=grads)


def sup_ap_loss(problems, cfg: SurrogateConfig = SurrogateConfig()) -> LossResult:
    """Upper bound of one minus average precision, averaged over queries."""
    problems = _as_problems(problems)
    _check_binary(problems, "sup_ap_loss")
    vals, grads = [], []
    for p in problems:
        rp, _, _ = kernels.exact_rank_stats(p.scores, p.rel)
        rs = kernels.smooth_rank_minus(p.scores, p.rel, cfg.tau, cfg.delta, cfg.rho)
        den = rp + rs
        vals.append(np.mean(rp / den))
        w = -rp / (den * den) / rp.size
        grads.append(kernels.smooth_rank_minus_backward(
            p.scores, p.rel, w, cfg.tau, cfg.delta, cfg.rho))
    return _assemble(vals, grads)


def sup_hap_loss(problems, cfg: SurrogateConfig = SurrogateConfig()) -> LossResult:
    """Upper bound of one minus graded average precision."""
    problems = _as_problems(problems)
    vals, grads = [], []
    for p in problems:
        rp, _, hrp = kernels.exact_rank_stats(p.scores, p.rel)
        rs = kernels.smooth_rank_minus(p.scores, p.rel, cfg.tau, cfg.delta, cfg.rho)
        den = rp + rs
        total = p.rel.sum()
        vals.append(np.sum(hrp / den) / total)
        w = -hrp / (den * den) / total
        grads.append(kernels.smooth_rank_minus_backward(
            p.scores, p.rel, w, cfg.tau, cfg.delta, cfg.rho))
    return _assemble(vals, grads)


def sup_ndcg_loss(problems, cfg: SurrogateConfig = SurrogateConfig()) -> LossResult:
    """Upper bound of one minus NDCG."""
    problems = _as_problems(problems)
    vals, grads = [], []
    ln2 = math.log(2.0)
    for p in problems:
        rp, _, _ = kernels.exact_rank_stats(p.scores, p.rel)
        rs = kernels.smooth_rank_minus(p.scores, p.rel, cfg.tau, cfg.delta, cfg.rho)
        den = rp + rs
        rel_pos = p.rel[p.pos_indices]
        ideal = np.sort(p.rel)[::-1]
        ideal = ideal[ideal > 0]
        idcg = float(np.sum(ideal / np.log2(2.0 + np.arange(ideal.size))))
        if idcg == 0.0:
            raise NoPositivesError("iDCG is zero")
        vals.append(np.sum(rel_pos / np.log2(1.0 + den)) / idcg)
        w = rel_pos * (-ln2 / ((1.0 + den) * np.log(1.0 + den) ** 2)) / idcg
        grads.append(kernels.smooth_rank_minus_backward(
            p.scores, p.rel, w, cfg.tau, cfg.delta, cfg.rho))
    return _assemble(vals, grads)


def sup_rk_loss(problems, cfg: SurrogateConfig = SurrogateConfig()) -> LossResult:
    """Smooth recall loss averaged over the configured cutoffs.

    The hard rank comparison against each cutoff is relaxed a second time
    with a tau_star sigmoid, so this loss is a two-sided approximation of
    one minus recall; no bound is claimed.
    """
    problems = _as_problems(problems)
    _check_binary(problems, "sup_rk_loss")
    if not cfg.k_values:
        raise ValueError("sup_rk_loss needs at least one recall cutoff")
    vals, grads = [], []
    for p in problems:
        rp, _, _ = kernels.exact_rank_stats(p.scores, p.rel)
        rs = kernels.smooth_rank_minus(p.scores, p.rel, cfg.tau, cfg.delta, cfg.rho)
        den = rp + rs
        npos = rp.size
        q = 0.0
        w = np.zeros_like(den)
        for k in cfg.k_values:
            m = min(npos, k)
            sig = kernels.sigmoid((k - den) / cfg.tau_star)
            q += np.sum(sig) / m
            w -= sig * (1.0 - sig) / cfg.tau_star / m
        q /= len(cfg.k_values)
        w /= len(cfg.k_values)
        vals.append(q)
        grads.append(kernels.smooth_rank_minus_backward(
            p.scores, p.rel, w, cfg.tau, cfg.delta, cfg.rho))
    return _assemble(vals, grads)


def sigmoid_rank_baseline(problems, cfg: SurrogateConfig = SurrogateConfig()) -> LossResult:
    """Sigmoid-rank AP relaxation (two-sided, no bound); ablation baseline."""
    problems = _as_problems(problems)
    _check_binary(problems, "sigmoid_rank_baseline")
    vals, grads = [], []
    for p in problems:
        ap, grad = kernels.smooth_ap_sigmoid(p.scores, p.rel, cfg.tau)
        vals.append(ap)
        grads.append(grad)
    return _assemble(vals, grads)


def finite_diff_check(loss_op: Callable, problem: RankingProblem,
                      cfg: SurrogateConfig = SurrogateConfig(),
                      h: float = 1e-6, grad_floor: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Score coordinates whose pairwise differences fall within 10*h of a
    kink of the step bound (0 or +-delta) are excluded: the loss is not
    differentiable there.  The error denominator is floored at
    ``grad_floor``, the scale below which central differences at step h
    are dominated by float64 rounding of the loss values.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    analytic = loss_op([problem], cfg).grad_scores[0]
    s = np.asarray(problem.scores, dtype=np.float64)
    kink = 10.0 * h
    max_err = 0.0
    for i in range(s.size):
        d = s[i] - np.delete(s, i)
        near = np.minimum(np.abs(d),
                          np.minimum(np.abs(d - cfg.delta), np.abs(d + cfg.delta)))
        if near.size and near.min() <= kink:
            continue
        bumped = s.copy()
        bumped[i] = s[i] + h
        f_hi = loss_op([RankingProblem(bumped, problem.relevance)], cfg).value
        bumped[i] = s[i] - h
        f_lo = loss_op([RankingProblem(bumped, problem.relevance)], cfg).value
        numeric = (f_hi - f_lo) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), grad_floor)
        max_err = max(max_err, abs(analytic[i] - numeric) / denom)
    return max_err
