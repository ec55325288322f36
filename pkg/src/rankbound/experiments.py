"""Experiment presets, the trend-suite runner, and the DG diagnostic report.

The synthetic presets are sized so the whole trend suite runs on a laptop
CPU in a few minutes: a separable mixture for convergence checks and a
noisier 64-class mixture (large enough for 256-instance batches) for the
ablation and batch-size trends.  PILOT_THRESHOLDS holds the margins fixed
by a committed pilot run of scripts/run_pilot.py; the acceptance suite
asserts against these exact values.
"""

from __future__ import annotations

import csv
from dataclasses import replace

import numpy as np

from .core import LabelPath, RankingProblem, build_hierarchy
from .decomposability import (BatchSplit, DecompConfig, EmptyBatchError,
                              decomposability_gap, dg_upper_bound_calibrated,
                              dg_upper_bound_plain, margin_violation_counts)
from .metrics import average_precision, cosine_scores, shared_level_matrix
from .relevance import RelevanceSpec
from .surrogates import SurrogateConfig
from .synth import SynthConfig, generate
from .training import TrainConfig, TrainLog, encode, train

# Separable mixture for convergence checks: a perfect ranking is
# realizable, but a random projection starts well below it.
SEPARABLE_DATA = SynthConfig(depth=2, branching=(2, 4), per_class=24, dim=24,
                             spreads=(1.0, 0.45), noise=0.3, seed=7)
SEPARABLE_TRAIN_PER_CLASS = 16

# Noisy 64-class mixture: hard enough that loss choices matter, wide
# enough for 256-instance class-balanced batches (64 classes x 4).
TREND_DATA = SynthConfig(depth=2, branching=(8, 8), per_class=12, dim=24,
                         spreads=(1.0, 0.35), noise=0.22, seed=3)
TREND_TRAIN_PER_CLASS = 8

# Mixture for the DG diagnostic: the per-query retrieval set (575 after
# train split) hosts two or more batches at every default batch size, and
# the noise keeps the trained AP below one so the gap stays visible.
DG_DATA = SynthConfig(depth=2, branching=(8, 8), per_class=11, dim=24,
                      spreads=(1.0, 0.35), noise=0.3, seed=11)
DG_TRAIN_PER_CLASS = 9

# Margins fixed by the committed pilot run (scripts/run_pilot.py): the
# pilot measured 3-seed mean gaps of +0.027 (sup-ap over the sigmoid
# baseline) and +0.011 (proxy objective on top of sup-ap) and a sup-ap + pair-hinge
# test AP of 0.993; thresholds are the floored thirds of each gap.
PILOT_THRESHOLDS = {
    # trend: sup-ap beats the sigmoid baseline by at least this much test AP
    "supap_over_sigmoid": 0.009,
    # trend: adding the proxy objective to sup-ap lifts test AP by at least
    "dgstar_gain": 0.003,
    # convergence: sup-ap + pair-hinge test AP on the separable preset, 30 epochs
    "convergence_test_ap": 0.9,
}


def split_per_class(features: np.ndarray, labels: list[LabelPath],
                    train_per_class: int):
    """Deterministic per-class split into (train_set, test_set)."""
    by_class: dict[LabelPath, list[int]] = {}
    for i, p in enumerate(labels):
        by_class.setdefault(tuple(p), []).append(i)
    train_idx, test_idx = [], []
    for p in sorted(by_class):
        idx = by_class[p]
        train_idx.extend(idx[:train_per_class])
        test_idx.extend(idx[train_per_class:])
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    return ((features[train_idx], [labels[i] for i in train_idx]),
            (features[test_idx], [labels[i] for i in test_idx]))


def separable_sets():
    feats, labels = generate(SEPARABLE_DATA)
    return split_per_class(feats, labels, SEPARABLE_TRAIN_PER_CLASS)


def trend_sets():
    feats, labels = generate(TREND_DATA)
    return split_per_class(feats, labels, TREND_TRAIN_PER_CLASS)


def dg_sets():
    feats, labels = generate(DG_DATA)
    return split_per_class(feats, labels, DG_TRAIN_PER_CLASS)


def trend_config(surrogate: str = "sup-ap", dg: str = "none",
                 batch_size: int = 32, alpha: float = 1.0,
                 lam: float = 0.1, rho: float = 100.0,
                 epochs: int = 12, seed: int = 0) -> TrainConfig:
    """Training configuration used by the trend experiments.

    The MLP encoder matters here: a linear map is globally rigid, so
    batch-local ordering already transfers to the full set and the
    calibration objectives have nothing to repair.
    """
    return TrainConfig(
        encoder="mlp", hidden=48, embed_dim=8, batch_size=batch_size,
        samples_per_class=4, epochs=epochs, lr=0.01,
        surrogate=surrogate,
        relevance=RelevanceSpec(kind="hierarchical", alpha=alpha),
        surrogate_cfg=SurrogateConfig(rho=rho),
        decomp=DecompConfig(kind=dg, lam=lam),
        seed=seed)


def ap_hinge_config(epochs: int = 30, seed: int = 0) -> TrainConfig:
    """Sup-ap combined with the pair hinge, on the separable preset."""
    return TrainConfig(
        encoder="linear", embed_dim=8, batch_size=32, samples_per_class=4,
        epochs=epochs, lr=0.005, surrogate="sup-ap",
        relevance=RelevanceSpec(kind="hierarchical", alpha=1.0),
        decomp=DecompConfig(kind="pair", lam=0.1), seed=seed)


def final_test_metric(log: TrainLog, name: str) -> float:
    return log.final.test_report.mean(name)


# -- the named experiment suite --------------------------------------------

EXPERIMENT_NAMES = ("ablation", "dg-vs-batchsize", "alpha-sweep",
                    "lambda-sweep", "rho-sweep")


def _suite_cells(name: str, epochs: int):
    if name == "ablation":
        grid = [("smooth-ap", "none"), ("sup-ap", "none"), ("sup-ap", "pair"),
                ("sup-ap", "proxy"), ("sup-rk", "none"), ("sup-rk", "proxy")]
        return [(f"{s}+{d}", trend_config(surrogate=s, dg=d, epochs=epochs),
                 ("ap", "map_at_r")) for s, d in grid]
    if name == "dg-vs-batchsize":
        cells = []
        for b in (32, 64, 128, 256):
            for d in ("none", "proxy"):
                cells.append((f"b{b}+{d}",
                              trend_config(dg=d, batch_size=b, epochs=epochs),
                              ("ap", "map_at_r")))
        return cells
    if name == "alpha-sweep":
        return [(f"alpha{a}",
                 trend_config(surrogate="sup-hap", dg="proxy", alpha=a,
                              epochs=epochs),
                 ("ap", "h_ap", "ap_level_1"))
                for a in (1.0, 2.0, 3.0, 5.0)]
    if name == "lambda-sweep":
        return [(f"lam{l}",
                 trend_config(dg="proxy", lam=l, epochs=epochs), ("ap",))
                for l in (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)]
    if name == "rho-sweep":
        return [(f"rho{r}", trend_config(rho=r, epochs=epochs), ("ap",))
                for r in (0.1, 1.0, 10.0, 100.0, 1000.0)]
    raise ValueError(f"unknown experiment {name!r}; "
                     f"choose from {', '.join(EXPERIMENT_NAMES)}")


def run_experiment_suite(name: str, out_path, seeds=(0, 1, 2),
                         epochs: int = 12) -> list[list[str]]:
    """Run one named experiment grid and write per-cell mean/sd rows."""
    cells = _suite_cells(name, epochs)
    train_set, test_set = trend_sets()
    rows = [["experiment", "cell", "metric", "mean", "sd", "seeds"]]
    for cell_id, cfg, metric_names in cells:
        per_metric = {m: [] for m in metric_names}
        for seed in seeds:
            log = train(train_set, test_set, replace(cfg, seed=seed))
            for m in metric_names:
                per_metric[m].append(final_test_metric(log, m))
        for m in metric_names:
            vals = np.asarray(per_metric[m])
            rows.append([name, cell_id, m, repr(float(vals.mean())),
                         repr(float(vals.std())), str(len(seeds))])
    if out_path is not None:
        with open(out_path, "w", newline="", encoding="utf-8") as f:
            csv.writer(f).writerows(rows)
    return rows


# -- decomposability report -------------------------------------------------

def stratified_split(positive_mask: np.ndarray, num_batches: int,
                     batch_size: int, rng: np.random.Generator):
    """A valid random split: positives are dealt round-robin over batches
    (so no batch starves), negatives fill the rest; returns (permutation
    into the retrieval set, BatchSplit over the permuted positions)."""
    pos = rng.permutation(np.flatnonzero(positive_mask))
    neg = rng.permutation(np.flatnonzero(~positive_mask))
    usable = num_batches * batch_size
    slots: list[list[int]] = [[] for _ in range(num_batches)]
    unplaced: list[int] = []
    for i, p in enumerate(pos):
        if len(slots[i % num_batches]) < batch_size:
            slots[i % num_batches].append(int(p))
        else:
            unplaced.append(int(p))
    filler = iter([int(x) for x in neg] + unplaced)
    for b in range(num_batches):
        while len(slots[b]) < batch_size:
            slots[b].append(next(filler))
    perm = np.concatenate([np.asarray(s, dtype=np.int64) for s in slots])
    split = BatchSplit(tuple(np.split(np.arange(usable), num_batches)))
    return perm, split


def dg_report(batch_sizes=(32, 64, 128, 256), with_dg: str = "none",
              seed: int = 0, epochs: int = 3, num_queries: int = 32,
              decomp: DecompConfig = DecompConfig()) -> list[list[str]]:
    """Measure the AP decomposability gap against both closed-form bounds.

    Trains briefly on the DG preset with the requested objective, then,
    for a seeded sample of queries, splits each query's retrieval set
    (truncated to a multiple of the batch size, positives stratified so
    every batch has one) and reports the measured gap next to the
    juxtaposition bound and the margin-calibrated bound.
    """
    train_set, test_set = dg_sets()
    cfg = trend_config(surrogate="sup-ap", dg=with_dg, epochs=epochs, seed=seed)
    log = train(train_set, test_set, cfg)
    params = {k: v for k, v in log.checkpoint.items() if k != "proxies"}
    emb, _ = encode(params, np.asarray(train_set[0], dtype=np.float64))
    scores = cosine_scores(emb)
    labels = [tuple(p) for p in train_set[1]]
    tree = build_hierarchy(labels)
    lvl = shared_level_matrix(tree, labels)
    n = len(labels)

    rng = np.random.default_rng(seed)
    queries = rng.choice(n, size=min(num_queries, n), replace=False)
    rows = [["batch_size", "measured_dg", "plain_bound", "calibrated_bound",
             "queries"]]
    for b in batch_sizes:
        usable = ((n - 1) // b) * b
        if usable < b:
            raise ValueError(f"batch size {b} exceeds the retrieval set")
        k = min(usable // b, 8)  # a handful of batches is enough signal
        gaps, plains, calis = [], [], []
        for q in queries:
            mask = np.delete(lvl[q], q) == tree.depth
            s_q = np.delete(scores[q], q)
            if int(mask.sum()) < k:  # cannot give every batch a positive
                continue
            perm, split = stratified_split(mask, k, b, rng)
            sub_scores = s_q[perm]
            sub_mask = mask[perm]
            problem = RankingProblem.binary(sub_scores, sub_mask)
            gap = decomposability_gap(average_precision, problem, split)
            pos_counts, neg_counts = [], []
            gp, ep, gn, en = [], [], [], []
            for idx in split.batches:
                bm = sub_mask[idx]
                pos_counts.append(int(bm.sum()))
                neg_counts.append(int(bm.size - bm.sum()))
                a, b_, c, d = margin_violation_counts(
                    sub_scores[idx], bm, decomp.pos_margin, decomp.neg_margin)
                gp.append(a); ep.append(b_); gn.append(c); en.append(d)
            gaps.append(gap)
            plains.append(dg_upper_bound_plain(pos_counts, neg_counts))
            calis.append(dg_upper_bound_calibrated(gp, ep, gn, en))
        if gaps:
            rows.append([str(b), repr(float(np.mean(gaps))),
                         repr(float(np.mean(plains))),
                         repr(float(np.mean(calis))), str(len(gaps))])
        else:
            rows.append([str(b), "nan", "nan", "nan", "0"])
    return rows
