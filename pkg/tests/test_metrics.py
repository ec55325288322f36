import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankbound.core import RankingProblem, build_hierarchy
from rankbound.metrics import (MetricReport, NoPositivesError, NotPositiveRank,
                               asi, average_precision, evaluate_all, h_ap,
                               h_precision_at_k, h_recall_at_k, map_at_r,
                               ndcg, per_level_ap, recall_at_k,
                               true_recall_at_k)
from rankbound.relevance import RelevanceSpec

from conftest import random_binary_problem, random_graded_problem, random_hier_problem


# -- independent oracles: literal double-loop translations -------------------

def oracle_rank(scores, rel, k):
    rp, rm = 1, 0
    for j in range(len(scores)):
        if j == k or scores[j] < scores[k]:
            continue
        if rel[j] >= rel[k]:
            rp += 1
        else:
            rm += 1
    return rp, rm


def oracle_graded_rank_plus(scores, rel, k):
    out = rel[k]
    for j in range(len(scores)):
        if j != k and rel[j] > 0 and scores[j] >= scores[k]:
            out += min(rel[k], rel[j])
    return out


def oracle_ap(scores, rel):
    pos = [k for k in range(len(scores)) if rel[k] > 0]
    total = 0.0
    for k in pos:
        rp, rm = oracle_rank(scores, rel, k)
        total += rp / (rp + rm)
    return total / len(pos)


def oracle_h_ap(scores, rel):
    pos = [k for k in range(len(scores)) if rel[k] > 0]
    total = 0.0
    for k in pos:
        rp, rm = oracle_rank(scores, rel, k)
        total += oracle_graded_rank_plus(scores, rel, k) / (rp + rm)
    return total / sum(rel[k] for k in pos)


class TestAveragePrecision:
    def test_perfect(self):
        p = RankingProblem.binary([0.9, 0.8, 0.1], [1, 1, 0])
        assert average_precision(p) == 1.0

    def test_interleaved(self):
        p = RankingProblem.binary([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert average_precision(p) == pytest.approx((1 + 2 / 3) / 2)

    def test_positives_last(self):
        p = RankingProblem.binary([0.9, 0.8, 0.7, 0.6], [0, 0, 1, 1])
        assert average_precision(p) == pytest.approx((1 / 3 + 2 / 4) / 2)

    def test_no_positives_rejected(self):
        with pytest.raises(NoPositivesError):
            average_precision(RankingProblem.binary([0.1], [0]))

    def test_matches_oracle(self, rng):
        for _ in range(100):
            p = random_binary_problem(rng)
            assert average_precision(p) == pytest.approx(
                oracle_ap(p.scores, p.rel), abs=1e-12)


class TestMapAtR:
    def test_perfect(self):
        p = RankingProblem.binary([0.9, 0.8, 0.1], [1, 1, 0])
        assert map_at_r(p) == 1.0

    def test_positive_beyond_r_contributes_zero(self):
        assert map_at_r(RankingProblem.binary([.9, .8, .7], [1, 0, 1])) == 0.5
        assert map_at_r(RankingProblem.binary([.9, .8, .7], [0, 1, 1])) == 0.25


class TestRecall:
    def test_hit_at_one(self):
        p = RankingProblem.binary([0.9, 0.1], [1, 0])
        assert recall_at_k(p, 1) == 1.0

    def test_miss_then_hit(self):
        p = RankingProblem.binary([0.9, 0.8, 0.7, 0.6], [0, 0, 1, 0])
        assert recall_at_k(p, 2) == 0.0
        assert recall_at_k(p, 4) == 1.0

    def test_k_beyond_n_clamped(self):
        p = RankingProblem.binary([0.9, 0.1], [0, 1])
        assert recall_at_k(p, 10) == 1.0

    def test_true_recall_counts(self):
        p = RankingProblem.binary([.9, .8, .7, .6], [1, 1, 0, 1])
        assert true_recall_at_k(p, 2) == 1.0
        assert true_recall_at_k(p, 3) == pytest.approx(2 / 3)

    def test_true_recall_perfect(self):
        p = RankingProblem.binary([.9, .8, .1], [1, 1, 0])
        for k in (1, 2, 3, 5):
            assert true_recall_at_k(p, k) == 1.0


class TestNdcg:
    def test_ideal_ranking(self):
        p = RankingProblem.graded([0.9, 0.8, 0.7], [3.0, 1.0, 0.0])
        assert ndcg(p) == pytest.approx(1.0)

    def test_worked_example(self):
        p = RankingProblem.graded([0.9, 0.8, 0.7], [1.0, 3.0, 0.0])
        dcg = 1.0 + 3.0 / np.log2(3.0)
        idcg = 3.0 + 1.0 / np.log2(3.0)
        assert ndcg(p) == pytest.approx(dcg / idcg)

    def test_single_positive_second(self):
        p = RankingProblem.graded([0.9, 0.8], [0.0, 1.0])
        assert ndcg(p) == pytest.approx(1 / np.log2(3.0))


class TestGradedAp:
    def test_perfect_ranking(self, rng):
        for _ in range(20):
            p = random_graded_problem(rng)
            order = np.argsort(-p.rel, kind="stable")
            sorted_scores = np.sort(rng.uniform(-1, 1, p.n))[::-1]
            scores = np.empty(p.n)
            scores[order] = sorted_scores
            assert h_ap(RankingProblem(scores, p.relevance)) == pytest.approx(1.0)

    def test_binary_equals_ap(self, rng):
        for _ in range(100):
            p = random_binary_problem(rng)
            assert abs(h_ap(p) - average_precision(p)) < 1e-12

    def test_matches_oracle(self, rng):
        for _ in range(100):
            p = random_graded_problem(rng)
            assert h_ap(p) == pytest.approx(oracle_h_ap(p.scores, p.rel),
                                            abs=1e-12)

    def test_good_swap_never_decreases(self, rng):
        # moving a higher-relevance item one rank up cannot hurt
        for _ in range(200):
            p = random_graded_problem(rng, n_min=3)
            order = p.descending_order()
            i = int(rng.integers(p.n - 1))
            a, b = order[i], order[i + 1]
            if p.rel[b] <= p.rel[a]:
                continue
            scores = p.scores.copy()
            scores[a], scores[b] = scores[b], scores[a]
            better = RankingProblem(scores, p.relevance)
            assert h_ap(better) >= h_ap(p) - 1e-12


class TestGradedCurves:
    def test_binary_consistency(self, rng):
        for _ in range(50):
            p = random_binary_problem(rng)
            order = p.descending_order()
            rel_sorted = p.rel[order]
            npos = p.num_positives
            for k in range(1, p.n + 1):
                hits = rel_sorted[:k].sum()
                assert h_recall_at_k(p, k) == pytest.approx(hits / npos,
                                                            abs=1e-12)
                if rel_sorted[k - 1] > 0:
                    assert h_precision_at_k(p, k) == pytest.approx(hits / k,
                                                                   abs=1e-12)

    def test_full_recall_when_all_positive(self):
        p = RankingProblem.graded([0.3, 0.2, 0.1], [1.0, 0.5, 0.5])
        assert h_recall_at_k(p, 3) == pytest.approx(1.0)

    def test_precision_needs_positive_rank(self):
        p = RankingProblem.graded([0.9, 0.8], [1.0, 0.0])
        with pytest.raises(NotPositiveRank):
            h_precision_at_k(p, 2)

    def test_area_identity(self, rng):
        # sum over ranks of (recall step) x precision equals the graded AP
        for _ in range(300):
            p = random_graded_problem(rng)
            area = 0.0
            prev = 0.0
            rel_sorted = p.rel[p.descending_order()]
            for k in range(1, p.n + 1):
                cur = h_recall_at_k(p, k)
                if rel_sorted[k - 1] > 0:
                    area += (cur - prev) * h_precision_at_k(p, k)
                prev = cur
            assert area == pytest.approx(h_ap(p), abs=1e-9)


class TestAsi:
    def test_prediction_equals_ideal(self):
        p = RankingProblem.graded([0.9, 0.8, 0.7], [1.0, 0.5, 0.0])
        assert asi(p) == 1.0

    def test_swapped_pair(self):
        p = RankingProblem.graded([0.9, 0.8], [2 / 3, 1.0])
        assert asi(p) == 0.5

    def test_ties_compare_as_multisets(self):
        # permutations within a relevance class do not matter
        p = RankingProblem.graded([0.9, 0.8, 0.7, 0.6],
                                  [0.5, 0.5, 1.0, 0.0])
        q = RankingProblem.graded([0.8, 0.9, 0.7, 0.6],
                                  [0.5, 0.5, 1.0, 0.0])
        assert asi(p) == asi(q)

    def test_range(self, rng):
        for _ in range(100):
            p = random_graded_problem(rng)
            assert 0.0 <= asi(p) <= 1.0


class TestPerLevelAp:
    def test_finest_level_is_plain_ap(self, rng):
        for _ in range(50):
            p, part = random_hier_problem(rng, depth=3)
            binarized = RankingProblem.binary(p.scores,
                                              p.relevance.levels == 3)
            if binarized.num_positives == 0:
                continue
            assert per_level_ap(p, 3) == average_precision(binarized)

    def test_binarize_then_ap_oracle(self, rng):
        for _ in range(100):
            p, part = random_hier_problem(rng, depth=3)
            for level in (1, 2, 3):
                mask = p.relevance.levels >= level
                if not mask.any():
                    continue
                expect = oracle_ap(p.scores, mask.astype(float))
                assert per_level_ap(p, level) == pytest.approx(expect,
                                                               abs=1e-12)

    def test_level_out_of_range(self, rng):
        p, _ = random_hier_problem(rng, depth=2)
        with pytest.raises(ValueError):
            per_level_ap(p, 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.sampled_from([0.0, 0.5, 1.0])),
                min_size=2, max_size=12).filter(
                    lambda rows: any(r[1] > 0 for r in rows)))
def test_metrics_stay_in_unit_interval(rows):
    scores = [r[0] for r in rows]
    rel = [r[1] for r in rows]
    p = RankingProblem.graded(scores, rel)
    values = [h_ap(p), ndcg(p), asi(p)]
    if p.is_binary:
        values += [average_precision(p), map_at_r(p),
                   recall_at_k(p, 2), true_recall_at_k(p, 2)]
    for v in values:
        assert 0.0 <= v <= 1.0 + 1e-12


def test_exact_metrics_invariant_to_monotone_transforms(rng):
    for _ in range(50):
        p = random_graded_problem(rng)
        transformed = RankingProblem(np.exp(2.0 * p.scores) - 0.5, p.relevance)
        assert h_ap(transformed) == pytest.approx(h_ap(p), abs=1e-12)
        assert ndcg(transformed) == pytest.approx(ndcg(p), abs=1e-12)
        assert asi(transformed) == asi(p)
        if p.is_binary:
            assert average_precision(transformed) == pytest.approx(
                average_precision(p), abs=1e-12)


class TestEvaluateAll:
    def test_identical_embeddings_rank_first(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        labels = [("a", "x"), ("a", "x"), ("b", "y")]
        report = evaluate_all(emb, labels)
        assert report.mean("ap") == 1.0
        assert report.mean("h_ap") == pytest.approx(1.0)

    def test_means_are_query_means(self, rng):
        emb = rng.normal(size=(12, 4))
        labels = [("a", "x"), ("a", "y"), ("b", "u"), ("b", "v")] * 3
        report = evaluate_all(emb, labels)
        for name, vals in report.per_query.items():
            if np.all(np.isnan(vals)):
                continue
            assert report.mean(name) == pytest.approx(float(np.nanmean(vals)))

    def test_skips_queries_without_positives(self):
        emb = np.eye(3)
        labels = [("a", "x"), ("b", "y"), ("c", "z")]
        report = evaluate_all(emb, labels)
        assert report.num_skipped == 3
        assert report.num_queries == 0

    def test_matches_per_query_recomputation(self, rng):
        # 20-point set: recompute every reported mean from per-query calls
        emb = rng.normal(size=(20, 6))
        labels = ([("a", "x")] * 4 + [("a", "y")] * 4 + [("b", "u")] * 4
                  + [("b", "v")] * 4 + [("c", "w")] * 4)
        spec = RelevanceSpec(kind="hierarchical", alpha=1.0)
        report = evaluate_all(emb, labels, spec, k_values=(1, 3))
        from rankbound.metrics import cosine_scores, shared_level_matrix
        from rankbound.core import LevelPartition
        from rankbound.relevance import (binary_relevance, ndcg_relevance)
        tree = build_hierarchy(labels)
        s = cosine_scores(emb)
        lvl = shared_level_matrix(tree, labels)
        expect = {name: [] for name in report.per_query}
        for i in range(20):
            keep = np.arange(20) != i
            part = LevelPartition(levels=lvl[i][keep], depth=2)
            graded = RankingProblem(s[i][keep], spec.build(part))
            gain = RankingProblem(s[i][keep], ndcg_relevance(part))
            binary = RankingProblem(s[i][keep], binary_relevance(part))
            expect["ap"].append(average_precision(binary))
            expect["map_at_r"].append(map_at_r(binary))
            expect["ndcg"].append(ndcg(gain))
            expect["h_ap"].append(h_ap(graded))
            expect["asi"].append(asi(graded))
            for l in (1, 2):
                expect[f"ap_level_{l}"].append(per_level_ap(graded, l))
            for k in (1, 3):
                expect[f"r_at_{k}"].append(recall_at_k(binary, k))
                expect[f"tr_at_{k}"].append(true_recall_at_k(binary, k))
                expect[f"h_r_at_{k}"].append(h_recall_at_k(graded, k))
                try:
                    expect[f"h_p_at_{k}"].append(h_precision_at_k(graded, k))
                except NotPositiveRank:
                    expect[f"h_p_at_{k}"].append(np.nan)
        for name, vals in expect.items():
            assert report.mean(name) == pytest.approx(np.nanmean(vals),
                                                      abs=1e-12), name

    def test_zero_embedding_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            evaluate_all(np.zeros((2, 3)), [("a",), ("a",)])
