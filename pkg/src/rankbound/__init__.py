"""Ranking metrics, upper-bound smooth rank surrogates, decomposability
diagnostics, and a deterministic desk-scale trainer on synthetic
hierarchical data."""

from .core import (HierarchyTree, LevelPartition, RankingProblem,
                   RelevanceVector, build_hierarchy, exact_ranks,
                   h_rank_plus, level_partition)
from .decomposability import (BatchSplit, DecompConfig, EmptyBatchError,
                              combined_loss, decomposability_gap,
                              dg_upper_bound_calibrated, dg_upper_bound_plain,
                              l_dg, l_dg_star)
from .metrics import (MetricReport, NoPositivesError, NotPositiveRank,
                      asi, average_precision, evaluate_all, h_ap,
                      h_precision_at_k, h_recall_at_k, map_at_r, ndcg,
                      per_level_ap, recall_at_k, true_recall_at_k)
from .relevance import (RelevanceSpec, binary_relevance,
                        hierarchical_relevance, ndcg_relevance,
                        weighted_ap_relevance)
from .surrogates import (LossResult, SurrogateConfig, finite_diff_check,
                         h_minus, h_minus_prime, sigmoid_rank_baseline,
                         smooth_rank_minus, sup_ap_loss, sup_hap_loss,
                         sup_ndcg_loss, sup_rk_loss)
from .synth import SynthConfig, generate, read_dataset, write_dataset
from .training import TrainConfig, TrainLog, batch_loss, sample_batch, train
