import numpy as np
import pytest

from rankbound.core import LevelPartition, RankingProblem
from rankbound.relevance import hierarchical_relevance


def random_binary_problem(rng, n_min=2, n_max=30, pos_rate=0.4):
    n = int(rng.integers(n_min, n_max + 1))
    scores = rng.uniform(-1.0, 1.0, size=n)
    rel = (rng.random(n) < pos_rate).astype(float)
    if rel.sum() == 0:
        rel[int(rng.integers(n))] = 1.0
    return RankingProblem.binary(scores, rel)


def random_graded_problem(rng, n_min=2, n_max=30, depth=3):
    n = int(rng.integers(n_min, n_max + 1))
    scores = rng.uniform(-1.0, 1.0, size=n)
    gains = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 2.0, size=depth))])
    levels = rng.integers(0, depth + 1, size=n)
    if (levels > 0).sum() == 0:
        levels[int(rng.integers(n))] = depth
    return RankingProblem.graded(scores, gains[levels])


def random_hier_problem(rng, depth, n_min=4, n_max=30, alpha=1.0):
    """Problem whose relevance comes from a random level partition."""
    n = int(rng.integers(n_min, n_max + 1))
    levels = rng.integers(0, depth + 1, size=n)
    if (levels > 0).sum() == 0:
        levels[int(rng.integers(n))] = depth
    part = LevelPartition(levels=levels, depth=depth)
    rel = hierarchical_relevance(part, alpha)
    scores = rng.uniform(-1.0, 1.0, size=n)
    return RankingProblem(scores, rel), part


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
