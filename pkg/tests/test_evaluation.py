import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from preferdiff.data import SequenceExample
from preferdiff.evaluation import (
    RankedResult, covariance_diagnostic, evaluate, ndcg_at_k, rank_target, rank_targets, recall_at_k,
)
from preferdiff.model import ItemEmbeddingTable, ModelConfig, init_params
from preferdiff.sampler import SamplerConfig
from preferdiff.schedule import build_linear_schedule


def brute_rank(e, W, target):
    scores = [float(np.dot(row, e)) for row in W]
    # sort descending; the target goes after every item it ties with
    order = sorted(range(len(W)), key=lambda i: (-scores[i], i == target))
    return order.index(target) + 1


def brute_metrics(ranks, k):
    hits = [1.0 if r <= k else 0.0 for r in ranks]
    gains = [1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks]
    return sum(hits) / len(ranks), sum(gains) / len(ranks)


def test_against_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        N = int(rng.integers(1, 1001))
        d = int(rng.integers(1, 9))
        W = rng.standard_normal((N, d))
        if rng.random() < 0.3:  # force exact ties
            W = np.round(W)
        E = rng.standard_normal((5, d))
        targets = rng.integers(0, N, size=5)
        ranks = rank_targets(E, W, targets)
        want = [brute_rank(E[i], W, int(targets[i])) for i in range(5)]
        assert ranks.tolist() == want
        assert rank_target(E[0], W, int(targets[0])) == want[0]
        for k in (1, 5, 10, 20):
            r, n = brute_metrics(want, k)
            assert recall_at_k(ranks, k) == pytest.approx(r, abs=1e-12)
            assert ndcg_at_k(ranks, k) == pytest.approx(n, abs=1e-12)


def test_query_equal_to_target_row():
    rng = np.random.default_rng(6)
    for _ in range(50):
        N = int(rng.integers(2, 101))
        W = rng.standard_normal((N, 4))
        t = int(rng.integers(N))
        assert rank_target(W[t], W, t) == brute_rank(W[t], W, t)


def test_closed_form_spot_values():
    assert ndcg_at_k([3], 5) == 0.5
    assert ndcg_at_k([1], 5) == 1.0
    assert recall_at_k([6], 5) == 0.0 and ndcg_at_k([6], 5) == 0.0
    assert recall_at_k([1, 5, 6, 100], 5) == 0.5


def test_single_item_catalog_ranks_first():
    assert rank_target(np.array([0.3, -1.0]), np.array([[5.0, 2.0]]), 0) == 1


def test_all_equal_scores_rank_last():
    W = np.ones((50, 3))
    assert rank_target(np.ones(3), W, 17) == 50
    assert rank_target(np.zeros(3), np.random.default_rng(1).standard_normal((50, 3)), 0) == 50


def test_history_exclusion():
    W = np.diag([5.0, 4.0, 3.0, 2.0])
    e = np.ones(4)
    assert rank_targets([e], W, [2]).tolist() == [3]
    assert rank_targets([e], W, [2], exclude=[(0, 2)]).tolist() == [2]  # target itself never dropped


def test_metric_errors():
    with pytest.raises(ValueError):
        recall_at_k([], 5)
    with pytest.raises(ValueError):
        ndcg_at_k([], 5)
    with pytest.raises(ValueError):
        recall_at_k([1], 0)
    with pytest.raises(IndexError):
        rank_target(np.ones(2), np.ones((3, 2)), 3)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=1, max_size=60))
def test_metric_invariants(ranks):
    prev_r = prev_n = 0.0
    for k in range(1, 30):
        r, n = recall_at_k(ranks, k), ndcg_at_k(ranks, k)
        assert 0.0 <= n <= r <= 1.0
        assert r >= prev_r and n >= prev_n
        prev_r, prev_n = r, n


def test_ranked_result_keys():
    res = RankedResult.from_ranks([1, 2, 30])
    assert set(res.metrics) == {"recall@5", "ndcg@5", "recall@10", "ndcg@10"}


def test_evaluate_is_deterministic():
    rng = np.random.default_rng(2)
    params = init_params(ModelConfig(n_items=40, dim=6, time_dim=8, hidden_mult=2, max_len=5), rng)
    table = ItemEmbeddingTable.standard_normal(40, 6, rng)
    ex = [SequenceExample(u, (u % 40, (u + 1) % 40), (u + 2) % 40) for u in range(100)]
    sched = build_linear_schedule()
    a = evaluate(params, table, sched, ex, SamplerConfig(5, 2.0, 1))
    b = evaluate(params, table, sched, ex, SamplerConfig(5, 2.0, 1), threads=3)
    assert a.ranks.tolist() == b.ranks.tolist() and a.metrics == b.metrics
    with pytest.raises(ValueError):
        evaluate(params, table, sched, [], SamplerConfig(5, 2.0, 1))


def test_covariance_matches_numpy():
    W = np.random.default_rng(3).standard_normal((300, 5))
    cov = covariance_diagnostic(W)
    np.testing.assert_allclose(cov.covariance, np.cov(W, rowvar=False, ddof=1), rtol=0, atol=1e-12)


def test_covariance_of_standard_normal_is_near_identity():
    cov = covariance_diagnostic(ItemEmbeddingTable.standard_normal(10_000, 16, np.random.default_rng(4)))
    assert abs(cov.diag_mean - 1.0) < 0.05
    assert cov.offdiag_rms < 0.05


def test_covariance_degenerate_tables():
    assert np.all(covariance_diagnostic(np.full((10, 3), 2.5)).covariance == 0.0)
    col = np.random.default_rng(5).standard_normal((40, 1))
    cov = covariance_diagnostic(col)
    want = sum((x - col.mean()) ** 2 for x in col[:, 0]) / 39
    assert cov.covariance.shape == (1, 1)
    assert cov.covariance[0, 0] == pytest.approx(want, abs=1e-12)
    assert cov.offdiag_rms == 0.0


def test_covariance_needs_two_items():
    with pytest.raises(ValueError):
        covariance_diagnostic(np.ones((1, 3)))
