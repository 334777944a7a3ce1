import math

import numpy as np
import pytest

from helpers import auc_pairwise_oracle, mrr_oracle, ndcg_oracle, random_impressions
from kanrec.metrics import auc, mrr, ndcg_at_k, rank_impression


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.8, 0.2], [1, 0]) == 1.0

    def test_inverted_separation(self):
        assert auc([0.2, 0.8], [1, 0]) == 0.0

    def test_tie_credits_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.9], [1, 1])

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(21)
        for scores, labels in random_impressions(rng, count=200, max_size=12):
            assert abs(auc(scores, labels) - auc_pairwise_oracle(scores, labels)) <= 1e-9

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(22)
        for scores, labels in random_impressions(rng, count=50):
            base = auc(scores, labels)
            assert auc([3.0 * s + 2.0 for s in scores], labels) == pytest.approx(base, abs=1e-12)
            assert auc([math.exp(s) for s in scores], labels) == pytest.approx(base, abs=1e-12)


class TestMrr:
    def test_single_click_rank_two(self):
        assert mrr([0, 1]) == 0.5

    def test_clicks_at_ranks_one_and_four(self):
        assert mrr([1, 0, 0, 1]) == pytest.approx(0.625)

    def test_click_at_rank_one(self):
        assert mrr([1, 0, 0]) == 1.0

    def test_no_clicks_rejected(self):
        with pytest.raises(ValueError):
            mrr([0, 0])

    def test_matches_oracle(self):
        rng = np.random.default_rng(23)
        for _, labels in random_impressions(rng, count=200):
            assert abs(mrr(labels) - mrr_oracle(labels)) <= 1e-9


class TestNdcg:
    def test_relevant_first_is_perfect(self):
        assert ndcg_at_k([1, 0, 0], 5) == 1.0

    def test_relevant_second(self):
        assert ndcg_at_k([0, 1, 0], 5) == pytest.approx(1.0 / math.log2(3.0))

    def test_all_relevant_any_order(self):
        assert ndcg_at_k([1, 1, 1], 5) == 1.0
        assert ndcg_at_k([1, 1, 1], 10) == 1.0

    def test_cutoff_applies(self):
        # the only click sits past the cutoff: DCG@5 = 0
        assert ndcg_at_k([0, 0, 0, 0, 0, 1], 5) == 0.0

    def test_no_clicks_rejected(self):
        with pytest.raises(ValueError):
            ndcg_at_k([0, 0], 5)

    @pytest.mark.parametrize("k", [5, 10])
    def test_matches_oracle(self, k):
        rng = np.random.default_rng(24 + k)
        for _, labels in random_impressions(rng, count=200):
            assert abs(ndcg_at_k(labels, k) - ndcg_oracle(labels, k)) <= 1e-9


class TestRankImpression:
    def test_sorts_by_score_descending(self):
        assert rank_impression([0.1, 0.9, 0.5], [0, 1, 0], ["N1", "N2", "N3"]) == [1, 0, 0]

    def test_ties_break_by_news_id(self):
        labels = rank_impression([0.5, 0.5], [0, 1], ["N9", "N1"])
        assert labels == [1, 0]  # N1 outranks N9 on equal scores

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(25)
        for scores, labels in random_impressions(rng, count=50):
            ids = [f"N{i:03d}" for i in range(len(scores))]
            base = rank_impression(scores, labels, ids)
            transformed = rank_impression([10 * s - 4 for s in scores], labels, ids)
            assert base == transformed
