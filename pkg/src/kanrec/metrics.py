"""Impression-grouped ranking metrics: AUC, MRR, NDCG@k.

Each function scores a single impression; dataset-level numbers are
unweighted means over the impressions where the metric is defined. All of
them are invariant under strictly increasing transforms of the scores.
"""

from __future__ import annotations

import math

import numpy as np


def auc(scores, labels) -> float:
    """Pairwise concordance: (#concordant + 0.5 * #ties) / (#pos * #neg).

    Computed from tie-averaged ranks, which is exactly the pairwise count.
    Both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both a clicked and a non-clicked candidate")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank of the tie group
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mrr(ranked_labels) -> float:
    """Mean of 1/rank over every clicked item, ranks 1-based in ranked order."""
    ranks = [i + 1 for i, label in enumerate(ranked_labels) if label == 1]
    if not ranks:
        raise ValueError("MRR needs at least one clicked item")
    return sum(1.0 / r for r in ranks) / len(ranks)


def ndcg_at_k(ranked_labels, k: int) -> float:
    """Binary-gain DCG@k over the given ranking, normalised by the ideal DCG@k."""
    labels = list(ranked_labels)
    if sum(labels) == 0:
        raise ValueError("NDCG needs at least one clicked item")
    dcg = sum(label / math.log2(i + 2) for i, label in enumerate(labels[:k]))
    ideal = sorted(labels, reverse=True)
    idcg = sum(label / math.log2(i + 2) for i, label in enumerate(ideal[:k]))
    return dcg / idcg


def rank_impression(scores, labels, news_ids) -> list[int]:
    """Labels reordered by descending score, ties broken by ascending news id."""
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), str(news_ids[i])))
    return [int(labels[i]) for i in order]
