"""Shared test utilities: central-difference gradients, filter fixture."""

import json

import torch


def val(x) -> float:
    """Scalar value of a tensor-ish result, detached from any graph."""
    return float(torch.as_tensor(x).detach())


def auc_pairwise_oracle(scores, labels) -> float:
    """Exhaustive pairwise counting: concordant pairs get 1, ties get 0.5."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def dcg_oracle(labels, k) -> float:
    import math

    return sum(label / math.log2(i + 2) for i, label in enumerate(labels[:k]))


def ndcg_oracle(ranked_labels, k) -> float:
    ideal = sorted(ranked_labels, reverse=True)
    return dcg_oracle(ranked_labels, k) / dcg_oracle(ideal, k)


def mrr_oracle(ranked_labels) -> float:
    ranks = [i + 1 for i, label in enumerate(ranked_labels) if label == 1]
    total = 0.0
    for r in ranks:
        total += 1.0 / r
    return total / len(ranks)


def random_impressions(rng, count=200, max_size=12):
    """Random labeled impressions holding at least one of each class."""
    out = []
    for _ in range(count):
        n = int(rng.integers(2, max_size + 1))
        labels = (rng.uniform(size=n) < 0.4).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(0, n))] = 1
        if labels.sum() == n:
            labels[int(rng.integers(0, n))] = 0
        scores = rng.normal(size=n)
        if rng.uniform() < 0.3:  # force score ties sometimes
            scores[int(rng.integers(0, n))] = scores[int(rng.integers(0, n))]
        out.append((scores.tolist(), labels.tolist()))
    return out


def write_filter_fixture(directory):
    """MIND-style files with hand-countable filter behavior.

    Layout (thresholds 10 readers / 50 reading records):
      * news N00..N49 survive; N00 carries a 25-word title and 60-word
        abstract to exercise truncation.
      * N50 is read by exactly 9 users (dropped), N49 by exactly 10 (kept,
        boundary), N51 appears only as a non-clicked candidate (dropped:
        exposure is not reading).
      * users U00..U08 keep 51 history items (50 after N50 drops), U09 keeps
        exactly 50 (kept, boundary), U10 keeps 49 (dropped).
      * every user gets one impression with candidates N00-1 and N51-0, so
        10 impressions survive, each with the single candidate (N00, 1).
    """
    news_ids = [f"N{i:02d}" for i in range(52)]
    rows = []
    for news_id in news_ids:
        if news_id == "N00":
            title = " ".join(f"t{i}" for i in range(25))
            abstract = " ".join(f"a{i}" for i in range(60))
        else:
            title = f"headline {news_id}"
            abstract = f"body {news_id}"
        entities = json.dumps([{"WikidataId": f"Q_{news_id}"}])
        rows.append("\t".join([news_id, "cat", "sub", title, abstract, "url", entities, "[]"]))
    news_path = directory / "news.tsv"
    news_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    behavior_rows = []
    fifty = [f"N{i:02d}" for i in range(50)]
    for u in range(11):
        user = f"U{u:02d}"
        if u <= 8:
            history = fifty + ["N50"]
        elif u == 9:
            history = fifty
        else:
            history = fifty[:49]
        behavior_rows.append(
            "\t".join([str(u + 1), user, "2023-01-01 09:00:00", " ".join(history), "N00-1 N51-0"])
        )
    behaviors_path = directory / "behaviors.tsv"
    behaviors_path.write_text("\n".join(behavior_rows) + "\n", encoding="utf-8")

    return {
        "news": news_path,
        "behaviors": behaviors_path,
        "surviving_news": set(fifty),
        "surviving_users": {f"U{i:02d}" for i in range(10)},
        "surviving_impressions": 10,
        "n00_title": [f"t{i}" for i in range(20)],
        "n00_abstract": [f"a{i}" for i in range(50)],
    }


def numeric_gradient(f, tensor: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite differences of the scalar f() w.r.t. every tensor entry."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    flat_grad = grad.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + eps
        hi = float(f().detach())
        flat[i] = original - eps
        lo = float(f().detach())
        flat[i] = original
        flat_grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    diff = (analytic - numeric).abs()
    scale = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(1e-6)
    return float((diff / scale).max()) if diff.numel() else 0.0


def gradient_check(f, tensors, eps: float = 1e-5) -> float:
    """Worst relative error between autograd and finite-difference gradients.

    ``f`` must rebuild its graph on every call and return a scalar tensor;
    ``tensors`` are leaf tensors with requires_grad set.
    """
    for t in tensors:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "a checked tensor received no gradient"
        numeric = numeric_gradient(f, t, eps)
        worst = max(worst, max_rel_error(t.grad, numeric))
    return worst
