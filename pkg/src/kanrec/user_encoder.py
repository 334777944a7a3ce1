"""External observation: evolving user state from clicked-news history.

History vectors get learned positional embeddings, one masked multi-head
self-attention layer, and an additive-attention pool. Users with no history
fall back to a learned default vector, which keeps cold-start readers inside
the normal scoring path. Click probability is a two-layer feed-forward head
over [user || news || user*news] with a logistic output.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .determinism import bias_, generator, glorot_, uniform_
from .errors import ConfigurationError
from .news_encoder import AdditiveAttention, NewsRepresentation


@dataclass
class UserRepresentation:
    """One fixed-width user vector."""

    user_id: str
    vector: torch.Tensor


class SelfAttention(torch.nn.Module):
    """Masked multi-head self-attention (no residual path)."""

    def __init__(self, dim: int, heads: int = 2, seed: int = 0):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        gen = generator(seed)
        shape = (heads, self.head_dim, dim)
        self.query_maps = torch.nn.Parameter(torch.empty(*shape, dtype=torch.float64))
        self.key_maps = torch.nn.Parameter(torch.empty(*shape, dtype=torch.float64))
        self.value_maps = torch.nn.Parameter(torch.empty(*shape, dtype=torch.float64))
        self.output_map = torch.nn.Parameter(torch.empty(dim, dim, dtype=torch.float64))
        for k in range(heads):
            glorot_(self.query_maps.data[k], gen)
            glorot_(self.key_maps.data[k], gen)
            glorot_(self.value_maps.data[k], gen)
        glorot_(self.output_map.data, gen)

    def forward(self, x: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        """x: [*, n, dim]; pad True on slots to exclude as keys."""
        q = torch.einsum("...nd,hkd->...hnk", x, self.query_maps)
        k = torch.einsum("...nd,hkd->...hnk", x, self.key_maps)
        v = torch.einsum("...nd,hkd->...hnk", x, self.value_maps)
        scores = q @ k.transpose(-1, -2) / (self.head_dim ** 0.5)  # [*, h, n, n]
        if pad is not None:
            scores = scores.masked_fill(pad.unsqueeze(-2).unsqueeze(-3), float("-inf"))
            # rows whose query is padded would softmax over -inf only; give them
            # a uniform row instead (their output is masked out downstream)
            all_masked = pad.all(dim=-1)
            if bool(all_masked.any()):
                scores = scores.masked_fill(
                    all_masked.unsqueeze(-1).unsqueeze(-1).unsqueeze(-1), 0.0
                )
        alpha = torch.softmax(scores, dim=-1)
        mixed = alpha @ v  # [*, h, n, k]
        stacked = mixed.transpose(-3, -2).reshape(*x.shape[:-1], self.dim)
        return stacked @ self.output_map.T


class EomParams(torch.nn.Module):
    """Everything the external observation mechanism learns.

    Holds positional embeddings for up to ``history_len`` history slots, the
    self-attention maps, the pooling attention, the learned default-user
    vector, and the click head.
    """

    def __init__(
        self,
        dim: int,
        history_len: int = 50,
        heads: int = 2,
        attention_hidden: int | None = None,
        click_hidden: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.dim = dim
        self.history_len = history_len
        gen = generator(seed)
        self.positions = torch.nn.Parameter(
            uniform_(torch.empty(history_len, dim, dtype=torch.float64), 0.1, gen)
        )
        self.attention = SelfAttention(dim, heads=heads, seed=seed + 1)
        self.pool = AdditiveAttention(dim, attention_hidden, seed=seed + 2)
        self.default_user = torch.nn.Parameter(
            uniform_(torch.empty(dim, dtype=torch.float64), (3.0 / dim) ** 0.5, gen)
        )
        click_hidden = dim if click_hidden is None else click_hidden
        self.click_hidden = torch.nn.Linear(3 * dim, click_hidden, dtype=torch.float64)
        self.click_out = torch.nn.Linear(click_hidden, 1, dtype=torch.float64)
        glorot_(self.click_hidden.weight.data, gen)
        bias_(self.click_hidden.bias.data, 3 * dim, gen)
        glorot_(self.click_out.weight.data, gen)
        bias_(self.click_out.bias.data, click_hidden, gen)


def encode_user_batch(
    params: EomParams,
    history: torch.Tensor,  # [b, H, dim]
    pad: torch.Tensor,  # [b, H] bool, True = padded slot
    use_attention: bool = True,
) -> torch.Tensor:
    """User vectors for a batch of padded histories; empty rows get the default vector."""
    x = history + params.positions[: history.shape[-2]]
    empty = pad.all(dim=-1)  # [b]
    safe_pad = torch.where(empty.unsqueeze(-1), torch.zeros_like(pad), pad)
    if use_attention:
        attended = params.attention(x, safe_pad)
        pooled = params.pool(attended, safe_pad)
    else:
        # dual-observation ablation: plain mean over unmasked history slots
        keep = (~safe_pad).to(x.dtype)
        weights = keep / keep.sum(dim=-1, keepdim=True)
        pooled = (weights.unsqueeze(-1) * x).sum(dim=-2)
    return torch.where(empty.unsqueeze(-1), params.default_user, pooled)


def encode_user(history: list[NewsRepresentation], params: EomParams, user_id: str = "") -> UserRepresentation:
    """Encode one user's clicked-news history (most recent ``history_len`` kept)."""
    kept = history[-params.history_len :]
    pad = torch.ones(params.history_len, dtype=torch.bool)
    if kept:
        rows = torch.stack([item.vector for item in kept])
        padded = torch.cat([rows, torch.zeros(params.history_len - rows.shape[0], params.dim, dtype=torch.float64)])
        pad[: rows.shape[0]] = False
    else:
        padded = torch.zeros(params.history_len, params.dim, dtype=torch.float64)
    vector = encode_user_batch(params, padded.unsqueeze(0), pad.unsqueeze(0)).squeeze(0)
    return UserRepresentation(user_id=user_id, vector=vector)


def click_probability_batch(params: EomParams, users: torch.Tensor, news: torch.Tensor) -> torch.Tensor:
    """Logistic click probability for row-aligned user and news vectors.

    Clamped a hair inside (0, 1): the sigmoid itself rounds to exactly 0/1 in
    floating point once the logit passes ~37, and the contract promises a
    strictly open interval.
    """
    if users.shape[-1] != news.shape[-1]:
        raise ValueError(f"width mismatch: user {users.shape[-1]} vs news {news.shape[-1]}")
    joint = torch.cat([users, news, users * news], dim=-1)
    hidden = torch.nn.functional.leaky_relu(params.click_hidden(joint), negative_slope=0.2)
    return torch.sigmoid(params.click_out(hidden).squeeze(-1)).clamp(1e-15, 1.0 - 1e-15)


def click_probability(user: UserRepresentation, news: NewsRepresentation, params: EomParams) -> float:
    """P(click) for one user/news pair, strictly inside (0, 1)."""
    with torch.no_grad():
        return float(click_probability_batch(params, user.vector.detach(), news.vector.detach()))


def rank_candidates(
    user: UserRepresentation, candidates: list[NewsRepresentation], params: EomParams
) -> list[tuple[str, float]]:
    """Candidates sorted by descending probability, ties broken by ascending news_id."""
    if not candidates:
        raise ValueError("rank_candidates requires at least one candidate")
    scored = [(news.news_id, click_probability(user, news, params)) for news in candidates]
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))
