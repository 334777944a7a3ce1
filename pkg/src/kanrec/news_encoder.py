"""Internal observation: fuse word-level and knowledge-level views of a news item.

The low-order path looks up frozen pretrained word vectors for the title and
abstract tokens; the high-order path runs graph attention over each linked
entity's ego-network. Word rows are projected into the context width, the two
row blocks are concatenated into one sequence, a width-3 convolution extracts
positional features, and additive attention pools them into one fixed-width
news vector. Padded positions are zeroed before the convolution and excluded
from pooling, so enlarging the padding never changes the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from . import gflm
from .determinism import bias_, generator, glorot_, uniform_
from .errors import ParseError, DataError
from .kg_store import KnowledgeGraph, PAD_ENTITY_ID, sample_ego_network
from .kge import EmbeddingTable

PAD_WORD_ID = 0
OOV_WORD_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"


class WordVocabulary:
    """Token ids backed by a frozen pretrained vector matrix.

    Id 0 is PAD (all-zero vector), id 1 is OOV (mean of the loaded vectors);
    every other id maps to one pretrained row.
    """

    def __init__(self, tokens: list[str], vectors: torch.Tensor):
        self.tokens = [PAD_TOKEN, OOV_TOKEN] + list(tokens)
        self.token_to_id = {token: idx for idx, token in enumerate(self.tokens)}
        dim = int(vectors.shape[1])
        oov = vectors.mean(dim=0) if vectors.shape[0] else torch.zeros(dim, dtype=torch.float64)
        self.vectors = torch.cat([torch.zeros(2, dim, dtype=torch.float64), vectors.to(torch.float64)])
        self.vectors[OOV_WORD_ID] = oov

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_WORD_ID)

    def ids(self, tokens, length: int | None = None) -> list[int]:
        """Map tokens to ids, optionally truncating then padding to a fixed length."""
        ids = [PAD_WORD_ID if t == PAD_TOKEN else self.id_of(t) for t in tokens]
        if length is not None:
            ids = ids[:length] + [PAD_WORD_ID] * max(0, length - len(ids))
        return ids

    @classmethod
    def load(cls, path) -> "WordVocabulary":
        """Read a text vector file of ``token v1 v2 ... vd`` lines.

        The dimension is inferred from the first data line; later lines with a
        different dimension raise ParseError. Repeated tokens keep their first
        vector.
        """
        tokens: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for line_number, raw in enumerate(fh, start=1):
                parts = raw.rstrip("\n").split()
                if not parts:
                    continue
                token, values = parts[0], parts[1:]
                if dim is None:
                    if not values:
                        raise ParseError(path, line_number, "no vector components on first line")
                    dim = len(values)
                elif len(values) != dim:
                    raise ParseError(
                        path, line_number, f"expected {dim} vector components, got {len(values)}"
                    )
                if token in seen:
                    continue
                try:
                    rows.append([float(v) for v in values])
                except ValueError as exc:
                    raise ParseError(path, line_number, f"bad vector component: {exc}")
                seen.add(token)
                tokens.append(token)
        if dim is None:
            raise DataError(f"{path}: no word vectors found")
        return cls(tokens, torch.tensor(rows, dtype=torch.float64))


@dataclass
class NewsRepresentation:
    """One fixed-width news vector."""

    news_id: str
    vector: torch.Tensor


class AdditiveAttention(torch.nn.Module):
    """Pool a sequence by softmax weights from a small feed-forward scorer.

    Scores are u_i = v^T tanh(W x_i + b); the output is sum_i alpha_i x_i with
    alpha the softmax of u over unmasked rows.
    """

    def __init__(self, dim: int, hidden: int | None = None, seed: int = 0):
        super().__init__()
        hidden = dim if hidden is None else hidden
        gen = generator(seed)
        self.weight = torch.nn.Parameter(glorot_(torch.empty(hidden, dim, dtype=torch.float64), gen))
        self.bias = torch.nn.Parameter(bias_(torch.empty(hidden, dtype=torch.float64), dim, gen))
        self.query = torch.nn.Parameter(uniform_(torch.empty(hidden, dtype=torch.float64), (3.0 / hidden) ** 0.5, gen))

    def weights(self, features: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Attention coefficients over rows; masked rows get exactly 0."""
        scores = torch.tanh(features @ self.weight.T + self.bias) @ self.query  # [*, n]
        if mask is not None:
            if bool(mask.all(dim=-1).any()):
                # a row set with nothing real: fall back to uniform over everything
                mask = torch.zeros_like(mask)
            scores = scores.masked_fill(mask, float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        if mask is not None:
            alpha = alpha.masked_fill(mask, 0.0)
        return alpha

    def forward(self, features: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if features.shape[-2] == 0:
            raise ValueError("cannot pool an empty feature sequence")
        alpha = self.weights(features, mask)
        return (alpha.unsqueeze(-1) * features).sum(dim=-2)


class FusionCnn(torch.nn.Module):
    """Project word rows into the context width and convolve the fused sequence."""

    def __init__(self, word_dim: int, context_dim: int, window: int = 3, seed: int = 0):
        super().__init__()
        gen = generator(seed)
        self.word_proj = torch.nn.Linear(word_dim, context_dim, dtype=torch.float64)
        self.conv = torch.nn.Conv1d(context_dim, context_dim, window, padding=window // 2, dtype=torch.float64)
        glorot_(self.word_proj.weight.data, gen)
        bias_(self.word_proj.bias.data, word_dim, gen)
        glorot_(self.conv.weight.data.view(context_dim, -1), gen)
        bias_(self.conv.bias.data, context_dim * window, gen)
        self.slope = gflm.LEAKY_SLOPE

    def forward(
        self,
        word_mat: torch.Tensor,  # [*, L, word_dim]
        entity_mat: torch.Tensor,  # [*, E, context_dim]
        word_pad: torch.Tensor | None = None,  # [*, L] bool, True = padded
        entity_pad: torch.Tensor | None = None,  # [*, E] bool
    ) -> torch.Tensor:
        words = self.word_proj(word_mat)
        if word_pad is not None:
            words = words.masked_fill(word_pad.unsqueeze(-1), 0.0)
        entities = entity_mat
        if entity_pad is not None:
            entities = entities.masked_fill(entity_pad.unsqueeze(-1), 0.0)
        sequence = torch.cat([words, entities], dim=-2)  # [*, L+E, d']
        convolved = self.conv(sequence.transpose(-1, -2)).transpose(-1, -2)
        return torch.nn.functional.leaky_relu(convolved, negative_slope=self.slope)


def encode_lrm(tokens, vocab: WordVocabulary) -> torch.Tensor:
    """Look up the pretrained vector rows for a fixed-length token-id list."""
    ids = torch.as_tensor(tokens, dtype=torch.long)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= vocab.size):
        raise ValueError(f"token id outside vocabulary of size {vocab.size}")
    return vocab.vectors[ids]


def encode_hrm(
    entity_ids,
    kg: KnowledgeGraph,
    tables: EmbeddingTable,
    gflm_params: gflm.GflmParams,
    neighbor_size: int,
    seed: int,
) -> torch.Tensor:
    """Contextual vectors for the linked entities of one article; PAD rows are zero."""
    rows = []
    for entity in entity_ids:
        if entity == PAD_ENTITY_ID:
            rows.append(torch.zeros(gflm_params.output_dim, dtype=torch.float64))
        else:
            ego = sample_ego_network(int(entity), kg, neighbor_size, seed)
            rows.append(gflm.encode_entity(ego, tables, gflm_params))
    if not rows:
        return torch.zeros(0, gflm_params.output_dim, dtype=torch.float64)
    return torch.stack(rows)


def fuse_and_extract(word_mat, entity_mat, cnn_params: FusionCnn, word_pad=None, entity_pad=None) -> torch.Tensor:
    """One feature vector per fused sequence position (convolution + LeakyReLU)."""
    return cnn_params(
        torch.as_tensor(word_mat, dtype=torch.float64),
        torch.as_tensor(entity_mat, dtype=torch.float64),
        None if word_pad is None else torch.as_tensor(word_pad, dtype=torch.bool),
        None if entity_pad is None else torch.as_tensor(entity_pad, dtype=torch.bool),
    )


def additive_attention_pool(features, aam_params: AdditiveAttention, mask=None) -> torch.Tensor:
    """Pool feature rows into one vector with additive attention."""
    return aam_params(
        torch.as_tensor(features, dtype=torch.float64),
        None if mask is None else torch.as_tensor(mask, dtype=torch.bool),
    )


class NewsEncoder(torch.nn.Module):
    """Full internal-observation stack: LRM + HRM -> fusion CNN -> attention pool."""

    def __init__(
        self,
        word_dim: int,
        context_dim: int,
        relation_dim: int,
        heads: int = 2,
        attention_hidden: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.context_dim = context_dim
        self.gflm = gflm.GflmParams(context_dim, relation_dim, heads=heads, seed=seed)
        self.fusion = FusionCnn(word_dim, context_dim, seed=seed + 1)
        self.pool = AdditiveAttention(context_dim, attention_hidden, seed=seed + 2)

    def forward(
        self,
        word_vectors: torch.Tensor,  # [vocab, word_dim] lookup table
        word_ids: torch.Tensor,  # [*, L] long
        entity_context: torch.Tensor,  # [*, E, d'] already-encoded entity rows
        entity_pad: torch.Tensor,  # [*, E] bool
        use_attention_pool: bool = True,
    ) -> torch.Tensor:
        word_mat = word_vectors[word_ids]
        word_pad = word_ids == PAD_WORD_ID
        features = self.fusion(word_mat, entity_context, word_pad, entity_pad)
        mask = torch.cat([word_pad, entity_pad], dim=-1)
        if use_attention_pool:
            return self.pool(features, mask)
        return _masked_mean(features, mask)


def _masked_mean(features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Unweighted mean over unmasked rows (all rows when everything is masked)."""
    keep = (~mask).to(features.dtype)
    degenerate = keep.sum(dim=-1, keepdim=True) == 0
    keep = torch.where(degenerate, torch.ones_like(keep), keep)
    weights = keep / keep.sum(dim=-1, keepdim=True)
    return (weights.unsqueeze(-1) * features).sum(dim=-2)


def encode_news(
    article,
    vocab: WordVocabulary,
    kg: KnowledgeGraph,
    tables: EmbeddingTable,
    encoder: NewsEncoder,
    neighbor_size: int,
    seed: int,
    entity_slots: int = 10,
    use_attention_pool: bool = True,
) -> NewsRepresentation:
    """Encode one preprocessed article into its fixed-width representation."""
    from .data_pipeline import article_entity_mentions  # local import to avoid a cycle

    word_ids = torch.tensor(
        vocab.ids(article.title_tokens, 20) + vocab.ids(article.abstract_tokens, 50), dtype=torch.long
    )
    mentions = article_entity_mentions(article, entity_slots)
    from .kg_store import link_entities

    dense = link_entities(mentions, kg)
    entity_context = encode_hrm(dense, kg, tables, encoder.gflm, neighbor_size, seed)
    entity_pad = torch.tensor([e == PAD_ENTITY_ID for e in dense], dtype=torch.bool)
    vector = encoder(
        vocab.vectors,
        word_ids.unsqueeze(0),
        entity_context.unsqueeze(0),
        entity_pad.unsqueeze(0),
        use_attention_pool=use_attention_pool,
    ).squeeze(0)
    return NewsRepresentation(news_id=article.news_id, vector=vector)
