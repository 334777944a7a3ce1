"""Relation-aware, multi-head, masked graph attention over ego-networks.

Each head owns a shared linear map W for entity features, a relation-input
map for edge features, and an attention vector scoring the concatenation
[W e_i || W e_j || W_rel r_ij]. Coefficients are a softmax over
LeakyReLU(0.2) logits restricted to unmasked neighbors; aggregation is
sigma(sum_j alpha_j W e_j) with sigma = LeakyReLU(0.2). Contextual entity
encoding nests two hop levels: hop-2 neighbors are folded into each hop-1
node first, then hop-1 results are folded into the center. A node whose
neighborhood is entirely masked falls back to sigma(W e) of its own
embedding, so isolated entities still get a representation.
"""

from __future__ import annotations

import torch

from .determinism import generator, glorot_, uniform_
from .errors import ConfigurationError, DegenerateNeighborhoodError
from .kg_store import EgoNetwork
from .kge import EmbeddingTable

LEAKY_SLOPE = 0.2

_MODES = ("concat", "average")


class GflmParams(torch.nn.Module):
    """Per-head attention parameters plus the shared self-loop relation vector."""

    def __init__(
        self,
        input_dim: int,
        relation_dim: int,
        heads: int = 2,
        output_dim: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        if heads < 1:
            raise ConfigurationError(f"head count must be >= 1, got {heads}")
        output_dim = input_dim if output_dim is None else output_dim
        self.input_dim = input_dim
        self.relation_dim = relation_dim
        self.output_dim = output_dim
        self.heads = heads
        self.leaky_slope = LEAKY_SLOPE

        gen = generator(seed)
        self.entity_maps = torch.nn.Parameter(torch.empty(heads, output_dim, input_dim, dtype=torch.float64))
        self.relation_maps = torch.nn.Parameter(torch.empty(heads, output_dim, relation_dim, dtype=torch.float64))
        self.attention = torch.nn.Parameter(torch.empty(heads, 3 * output_dim, dtype=torch.float64))
        for k in range(heads):
            glorot_(self.entity_maps.data[k], gen)
            glorot_(self.relation_maps.data[k], gen)
        uniform_(self.attention.data, (3.0 / self.attention.shape[-1]) ** 0.5, gen)

    def sigma(self, x: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.leaky_relu(x, negative_slope=self.leaky_slope)


def _as_f64(value) -> torch.Tensor:
    return torch.as_tensor(value, dtype=torch.float64)


def attention_logit(e_i, e_j, params: GflmParams, head: int = 0) -> torch.Tensor:
    """a^T [W e_i || W e_j], the entity-only attention logit for one head."""
    e_i, e_j = _as_f64(e_i), _as_f64(e_j)
    if e_i.shape[-1] != params.input_dim or e_j.shape[-1] != params.input_dim:
        raise ValueError(f"expected entity vectors of dim {params.input_dim}")
    w = params.entity_maps[head]
    a = params.attention[head]
    d = params.output_dim
    return a[:d] @ (w @ e_i) + a[d : 2 * d] @ (w @ e_j)


def relation_aware_logit(e_i, e_j, rel_edge, params: GflmParams, head: int = 0) -> torch.Tensor:
    """a^T [W e_i || W e_j || W_rel r_ij]; reduces to attention_logit at r_ij = 0."""
    rel = _as_f64(rel_edge)
    if rel.shape[-1] != params.relation_dim:
        raise ValueError(f"expected relation vector of dim {params.relation_dim}")
    d = params.output_dim
    return attention_logit(e_i, e_j, params, head) + params.attention[head][2 * d :] @ (
        params.relation_maps[head] @ rel
    )


def attention_coefficients(logits, mask=None) -> torch.Tensor:
    """Softmax over LeakyReLU(logits) restricted to unmasked entries.

    ``mask`` is True on padded entries, which receive coefficient 0 exactly.
    Raises DegenerateNeighborhoodError when everything is masked; the caller
    is expected to fall back to the center's own representation.
    """
    logits = _as_f64(logits)
    if mask is None:
        mask = torch.zeros(logits.shape, dtype=torch.bool)
    else:
        mask = torch.as_tensor(mask, dtype=torch.bool)
    if bool(mask.all()):
        raise DegenerateNeighborhoodError("all neighborhood entries are masked")
    z = torch.nn.functional.leaky_relu(logits, negative_slope=LEAKY_SLOPE)
    z = z.masked_fill(mask, float("-inf"))
    alpha = torch.softmax(z, dim=-1)
    return alpha.masked_fill(mask, 0.0)


def aggregate(neighbors, alpha, params: GflmParams, head: int = 0) -> torch.Tensor:
    """sigma(sum_j alpha_j W e_j) for one head."""
    neighbors = _as_f64(neighbors)
    alpha = _as_f64(alpha)
    if neighbors.shape[0] != alpha.shape[0]:
        raise ValueError(f"{neighbors.shape[0]} neighbors but {alpha.shape[0]} coefficients")
    transformed = neighbors @ params.entity_maps[head].T
    return params.sigma((alpha.unsqueeze(-1) * transformed).sum(dim=0))


def multi_head(center, neighbors, relations, params: GflmParams, mode: str = "average", mask=None) -> torch.Tensor:
    """Relation-aware multi-head aggregation of neighbors into a center.

    ``concat`` applies sigma per head and concatenates (length K*d');
    ``average`` averages the per-head weighted sums first and applies sigma
    once (length d').
    """
    if mode not in _MODES:
        raise ConfigurationError(f"unknown multi-head mode {mode!r}, expected one of {_MODES}")
    center = _as_f64(center)
    neighbors = _as_f64(neighbors)
    relations = _as_f64(relations)
    mask_t = None if mask is None else torch.as_tensor(mask, dtype=torch.bool)
    out = _attention_block(
        params,
        center.unsqueeze(0),
        neighbors.unsqueeze(0),
        relations.unsqueeze(0),
        None if mask_t is None else mask_t.unsqueeze(0),
        mode,
    )
    return out.squeeze(0)


def _attention_block(
    params: GflmParams,
    center: torch.Tensor,  # [*, d_in]
    neighbors: torch.Tensor,  # [*, n, d_in]
    relations: torch.Tensor,  # [*, n, d_rel]
    pad: torch.Tensor | None,  # [*, n] bool, True = padded
    mode: str,
    center_fallback: bool = False,
) -> torch.Tensor:
    """Batched core shared by the public ops and the nested entity encoder.

    With ``center_fallback`` a fully masked neighborhood yields sigma(W e)
    of the center itself; without it, it is an error.
    """
    if pad is None:
        pad = torch.zeros(neighbors.shape[:-1], dtype=torch.bool)
    degenerate = pad.all(dim=-1)  # [*]
    if not center_fallback and bool(degenerate.any()):
        raise DegenerateNeighborhoodError("a neighborhood in the batch is fully masked")
    d = params.output_dim
    head_sums = []
    head_outputs = []
    for k in range(params.heads):
        w_center = center @ params.entity_maps[k].T  # [*, d']
        w_neigh = neighbors @ params.entity_maps[k].T  # [*, n, d']
        w_rel = relations @ params.relation_maps[k].T  # [*, n, d']
        a = params.attention[k]
        logits = (
            (w_center * a[:d]).sum(dim=-1).unsqueeze(-1)
            + (w_neigh * a[d : 2 * d]).sum(dim=-1)
            + (w_rel * a[2 * d :]).sum(dim=-1)
        )  # [*, n]
        z = torch.nn.functional.leaky_relu(logits, negative_slope=params.leaky_slope)
        z = z.masked_fill(pad, float("-inf"))
        # degenerate rows get a finite softmax input so no NaN leaks into backward;
        # their alpha is zeroed below and the fallback replaces the row
        z = torch.where(degenerate.unsqueeze(-1), torch.zeros_like(z), z)
        alpha = torch.softmax(z, dim=-1).masked_fill(pad, 0.0)
        summed = (alpha.unsqueeze(-1) * w_neigh).sum(dim=-2)  # [*, d']
        if center_fallback:
            summed = torch.where(degenerate.unsqueeze(-1), w_center, summed)
        head_sums.append(summed)
        head_outputs.append(params.sigma(summed))
    if mode == "concat":
        return torch.cat(head_outputs, dim=-1)
    return params.sigma(torch.stack(head_sums, dim=0).mean(dim=0))


def encode_entity_batch(
    params: GflmParams,
    entity_vectors: torch.Tensor,  # [entity_count, d]
    relation_vectors: torch.Tensor,  # [relation_count, d_rel]
    hop1_entities: torch.Tensor,  # [*, n] long
    hop1_relations: torch.Tensor,
    hop1_pad: torch.Tensor,  # [*, n] bool
    hop2_entities: torch.Tensor,  # [*, n, n] long
    hop2_relations: torch.Tensor,
    hop2_pad: torch.Tensor,
    centers: torch.Tensor,  # [*] long
) -> torch.Tensor:
    """Two-level nested attention over padded ego tensors; returns [*, d']."""
    if params.output_dim != params.input_dim:
        raise ConfigurationError(
            "nested entity encoding reuses one parameter set at both hop levels "
            f"and needs output_dim == input_dim, got {params.output_dim} != {params.input_dim}"
        )
    center_vecs = entity_vectors[centers]  # [*, d]
    h1_vecs = entity_vectors[hop1_entities]  # [*, n, d]
    h1_rels = relation_vectors[hop1_relations]  # [*, n, d_rel]
    h2_vecs = entity_vectors[hop2_entities]  # [*, n, n, d]
    h2_rels = relation_vectors[hop2_relations]

    # level 1: contextualise every hop-1 node from its own sampled neighbors
    h1_context = _attention_block(
        params, h1_vecs, h2_vecs, h2_rels, hop2_pad, "average", center_fallback=True
    )  # [*, n, d']

    # level 2: fold contextual hop-1 nodes into the center
    return _attention_block(
        params, center_vecs, h1_context, h1_rels, hop1_pad, "average", center_fallback=True
    )


def encode_entity(ego: EgoNetwork, tables: EmbeddingTable, params: GflmParams) -> torch.Tensor:
    """Contextual representation of one entity from its sampled ego-network."""
    as_long = lambda arr: torch.as_tensor(arr, dtype=torch.long)
    as_bool = lambda arr: torch.as_tensor(arr, dtype=torch.bool)
    out = encode_entity_batch(
        params,
        tables.entity_vectors,
        tables.relation_vectors,
        as_long(ego.hop1_entities).unsqueeze(0),
        as_long(ego.hop1_relations).unsqueeze(0),
        as_bool(ego.hop1_pad).unsqueeze(0),
        as_long(ego.hop2_entities).unsqueeze(0),
        as_long(ego.hop2_relations).unsqueeze(0),
        as_bool(ego.hop2_pad).unsqueeze(0),
        torch.tensor([ego.center], dtype=torch.long),
    )
    return out.squeeze(0)
