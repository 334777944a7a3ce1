"""Translation-based knowledge-graph embeddings (TransE, TransH, TransR).

Scoring follows the negated squared L2 residual convention: a perfect
translation scores 0 and everything else scores below 0. Training minimises a
margin ranking loss against uniformly corrupted triples with plain SGD; the
finished table is immutable and serves as the (default frozen) input
representation for graph attention.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field

import torch

from .determinism import generator, single_threaded_torch
from .errors import ConfigurationError, DataError, TrainingError
from .kg_store import KnowledgeGraph

MODEL_KINDS = ("TransE", "TransH", "TransR")

_EMBEDDING_MAGIC = "kanrec-embeddings"
_EMBEDDING_VERSION = 1


def _as_vector(value, name: str) -> torch.Tensor:
    tensor = torch.as_tensor(value, dtype=torch.float64)
    if tensor.ndim == 0:
        raise ValueError(f"{name} must have at least one dimension")
    return tensor


def score_transe(h_vec, r_vec, t_vec) -> torch.Tensor:
    """-||h + r - t||_2^2 over the last dimension; 0 only at exact translation."""
    h = _as_vector(h_vec, "h_vec")
    r = _as_vector(r_vec, "r_vec")
    t = _as_vector(t_vec, "t_vec")
    if h.shape[-1] != r.shape[-1] or h.shape[-1] != t.shape[-1]:
        raise ValueError(f"dimension mismatch: h={h.shape[-1]}, r={r.shape[-1]}, t={t.shape[-1]}")
    return -((h + r - t) ** 2).sum(dim=-1)


def _project(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    # component of x in the hyperplane with unit normal w
    return x - (x * w).sum(dim=-1, keepdim=True) * w


def score_transh(h_vec, t_vec, w_r, d_r) -> torch.Tensor:
    """-||h_perp + d_r - t_perp||_2^2 with h/t projected onto the relation hyperplane."""
    h = _as_vector(h_vec, "h_vec")
    t = _as_vector(t_vec, "t_vec")
    w = _as_vector(w_r, "w_r")
    d = _as_vector(d_r, "d_r")
    if not (h.shape[-1] == t.shape[-1] == w.shape[-1] == d.shape[-1]):
        raise ValueError("dimension mismatch among h, t, w_r, d_r")
    norms = w.norm(dim=-1)
    if not torch.allclose(norms, torch.ones_like(norms), atol=1e-6):
        raise ValueError(f"w_r must be unit length, got norm {norms.max().item():.8f}")
    return -((_project(h, w) + d - _project(t, w)) ** 2).sum(dim=-1)


def score_transr(h_vec, t_vec, r_vec, m_r) -> torch.Tensor:
    """-||h M_r + r - t M_r||_2^2 projecting entities into the relation space."""
    h = _as_vector(h_vec, "h_vec")
    t = _as_vector(t_vec, "t_vec")
    r = _as_vector(r_vec, "r_vec")
    m = torch.as_tensor(m_r, dtype=torch.float64)
    if m.ndim < 2:
        raise ValueError("m_r must be a [k x d] matrix")
    if h.shape[-1] != m.shape[-2] or t.shape[-1] != m.shape[-2]:
        raise ValueError(f"entity dim {h.shape[-1]} does not match projection rows {m.shape[-2]}")
    if r.shape[-1] != m.shape[-1]:
        raise ValueError(f"relation dim {r.shape[-1]} does not match projection cols {m.shape[-1]}")
    h_proj = (h.unsqueeze(-2) @ m).squeeze(-2)
    t_proj = (t.unsqueeze(-2) @ m).squeeze(-2)
    return -((h_proj + r - t_proj) ** 2).sum(dim=-1)


@dataclass
class KgeConfig:
    """Hyperparameters for embedding pretraining.

    ``epochs`` is the step budget: one epoch is one pass over all stored
    triples in shuffled mini-batches.
    """

    model_kind: str = "TransR"
    entity_dim: int = 300
    relation_dim: int | None = None  # defaults to entity_dim
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.01
    margin: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model_kind {self.model_kind!r}, expected one of {MODEL_KINDS}")
        if self.relation_dim is None:
            self.relation_dim = self.entity_dim
        if self.model_kind in ("TransE", "TransH") and self.relation_dim != self.entity_dim:
            raise ConfigurationError(f"{self.model_kind} requires relation_dim == entity_dim")
        if self.entity_dim <= 0 or self.relation_dim <= 0:
            raise ConfigurationError("embedding dimensions must be positive")
        if self.batch_size <= 0:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be non-negative, got {self.epochs}")


@dataclass
class EmbeddingTable:
    """Trained entity/relation vectors plus per-model extras.

    ``relation_vectors`` holds the per-relation translation: r for TransE and
    TransR, the in-hyperplane translation d_r for TransH. TransH additionally
    carries unit hyperplane normals, TransR per-relation projection matrices.
    """

    model_kind: str
    entity_vectors: torch.Tensor  # [entity_count, k]
    relation_vectors: torch.Tensor  # [relation_count, d]
    normals: torch.Tensor | None = None  # TransH [relation_count, k]
    projections: torch.Tensor | None = None  # TransR [relation_count, k, d]
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def entity_count(self) -> int:
        return int(self.entity_vectors.shape[0])

    @property
    def relation_count(self) -> int:
        return int(self.relation_vectors.shape[0])

    @property
    def entity_dim(self) -> int:
        return int(self.entity_vectors.shape[1])

    @property
    def relation_dim(self) -> int:
        return int(self.relation_vectors.shape[1])

    @property
    def hyperplane_normals(self) -> torch.Tensor:
        if self.normals is None:
            raise ValueError(f"{self.model_kind} table has no hyperplane normals")
        return self.normals

    @property
    def translation_vectors(self) -> torch.Tensor:
        return self.relation_vectors

    def score_triples(self, heads, relations, tails) -> torch.Tensor:
        """Score dense-id triples (any matching leading shape) with the owning model."""
        h = self.entity_vectors[torch.as_tensor(heads, dtype=torch.long)]
        t = self.entity_vectors[torch.as_tensor(tails, dtype=torch.long)]
        rel_idx = torch.as_tensor(relations, dtype=torch.long)
        r = self.relation_vectors[rel_idx]
        if self.model_kind == "TransE":
            return score_transe(h, r, t)
        if self.model_kind == "TransH":
            return score_transh(h, t, self.normals[rel_idx], r)
        m = self.projections[rel_idx]
        h_proj = (h.unsqueeze(-2) @ m).squeeze(-2)
        t_proj = (t.unsqueeze(-2) @ m).squeeze(-2)
        return -((h_proj + r - t_proj) ** 2).sum(dim=-1)

    def state_arrays(self) -> dict:
        arrays = {
            "entity_vectors": self.entity_vectors.numpy(),
            "relation_vectors": self.relation_vectors.numpy(),
        }
        if self.normals is not None:
            arrays["normals"] = self.normals.numpy()
        if self.projections is not None:
            arrays["projections"] = self.projections.numpy()
        return arrays

    def save(self, path) -> None:
        payload = {
            "magic": _EMBEDDING_MAGIC,
            "version": _EMBEDDING_VERSION,
            "model_kind": self.model_kind,
            "entity_count": self.entity_count,
            "relation_count": self.relation_count,
            "entity_dim": self.entity_dim,
            "relation_dim": self.relation_dim,
            "epoch_losses": list(self.epoch_losses),
            "arrays": self.state_arrays(),
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload.get("magic") != _EMBEDDING_MAGIC:
            raise DataError(f"{path}: not an embedding table file")
        if payload.get("version") != _EMBEDDING_VERSION:
            raise DataError(f"{path}: unsupported embedding file version {payload.get('version')}")
        arrays = payload["arrays"]
        return cls(
            model_kind=payload["model_kind"],
            entity_vectors=torch.as_tensor(arrays["entity_vectors"], dtype=torch.float64),
            relation_vectors=torch.as_tensor(arrays["relation_vectors"], dtype=torch.float64),
            normals=(
                torch.as_tensor(arrays["normals"], dtype=torch.float64) if "normals" in arrays else None
            ),
            projections=(
                torch.as_tensor(arrays["projections"], dtype=torch.float64) if "projections" in arrays else None
            ),
            epoch_losses=list(payload.get("epoch_losses", [])),
        )


def _initial_table(graph: KnowledgeGraph, config: KgeConfig, gen: torch.Generator) -> EmbeddingTable:
    k, d = config.entity_dim, config.relation_dim
    bound_e = 6.0 / (k ** 0.5)
    bound_r = 6.0 / (d ** 0.5)
    entity = torch.empty(graph.entity_count, k, dtype=torch.float64).uniform_(-bound_e, bound_e, generator=gen)
    relation = torch.empty(graph.relation_count, d, dtype=torch.float64).uniform_(-bound_r, bound_r, generator=gen)
    normals = None
    projections = None
    if config.model_kind == "TransH":
        normals = torch.empty(graph.relation_count, k, dtype=torch.float64).uniform_(-bound_e, bound_e, generator=gen)
        normals = normals / normals.norm(dim=-1, keepdim=True)
    elif config.model_kind == "TransR":
        # identity-like projection keeps the entity space as the starting point
        projections = torch.eye(k, d, dtype=torch.float64).expand(graph.relation_count, k, d).contiguous()
    return EmbeddingTable(
        model_kind=config.model_kind,
        entity_vectors=entity,
        relation_vectors=relation,
        normals=normals,
        projections=projections,
    )


def train_kge(graph: KnowledgeGraph, config: KgeConfig) -> EmbeddingTable:
    """Train embeddings with margin ranking loss over corrupted triples.

    Each positive is paired with one corruption (head or tail replaced by a
    uniform entity draw, Bernoulli 0.5 side choice). After every update,
    TransE/TransH entity rows are renormalised to unit L2 and TransH normals
    re-unit-normalised; TransR entity norms are clipped to <= 1. Deterministic
    for a fixed seed; single-threaded while it runs.
    """
    if not graph.triples:
        raise DataError("cannot train embeddings on an empty graph")
    gen = generator(config.seed)
    table = _initial_table(graph, config, gen)
    if config.epochs == 0:
        return table

    with single_threaded_torch():
        entity = table.entity_vectors.clone().requires_grad_(True)
        relation = table.relation_vectors.clone().requires_grad_(True)
        params = [entity, relation]
        normals = projections = None
        if table.normals is not None:
            normals = table.normals.clone().requires_grad_(True)
            params.append(normals)
        if table.projections is not None:
            projections = table.projections.clone().requires_grad_(True)
            params.append(projections)
        optimizer = torch.optim.SGD(params, lr=config.learning_rate)

        triples = torch.tensor(
            [(t.head, t.relation, t.tail) for t in graph.triples], dtype=torch.long
        )
        n = triples.shape[0]
        epoch_losses: list[float] = []
        step = 0
        for _ in range(config.epochs):
            order = torch.randperm(n, generator=gen)
            epoch_total = 0.0
            for start in range(0, n, config.batch_size):
                batch = triples[order[start : start + config.batch_size]]
                corrupt = batch.clone()
                replace_head = torch.rand(batch.shape[0], generator=gen) < 0.5
                random_entities = torch.randint(0, graph.entity_count, (batch.shape[0],), generator=gen)
                corrupt[:, 0] = torch.where(replace_head, random_entities, corrupt[:, 0])
                corrupt[:, 2] = torch.where(replace_head, corrupt[:, 2], random_entities)

                pos = _score_batch(config.model_kind, entity, relation, normals, projections, batch)
                neg = _score_batch(config.model_kind, entity, relation, normals, projections, corrupt)
                loss = torch.clamp(config.margin - pos + neg, min=0.0).mean()
                if not torch.isfinite(loss):
                    raise TrainingError(step, "non-finite margin ranking loss")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                with torch.no_grad():
                    if config.model_kind in ("TransE", "TransH"):
                        entity /= entity.norm(dim=-1, keepdim=True).clamp_min(1e-12)
                    else:
                        scale = entity.norm(dim=-1, keepdim=True).clamp_min(1.0)
                        entity /= scale
                    if normals is not None:
                        normals /= normals.norm(dim=-1, keepdim=True).clamp_min(1e-12)
                epoch_total += loss.item() * batch.shape[0]
                step += 1
            epoch_losses.append(epoch_total / n)

    return EmbeddingTable(
        model_kind=config.model_kind,
        entity_vectors=entity.detach().clone(),
        relation_vectors=relation.detach().clone(),
        normals=None if normals is None else normals.detach().clone(),
        projections=None if projections is None else projections.detach().clone(),
        epoch_losses=epoch_losses,
    )


def _score_batch(kind, entity, relation, normals, projections, triples) -> torch.Tensor:
    h = entity[triples[:, 0]]
    r = relation[triples[:, 1]]
    t = entity[triples[:, 2]]
    if kind == "TransE":
        return -((h + r - t) ** 2).sum(dim=-1)
    if kind == "TransH":
        w = normals[triples[:, 1]]
        w = w / w.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return -((_project(h, w) + r - _project(t, w)) ** 2).sum(dim=-1)
    m = projections[triples[:, 1]]
    h_proj = (h.unsqueeze(-2) @ m).squeeze(-2)
    t_proj = (t.unsqueeze(-2) @ m).squeeze(-2)
    return -((h_proj + r - t_proj) ** 2).sum(dim=-1)
