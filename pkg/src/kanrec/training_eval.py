"""End-to-end training (log loss, Adam) and ranking evaluation.

The trained object couples the internal-observation news encoder with the
external-observation user encoder and click head. Knowledge-graph and word
embeddings enter as frozen lookup tables by default (a fine-tune flag turns
the graph tables into parameters). All randomness flows from explicit seeded
generators, and deterministic mode pins torch to one thread so repeated runs
produce bit-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import logging
import math
import pickle
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import gflm, metrics
from .data_pipeline import DatasetSplit, ImpressionRecord, NewsArticle, article_entity_mentions
from .determinism import generator, single_threaded_torch
from .errors import (
    CheckpointMismatchError,
    ConfigurationError,
    DataError,
    TrainingError,
)
from .kg_store import KnowledgeGraph, PAD_ENTITY_ID, link_entities, sample_ego_network
from .kge import EmbeddingTable, MODEL_KINDS
from .news_encoder import NewsEncoder, WordVocabulary, PAD_WORD_ID
from .user_encoder import EomParams, click_probability_batch, encode_user_batch

logger = logging.getLogger(__name__)

WORD_MODELS = ("word2vec", "glove", "bert")

_CHECKPOINT_MAGIC = "kanrec-checkpoint"
_CHECKPOINT_VERSION = 1

_LOSS_EPS = 1e-7


@dataclass
class TrainConfig:
    """Hyperparameters for one end-to-end run (defaults are the real-run values)."""

    batch_size: int = 128
    learning_rate: float = 0.0001
    epochs: int = 8
    word_dim: int = 300
    context_dim: int = 300
    neighbor_size: int = 20
    eom_batch: int = 110
    seed: int = 0
    embedding_model: str = "TransR"
    word_model: str = "glove"
    history_len: int = 50
    heads: int = 2
    entity_slots: int = 10
    eom_pretrain_epochs: int = 0
    use_dual_observation: bool = True
    fine_tune_embeddings: bool = False
    deterministic: bool = True

    def __post_init__(self):
        if self.embedding_model not in MODEL_KINDS:
            raise ConfigurationError(
                f"unknown embedding_model {self.embedding_model!r}, expected one of {MODEL_KINDS}"
            )
        if self.word_model not in WORD_MODELS:
            raise ConfigurationError(f"unknown word_model {self.word_model!r}, expected one of {WORD_MODELS}")
        positive = (
            "batch_size", "learning_rate", "word_dim", "context_dim",
            "neighbor_size", "eom_batch", "history_len", "heads", "entity_slots",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0 or self.eom_pretrain_epochs < 0:
            raise ConfigurationError("epoch counts must be non-negative")


def log_loss(p: float, y: int) -> float:
    """-[y ln p + (1-y) ln(1-p)], with p clamped into [1e-7, 1-1e-7]."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    p = min(max(float(p), _LOSS_EPS), 1.0 - _LOSS_EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def _log_loss_t(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    clamped = probs.clamp(_LOSS_EPS, 1.0 - _LOSS_EPS)
    return -(labels * clamped.log() + (1.0 - labels) * (1.0 - clamped).log())


class NewsFeatureStore:
    """Integer feature tensors for a fixed article set.

    Articles map to fixed-length word-id rows and entity-slot rows; distinct
    entities get one precomputed padded ego-network each (PAD included at row
    0), so batched encoding is pure tensor gathering.
    """

    def __init__(
        self,
        articles: dict[str, NewsArticle],
        vocab: WordVocabulary,
        graph: KnowledgeGraph,
        neighbor_size: int,
        entity_slots: int,
        seed: int,
    ):
        self.news_ids = sorted(articles)
        self.index = {news_id: i for i, news_id in enumerate(self.news_ids)}
        word_rows = []
        entity_rows = []
        for news_id in self.news_ids:
            article = articles[news_id]
            word_rows.append(vocab.ids(article.title_tokens, 20) + vocab.ids(article.abstract_tokens, 50))
            entity_rows.append(link_entities(article_entity_mentions(article, entity_slots), graph))
        self.word_ids = torch.tensor(word_rows, dtype=torch.long) if word_rows else torch.zeros(0, 70, dtype=torch.long)
        dense = torch.tensor(entity_rows, dtype=torch.long) if entity_rows else torch.zeros(0, entity_slots, dtype=torch.long)
        self.entity_pad = dense == PAD_ENTITY_ID

        unique = sorted({PAD_ENTITY_ID, *dense.flatten().tolist()})
        row_of = {entity: row for row, entity in enumerate(unique)}
        self.entity_slot_rows = torch.tensor(
            [[row_of[int(e)] for e in row] for row in dense.tolist()], dtype=torch.long
        ) if entity_rows else torch.zeros(0, entity_slots, dtype=torch.long)

        egos = [sample_ego_network(entity, graph, neighbor_size, seed) for entity in unique]
        self.ego_centers = torch.tensor(unique, dtype=torch.long)
        self.ego_hop1_e = torch.tensor(np.stack([e.hop1_entities for e in egos]), dtype=torch.long)
        self.ego_hop1_r = torch.tensor(np.stack([e.hop1_relations for e in egos]), dtype=torch.long)
        self.ego_hop1_pad = torch.tensor(np.stack([e.hop1_pad for e in egos]), dtype=torch.bool)
        self.ego_hop2_e = torch.tensor(np.stack([e.hop2_entities for e in egos]), dtype=torch.long)
        self.ego_hop2_r = torch.tensor(np.stack([e.hop2_relations for e in egos]), dtype=torch.long)
        self.ego_hop2_pad = torch.tensor(np.stack([e.hop2_pad for e in egos]), dtype=torch.bool)

    def __len__(self) -> int:
        return len(self.news_ids)

    def indices_for(self, news_ids) -> torch.Tensor:
        try:
            return torch.tensor([self.index[n] for n in news_ids], dtype=torch.long)
        except KeyError as exc:
            raise DataError(f"impression references news id {exc.args[0]!r} missing from the article set")


class RecommenderModel(torch.nn.Module):
    """News encoder + user encoder + click head over frozen lookup tables."""

    def __init__(self, config: TrainConfig, tables: EmbeddingTable, vocab: WordVocabulary):
        super().__init__()
        if vocab.dim != config.word_dim:
            raise ConfigurationError(f"word vectors have dim {vocab.dim}, config says {config.word_dim}")
        if tables.entity_dim != config.context_dim:
            raise ConfigurationError(
                f"entity embeddings have dim {tables.entity_dim}, config says {config.context_dim}"
            )
        self.config = config
        self.register_buffer("word_vectors", vocab.vectors.clone())
        entity = tables.entity_vectors.clone()
        relation = tables.relation_vectors.clone()
        if config.fine_tune_embeddings:
            self.entity_vectors = torch.nn.Parameter(entity)
            self.relation_vectors = torch.nn.Parameter(relation)
        else:
            self.register_buffer("entity_vectors", entity)
            self.register_buffer("relation_vectors", relation)
        self.news = NewsEncoder(
            word_dim=config.word_dim,
            context_dim=config.context_dim,
            relation_dim=tables.relation_dim,
            heads=config.heads,
            seed=config.seed + 11,
        )
        self.eom = EomParams(
            dim=config.context_dim,
            history_len=config.history_len,
            heads=config.heads,
            seed=config.seed + 23,
        )

    def encode_news_batch(self, store: NewsFeatureStore, idx: torch.Tensor) -> torch.Tensor:
        rows = store.entity_slot_rows[idx]  # [b, slots]
        context = gflm.encode_entity_batch(
            self.news.gflm,
            self.entity_vectors,
            self.relation_vectors,
            store.ego_hop1_e[rows],
            store.ego_hop1_r[rows],
            store.ego_hop1_pad[rows],
            store.ego_hop2_e[rows],
            store.ego_hop2_r[rows],
            store.ego_hop2_pad[rows],
            store.ego_centers[rows],
        )  # [b, slots, d']
        return self.news(
            self.word_vectors,
            store.word_ids[idx],
            context,
            store.entity_pad[idx],
            use_attention_pool=self.config.use_dual_observation,
        )

    def encode_users(self, history_vecs: torch.Tensor, history_pad: torch.Tensor) -> torch.Tensor:
        return encode_user_batch(
            self.eom, history_vecs, history_pad, use_attention=self.config.use_dual_observation
        )

    def click_probabilities(self, users: torch.Tensor, news: torch.Tensor) -> torch.Tensor:
        return click_probability_batch(self.eom, users, news)


def _batch_tensors(records: list[ImpressionRecord], store: NewsFeatureStore, history_len: int):
    """Assemble one impression batch: unique news, padded histories, flat candidates."""
    needed: set[str] = set()
    for record in records:
        needed.update(record.history[-history_len:])
        needed.update(n for n, _ in record.candidates)
    unique = sorted(needed)
    local = {n: i for i, n in enumerate(unique)}
    unique_idx = store.indices_for(unique)

    b = len(records)
    hist = torch.zeros(b, history_len, dtype=torch.long)
    hist_pad = torch.ones(b, history_len, dtype=torch.bool)
    cand_imp, cand_news, cand_label = [], [], []
    for i, record in enumerate(records):
        kept = record.history[-history_len:]
        for j, news_id in enumerate(kept):
            hist[i, j] = local[news_id]
            hist_pad[i, j] = False
        for news_id, label in record.candidates:
            cand_imp.append(i)
            cand_news.append(local[news_id])
            cand_label.append(label)
    return (
        unique_idx,
        hist,
        hist_pad,
        torch.tensor(cand_imp, dtype=torch.long),
        torch.tensor(cand_news, dtype=torch.long),
        torch.tensor(cand_label, dtype=torch.float64),
    )


def _batch_loss(model: RecommenderModel, store: NewsFeatureStore, records: list[ImpressionRecord]) -> torch.Tensor:
    unique_idx, hist, hist_pad, cand_imp, cand_news, cand_label = _batch_tensors(
        records, store, model.config.history_len
    )
    news_vecs = model.encode_news_batch(store, unique_idx)  # [u, d']
    hist_vecs = news_vecs[hist] * (~hist_pad).unsqueeze(-1).to(news_vecs.dtype)
    users = model.encode_users(hist_vecs, hist_pad)
    probs = model.click_probabilities(users[cand_imp], news_vecs[cand_news])
    return _log_loss_t(probs, cand_label).mean()


def _dataset_fingerprint(split: DatasetSplit) -> dict[str, str]:
    def digest(items) -> str:
        return hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()

    return {"words": digest(split.word_tokens), "entities": digest(split.entity_ids)}


@dataclass
class ModelCheckpoint:
    """Single-file, self-describing training result."""

    config: TrainConfig
    state: dict[str, np.ndarray]
    table_kind: str
    table_arrays: dict[str, np.ndarray]
    graph_triples: list[tuple[str, str, str]]
    vocab_tokens: list[str]
    vocab_vectors: np.ndarray
    fingerprint: dict[str, str]
    training_log: list[float] = field(default_factory=list)

    def save(self, path) -> None:
        payload = {
            "magic": _CHECKPOINT_MAGIC,
            "version": _CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "state": {k: self.state[k] for k in sorted(self.state)},
            "table_kind": self.table_kind,
            "table_arrays": {k: self.table_arrays[k] for k in sorted(self.table_arrays)},
            "graph_triples": self.graph_triples,
            "vocab_tokens": self.vocab_tokens,
            "vocab_vectors": self.vocab_vectors,
            "fingerprint": self.fingerprint,
            "training_log": list(self.training_log),
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload.get("magic") != _CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        if payload.get("version") != _CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {payload.get('version')}")
        return cls(
            config=TrainConfig(**payload["config"]),
            state=payload["state"],
            table_kind=payload["table_kind"],
            table_arrays=payload["table_arrays"],
            graph_triples=[tuple(t) for t in payload["graph_triples"]],
            vocab_tokens=list(payload["vocab_tokens"]),
            vocab_vectors=payload["vocab_vectors"],
            fingerprint=dict(payload["fingerprint"]),
            training_log=list(payload["training_log"]),
        )


def _snapshot(model: RecommenderModel) -> dict[str, np.ndarray]:
    return {name: tensor.detach().numpy().copy() for name, tensor in model.state_dict().items()}


def _make_checkpoint(
    model: RecommenderModel,
    config: TrainConfig,
    graph: KnowledgeGraph,
    tables: EmbeddingTable,
    vocab: WordVocabulary,
    split: DatasetSplit,
    training_log: list[float],
) -> ModelCheckpoint:
    return ModelCheckpoint(
        config=config,
        state=_snapshot(model),
        table_kind=tables.model_kind,
        table_arrays={k: v.copy() for k, v in tables.state_arrays().items()},
        graph_triples=graph.external_triples(),
        vocab_tokens=list(vocab.tokens[2:]),
        vocab_vectors=vocab.vectors[2:].numpy().copy(),
        fingerprint=_dataset_fingerprint(split),
        training_log=training_log,
    )


def restore(checkpoint: ModelCheckpoint) -> tuple[RecommenderModel, KnowledgeGraph, EmbeddingTable, WordVocabulary]:
    """Rebuild the scoring stack from a checkpoint alone."""
    graph = KnowledgeGraph(checkpoint.graph_triples)
    arrays = checkpoint.table_arrays
    tables = EmbeddingTable(
        model_kind=checkpoint.table_kind,
        entity_vectors=torch.as_tensor(arrays["entity_vectors"], dtype=torch.float64),
        relation_vectors=torch.as_tensor(arrays["relation_vectors"], dtype=torch.float64),
        normals=torch.as_tensor(arrays["normals"], dtype=torch.float64) if "normals" in arrays else None,
        projections=torch.as_tensor(arrays["projections"], dtype=torch.float64) if "projections" in arrays else None,
    )
    vocab = WordVocabulary(checkpoint.vocab_tokens, torch.as_tensor(checkpoint.vocab_vectors, dtype=torch.float64))
    model = RecommenderModel(checkpoint.config, tables, vocab)
    state = {name: torch.as_tensor(arr) for name, arr in checkpoint.state.items()}
    model.load_state_dict(state)
    return model, graph, tables, vocab


def train(
    dataset: DatasetSplit,
    config: TrainConfig,
    graph: KnowledgeGraph,
    tables: EmbeddingTable,
    vocab: WordVocabulary,
) -> ModelCheckpoint:
    """Train the full model on the train split with Adam and log loss.

    Runs an optional user-side warmup phase (news encoder frozen, batch size
    ``eom_batch``) before joint training at ``batch_size``. Loss per epoch is
    logged and stored in the checkpoint.
    """
    if not dataset.train:
        raise DataError("training split is empty")
    model = RecommenderModel(config, tables, vocab)
    store = NewsFeatureStore(
        dataset.articles, vocab, graph, config.neighbor_size, config.entity_slots, config.seed
    )
    training_log: list[float] = []
    with single_threaded_torch(config.deterministic):
        gen = generator(config.seed + 101)
        step = 0
        if config.eom_pretrain_epochs:
            eom_params = [p for name, p in model.named_parameters() if name.startswith("eom.")]
            step = _run_phase(
                model, store, dataset.train, eom_params, config.eom_batch,
                config.eom_pretrain_epochs, config.learning_rate, gen, training_log, step,
            )
        step = _run_phase(
            model, store, dataset.train, list(model.parameters()), config.batch_size,
            config.epochs, config.learning_rate, gen, training_log, step,
        )
    return _make_checkpoint(model, config, graph, tables, vocab, dataset, training_log)


def _run_phase(model, store, records, params, batch_size, epochs, lr, gen, training_log, step) -> int:
    if epochs == 0 or not params:
        return step
    optimizer = torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)
    n = len(records)
    for epoch in range(epochs):
        order = torch.randperm(n, generator=gen).tolist()
        total = 0.0
        for start in range(0, n, batch_size):
            batch = [records[i] for i in order[start : start + batch_size]]
            loss = _batch_loss(model, store, batch)
            if not torch.isfinite(loss):
                raise TrainingError(step, "non-finite training loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
            step += 1
        mean_loss = total / n
        training_log.append(mean_loss)
        logger.info("epoch %d: mean log loss %.6f", epoch, mean_loss)
    return step


@dataclass
class MetricReport:
    """AUC/MRR/NDCG@5/NDCG@10 percentages plus the per-impression raw table."""

    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    rows: list[dict]
    auc_impressions: int
    auc_skipped: int
    rank_impressions: int
    rank_skipped: int

    def values(self) -> dict[str, float]:
        return {"auc": self.auc, "mrr": self.mrr, "ndcg5": self.ndcg5, "ndcg10": self.ndcg10}

    def summary_line(self) -> str:
        return (
            f"AUC {self.auc:.2f}  MRR {self.mrr:.2f}  "
            f"NDCG@5 {self.ndcg5:.2f}  NDCG@10 {self.ndcg10:.2f}"
        )


def score_impressions(
    model: RecommenderModel,
    store: NewsFeatureStore,
    records: list[ImpressionRecord],
    batch_size: int = 256,
) -> list[tuple[ImpressionRecord, list[str], list[float], list[int]]]:
    """Candidate probabilities per impression, computed without gradients."""
    out = []
    with torch.no_grad():
        all_vecs = torch.cat(
            [
                model.encode_news_batch(store, torch.arange(start, min(start + batch_size, len(store))))
                for start in range(0, len(store), batch_size)
            ]
        ) if len(store) else torch.zeros(0, model.config.context_dim, dtype=torch.float64)
        for start in range(0, len(records), batch_size):
            batch = records[start : start + batch_size]
            unique_idx, hist, hist_pad, cand_imp, cand_news, _ = _batch_tensors(
                batch, store, model.config.history_len
            )
            news_vecs = all_vecs[unique_idx]
            hist_vecs = news_vecs[hist] * (~hist_pad).unsqueeze(-1).to(news_vecs.dtype)
            users = model.encode_users(hist_vecs, hist_pad)
            probs = model.click_probabilities(users[cand_imp], news_vecs[cand_news])
            cursor = 0
            for i, record in enumerate(batch):
                k = len(record.candidates)
                p = probs[cursor : cursor + k].tolist()
                cursor += k
                out.append(
                    (record, [n for n, _ in record.candidates], p, [y for _, y in record.candidates])
                )
    return out


def evaluate(checkpoint: ModelCheckpoint, dataset: DatasetSplit) -> MetricReport:
    """Score every test impression and aggregate the four ranking metrics."""
    fingerprint = _dataset_fingerprint(dataset)
    if fingerprint != checkpoint.fingerprint:
        raise CheckpointMismatchError(
            "checkpoint was trained against different vocabularies than this dataset"
        )
    model, graph, _tables, vocab = restore(checkpoint)
    store = NewsFeatureStore(
        dataset.articles, vocab, graph,
        checkpoint.config.neighbor_size, checkpoint.config.entity_slots, checkpoint.config.seed,
    )
    return build_report(score_impressions(model, store, dataset.test))


def build_report(scored) -> MetricReport:
    """Aggregate per-impression metrics into a MetricReport (percent, 2 decimals)."""
    rows = []
    aucs, mrrs, n5s, n10s = [], [], [], []
    auc_skipped = rank_skipped = 0
    for record, news_ids, scores, labels in scored:
        row = {
            "impression_id": record.impression_id,
            "reader_id": record.reader_id,
            "candidates": len(labels),
            "clicks": int(sum(labels)),
            "auc": None,
            "mrr": None,
            "ndcg5": None,
            "ndcg10": None,
        }
        if 0 < sum(labels) < len(labels):
            row["auc"] = metrics.auc(scores, labels)
            aucs.append(row["auc"])
        else:
            auc_skipped += 1
        if sum(labels) > 0:
            ranked = metrics.rank_impression(scores, labels, news_ids)
            row["mrr"] = metrics.mrr(ranked)
            row["ndcg5"] = metrics.ndcg_at_k(ranked, 5)
            row["ndcg10"] = metrics.ndcg_at_k(ranked, 10)
            mrrs.append(row["mrr"])
            n5s.append(row["ndcg5"])
            n10s.append(row["ndcg10"])
        else:
            rank_skipped += 1
        rows.append(row)

    def pct(values) -> float:
        return round(100.0 * sum(values) / len(values), 2) if values else 0.0

    return MetricReport(
        auc=pct(aucs),
        mrr=pct(mrrs),
        ndcg5=pct(n5s),
        ndcg10=pct(n10s),
        rows=rows,
        auc_impressions=len(aucs),
        auc_skipped=auc_skipped,
        rank_impressions=len(mrrs),
        rank_skipped=rank_skipped,
    )
