"""Knowledge-aware news recommendation with dual observation mechanisms."""

from .data_pipeline import (
    DatasetSplit,
    ImpressionRecord,
    NewsArticle,
    apply_filters,
    build_dataset,
    load_dataset,
    parse_behaviors_file,
    parse_news_file,
    save_dataset,
    split_dataset,
)
from .errors import (
    CheckpointMismatchError,
    ConfigurationError,
    DataError,
    DegenerateNeighborhoodError,
    EmptyDatasetError,
    KanrecError,
    ParseError,
    TrainingError,
)
from .gflm import GflmParams, encode_entity
from .kg_store import (
    EgoNetwork,
    KnowledgeGraph,
    Triple,
    link_entities,
    load_triples,
    sample_ego_network,
)
from .kge import EmbeddingTable, KgeConfig, score_transe, score_transh, score_transr, train_kge
from .metrics import auc, mrr, ndcg_at_k
from .news_encoder import NewsEncoder, NewsRepresentation, WordVocabulary, encode_news
from .training_eval import (
    MetricReport,
    ModelCheckpoint,
    TrainConfig,
    evaluate,
    log_loss,
    train,
)
from .user_encoder import (
    EomParams,
    UserRepresentation,
    click_probability,
    encode_user,
    rank_candidates,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit", "ImpressionRecord", "NewsArticle", "apply_filters", "build_dataset",
    "load_dataset", "parse_behaviors_file", "parse_news_file", "save_dataset", "split_dataset",
    "KanrecError", "ConfigurationError", "DataError", "ParseError", "EmptyDatasetError",
    "CheckpointMismatchError", "TrainingError", "DegenerateNeighborhoodError",
    "GflmParams", "encode_entity",
    "EgoNetwork", "KnowledgeGraph", "Triple", "link_entities", "load_triples", "sample_ego_network",
    "EmbeddingTable", "KgeConfig", "score_transe", "score_transh", "score_transr", "train_kge",
    "auc", "mrr", "ndcg_at_k",
    "NewsEncoder", "NewsRepresentation", "WordVocabulary", "encode_news",
    "MetricReport", "ModelCheckpoint", "TrainConfig", "evaluate", "log_loss", "train",
    "EomParams", "UserRepresentation", "click_probability", "encode_user", "rank_candidates",
    "__version__",
]
