"""MIND-format ingestion: parsing, filtering, vocabularies, train/test split.

News rows are tokenized (lowercase, punctuation stripped, whitespace split),
truncated and padded to exactly 20 title and 50 abstract tokens, and their
entity mention lists extracted in order. Behavior rows become impression
records of (reader, time, clicked history, labeled candidates). Filtering
removes rarely-read news first and shallow readers second, in one pass; the
split is a seeded shuffle with the train side floored.
"""

from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DataError, EmptyDatasetError, ParseError

logger = logging.getLogger(__name__)

TITLE_LEN = 20
ABSTRACT_LEN = 50
PAD_TOKEN = "<pad>"

CACHE_MAGIC = "kanrec-dataset"
CACHE_VERSION = 1

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def pad_tokens(tokens: list[str], length: int) -> list[str]:
    return tokens[:length] + [PAD_TOKEN] * max(0, length - len(tokens))


@dataclass
class NewsArticle:
    """One preprocessed news item: fixed-length token lists plus entity mentions."""

    news_id: str
    title_tokens: list[str]
    abstract_tokens: list[str]
    title_entity_ids: list[str] = field(default_factory=list)
    abstract_entity_ids: list[str] = field(default_factory=list)


def article_entity_mentions(article: NewsArticle, slots: int) -> list[str]:
    """Title then abstract mentions, truncated/padded to a fixed slot count."""
    mentions = list(article.title_entity_ids) + list(article.abstract_entity_ids)
    return mentions[:slots] + [PAD_TOKEN] * max(0, slots - len(mentions))


@dataclass
class ImpressionRecord:
    """One behavior event: clicked history plus a labeled candidate list."""

    impression_id: str
    reader_id: str
    timestamp: str
    history: list[str]
    candidates: list[tuple[str, int]]


@dataclass
class DatasetSplit:
    """Disjoint train/test impressions with shared articles and vocabularies."""

    train: list[ImpressionRecord]
    test: list[ImpressionRecord]
    articles: dict[str, NewsArticle]
    word_tokens: list[str]
    entity_ids: list[str]
    statistics: dict[str, int]


def parse_news_file(path) -> list[NewsArticle]:
    """Parse a MIND news TSV.

    Columns: news_id, category, subcategory, title, abstract, url,
    title_entities (JSON), abstract_entities (JSON). Malformed entity JSON
    degrades to an empty mention list with a warning; a wrong column count is
    a hard parse error.
    """
    articles: list[NewsArticle] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 8:
                raise ParseError(path, line_number, f"expected 8 tab-separated columns, got {len(fields)}")
            news_id, _category, _subcategory, title, abstract, _url, title_ents, abstract_ents = fields
            articles.append(
                NewsArticle(
                    news_id=news_id,
                    title_tokens=pad_tokens(tokenize(title), TITLE_LEN),
                    abstract_tokens=pad_tokens(tokenize(abstract), ABSTRACT_LEN),
                    title_entity_ids=_entity_mentions(title_ents, path, line_number),
                    abstract_entity_ids=_entity_mentions(abstract_ents, path, line_number),
                )
            )
    return articles


def _entity_mentions(blob: str, path, line_number: int) -> list[str]:
    if not blob.strip():
        return []
    try:
        entries = json.loads(blob)
        return [entry["WikidataId"] for entry in entries if "WikidataId" in entry]
    except (json.JSONDecodeError, TypeError):
        logger.warning("%s:%d: unparsable entity JSON, treating as no mentions", path, line_number)
        return []


def parse_behaviors_file(path) -> list[ImpressionRecord]:
    """Parse a MIND behaviors TSV.

    Columns: impression_id, user_id, time, history (space-separated news ids,
    may be empty), impressions (space-separated ``newsid-label`` tokens with
    label 0 or 1).
    """
    records: list[ImpressionRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ParseError(path, line_number, f"expected 5 tab-separated columns, got {len(fields)}")
            impression_id, user_id, timestamp, history_blob, impression_blob = fields
            candidates = []
            for token in impression_blob.split():
                news_id, _, label = token.rpartition("-")
                if not news_id or label not in ("0", "1"):
                    raise ParseError(path, line_number, f"bad impression token {token!r}, want newsid-0 or newsid-1")
                candidates.append((news_id, int(label)))
            records.append(
                ImpressionRecord(
                    impression_id=impression_id,
                    reader_id=user_id,
                    timestamp=timestamp,
                    history=history_blob.split(),
                    candidates=candidates,
                )
            )
    return records


def apply_filters(
    records: list[ImpressionRecord],
    articles: list[NewsArticle] | dict[str, NewsArticle],
    min_readers: int = 10,
    min_history: int = 50,
) -> tuple[list[ImpressionRecord], dict[str, NewsArticle]]:
    """Drop rarely-read news, then shallow readers, in one pass.

    A reader of a news item is a user who clicked it (history membership or a
    label-1 candidate); exposure alone does not count. News below
    ``min_readers`` distinct readers disappear everywhere (article set,
    histories, candidate lists). A user's reading-record count is the number
    of distinct news left in their history; users below ``min_history`` are
    dropped with all their impressions. Impressions whose candidate list
    empties out are dropped last.
    """
    if not isinstance(articles, dict):
        articles = {a.news_id: a for a in articles}

    readers: dict[str, set[str]] = {}
    for record in records:
        for news_id in record.history:
            readers.setdefault(news_id, set()).add(record.reader_id)
        for news_id, label in record.candidates:
            if label == 1:
                readers.setdefault(news_id, set()).add(record.reader_id)
    keep_news = {
        news_id for news_id in articles if len(readers.get(news_id, ())) >= min_readers
    }

    trimmed: list[ImpressionRecord] = []
    for record in records:
        trimmed.append(
            ImpressionRecord(
                impression_id=record.impression_id,
                reader_id=record.reader_id,
                timestamp=record.timestamp,
                history=[n for n in record.history if n in keep_news],
                candidates=[(n, y) for n, y in record.candidates if n in keep_news],
            )
        )

    history_sizes: dict[str, set[str]] = {}
    for record in trimmed:
        history_sizes.setdefault(record.reader_id, set()).update(record.history)
    keep_users = {user for user, seen in history_sizes.items() if len(seen) >= min_history}

    surviving = [r for r in trimmed if r.reader_id in keep_users and r.candidates]
    if not surviving:
        raise EmptyDatasetError(
            f"filters (min_readers={min_readers}, min_history={min_history}) removed every impression"
        )
    kept_articles = {news_id: articles[news_id] for news_id in sorted(keep_news)}
    return surviving, kept_articles


def split_dataset(
    records: list[ImpressionRecord],
    articles: dict[str, NewsArticle],
    ratio: float = 0.8,
    seed: int = 0,
) -> DatasetSplit:
    """Seeded shuffle, then a prefix split with the train side floored."""
    if len(records) < 5:
        raise DataError(f"need at least 5 impressions to split, got {len(records)}")
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(records))
    cut = int(ratio * len(records))
    train = [records[i] for i in order[:cut]]
    test = [records[i] for i in order[cut:]]

    words: set[str] = set()
    entities: set[str] = set()
    for article in articles.values():
        words.update(t for t in article.title_tokens if t != PAD_TOKEN)
        words.update(t for t in article.abstract_tokens if t != PAD_TOKEN)
        entities.update(article.title_entity_ids)
        entities.update(article.abstract_entity_ids)
    statistics = {
        "users": len({r.reader_id for r in records}),
        "behaviours": len(records),
        "words": len(words),
        "entities": len(entities),
        "max_title_words": TITLE_LEN,
        "max_abstract_words": ABSTRACT_LEN,
    }
    return DatasetSplit(
        train=train,
        test=test,
        articles=articles,
        word_tokens=sorted(words),
        entity_ids=sorted(entities),
        statistics=statistics,
    )


def build_dataset(
    news_path,
    behaviors_path,
    min_readers: int = 10,
    min_history: int = 50,
    ratio: float = 0.8,
    seed: int = 0,
) -> DatasetSplit:
    """Full pipeline: parse both files, filter, split."""
    articles = parse_news_file(news_path)
    records = parse_behaviors_file(behaviors_path)
    surviving, kept = apply_filters(records, articles, min_readers=min_readers, min_history=min_history)
    split = split_dataset(surviving, kept, ratio=ratio, seed=seed)
    missing = referenced_news_ids(surviving) - set(kept)
    if missing:
        raise DataError(f"impressions reference unknown news ids: {sorted(missing)[:5]}")
    return split


def referenced_news_ids(records: list[ImpressionRecord]) -> set[str]:
    refs: set[str] = set()
    for record in records:
        refs.update(record.history)
        refs.update(n for n, _ in record.candidates)
    return refs


def save_dataset(split: DatasetSplit, path) -> None:
    """Write the versioned cache; byte-identical for identical inputs."""
    payload = {
        "magic": CACHE_MAGIC,
        "version": CACHE_VERSION,
        "train": [asdict(r) for r in split.train],
        "test": [asdict(r) for r in split.test],
        "articles": [asdict(split.articles[k]) for k in sorted(split.articles)],
        "word_tokens": split.word_tokens,
        "entity_ids": split.entity_ids,
        "statistics": split.statistics,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_dataset(path) -> DatasetSplit:
    """Read a cache written by save_dataset, rejecting other/older files."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("magic") != CACHE_MAGIC:
        raise DataError(f"{path}: not a dataset cache file")
    if payload.get("version") != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {payload.get('version')}")

    def record(blob) -> ImpressionRecord:
        return ImpressionRecord(
            impression_id=blob["impression_id"],
            reader_id=blob["reader_id"],
            timestamp=blob["timestamp"],
            history=list(blob["history"]),
            candidates=[(n, int(y)) for n, y in blob["candidates"]],
        )

    articles = {blob["news_id"]: NewsArticle(**blob) for blob in payload["articles"]}
    return DatasetSplit(
        train=[record(b) for b in payload["train"]],
        test=[record(b) for b in payload["test"]],
        articles=articles,
        word_tokens=list(payload["word_tokens"]),
        entity_ids=list(payload["entity_ids"]),
        statistics={k: int(v) for k, v in payload["statistics"].items()},
    )
