"""Synthetic datasets with a planted topical preference structure.

Two disjoint topics get their own word pools and knowledge-graph regions.
Every news item belongs to one topic; every user prefers one topic, clicks
only inside it, and sees mixed candidate lists. A working model should
separate the topics almost perfectly, which makes these datasets useful as
end-to-end overfit checks and as tiny CLI smoke inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .data_pipeline import (
    DatasetSplit,
    ImpressionRecord,
    NewsArticle,
    pad_tokens,
    split_dataset,
    TITLE_LEN,
    ABSTRACT_LEN,
)
from .kg_store import KnowledgeGraph
from .news_encoder import WordVocabulary


@dataclass
class PlantedData:
    """In-memory dataset plus the raw rows needed to write MIND-style files."""

    split: DatasetSplit
    graph: KnowledgeGraph
    vocab: WordVocabulary
    word_lines: list[str]
    news_rows: list[str]
    behavior_rows: list[str]
    triple_rows: list[str]


def make_planted_dataset(
    n_users: int = 50,
    n_news: int = 100,
    n_entities: int = 60,
    seed: int = 7,
    word_dim: int = 16,
    words_per_topic: int = 20,
    history_clicks: int = 8,
    impressions_per_user: int = 8,
    negatives_per_impression: int = 3,
    ratio: float = 0.8,
) -> PlantedData:
    rng = np.random.default_rng(seed)
    topics = 2

    words = [[f"t{t}word{i}" for i in range(words_per_topic)] for t in range(topics)]
    all_words = [w for pool in words for w in pool]
    vectors = torch.tensor(rng.uniform(-1.0, 1.0, size=(len(all_words), word_dim)))
    vocab = WordVocabulary(all_words, vectors)
    word_lines = [
        " ".join([token] + [f"{v:.6f}" for v in vectors[i].tolist()])
        for i, token in enumerate(all_words)
    ]

    entities = [[f"Q{t}_{i}" for i in range(n_entities // topics)] for t in range(topics)]
    relations = ["P1", "P2", "P3", "P4"]
    triples: list[tuple[str, str, str]] = []
    for pool in entities:
        for i in range(1, len(pool)):
            # chain keeps each topic region connected; extra edges add branching
            triples.append((pool[i - 1], relations[i % len(relations)], pool[i]))
        for _ in range(len(pool)):
            a, b = rng.integers(0, len(pool), size=2)
            if a != b:
                triples.append((pool[a], relations[int(rng.integers(0, len(relations)))], pool[b]))
    graph = KnowledgeGraph(triples)
    triple_rows = [f"{h}\t{r}\t{t}" for h, r, t in triples]

    articles: dict[str, NewsArticle] = {}
    news_rows: list[str] = []
    news_topic: dict[str, int] = {}
    for i in range(n_news):
        topic = i % topics
        news_id = f"N{i:04d}"
        title = [words[topic][int(j)] for j in rng.integers(0, words_per_topic, size=6)]
        abstract = [words[topic][int(j)] for j in rng.integers(0, words_per_topic, size=12)]
        mention_pool = entities[topic]
        mentions = [mention_pool[int(j)] for j in rng.integers(0, len(mention_pool), size=3)]
        articles[news_id] = NewsArticle(
            news_id=news_id,
            title_tokens=pad_tokens(title, TITLE_LEN),
            abstract_tokens=pad_tokens(abstract, ABSTRACT_LEN),
            title_entity_ids=mentions,
            abstract_entity_ids=[],
        )
        news_topic[news_id] = topic
        entity_json = json.dumps([{"WikidataId": m} for m in mentions])
        news_rows.append(
            "\t".join(
                [news_id, f"topic{topic}", "sub", " ".join(title), " ".join(abstract), "url", entity_json, "[]"]
            )
        )

    by_topic = [[n for n, t in news_topic.items() if t == topic] for topic in range(topics)]
    records: list[ImpressionRecord] = []
    behavior_rows: list[str] = []
    counter = 0
    for u in range(n_users):
        topic = u % topics
        own, other = by_topic[topic], by_topic[1 - topic]
        history = [own[int(j)] for j in rng.integers(0, len(own), size=history_clicks)]
        history = list(dict.fromkeys(history))  # dedupe, keep order
        for _ in range(impressions_per_user):
            pos = own[int(rng.integers(0, len(own)))]
            negs = [other[int(j)] for j in rng.integers(0, len(other), size=negatives_per_impression)]
            candidates = [(pos, 1)] + [(n, 0) for n in negs]
            perm = rng.permutation(len(candidates))
            candidates = [candidates[int(p)] for p in perm]
            counter += 1
            record = ImpressionRecord(
                impression_id=str(counter),
                reader_id=f"U{u:03d}",
                timestamp=f"2023-01-01 00:{counter // 60 % 60:02d}:{counter % 60:02d}",
                history=list(history),
                candidates=candidates,
            )
            records.append(record)
            behavior_rows.append(
                "\t".join(
                    [
                        record.impression_id,
                        record.reader_id,
                        record.timestamp,
                        " ".join(record.history),
                        " ".join(f"{n}-{y}" for n, y in record.candidates),
                    ]
                )
            )

    split = split_dataset(records, articles, ratio=ratio, seed=seed)
    return PlantedData(
        split=split,
        graph=graph,
        vocab=vocab,
        word_lines=word_lines,
        news_rows=news_rows,
        behavior_rows=behavior_rows,
        triple_rows=triple_rows,
    )


def write_planted_files(data: PlantedData, directory) -> dict[str, str]:
    """Write MIND-style input files for CLI runs; returns the path map."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "news": directory / "news.tsv",
        "behaviors": directory / "behaviors.tsv",
        "triples": directory / "triples.tsv",
        "word_vectors": directory / "vectors.txt",
    }
    paths["news"].write_text("\n".join(data.news_rows) + "\n", encoding="utf-8")
    paths["behaviors"].write_text("\n".join(data.behavior_rows) + "\n", encoding="utf-8")
    paths["triples"].write_text("\n".join(data.triple_rows) + "\n", encoding="utf-8")
    paths["word_vectors"].write_text("\n".join(data.word_lines) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
