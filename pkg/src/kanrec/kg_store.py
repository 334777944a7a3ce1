"""News-domain knowledge graph: vocabularies, adjacency, ego-network sampling.

Entities and relations get dense integer ids in first-seen order, with id 0
reserved for padding in both vocabularies. Every edge is traversable in both
directions, and per-entity neighbor lists are kept sorted so sampling is
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, ParseError

PAD_ENTITY_ID = 0
PAD_RELATION_ID = 0
PAD_EXTERNAL_ID = "<pad>"


@dataclass(frozen=True, order=True)
class Triple:
    """One (head, relation, tail) fact in dense ids."""

    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Immutable store of deduplicated triples with bidirectional adjacency.

    Safe for concurrent reads once constructed; construction itself is
    single-threaded.
    """

    def __init__(self, external_triples: Iterable[tuple[str, str, str]]):
        self.entity_ids: dict[str, int] = {PAD_EXTERNAL_ID: PAD_ENTITY_ID}
        self.relation_ids: dict[str, int] = {PAD_EXTERNAL_ID: PAD_RELATION_ID}
        triples: list[Triple] = []
        seen: set[Triple] = set()
        for head, relation, tail in external_triples:
            h = self._intern(self.entity_ids, head)
            r = self._intern(self.relation_ids, relation)
            t = self._intern(self.entity_ids, tail)
            triple = Triple(h, r, t)
            if triple not in seen:
                seen.add(triple)
                triples.append(triple)
        self.triples: tuple[Triple, ...] = tuple(triples)
        self._triple_set = frozenset(triples)
        self.entity_names = self._invert(self.entity_ids)
        self.relation_names = self._invert(self.relation_ids)

        adjacency: list[set[tuple[int, int]]] = [set() for _ in range(len(self.entity_ids))]
        for triple in self.triples:
            adjacency[triple.head].add((triple.tail, triple.relation))
            if triple.tail != triple.head:
                adjacency[triple.tail].add((triple.head, triple.relation))
        self._adjacency: tuple[tuple[tuple[int, int], ...], ...] = tuple(
            tuple(sorted(entries)) for entries in adjacency
        )

    @staticmethod
    def _intern(vocab: dict[str, int], name: str) -> int:
        if name not in vocab:
            vocab[name] = len(vocab)
        return vocab[name]

    @staticmethod
    def _invert(vocab: dict[str, int]) -> list[str]:
        names = [""] * len(vocab)
        for name, idx in vocab.items():
            names[idx] = name
        return names

    @property
    def entity_count(self) -> int:
        return len(self.entity_ids)

    @property
    def relation_count(self) -> int:
        return len(self.relation_ids)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triple_set

    def neighbors(self, entity: int) -> tuple[tuple[int, int], ...]:
        """Sorted (neighbor, relation) pairs reachable over either edge direction."""
        return self._adjacency[entity]

    def degree(self, entity: int) -> int:
        return len(self._adjacency[entity])

    def has_edge(self, a: int, b: int, relation: int) -> bool:
        """True when some stored triple connects a and b via relation (either direction)."""
        return Triple(a, relation, b) in self._triple_set or Triple(b, relation, a) in self._triple_set

    def external_triples(self) -> list[tuple[str, str, str]]:
        """Stored triples re-expressed with external identifiers."""
        return [
            (self.entity_names[t.head], self.relation_names[t.relation], self.entity_names[t.tail])
            for t in self.triples
        ]

    def save_entity_vocab(self, path) -> None:
        _write_vocab(path, self.entity_names)

    def save_relation_vocab(self, path) -> None:
        _write_vocab(path, self.relation_names)


def _write_vocab(path, names: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, name in enumerate(names):
            fh.write(f"{name}\t{idx}\n")


def load_triples(path) -> KnowledgeGraph:
    """Load a tab-separated triples file into a KnowledgeGraph.

    Lines are ``head<TAB>relation<TAB>tail`` of external-id strings; blank
    lines and ``#``-prefixed comments are skipped, duplicate facts are
    deduplicated. Raises ParseError on a malformed line and DataError when no
    triples remain.
    """
    rows: list[tuple[str, str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_number, f"expected 3 tab-separated fields, got {len(fields)}")
            rows.append((fields[0], fields[1], fields[2]))
    if not rows:
        raise DataError(f"{path}: no triples found")
    return KnowledgeGraph(rows)


def link_entities(article_entities: Sequence[str], graph: KnowledgeGraph) -> list[int]:
    """Map external entity ids onto dense ids, preserving order.

    Mentions absent from the graph degrade to the PAD entity instead of
    erroring; coverage of news mentions is never complete.
    """
    return [graph.entity_ids.get(name, PAD_ENTITY_ID) for name in article_entities]


@dataclass
class EgoNetwork:
    """A sampled 2-hop neighborhood around one entity, padded to fixed width.

    ``hop1_pad``/``hop2_pad`` are True on padded slots; padded slots hold the
    PAD entity and PAD relation ids.
    """

    center: int
    hop1_entities: np.ndarray  # [n] int64
    hop1_relations: np.ndarray  # [n]
    hop1_pad: np.ndarray  # [n] bool
    hop2_entities: np.ndarray  # [n, n]
    hop2_relations: np.ndarray  # [n, n]
    hop2_pad: np.ndarray  # [n, n] bool

    @property
    def neighbor_size(self) -> int:
        return int(self.hop1_entities.shape[0])


def sample_ego_network(center: int, graph: KnowledgeGraph, neighbor_size: int, seed: int) -> EgoNetwork:
    """Sample a padded 2-hop ego-network, uniformly without replacement.

    Pure function of its arguments: the stream is seeded from (seed, center)
    so repeated calls return identical structures and different centers are
    decorrelated under one run seed.
    """
    if neighbor_size <= 0:
        raise ConfigurationError(f"neighbor_size must be positive, got {neighbor_size}")
    if not 0 <= center < graph.entity_count:
        raise ValueError(f"entity id {center} outside vocabulary of size {graph.entity_count}")

    rng = np.random.default_rng((int(seed), int(center)))
    n = neighbor_size
    hop1_entities = np.zeros(n, dtype=np.int64)
    hop1_relations = np.zeros(n, dtype=np.int64)
    hop1_pad = np.ones(n, dtype=bool)
    hop2_entities = np.zeros((n, n), dtype=np.int64)
    hop2_relations = np.zeros((n, n), dtype=np.int64)
    hop2_pad = np.ones((n, n), dtype=bool)

    for slot, (entity, relation) in enumerate(_draw(rng, graph.neighbors(center), n)):
        hop1_entities[slot] = entity
        hop1_relations[slot] = relation
        hop1_pad[slot] = False
        for slot2, (entity2, relation2) in enumerate(_draw(rng, graph.neighbors(entity), n)):
            hop2_entities[slot, slot2] = entity2
            hop2_relations[slot, slot2] = relation2
            hop2_pad[slot, slot2] = False

    return EgoNetwork(
        center=center,
        hop1_entities=hop1_entities,
        hop1_relations=hop1_relations,
        hop1_pad=hop1_pad,
        hop2_entities=hop2_entities,
        hop2_relations=hop2_relations,
        hop2_pad=hop2_pad,
    )


def _draw(rng: np.random.Generator, pairs: Sequence[tuple[int, int]], limit: int) -> list[tuple[int, int]]:
    if not pairs:
        return []
    count = min(len(pairs), limit)
    chosen = rng.choice(len(pairs), size=count, replace=False)
    chosen.sort()
    return [pairs[i] for i in chosen]
