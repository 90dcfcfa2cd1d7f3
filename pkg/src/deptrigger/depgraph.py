"""Undirected dependency graphs and multi-hop trigger extraction.

A trigger of an entity mention is any non-entity token whose graph distance
from the nearest entity token is between 1 and ``max_hops``.  Distance 1 gives
primary triggers, distance 2 secondary ones.
"""
from __future__ import annotations

import unicodedata
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .corpus import AlignmentError, DependencyEdge, EntityMention, ParsedSentence


@dataclass
class UndirectedDepGraph:
    adjacency: List[Set[int]]

    @property
    def n_nodes(self) -> int:
        return len(self.adjacency)

    def neighbors(self, i: int) -> Set[int]:
        return self.adjacency[i]


@dataclass(frozen=True)
class TriggerConfig:
    max_hops: int = 2
    exclude_punctuation: bool = True

    def __post_init__(self):
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")


@dataclass
class TriggerSet:
    mention: EntityMention
    members: FrozenSet[Tuple[int, int]] = frozenset()  # (token index, hop distance)

    def indices(self) -> List[int]:
        return sorted(i for i, _ in self.members)

    def hops(self) -> Dict[int, int]:
        return dict(self.members)

    def __len__(self) -> int:
        return len(self.members)


def build_graph(edges: Iterable, n_tokens: int) -> UndirectedDepGraph:
    """Symmetric adjacency sets; edge direction and relation are dropped."""
    adj: List[Set[int]] = [set() for _ in range(n_tokens)]
    for e in edges:
        if isinstance(e, DependencyEdge):
            a, b = e.head, e.dependent
        else:
            a, b = e[0], e[1]
        if not (0 <= a < n_tokens and 0 <= b < n_tokens):
            raise ValueError(f"edge ({a}, {b}) outside a {n_tokens}-token sentence")
        if a == b:
            continue
        adj[a].add(b)
        adj[b].add(a)
    return UndirectedDepGraph(adj)


def is_punctuation(surface: str) -> bool:
    return bool(surface) and all(unicodedata.category(c).startswith("P") for c in surface)


def extract_triggers(g: UndirectedDepGraph, m: EntityMention, cfg: TriggerConfig = TriggerConfig(),
                     words: Optional[Sequence[str]] = None) -> TriggerSet:
    """Multi-source BFS from every entity token; ``words`` enables the
    punctuation filter."""
    if not (0 <= m.start <= m.end < g.n_nodes):
        raise ValueError(f"mention {m} outside a {g.n_nodes}-node graph")
    dist = {i: 0 for i in m.indices()}
    queue = deque(m.indices())
    while queue:
        u = queue.popleft()
        d = dist[u]
        if d == cfg.max_hops:
            continue
        for v in sorted(g.adjacency[u]):
            if v not in dist:
                dist[v] = d + 1
                queue.append(v)
    members = set()
    for i, d in dist.items():
        if d == 0:
            continue
        if cfg.exclude_punctuation and words is not None and is_punctuation(words[i]):
            continue
        members.add((i, d))
    return TriggerSet(m, frozenset(members))


@dataclass
class SentenceAnnotation:
    sent_id: int
    trigger_sets: List[TriggerSet]

    @property
    def all_empty(self) -> bool:
        return bool(self.trigger_sets) and all(len(t) == 0 for t in self.trigger_sets)

    def to_json(self) -> dict:
        return {
            "sent_id": self.sent_id,
            "all_empty": self.all_empty,
            "mentions": [
                {
                    "mention": [t.mention.start, t.mention.end, t.mention.label],
                    "triggers": [[i, h] for i, h in sorted(t.members)],
                }
                for t in self.trigger_sets
            ],
        }


def annotate_sentence(s: ParsedSentence, cfg: TriggerConfig = TriggerConfig()) -> SentenceAnnotation:
    g = build_graph(s.edges, len(s))
    words = s.words
    return SentenceAnnotation(s.sent_id, [extract_triggers(g, m, cfg, words) for m in s.mentions])


def annotate_corpus(corpus: Sequence[ParsedSentence], parses: Optional[Sequence] = None,
                    cfg: TriggerConfig = TriggerConfig()) -> List[SentenceAnnotation]:
    """Trigger sets for every mention of every sentence.

    ``parses`` (edge lists aligned 1:1 with ``corpus``) overrides the edges
    stored on the sentences.
    """
    if parses is not None:
        if len(parses) != len(corpus):
            raise AlignmentError(f"{len(corpus)} sentences but {len(parses)} parses")
        corpus = [ParsedSentence(s.tokens, s.mentions, list(p), s.sent_id)
                  for s, p in zip(corpus, parses)]
    return [annotate_sentence(s, cfg) for s in corpus]


@dataclass
class AnnotationSummary:
    n_sentences: int
    n_entities: int
    n_empty_trigger_entities: int
    n_all_empty_sentences: int
    histogram: Dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "n_sentences": self.n_sentences,
            "n_entities": self.n_entities,
            "n_empty_trigger_entities": self.n_empty_trigger_entities,
            "n_all_empty_sentences": self.n_all_empty_sentences,
            "trigger_count_histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


def trigger_count_distribution(annotations: Sequence[SentenceAnnotation]) -> Dict[int, float]:
    """Percentage of entities having each trigger count."""
    counts = Counter(len(t) for a in annotations for t in a.trigger_sets)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no annotated entities")
    return {k: 100.0 * v / total for k, v in sorted(counts.items())}


def summarize(annotations: Sequence[SentenceAnnotation]) -> AnnotationSummary:
    n_entities = sum(len(a.trigger_sets) for a in annotations)
    return AnnotationSummary(
        n_sentences=len(annotations),
        n_entities=n_entities,
        n_empty_trigger_entities=sum(1 for a in annotations for t in a.trigger_sets if len(t) == 0),
        n_all_empty_sentences=sum(1 for a in annotations if a.all_empty),
        histogram=trigger_count_distribution(annotations) if n_entities else {},
    )
