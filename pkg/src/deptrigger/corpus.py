"""Corpus readers and writers, tag-scheme handling, per-entity replication,
sentence sampling, pretrained embeddings and dataset statistics."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class CorpusFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    index: int


@dataclass(frozen=True, order=True)
class EntityMention:
    start: int
    end: int  # inclusive
    label: str

    def indices(self) -> range:
        return range(self.start, self.end + 1)

    def as_tuple(self) -> Tuple[int, int, str]:
        return (self.start, self.end, self.label)


@dataclass(frozen=True)
class DependencyEdge:
    head: int
    dependent: int
    relation: str


@dataclass
class ParsedSentence:
    tokens: List[Token]
    mentions: List[EntityMention] = field(default_factory=list)
    edges: List[DependencyEdge] = field(default_factory=list)
    sent_id: int = 0

    @classmethod
    def from_words(cls, words: Sequence[str], mentions=(), edges=(), sent_id: int = 0):
        return cls([Token(w, i) for i, w in enumerate(words)], list(mentions), list(edges), sent_id)

    @property
    def words(self) -> List[str]:
        return [t.surface for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise ValueError(f"sentence {self.sent_id}: token indices are not contiguous")
        last_end = -1
        for m in sorted(self.mentions):
            if not (0 <= m.start <= m.end < n):
                raise ValueError(f"sentence {self.sent_id}: mention {m} out of range")
            if m.start <= last_end:
                raise ValueError(f"sentence {self.sent_id}: overlapping mentions")
            last_end = m.end
        for e in self.edges:
            if not (0 <= e.head < n and 0 <= e.dependent < n) or e.head == e.dependent:
                raise ValueError(f"sentence {self.sent_id}: bad edge {e}")


# ---------------------------------------------------------------------------
# tag schemes

def _split_tag(tag: str) -> Tuple[str, Optional[str]]:
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BIES":
        return tag[0], tag[2:]
    raise CorpusFormatError(f"unrecognised tag {tag!r}")


def spans_from_tags(tags: Sequence[str], scheme: str = "bioes", strict: bool = False,
                    repairs: Optional[List[int]] = None) -> List[EntityMention]:
    """Recover (start, end, label) spans from a BIO, IOB1 or BIOES sequence.

    Decoding is greedy left to right: B-/S- always open a span, E-/S- close
    it, and any type mismatch closes the current span.  A dangling I- or E-
    is repaired as if it were B- (or S-), unless ``strict`` is set.  In IOB1
    a leading I- is legal and never counted as a repair.
    """
    spans: List[EntityMention] = []
    cur_start, cur_label = None, None

    def close(end):
        nonlocal cur_start, cur_label
        if cur_start is not None:
            spans.append(EntityMention(cur_start, end, cur_label))
        cur_start, cur_label = None, None

    for i, tag in enumerate(tags):
        prefix, label = _split_tag(tag)
        if prefix == "O":
            close(i - 1)
        elif prefix == "B":
            close(i - 1)
            cur_start, cur_label = i, label
        elif prefix == "S":
            close(i - 1)
            spans.append(EntityMention(i, i, label))
        else:
            continuing = cur_start is not None and cur_label == label
            if not continuing:
                if scheme != "iob1" or prefix == "E":
                    if strict:
                        raise CorpusFormatError(f"invalid transition to {tag!r} at position {i}")
                    if repairs is not None:
                        repairs.append(i)
                close(i - 1)
                cur_start, cur_label = i, label
            if prefix == "E":
                close(i)
    close(len(tags) - 1)
    return spans


def tags_from_spans(spans: Iterable[EntityMention], length: int, scheme: str = "bioes") -> List[str]:
    tags = ["O"] * length
    for m in spans:
        if scheme == "bioes":
            if m.start == m.end:
                tags[m.start] = f"S-{m.label}"
                continue
            tags[m.start] = f"B-{m.label}"
            for k in range(m.start + 1, m.end):
                tags[k] = f"I-{m.label}"
            tags[m.end] = f"E-{m.label}"
        elif scheme == "bio":
            tags[m.start] = f"B-{m.label}"
            for k in range(m.start + 1, m.end + 1):
                tags[k] = f"I-{m.label}"
        else:
            raise ValueError(f"cannot write tag scheme {scheme!r}")
    return tags


def bio_to_bioes(tags: Sequence[str]) -> List[str]:
    return tags_from_spans(spans_from_tags(tags, "bio"), len(tags), "bioes")


def bioes_to_bio(tags: Sequence[str]) -> List[str]:
    return tags_from_spans(spans_from_tags(tags, "bioes"), len(tags), "bio")


def is_valid_bioes(tags: Sequence[str]) -> bool:
    inside = None
    for tag in tags:
        prefix, label = _split_tag(tag)
        if inside is not None:
            if prefix not in "IE" or label != inside:
                return False
            if prefix == "E":
                inside = None
        elif prefix in "IE":
            return False
        elif prefix == "B":
            inside = label
    return inside is None


# ---------------------------------------------------------------------------
# column corpus

def read_column_corpus(path, scheme: str = "auto", strict: bool = False) -> List[ParsedSentence]:
    """Read ``token ... tag`` lines separated by blank lines.

    The first column is the token and the last is the tag; every line in a
    file must carry the same number of columns.  ``-DOCSTART-`` lines are
    skipped.  ``scheme`` is one of ``auto``, ``bio``, ``iob1``, ``bioes``.
    """
    sentences: List[ParsedSentence] = []
    words: List[str] = []
    tags: List[str] = []
    n_cols = None
    repairs: List[int] = []

    def flush():
        if words:
            spans = spans_from_tags(tags, scheme, strict=strict, repairs=repairs)
            sentences.append(ParsedSentence.from_words(words, spans, sent_id=len(sentences)))
        words.clear()
        tags.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                flush()
                continue
            cols = line.split()
            if cols[0] == "-DOCSTART-":
                flush()
                continue
            if n_cols is None:
                n_cols = len(cols)
                if n_cols < 2:
                    raise CorpusFormatError(f"{path}:{lineno}: expected at least 2 columns")
            if len(cols) != n_cols:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected {n_cols} columns, found {len(cols)}")
            try:
                _split_tag(cols[-1])
            except CorpusFormatError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            words.append(cols[0])
            tags.append(cols[-1])
        flush()
    if repairs:
        warnings.warn(f"{path}: repaired {len(repairs)} dangling I-/E- tags as span starts")
    return sentences


def write_column_corpus(sentences: Iterable[ParsedSentence], path, scheme: str = "bioes",
                        extra: Optional[Sequence[Sequence[str]]] = None) -> None:
    """Write ``token tag`` lines; ``extra`` adds one more column per sentence."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, s in enumerate(sentences):
            tags = tags_from_spans(s.mentions, len(s), scheme)
            for i, word in enumerate(s.words):
                cols = [word, tags[i]]
                if extra is not None:
                    cols.append(extra[k][i])
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# CoNLL-U parses

@dataclass
class ParseRecord:
    forms: List[str]
    edges: List[DependencyEdge]


def read_conllu(path) -> List[ParseRecord]:
    records: List[ParseRecord] = []
    forms: List[str] = []
    heads: List[Tuple[int, int, str]] = []

    def flush():
        if forms:
            edges = [DependencyEdge(h - 1, d, rel) for d, h, rel in heads if h != 0]
            records.append(ParseRecord(list(forms), edges))
        forms.clear()
        heads.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise CorpusFormatError(f"{path}:{lineno}: expected 10 tab-separated columns")
            tok_id = cols[0]
            if "-" in tok_id or "." in tok_id:
                continue  # multiword ranges and empty nodes
            try:
                idx, head = int(tok_id), int(cols[6])
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-integer ID or HEAD") from None
            if idx != len(forms) + 1:
                raise CorpusFormatError(f"{path}:{lineno}: token ids are not sequential")
            forms.append(cols[1])
            heads.append((idx - 1, head, cols[7]))
        flush()
    for rec in records:
        n = len(rec.forms)
        for e in rec.edges:
            if not 0 <= e.head < n:
                raise CorpusFormatError(f"{path}: HEAD {e.head + 1} out of range")
    return records


def read_conllu_parses(path, sentences: Optional[Sequence[ParsedSentence]] = None,
                       check_forms: bool = True) -> List[List[DependencyEdge]]:
    """Edge lists (0-based, root attachments dropped), one per parsed sentence.

    When ``sentences`` is given the parses must pair with them one-to-one and
    share their tokenization.
    """
    records = read_conllu(path)
    if sentences is not None:
        check_alignment(sentences, records, check_forms)
    return [r.edges for r in records]


def check_alignment(sentences: Sequence[ParsedSentence], records: Sequence[ParseRecord],
                    check_forms: bool = True) -> None:
    if len(sentences) != len(records):
        raise AlignmentError(
            f"corpus has {len(sentences)} sentences but parse file has {len(records)}")
    for s, rec in zip(sentences, records):
        if len(s) != len(rec.forms):
            raise AlignmentError(
                f"sentence {s.sent_id}: {len(s)} tokens in corpus, {len(rec.forms)} in parse")
        if check_forms and s.words != rec.forms:
            raise AlignmentError(f"sentence {s.sent_id}: tokenization differs from parse")


def attach_parses(sentences: Sequence[ParsedSentence], parses: Sequence[Sequence[DependencyEdge]]
                  ) -> List[ParsedSentence]:
    if len(sentences) != len(parses):
        raise AlignmentError(f"{len(sentences)} sentences but {len(parses)} parses")
    out = []
    for s, edges in zip(sentences, parses):
        for e in edges:
            if e.head >= len(s) or e.dependent >= len(s):
                raise AlignmentError(f"sentence {s.sent_id}: edge {e} outside sentence")
        out.append(ParsedSentence(s.tokens, s.mentions, list(edges), s.sent_id))
    return out


# ---------------------------------------------------------------------------
# training instances

TRIGGER_TAG = "T-trigger"


@dataclass
class TrainingInstance:
    tokens: List[str]
    entity_tags: List[str]
    trigger_tags: List[str]
    kept_mention: Optional[EntityMention]
    sent_id: int = 0
    triggers: List[Tuple[int, int]] = field(default_factory=list)  # (token index, hop)

    @property
    def trigger_indices(self) -> List[int]:
        return sorted(i for i, _ in self.triggers)

    def to_json(self) -> dict:
        km = self.kept_mention
        return {
            "sent_id": self.sent_id,
            "tokens": self.tokens,
            "entity_tags": self.entity_tags,
            "trigger_tags": self.trigger_tags,
            "kept_mention": None if km is None else [km.start, km.end, km.label],
            "triggers": [[i, h] for i, h in self.triggers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainingInstance":
        km = obj.get("kept_mention")
        mention = None if km is None else EntityMention(int(km[0]), int(km[1]), km[2])
        triggers = obj.get("triggers")
        if triggers is None:
            triggers = [(i, 1) for i, t in enumerate(obj["trigger_tags"]) if t == TRIGGER_TAG]
        return cls(list(obj["tokens"]), list(obj["entity_tags"]), list(obj["trigger_tags"]),
                   mention, int(obj.get("sent_id", 0)), [(int(i), int(h)) for i, h in triggers])


def replicate_per_entity(s: ParsedSentence, triggers: Sequence) -> List[TrainingInstance]:
    """One instance per mention: that mention tagged in BIOES, the others
    reset to O, and only its own triggers tagged ``T-trigger``.

    ``triggers[k]`` belongs to ``s.mentions[k]`` and exposes ``members`` as
    (index, hop) pairs.
    """
    if len(triggers) != len(s.mentions):
        raise ValueError("one trigger set per mention is required")
    out = []
    for mention, tset in zip(s.mentions, triggers):
        own = set(mention.indices())
        members = sorted((i, h) for i, h in tset.members if i not in own)
        trig_tags = ["O"] * len(s)
        for i, _ in members:
            trig_tags[i] = TRIGGER_TAG
        out.append(TrainingInstance(
            s.words, tags_from_spans([mention], len(s), "bioes"), trig_tags, mention,
            s.sent_id, members))
    return out


def negative_instance(s: ParsedSentence) -> TrainingInstance:
    """All-O instance for a sentence without entities."""
    return TrainingInstance(s.words, ["O"] * len(s), ["O"] * len(s), None, s.sent_id, [])


def write_instances(instances: Iterable[TrainingInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json()) + "\n")


def read_instances(path) -> List[TrainingInstance]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingInstance.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# sampling

def sample_fraction(corpus: Sequence, fraction: float, seed: int = 0) -> list:
    """Uniform sentence sample of size round(fraction * N), kept in corpus order.

    The sample is a prefix of one seeded permutation, so for a fixed seed a
    smaller fraction always yields a subset of a larger one.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(corpus)
    size = int(math.floor(fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    keep = np.sort(perm[:size])
    return [corpus[int(i)] for i in keep]


# ---------------------------------------------------------------------------
# embeddings

UNK = "<unk>"
PAD = "<pad>"


@dataclass
class EmbeddingTable:
    vocabulary: Dict[str, int]
    vectors: np.ndarray
    unk_row: int
    pad_row: int
    lowercase_fallback: bool = True

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, token: str) -> int:
        row = self.vocabulary.get(token)
        if row is None and self.lowercase_fallback:
            row = self.vocabulary.get(token.lower())
        return self.unk_row if row is None else row

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return self.vectors[self.ids(tokens)]


def load_embeddings(path, dim: Optional[int] = None, lowercase_fallback: bool = True) -> EmbeddingTable:
    """Whitespace-separated ``token v1 ... vd`` lines.

    Two extra rows are appended: UNK (mean of all vectors) and PAD (zeros).
    Repeated tokens keep their first vector.
    """
    vocab: Dict[str, int] = {}
    rows: List[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.rstrip().split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) != dim + 1:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            if parts[0] in vocab:
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-numeric vector entry") from None
            vocab[parts[0]] = len(rows)
            rows.append(vec)
    if dim is None:
        raise CorpusFormatError(f"{path}: no vectors found")
    mat = np.vstack(rows) if rows else np.zeros((0, dim))
    unk = mat.mean(axis=0) if rows else np.zeros(dim)
    vectors = np.vstack([mat, unk[None, :], np.zeros((1, dim))])
    return EmbeddingTable(vocab, vectors, len(rows), len(rows) + 1, lowercase_fallback)


# ---------------------------------------------------------------------------
# statistics

LENGTH_BUCKETS = ("1-10", "10-25", "25-50", "50+")


def length_bucket(n: int) -> str:
    # closed upper bounds: 10 -> first bucket, 25 -> second, 50 -> third
    if n <= 10:
        return "1-10"
    if n <= 25:
        return "10-25"
    if n <= 50:
        return "25-50"
    return "50+"


@dataclass
class DatasetStats:
    n_classes: int
    n_sentences: int
    n_entities: int
    length_histogram: Dict[str, float]
    classes: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_sentences": self.n_sentences,
            "n_entities": self.n_entities,
            "classes": self.classes,
            "length_histogram": self.length_histogram,
        }


def compute_stats(corpus: Sequence[ParsedSentence]) -> DatasetStats:
    if not corpus:
        raise ValueError("cannot compute statistics of an empty corpus")
    counts = {b: 0 for b in LENGTH_BUCKETS}
    classes = set()
    n_entities = 0
    for s in corpus:
        counts[length_bucket(len(s))] += 1
        n_entities += len(s.mentions)
        classes.update(m.label for m in s.mentions)
    n = len(corpus)
    hist = {b: 100.0 * c / n for b, c in counts.items()}
    return DatasetStats(len(classes), n, n_entities, hist, sorted(classes))
