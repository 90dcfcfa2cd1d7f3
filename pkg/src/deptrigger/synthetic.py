"""Deterministic toy corpus in which a planted verb decides the entity class
and the entity always follows that verb.

Entity names are drawn from one pool shared by every class, so the class of
a name can only be read off its trigger.  Each sentence comes with a
hand-built dependency parse (verb as root, entity as its object) in CoNLL-U.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np

TRIGGERS = {
    "PER": ["met"],
    "LOC": ["visited"],
    "ORG": ["joined"],
}
NEUTRAL_VERBS = ["slept", "waited", "laughed", "left"]
NAMES = ["jordan", "georgia", "austin", "victoria", "phoenix", "sydney"]
SURNAMES = ["hill", "park"]
SUBJECTS = ["we", "they", "she", "he"]
PREFIXES = ["yesterday", "today", "later", "again"]
SUFFIXES = ["quickly", "twice", "recently", "happily"]

# one token per line: (form, head index 1-based or 0 for root, deprel)
Row = Tuple[str, int, str]


def _sentence(rng: np.random.Generator, with_entity: bool):
    rows: List[Row] = []
    tags: List[str] = []
    prefix = bool(rng.random() < 0.5)
    suffix = bool(rng.random() < 0.5)
    # verb position is fixed once the prefix choice is made
    verb_at = 3 if prefix else 2
    if prefix:
        rows.append((str(rng.choice(PREFIXES)), verb_at, "advmod"))
        tags.append("O")
    rows.append((str(rng.choice(SUBJECTS)), verb_at, "nsubj"))
    tags.append("O")
    if with_entity:
        label = str(rng.choice(sorted(TRIGGERS)))
        rows.append((str(rng.choice(TRIGGERS[label])), 0, "root"))
        tags.append("O")
        name = str(rng.choice(NAMES))
        if rng.random() < 0.3:
            head = len(rows) + 2
            rows.append((name, head, "compound"))
            rows.append((str(rng.choice(SURNAMES)), verb_at, "obj"))
            tags += [f"B-{label}", f"I-{label}"]
        else:
            rows.append((name, verb_at, "obj"))
            tags.append(f"B-{label}")
    else:
        rows.append((str(rng.choice(NEUTRAL_VERBS)), 0, "root"))
        tags.append("O")
    if suffix:
        rows.append((str(rng.choice(SUFFIXES)), verb_at, "advmod"))
        tags.append("O")
    rows.append((".", verb_at, "punct"))
    tags.append("O")
    return rows, tags


def generate(n_sentences: int, seed: int, entity_rate: float = 0.85):
    rng = np.random.default_rng(seed)
    return [_sentence(rng, bool(rng.random() < entity_rate)) for _ in range(n_sentences)]


def vocabulary() -> List[str]:
    words = set(SUBJECTS + PREFIXES + SUFFIXES + NEUTRAL_VERBS + NAMES + SURNAMES + ["."])
    for verbs in TRIGGERS.values():
        words.update(verbs)
    return sorted(words)


def write_column(sentences, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rows, tags in sentences:
            for (form, _, _), tag in zip(rows, tags):
                fh.write(f"{form} {tag}\n")
            fh.write("\n")


def write_conllu(sentences, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, (rows, _) in enumerate(sentences):
            fh.write(f"# sent_id = {k}\n")
            for i, (form, head, rel) in enumerate(rows, 1):
                upos = "PUNCT" if form == "." else "_"
                fh.write("\t".join([str(i), form, "_", upos, "_", "_", str(head), rel, "_", "_"]) + "\n")
            fh.write("\n")


def write_vectors(path, dim: int = 16, seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for w in vocabulary():
            vec = rng.normal(scale=0.5, size=dim)
            fh.write(w + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")


CONFIG_TEXT = """\
# Desk-scale configuration for the bundled synthetic corpus.
seed: 13
paths:
  corpus: train.txt
  parses: train.conllu
  test_corpus: test.txt
  embeddings: vectors.txt
corpus:
  scheme: bio
trigger:
  max_hops: 2
  exclude_punctuation: true
sample:
  fraction: 1.0
model:
  hidden: 16
  attn: 16
match:
  margin: 1.0
  lr: 0.01
  batch_size: 8
  epochs: 15
  dropout: 0.0
ner:
  mode: separate
  lr: 0.01
  batch_size: 8
  epochs: 50
  dropout: 0.3
"""


def write_bundle(directory, n_train: int = 50, n_test: int = 30) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    train = generate(n_train, seed=2024)
    test = generate(n_test, seed=4048)
    write_column(train, d / "train.txt")
    write_conllu(train, d / "train.conllu")
    write_column(test, d / "test.txt")
    write_conllu(test, d / "test.conllu")
    write_vectors(d / "vectors.txt")
    (d / "config.yaml").write_text(CONFIG_TEXT)


def bundle_dir() -> Path:
    return Path(__file__).parent / "data" / "synthetic"


if __name__ == "__main__":
    write_bundle(bundle_dir())
