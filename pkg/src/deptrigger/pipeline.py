"""Pipeline stages, run configuration and entity-level evaluation.

Every stage reads its inputs from, and writes its artifacts to, one run
directory.  Artifacts carry the hash of the configuration that produced them.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import functools
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from . import __version__
from .corpus import (
    EntityMention,
    ParsedSentence,
    attach_parses,
    compute_stats,
    load_embeddings,
    negative_instance,
    read_column_corpus,
    read_conllu_parses,
    read_instances,
    replicate_per_entity,
    sample_fraction,
    spans_from_tags,
    write_column_corpus,
    write_instances,
)
from .depgraph import TriggerConfig, annotate_corpus, summarize
from .matchnet import MatchConfig, PrototypeTable, TriggerMatcher, build_prototype, train_matcher
from .nernet import EntityRecognizer, NERConfig, predict_tags, train_ner

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1

# artifact file -> command that produces it
PRODUCERS = {
    "instances.jsonl": "annotate",
    "matcher.npz": "train-matcher",
    "prototype.npz": "build-prototype",
    "ner.npz": "train-ner",
}


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    def __init__(self, path: Path):
        producer = PRODUCERS.get(path.name, "an earlier stage")
        super().__init__(f"missing artifact {path}; run `deptrigger {producer}` first")
        self.path = path
        self.producer = producer


class ConfigMismatchError(PipelineError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "paths": {"corpus": None, "parses": None, "test_corpus": None, "embeddings": None,
              "output_dir": "runs/default"},
    "corpus": {"scheme": "auto", "strict": False},
    "trigger": {"max_hops": 2, "exclude_punctuation": True},
    "sample": {"fraction": 1.0, "fractions": [0.03, 0.05, 0.07, 0.10, 0.13, 0.15, 0.17, 0.20],
               "seeds": None},
    "model": {"hidden": 100, "attn": 100},
    "match": {"margin": 1.0, "negatives_per_positive": 1, "lr": 1e-3, "batch_size": 32,
              "epochs": 20, "dropout": 0.5, "clip": 5.0},
    "ner": {"mode": "separate", "lr": 1e-3, "batch_size": 32, "epochs": 50, "dropout": 0.5,
            "clip": 5.0, "trigger_attention": True, "constrained_decode": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, overrides: Optional[dict] = None) -> "RunConfig":
        """Defaults, then the YAML file, then ``overrides``; relative paths in
        the file resolve against the file's directory."""
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            path = Path(path)
            with open(path, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
            for key, value in (loaded.get("paths") or {}).items():
                if value is not None and not Path(value).is_absolute():
                    loaded["paths"][key] = str((path.parent / value).resolve())
            data = _merge(data, loaded)
        if overrides:
            data = _merge(data, overrides)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        fr = self.data["sample"]["fraction"]
        if not 0 < fr <= 1:
            raise ValueError(f"sample.fraction must be in (0, 1], got {fr}")
        for f in self.data["sample"]["fractions"] or []:
            if not 0 < f <= 1:
                raise ValueError(f"fractions must lie in (0, 1], got {f}")
        if self.data["ner"]["mode"] not in ("separate", "merge"):
            raise ValueError("ner.mode must be 'separate' or 'merge'")
        TriggerConfig(**self.data["trigger"])

    def check_paths(self, *keys: str) -> None:
        for key in keys:
            value = self.data["paths"].get(key)
            if value is None:
                raise PipelineError(f"paths.{key} is not configured")
            if not Path(value).exists():
                raise PipelineError(f"paths.{key} does not exist: {value}")

    @property
    def out(self) -> Path:
        return Path(self.data["paths"]["output_dir"])

    def hash(self) -> str:
        body = copy.deepcopy(self.data)
        body["paths"].pop("output_dir", None)
        body["sample"].pop("fractions", None)
        body["sample"].pop("seeds", None)
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def trigger_config(self) -> TriggerConfig:
        return TriggerConfig(**self.data["trigger"])

    def match_config(self) -> MatchConfig:
        m = self.data["match"]
        return MatchConfig(margin=m["margin"], negatives_per_positive=m["negatives_per_positive"],
                           hidden=self.data["model"]["hidden"], attn=self.data["model"]["attn"],
                           lr=m["lr"], batch_size=m["batch_size"], epochs=m["epochs"],
                           dropout=m["dropout"], clip=m["clip"], seed=self.data["seed"])

    def ner_config(self) -> NERConfig:
        n = self.data["ner"]
        return NERConfig(hidden=self.data["model"]["hidden"], attn=self.data["model"]["attn"],
                         lr=n["lr"], batch_size=n["batch_size"], epochs=n["epochs"],
                         dropout=n["dropout"], clip=n["clip"], seed=self.data["seed"],
                         mode=n["mode"], trigger_attention=n["trigger_attention"],
                         constrained_decode=n["constrained_decode"])

    def echo(self) -> dict:
        body = copy.deepcopy(self.data)
        body["paths"].pop("output_dir", None)
        return body

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.data, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


def _prf(tp: int, n_pred: int, n_gold: int):
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@functools.lru_cache(maxsize=None)
def version_stamp() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    per_class: Dict[str, ClassScore] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: str = field(default_factory=version_stamp)

    def to_json(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "per_class": {k: vars(v) for k, v in sorted(self.per_class.items())},
            "config": self.config, "version": self.version,
        }

    def table(self) -> str:
        lines = [f"{'class':<10} {'prec':>7} {'rec':>7} {'f1':>7} {'support':>8}"]
        for name, s in sorted(self.per_class.items()):
            lines.append(f"{name:<10} {100 * s.precision:7.2f} {100 * s.recall:7.2f} "
                         f"{100 * s.f1:7.2f} {s.support:8d}")
        lines.append(f"{'overall':<10} {100 * self.precision:7.2f} {100 * self.recall:7.2f} "
                     f"{100 * self.f1:7.2f}")
        return "\n".join(lines)


def entity_f1(gold: Sequence[Sequence[EntityMention]], pred: Sequence[Sequence[EntityMention]],
              config: Optional[dict] = None) -> EvalReport:
    """Micro-averaged exact-match (start, end, label) scoring."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences but {len(pred)} predicted")
    tp: Dict[str, int] = {}
    n_gold: Dict[str, int] = {}
    n_pred: Dict[str, int] = {}
    for g, p in zip(gold, pred):
        gs = {(m.start, m.end, m.label) for m in g}
        ps = {(m.start, m.end, m.label) for m in p}
        for m in gs:
            n_gold[m[2]] = n_gold.get(m[2], 0) + 1
        for m in ps:
            n_pred[m[2]] = n_pred.get(m[2], 0) + 1
        for m in gs & ps:
            tp[m[2]] = tp.get(m[2], 0) + 1
    per_class = {}
    for label in sorted(set(n_gold) | set(n_pred)):
        p, r, f = _prf(tp.get(label, 0), n_pred.get(label, 0), n_gold.get(label, 0))
        per_class[label] = ClassScore(p, r, f, n_gold.get(label, 0))
    p, r, f = _prf(sum(tp.values()), sum(n_pred.values()), sum(n_gold.values()))
    return EvalReport(p, r, f, per_class, config or {})


# ---------------------------------------------------------------------------
# stages

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise MissingArtifactError(path)
    return json.loads(path.read_text())


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(path)
    return path


def _stamp(cfg: RunConfig, **extra) -> dict:
    stamp = {"artifact_version": ARTIFACT_VERSION, "package_version": __version__,
             "config_hash": cfg.hash()}
    stamp.update(extra)
    return stamp


def load_training_corpus(cfg: RunConfig) -> List[ParsedSentence]:
    cfg.check_paths("corpus", "parses")
    c = cfg.data["corpus"]
    sentences = read_column_corpus(cfg.data["paths"]["corpus"], c["scheme"], c["strict"])
    parses = read_conllu_parses(cfg.data["paths"]["parses"], sentences)
    return attach_parses(sentences, parses)


def run_annotate(cfg: RunConfig, sentences: Optional[List[ParsedSentence]] = None) -> dict:
    """Sample, extract triggers and write per-entity training instances."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    if sentences is None:
        sentences = load_training_corpus(cfg)
    sampled = sample_fraction(sentences, cfg.data["sample"]["fraction"], cfg.data["seed"])
    annotations = annotate_corpus(sampled, cfg=cfg.trigger_config())
    instances = []
    for s, ann in zip(sampled, annotations):
        if s.mentions:
            instances.extend(replicate_per_entity(s, ann.trigger_sets))
        else:
            instances.append(negative_instance(s))
    write_instances(instances, out / "instances.jsonl")
    with open(out / "annotations.jsonl", "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(ann.to_json()) + "\n")
    summary = _stamp(cfg, stage="annotate", n_corpus_sentences=len(sentences),
                     n_sampled_sentences=len(sampled), n_instances=len(instances),
                     annotation=summarize(annotations).to_json())
    _write_json(out / "annotate_summary.json", summary)
    cfg.dump(out / "config.yaml")
    return summary


def run_train_matcher(cfg: RunConfig, instances_path=None) -> dict:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    instances = read_instances(_require(Path(instances_path or out / "instances.jsonl")))
    cfg.check_paths("embeddings")
    emb = load_embeddings(cfg.data["paths"]["embeddings"])
    matcher, hist = train_matcher(instances, emb, cfg.match_config())
    stamp = _stamp(cfg, stage="train-matcher")
    matcher.save(out / "matcher.npz", meta=stamp)
    summary = dict(stamp, epoch_loss=hist.loss, skipped_instances=hist.skipped,
                   matcher_hash=matcher.store.digest())
    _write_json(out / "matcher_summary.json", summary)
    return summary


def run_build_prototype(cfg: RunConfig, instances_path=None) -> dict:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    instances = read_instances(_require(Path(instances_path or out / "instances.jsonl")))
    matcher, _ = TriggerMatcher.load(_require(out / "matcher.npz"))
    cfg.check_paths("embeddings")
    emb = load_embeddings(cfg.data["paths"]["embeddings"])
    table = build_prototype(matcher, instances, emb)
    stamp = _stamp(cfg, stage="build-prototype", matcher_hash=matcher.store.digest())
    table.save(out / "prototype.npz", meta=stamp)
    summary = dict(stamp, n_prototypes=len(table))
    _write_json(out / "prototype_summary.json", summary)
    return summary


def run_train_ner(cfg: RunConfig, instances_path=None) -> dict:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    instances = read_instances(_require(Path(instances_path or out / "instances.jsonl")))
    matcher, _ = TriggerMatcher.load(_require(out / "matcher.npz"))
    cfg.check_paths("embeddings")
    emb = load_embeddings(cfg.data["paths"]["embeddings"])
    before = matcher.store.digest()
    rec, hist = train_ner(instances, matcher, emb, cfg.ner_config())
    stamp = _stamp(cfg, stage="train-ner", matcher_hash=before)
    rec.save(out / "ner.npz", meta=stamp)
    summary = dict(stamp, epoch_loss=hist.loss, matcher_hash_after=matcher.store.digest(),
                   ner_hash=rec.store.digest())
    _write_json(out / "ner_summary.json", summary)
    return summary


def load_models(out: Path, allow_mismatch: bool = False, expected_hash: Optional[str] = None):
    """Matcher, prototype table and recognizer from a run directory, after
    checking that all three came from one configuration."""
    ner_path = _require(out / "ner.npz")
    matcher, m_meta = TriggerMatcher.load(_require(out / "matcher.npz"))
    table, p_meta = PrototypeTable.load(_require(out / "prototype.npz"))
    rec, n_meta = EntityRecognizer.load(ner_path, matcher)
    hashes = {"matcher": m_meta.get("config_hash"), "prototype": p_meta.get("config_hash"),
              "ner": n_meta.get("config_hash")}
    if expected_hash is not None:
        hashes["config"] = expected_hash
    if len(set(hashes.values())) != 1 and not allow_mismatch:
        raise ConfigMismatchError(f"artifacts were produced by different configs: {hashes}")
    return matcher, table, rec


def predict_corpus(sentences: Sequence[ParsedSentence], out: Path, embeddings_path,
                   allow_mismatch: bool = False, expected_hash: Optional[str] = None,
                   constrained: bool = False) -> List[List[str]]:
    matcher, table, rec = load_models(out, allow_mismatch, expected_hash)
    emb = load_embeddings(embeddings_path)
    return [predict_tags(s.words, matcher, table, rec, emb, constrained) for s in sentences]


def run_evaluate(cfg: RunConfig, gold_path=None, pred_path=None, allow_mismatch: bool = False,
                 write_predictions: bool = True) -> EvalReport:
    """Score a prediction file, or predict with the run directory's models."""
    scheme = cfg.data["corpus"]["scheme"]
    gold_path = gold_path or cfg.data["paths"].get("test_corpus")
    if gold_path is None:
        raise PipelineError("no gold corpus given (use --gold or paths.test_corpus)")
    gold = read_column_corpus(gold_path, scheme)
    if pred_path is not None:
        pred_sents = read_column_corpus(pred_path, "bioes")
        pred = [s.mentions for s in pred_sents]
        if [len(s) for s in pred_sents] != [len(s) for s in gold]:
            raise PipelineError("prediction file does not align with the gold corpus")
        echo = {"gold": str(gold_path), "pred": str(pred_path)}
    else:
        cfg.check_paths("embeddings")
        tags = predict_corpus(gold, cfg.out, cfg.data["paths"]["embeddings"], allow_mismatch,
                              None if allow_mismatch else cfg.hash(),
                              cfg.data["ner"]["constrained_decode"])
        pred = [spans_from_tags(t, "bioes") for t in tags]
        if write_predictions:
            write_column_corpus(gold, cfg.out / "predictions.txt", extra=tags)
        echo = {"config_hash": cfg.hash(), "config": cfg.echo()}
    report = entity_f1([s.mentions for s in gold], pred, echo)
    if pred_path is None:
        _write_json(cfg.out / "eval_report.json", report.to_json())
    return report


def run_stats(corpus_path, scheme: str = "auto") -> dict:
    return compute_stats(read_column_corpus(corpus_path, scheme)).to_json()


def run_pipeline(cfg: RunConfig, sentences: Optional[List[ParsedSentence]] = None) -> EvalReport:
    run_annotate(cfg, sentences)
    run_train_matcher(cfg)
    run_build_prototype(cfg)
    run_train_ner(cfg)
    return run_evaluate(cfg)


def sweep_fractions(cfg: RunConfig) -> List[dict]:
    """One full pipeline per (fraction, seed); rows carry the mean F1 over seeds."""
    fractions = cfg.data["sample"]["fractions"]
    if not fractions:
        raise PipelineError("sample.fractions is empty")
    seeds = cfg.data["sample"].get("seeds") or [cfg.data["seed"]]
    base_out = cfg.out
    sentences = load_training_corpus(cfg)
    rows = []
    for fr in fractions:
        scores = []
        for seed in seeds:
            sub = RunConfig(copy.deepcopy(cfg.data))
            sub.data["sample"]["fraction"] = fr
            sub.data["seed"] = seed
            sub.data["paths"]["output_dir"] = str(base_out / f"frac{fr:g}_seed{seed}")
            report = run_pipeline(sub, sentences)
            scores.append(report.f1)
        rows.append({"fraction": fr, "f1": 100.0 * sum(scores) / len(scores),
                     "f1_per_seed": [100.0 * s for s in scores], "seeds": list(seeds)})
    base_out.mkdir(parents=True, exist_ok=True)
    _write_json(base_out / "sweep.json", {"config_hash": cfg.hash(), "rows": rows})
    return rows


def format_sweep(rows: Sequence[dict]) -> str:
    lines = [f"{'#trig':>7} {'F1':>7}"]
    for r in rows:
        lines.append(f"{100 * r['fraction']:6.0f}% {r['f1']:7.2f}")
    return "\n".join(lines)
