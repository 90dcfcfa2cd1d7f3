"""Command-line entry point: ``deptrigger <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .pipeline import RunConfig


def _config(args, overrides: dict) -> RunConfig:
    path = getattr(args, "config", None)
    out = getattr(args, "out", None)
    if path is None and out is not None and (Path(out) / "config.yaml").exists():
        path = Path(out) / "config.yaml"
    if out is not None:
        overrides.setdefault("paths", {})["output_dir"] = str(out)
    return RunConfig.load(path, overrides)


def _set(d: dict, dotted: str, value) -> None:
    if value is None:
        return
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _overrides(args, mapping) -> dict:
    o: dict = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if isinstance(value, str) and dotted.startswith("paths."):
            value = str(Path(value).resolve())
        _set(o, dotted, value)
    return o


def cmd_annotate(args):
    cfg = _config(args, _overrides(args, {
        "corpus": "paths.corpus", "parses": "paths.parses", "max_hops": "trigger.max_hops",
        "fraction": "sample.fraction", "seed": "seed", "scheme": "corpus.scheme",
        "embeddings": "paths.embeddings",
    }))
    return pipeline.run_annotate(cfg)


def cmd_train_matcher(args):
    cfg = _config(args, _overrides(args, {
        "embeddings": "paths.embeddings", "epochs": "match.epochs", "seed": "seed"}))
    return pipeline.run_train_matcher(cfg, args.data)


def cmd_build_prototype(args):
    cfg = _config(args, _overrides(args, {"embeddings": "paths.embeddings"}))
    return pipeline.run_build_prototype(cfg, args.data)


def cmd_train_ner(args):
    cfg = _config(args, _overrides(args, {
        "mode": "ner.mode", "embeddings": "paths.embeddings", "epochs": "ner.epochs"}))
    return pipeline.run_train_ner(cfg, args.data)


def cmd_predict(args):
    cfg = _config(args, _overrides(args, {"embeddings": "paths.embeddings"}))
    sentences = pipeline.read_column_corpus(args.corpus, cfg.data["corpus"]["scheme"])
    tags = pipeline.predict_corpus(sentences, cfg.out, cfg.data["paths"]["embeddings"],
                                   args.allow_config_mismatch,
                                   None if args.allow_config_mismatch else cfg.hash(),
                                   cfg.data["ner"]["constrained_decode"])
    dest = Path(args.pred_out) if args.pred_out else cfg.out / "predictions.txt"
    pipeline.write_column_corpus(sentences, dest, extra=tags)
    return {"predictions": str(dest), "n_sentences": len(sentences)}


def cmd_evaluate(args):
    if args.pred is None and args.out is None:
        raise pipeline.PipelineError("evaluate needs --pred or a run directory via --out")
    cfg = _config(args, _overrides(args, {"embeddings": "paths.embeddings"}))
    report = pipeline.run_evaluate(cfg, args.gold, args.pred, args.allow_config_mismatch)
    if args.table:
        return report.table()
    return report.to_json()


def cmd_stats(args):
    return pipeline.run_stats(args.corpus, args.scheme)


def cmd_sweep(args):
    o = _overrides(args, {"seed": "seed"})
    if args.fractions:
        _set(o, "sample.fractions", [float(x) for x in args.fractions.split(",")])
    if args.seeds:
        _set(o, "sample.seeds", [int(x) for x in args.seeds.split(",")])
    cfg = _config(args, o)
    rows = pipeline.sweep_fractions(cfg)
    return pipeline.format_sweep(rows) if args.table else {"rows": rows}


def cmd_run(args):
    cfg = _config(args, _overrides(args, {"seed": "seed", "mode": "ner.mode"}))
    report = pipeline.run_pipeline(cfg)
    return report.table() if args.table else report.to_json()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deptrigger", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="YAML run configuration")
        return sp

    sp = add("annotate", cmd_annotate, "extract dependency triggers and write training instances")
    sp.add_argument("--corpus")
    sp.add_argument("--parses")
    sp.add_argument("--max-hops", type=int)
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--scheme", choices=["auto", "bio", "iob1", "bioes"])
    sp.add_argument("--embeddings")
    sp.add_argument("--out", required=True, help="run directory")

    sp = add("train-matcher", cmd_train_matcher, "train the trigger matching network")
    sp.add_argument("--data", help="instances.jsonl (default: <out>/instances.jsonl)")
    sp.add_argument("--embeddings")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("build-prototype", cmd_build_prototype, "store trigger pattern vectors")
    sp.add_argument("--data")
    sp.add_argument("--embeddings")
    sp.add_argument("--out", required=True)

    sp = add("train-ner", cmd_train_ner, "train the recognizer with the matcher frozen")
    sp.add_argument("--mode", choices=["separate", "merge"])
    sp.add_argument("--data")
    sp.add_argument("--embeddings")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "tag a column corpus with a trained run")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--pred-out")
    sp.add_argument("--allow-config-mismatch", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "entity-level exact-match P/R/F1")
    sp.add_argument("--gold", help="gold column corpus (default: paths.test_corpus)")
    sp.add_argument("--pred", help="prediction column file; omit to predict with --out")
    sp.add_argument("--embeddings")
    sp.add_argument("--allow-config-mismatch", action="store_true")
    sp.add_argument("--table", action="store_true", help="print a table instead of JSON")
    sp.add_argument("--out")

    sp = add("stats", cmd_stats, "sentence/entity counts and length histogram")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--scheme", default="auto", choices=["auto", "bio", "iob1", "bioes"])

    sp = add("sweep", cmd_sweep, "full pipeline for each trigger-annotation fraction")
    sp.add_argument("--fractions", help="comma-separated, e.g. 0.03,0.05")
    sp.add_argument("--seeds", help="comma-separated seeds to average over")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--table", action="store_true")
    sp.add_argument("--out")

    sp = add("run", cmd_run, "annotate, train both networks and evaluate")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mode", choices=["separate", "merge"])
    sp.add_argument("--table", action="store_true")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # every failure becomes a JSON error on stderr
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        producer = getattr(exc, "producer", None)
        if producer:
            err["run_first"] = producer
        print(json.dumps(err), file=sys.stderr)
        return 1
    if isinstance(result, str):
        print(result)
    else:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
