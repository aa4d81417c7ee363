"""Command-line entry points.

Subcommands mirror the library surface: ingest, encode, train, predict,
enhance, annotate, bench, report. The --provider flag accepts ``live``,
``mock:<fixture>``, or ``replay:<cache>`` everywhere a language model is
involved; live credentials always come from an environment variable named
in the config, never from flags or files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .annotate import annotate_and_distill, default_budget, select_nodes
from .encoders import encode_hash, encode_tfidf, fit_tfidf
from .enhance import generate_kea, generate_tape, save_augmentations
from .errors import TagPipesError
from .gnn import ModelConfig, TrainConfig, evaluate, save_model, train
from .graph import load_graph, make_high_label_split, make_low_label_split, write_graph
from .prompts import PromptStrategy, classify_nodes
from .rng import generator

log = logging.getLogger("tagpipes")


def _provider_spec(raw: str | None, model_id: str | None) -> dict | None:
    if raw is None:
        return None
    if raw == "live":
        raise SystemExit("--provider live needs endpoint details; put them in a --config file")
    if raw.startswith("mock:"):
        spec = {"kind": "mock", "fixture": raw[len("mock:"):]}
    elif raw.startswith("replay:"):
        spec = {"kind": "replay", "cache": raw[len("replay:"):]}
    else:
        raise SystemExit(f"unknown --provider {raw!r}; use live, mock:<fixture>, or replay:<cache>")
    if model_id:
        spec["model"] = model_id
    return spec


def _seed_list(raw: str | None) -> tuple[int, ...] | None:
    if raw is None:
        return None
    return tuple(int(s) for s in raw.replace(",", " ").split())


def _split_for(graph, kind: str, seed: int, args=None):
    if kind == "low":
        kwargs = {}
        if args is not None:
            if args.train_per_class:
                kwargs["train_per_class"] = args.train_per_class
            if args.val_size:
                kwargs["val_size"] = args.val_size
            if args.test_size:
                kwargs["test_size"] = args.test_size
        return make_low_label_split(graph, seed, **kwargs)
    if kind == "high":
        return make_high_label_split(graph, seed)
    raise SystemExit(f"unknown split {kind!r}")


def cmd_ingest(args) -> int:
    graph = load_graph(args.data, args.format)
    print(
        f"{args.data}: {graph.node_count} nodes, {graph.edge_count} edges, "
        f"{graph.num_classes} classes"
    )
    for c, name in enumerate(graph.class_names):
        print(f"  [{c}] {name}: {int(np.sum(graph.labels == c))} nodes")
    if args.out:
        write_graph(graph, args.out, args.to)
        print(f"wrote {args.to} copy to {args.out}")
    return 0


def cmd_encode(args) -> int:
    graph = load_graph(args.data, args.format)
    if args.encoder == "tfidf":
        features = encode_tfidf(fit_tfidf(graph.texts, max_dim=args.dim), graph.texts)
    elif args.encoder == "hash":
        features = encode_hash(graph.texts, dim=args.dim, seed=args.seed)
    else:
        raise SystemExit("encode supports tfidf and hash; use bench for external embeddings")
    np.savez(args.out, values=features.values, provenance=features.provenance)
    print(f"encoded {features.node_count} x {features.dim} ({features.provenance}) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    graph = load_graph(args.data, args.format)
    features = encode_tfidf(fit_tfidf(graph.texts, max_dim=args.dim), graph.texts)
    split = _split_for(graph, args.split, args.seed, args)
    config = ModelConfig(
        arch=args.arch, hidden_dim=args.hidden, num_layers=args.layers,
        dropout=args.dropout, normalization=args.norm, heads=args.heads,
    )
    tcfg = TrainConfig(
        learning_rate=args.lr, weight_decay=args.wd, seed=args.seed,
        max_epochs=args.max_epochs, patience=args.patience,
    )
    model = train(config, tcfg, features, graph, split)
    test_acc, _ = evaluate(model, features, graph, split.test, graph.labels[split.test])
    print(
        f"{args.arch}: best epoch {model.best_epoch}, "
        f"val {model.val_accuracy_at_best:.4f}, test {test_acc:.4f}"
    )
    if args.out:
        save_model(model, args.out)
        print(f"checkpoint -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    graph = load_graph(args.data, args.format)
    provider = _provider_spec(args.provider, args.model_id)
    if provider is None:
        raise SystemExit("predict needs --provider")
    gateway, model_id = harness.build_gateway(provider, args.cache_dir)
    split = _split_for(graph, args.split, args.seed, args)
    pool = split.test
    count = min(args.nodes, pool.size)
    chosen = sorted(int(n) for n in generator(args.seed, 0xE7A1).choice(pool, size=count, replace=False))
    strategy = PromptStrategy(mode=args.strategy, few_shot_k=args.few_shot_k)
    result = classify_nodes(
        gateway, graph, chosen, strategy, split=split, seed=args.seed, model_id=model_id
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for o in result.outcomes:
                fh.write(json.dumps({
                    "node": o.node,
                    "class_index": None if o.parsed is None else o.parsed.class_index,
                    "method": None if o.parsed is None else o.parsed.method,
                    "error": o.error,
                    "correct": o.correct,
                }) + "\n")
    acc = "n/a" if result.accuracy is None else f"{result.accuracy:.4f}"
    print(f"classified {len(chosen)} nodes: accuracy {acc}, failed {result.failed}")
    return 0


def cmd_enhance(args) -> int:
    graph = load_graph(args.data, args.format)
    provider = _provider_spec(args.provider, args.model_id)
    if provider is None:
        raise SystemExit("enhance needs --provider")
    gateway, model_id = harness.build_gateway(provider, args.cache_dir)
    augs = []
    for node in range(graph.node_count):
        if args.kind == "tape":
            expl, pseudo, _ = generate_tape(gateway, graph, node, model_id)
            augs += [expl, pseudo]
        else:
            augs.append(generate_kea(gateway, graph, node, model_id))
    save_augmentations(args.out, augs)
    print(f"wrote {len(augs)} augmentations -> {args.out}")
    return 0


def cmd_annotate(args) -> int:
    graph = load_graph(args.data, args.format)
    provider = _provider_spec(args.provider, args.model_id)
    if provider is None:
        raise SystemExit("annotate needs --provider")
    gateway, model_id = harness.build_gateway(provider, args.cache_dir)
    features = encode_tfidf(fit_tfidf(graph.texts, max_dim=args.dim), graph.texts)
    budget = args.budget or default_budget(graph)
    selected = select_nodes(graph, budget, args.seed)
    rest = np.setdiff1d(np.arange(graph.node_count), selected)
    test_nodes = np.sort(
        generator(args.seed, 0xA2).choice(rest, size=min(1000, rest.size), replace=False)
    )
    run_, _, acc = annotate_and_distill(
        graph, features, selected, gateway,
        ModelConfig(arch="gcn"), TrainConfig(seed=args.seed), test_nodes,
        model_id=model_id, split_seed=args.seed,
    )
    print(
        f"annotated {budget} nodes ({len(run_.pseudo_labels)} usable, "
        f"agreement {run_.label_agreement:.3f}); distilled test accuracy {acc:.4f}"
    )
    if args.out:
        from .annotate import save_annotation_run

        save_annotation_run(run_, args.out)
        print(f"run record -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    spec = harness.ExperimentSpec.from_json(args.config)
    overrides = {}
    seeds = _seed_list(args.seed_list)
    if seeds is not None:
        overrides["seeds"] = seeds
    provider = _provider_spec(args.provider, args.model_id)
    if provider is not None:
        overrides["provider"] = provider
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    report = harness.run(spec)
    harness.save_report(report, args.out)
    print(harness.render_report([report]))
    print(f"report -> {args.out}")
    return 0


def cmd_report(args) -> int:
    reports = [harness.load_report(p) for p in args.inputs]
    table = harness.render_report(reports, fmt=args.fmt, allow_mixed=args.allow_mixed)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"table -> {args.out}")
    else:
        print(table, end="")
    return 0


def _add_common_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset file or csv-pair directory")
    p.add_argument("--format", default="json", choices=["json", "csv-pair"])


def _add_provider_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", help="live, mock:<fixture>, or replay:<cache>")
    p.add_argument("--model-id", help="model identifier sent with each request")
    p.add_argument("--cache-dir", help="response cache directory")


def _add_split_size_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-per-class", type=int, help="low split: labeled nodes per class")
    p.add_argument("--val-size", type=int, help="low split: validation pool size")
    p.add_argument("--test-size", type=int, help="low split: test pool size")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tagpipes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and optionally convert formats")
    _add_common_data_args(p)
    p.add_argument("--out")
    p.add_argument("--to", default="json", choices=["json", "csv-pair"])
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("encode", help="write node features to an .npz file")
    _add_common_data_args(p)
    p.add_argument("--encoder", default="tfidf", choices=["tfidf", "hash"])
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train one network on TF-IDF features")
    _add_common_data_args(p)
    p.add_argument("--split", default="low", choices=["low", "high"])
    _add_split_size_args(p)
    p.add_argument("--arch", default="gcn", choices=["gcn", "gat", "mlp"])
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--norm", default="none", choices=["none", "batch"])
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--wd", type=float, default=5e-4)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="LLM classification over sampled test nodes")
    _add_common_data_args(p)
    _add_provider_args(p)
    p.add_argument("--split", default="low", choices=["low", "high"])
    _add_split_size_args(p)
    p.add_argument("--strategy", default="zero_shot")
    p.add_argument("--few-shot-k", type=int, default=0)
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("enhance", help="generate text augmentations for every node")
    _add_common_data_args(p)
    _add_provider_args(p)
    p.add_argument("--kind", default="tape", choices=["tape", "kea"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("annotate", help="LLM-annotate a budget and distill a network")
    _add_common_data_args(p)
    _add_provider_args(p)
    p.add_argument("--budget", type=int)
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("bench", help="run an experiment spec end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--seed-list", help="override seeds, e.g. '0,1,2'")
    p.add_argument("--provider", help="override provider: mock:<fixture> or replay:<cache>")
    p.add_argument("--model-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render saved reports as a table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--fmt", default="markdown", choices=["markdown", "csv"])
    p.add_argument("--allow-mixed", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TagPipesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
