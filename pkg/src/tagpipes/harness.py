"""Config-driven experiments: seeds, grids, timing, reports.

A spec document names a dataset, a split protocol, an encoder, a pipeline,
a model/trainer grid, and the seed list. Each seed re-splits, grid-searches
by validation accuracy, and contributes one test accuracy; the report keeps
per-seed values, the population mean/std, and the wall-clock split between
the language-model phase (encoding, LLM calls) and the network phase
(training, inference).
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import csv as csv_module
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .annotate import default_budget, distill_from_outcomes, select_nodes
from .encoders import (
    FeatureMatrix,
    HttpEmbeddingProvider,
    encode_external,
    encode_hash,
    encode_tfidf,
    fit_tfidf,
)
from .enhance import ensemble_predict, generate_kea, generate_tape, kea_inject, pseudo_label_features
from .errors import RunFailureError, ValidationError
from .gnn import ModelConfig, TrainConfig, evaluate, train
from .graph import DataSplit, TextAttributedGraph, load_graph, make_high_label_split, make_low_label_split
from .llm import Gateway, HttpChatProvider, RateLimiter, ResponseCache, mock_from_fixture
from .prompts import DEFAULT_MODEL_ID, PromptStrategy, classify_nodes
from .rng import generator

__all__ = [
    "ExperimentSpec",
    "SeedOutcome",
    "ExperimentReport",
    "run",
    "save_report",
    "load_report",
    "render_report",
    "build_gateway",
]

log = logging.getLogger(__name__)

PIPELINES = ("enhancer_feature", "enhancer_text", "predictor", "annotator")
SPLIT_KINDS = ("low", "high", "fixed")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment's full configuration; JSON round-trippable."""

    name: str
    dataset_path: str
    dataset_format: str = "json"
    split: dict = field(default_factory=lambda: {"kind": "low"})
    encoder: dict = field(default_factory=lambda: {"kind": "tfidf", "max_dim": 1024})
    pipeline: dict = field(default_factory=lambda: {"kind": "enhancer_feature"})
    models: tuple[ModelConfig, ...] = (ModelConfig(arch="gcn"),)
    trainers: tuple[TrainConfig, ...] = (TrainConfig(),)
    seeds: tuple[int, ...] = tuple(range(10))
    provider: dict | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.split.get("kind") not in SPLIT_KINDS:
            raise ValueError(f"split.kind must be one of {SPLIT_KINDS}")
        if self.pipeline.get("kind") not in PIPELINES:
            raise ValueError(f"pipeline.kind must be one of {PIPELINES}")
        if not self.models or not self.trainers:
            raise ValueError("models and trainers must be non-empty")

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "dataset_path": self.dataset_path,
            "dataset_format": self.dataset_format,
            "split": self.split,
            "encoder": self.encoder,
            "pipeline": self.pipeline,
            "models": [dataclasses.asdict(m) for m in self.models],
            "trainers": [dataclasses.asdict(t) for t in self.trainers],
            "seeds": list(self.seeds),
            "provider": self.provider,
            "cache_dir": self.cache_dir,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ExperimentSpec":
        known = {
            "name", "dataset_path", "dataset_format", "split", "encoder",
            "pipeline", "models", "trainers", "seeds", "provider", "cache_dir",
        }
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown spec fields: {sorted(unknown)}")
        kwargs = dict(payload)
        kwargs["models"] = tuple(ModelConfig(**m) for m in payload.get("models", [{"arch": "gcn"}]))
        kwargs["trainers"] = tuple(TrainConfig(**t) for t in payload.get("trainers", [{}]))
        kwargs["seeds"] = tuple(payload.get("seeds", range(10)))
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_payload(json.loads(Path(path).read_text(encoding="utf-8")))

    def sha256(self) -> str:
        body = json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass
class SeedOutcome:
    seed: int
    accuracy: float | None
    error: str | None = None
    chosen_model: int | None = None
    chosen_trainer: int | None = None


@dataclass
class ExperimentReport:
    name: str
    dataset: str
    encoder_label: str
    model_label: str
    pipeline_label: str
    per_seed: list[SeedOutcome]
    mean: float
    std: float
    lm_seconds: float
    gnn_seconds: float
    total_seconds: float
    partial: bool
    spec_payload: dict
    spec_sha256: str

    @property
    def accuracies(self) -> list[float]:
        return [o.accuracy for o in self.per_seed if o.accuracy is not None]


class _Timer:
    """Accumulates intervals against an injected clock."""

    def __init__(self, clock: Callable[[], float]):
        self.clock = clock
        self.total = 0.0
        self._start: float | None = None

    def __enter__(self):
        self._start = self.clock()
        return self

    def __exit__(self, *_):
        self.total += self.clock() - self._start
        self._start = None
        return False


def build_gateway(provider_spec: dict, cache_dir: str | None = None) -> tuple[Gateway, str]:
    """Gateway plus the model id requests should carry.

    Credentials are read from the environment variable named in
    ``provider_spec``, which itself never holds a secret.
    """
    kind = provider_spec.get("kind")
    model_id = provider_spec.get("model", DEFAULT_MODEL_ID)
    cache = ResponseCache(cache_dir) if cache_dir else None
    if kind == "mock":
        provider = mock_from_fixture(provider_spec["fixture"])
        return Gateway(provider, cache=cache), model_id
    if kind == "replay":
        return Gateway(None, cache=ResponseCache(provider_spec["cache"])), model_id
    if kind == "live":
        provider = HttpChatProvider(
            endpoint=provider_spec["endpoint"],
            credential_env=provider_spec.get("credential_env"),
        )
        limiter = RateLimiter(int(provider_spec.get("rpm", 60)))
        return Gateway(provider, cache=cache, limiter=limiter), model_id
    raise ValueError(f"unknown provider kind {kind!r}")


def _encode(spec: ExperimentSpec, texts: Sequence[str]) -> FeatureMatrix:
    enc = spec.encoder
    kind = enc.get("kind")
    if kind == "tfidf":
        model = fit_tfidf(texts, max_dim=int(enc.get("max_dim", 1024)))
        return encode_tfidf(model, texts)
    if kind == "hash":
        return encode_hash(texts, dim=int(enc.get("dim", 256)), seed=int(enc.get("seed", 0)))
    if kind == "external":
        provider = HttpEmbeddingProvider(
            endpoint=enc["endpoint"],
            model=enc["model"],
            credential_env=enc.get("credential_env"),
        )
        cache_dir = Path(spec.cache_dir) / "embeddings" if spec.cache_dir else None
        return encode_external(
            provider, texts,
            batch_size=int(enc.get("batch_size", 1024)),
            cache_dir=cache_dir,
            max_in_flight=int(enc.get("max_in_flight", 4)),
        )
    raise ValueError(f"unknown encoder kind {kind!r}")


def _split_for(spec: ExperimentSpec, graph: TextAttributedGraph, seed: int) -> DataSplit:
    kind = spec.split["kind"]
    if kind == "low":
        return make_low_label_split(
            graph, seed,
            train_per_class=int(spec.split.get("train_per_class", 20)),
            val_size=int(spec.split.get("val_size", 500)),
            test_size=int(spec.split.get("test_size", 1000)),
        )
    if kind == "high":
        return make_high_label_split(graph, seed)
    split = DataSplit(
        train=np.asarray(spec.split["train"], dtype=np.int64),
        validation=np.asarray(spec.split["validation"], dtype=np.int64),
        test=np.asarray(spec.split["test"], dtype=np.int64),
        seed=seed,
    )
    split.validate(graph)
    return split


def _grid_train(
    spec: ExperimentSpec,
    features_sets: list[FeatureMatrix],
    graph: TextAttributedGraph,
    split: DataSplit,
    seed: int,
) -> tuple[float, int, int]:
    """Best-validation grid search; returns (test_accuracy, model_i, trainer_i)."""
    best = None
    for mi, mcfg in enumerate(spec.models):
        for ti, tcfg in enumerate(spec.trainers):
            tcfg_seeded = dataclasses.replace(tcfg, seed=seed)
            if len(features_sets) == 1:
                model = train(mcfg, tcfg_seeded, features_sets[0], graph, split)
                val = model.val_accuracy_at_best
                test_acc, _ = evaluate(
                    model, features_sets[0], graph, split.test, graph.labels[split.test]
                )
            else:
                result = ensemble_predict(features_sets, graph, split, mcfg, tcfg_seeded)
                val = result.val_accuracy
                test_acc = result.accuracy
            if best is None or val > best[0]:
                best = (val, test_acc, mi, ti)
    assert best is not None
    return best[1], best[2], best[3]


def run(
    spec: ExperimentSpec,
    clock: Callable[[], float] = time.perf_counter,
) -> ExperimentReport:
    """Execute a spec over all its seeds.

    Individual seed failures are recorded and the rest of the run proceeds;
    if at least half the seeds fail the whole run is declared failed.
    """
    started = clock()
    lm_timer = _Timer(clock)
    gnn_timer = _Timer(clock)
    graph = load_graph(spec.dataset_path, spec.dataset_format)
    pipeline = spec.pipeline["kind"]

    gateway: Gateway | None = None
    model_id = DEFAULT_MODEL_ID
    if spec.provider is not None:
        gateway, model_id = build_gateway(spec.provider, spec.cache_dir)

    features_sets: list[FeatureMatrix] = []
    encoder_label = spec.encoder.get("kind", "?")
    if pipeline in ("enhancer_feature", "annotator"):
        with lm_timer:
            features_sets = [_encode(spec, graph.texts)]
    elif pipeline == "enhancer_text":
        if gateway is None:
            raise ValueError("enhancer_text needs a provider")
        with lm_timer:
            features_sets = _enhanced_feature_sets(spec, graph, gateway, model_id)
        encoder_label = f"{encoder_label}+{spec.pipeline.get('augmentation', 'tape')}"

    per_seed: list[SeedOutcome] = []
    for seed in spec.seeds:
        try:
            outcome = _run_seed(
                spec, graph, features_sets, gateway, model_id, seed, lm_timer, gnn_timer
            )
        except Exception as exc:  # noqa: BLE001 - per-seed isolation is the contract
            log.warning("seed %d failed: %s", seed, exc)
            outcome = SeedOutcome(seed=seed, accuracy=None, error=f"{type(exc).__name__}: {exc}")
        per_seed.append(outcome)

    failures = [o for o in per_seed if o.accuracy is None]
    if 2 * len(failures) >= len(per_seed):
        raise RunFailureError(
            f"{len(failures)}/{len(per_seed)} seeds failed: "
            + "; ".join(o.error or "?" for o in failures[:3])
        )
    accuracies = np.asarray([o.accuracy for o in per_seed if o.accuracy is not None])
    total = clock() - started
    if len(spec.models) == 1:
        m = spec.models[0]
        model_label = f"{m.arch}(h={m.hidden_dim},L={m.num_layers})"
    else:
        archs = sorted({m.arch for m in spec.models})
        model_label = f"grid[{'/'.join(archs)}:{len(spec.models)}x{len(spec.trainers)}]"
    return ExperimentReport(
        name=spec.name,
        dataset=Path(spec.dataset_path).name,
        encoder_label=encoder_label,
        model_label=model_label,
        pipeline_label=pipeline,
        per_seed=per_seed,
        mean=float(accuracies.mean()),
        std=float(accuracies.std()),  # population std over seeds
        lm_seconds=lm_timer.total,
        gnn_seconds=gnn_timer.total,
        total_seconds=total,
        partial=bool(failures),
        spec_payload=spec.to_payload(),
        spec_sha256=spec.sha256(),
    )


def _enhanced_feature_sets(
    spec: ExperimentSpec,
    graph: TextAttributedGraph,
    gateway: Gateway,
    model_id: str,
) -> list[FeatureMatrix]:
    """Generate augmentations for every node and encode the feature sets."""
    augmentation = spec.pipeline.get("augmentation", "tape")
    nodes = range(graph.node_count)
    if augmentation == "tape":
        explanations: list[str] = []
        pseudo: list[int | None] = []
        for node in nodes:
            expl, _, parsed = generate_tape(gateway, graph, node, model_id)
            explanations.append(expl.text)
            pseudo.append(parsed.class_index)
        sets = [_encode(spec, graph.texts), _encode(spec, explanations)]
        if spec.pipeline.get("use_pseudo_labels", True):
            sets.append(pseudo_label_features(pseudo, graph.num_classes))
        return sets
    if augmentation in ("kea_inject", "kea_separate"):
        augs = [generate_kea(gateway, graph, node, model_id) for node in nodes]
        if augmentation == "kea_inject":
            injected = [kea_inject(graph.texts[i], augs[i]) for i in nodes]
            return [_encode(spec, injected)]
        return [_encode(spec, graph.texts), _encode(spec, [a.text for a in augs])]
    raise ValueError(f"unknown augmentation {augmentation!r}")


def _run_seed(
    spec: ExperimentSpec,
    graph: TextAttributedGraph,
    features_sets: list[FeatureMatrix],
    gateway: Gateway | None,
    model_id: str,
    seed: int,
    lm_timer: _Timer,
    gnn_timer: _Timer,
) -> SeedOutcome:
    pipeline = spec.pipeline["kind"]
    if pipeline == "predictor":
        if gateway is None:
            raise ValueError("predictor needs a provider")
        split = _split_for(spec, graph, seed)
        eval_count = int(spec.pipeline.get("eval_nodes", 200))
        pool = split.test
        chosen = generator(seed, 0xE7A1).choice(
            pool, size=min(eval_count, pool.size), replace=False
        )
        strategy = PromptStrategy(**spec.pipeline.get("strategy", {"mode": "zero_shot"}))
        with lm_timer:
            result = classify_nodes(
                gateway, graph, sorted(int(n) for n in chosen), strategy,
                split=split, seed=seed, model_id=model_id,
            )
        if result.accuracy is None:
            raise RunFailureError("every node in the sample failed")
        return SeedOutcome(seed=seed, accuracy=result.accuracy)

    if pipeline == "annotator":
        if gateway is None:
            raise ValueError("annotator needs a provider")
        budget = int(spec.pipeline.get("budget", default_budget(graph)))
        selected = select_nodes(graph, budget, seed)
        rest = np.setdiff1d(np.arange(graph.node_count), selected)
        test_size = min(int(spec.pipeline.get("test_size", 1000)), rest.size)
        test_nodes = np.sort(generator(seed, 0xA2).choice(rest, size=test_size, replace=False))
        strategy = PromptStrategy(**spec.pipeline.get("strategy", {"mode": "zero_shot"}))
        tcfg = dataclasses.replace(spec.trainers[0], seed=seed)
        with lm_timer:
            result = classify_nodes(
                gateway, graph, selected.tolist(), strategy,
                split=None, seed=seed, model_id=model_id,
            )
        with gnn_timer:
            _, _, acc = distill_from_outcomes(
                graph, features_sets[0], selected, result.outcomes,
                spec.models[0], tcfg, test_nodes, split_seed=seed,
            )
        return SeedOutcome(seed=seed, accuracy=acc, chosen_model=0, chosen_trainer=0)

    split = _split_for(spec, graph, seed)
    with gnn_timer:
        accuracy, mi, ti = _grid_train(spec, features_sets, graph, split, seed)
    return SeedOutcome(seed=seed, accuracy=accuracy, chosen_model=mi, chosen_trainer=ti)


# ---------------------------------------------------------------------------
# report IO and rendering


def save_report(report: ExperimentReport, path: str | Path) -> None:
    """Atomic JSON write (temp file then rename)."""
    payload = {
        "name": report.name,
        "dataset": report.dataset,
        "encoder_label": report.encoder_label,
        "model_label": report.model_label,
        "pipeline_label": report.pipeline_label,
        "per_seed": [dataclasses.asdict(o) for o in report.per_seed],
        "mean": report.mean,
        "std": report.std,
        "lm_seconds": report.lm_seconds,
        "gnn_seconds": report.gnn_seconds,
        "total_seconds": report.total_seconds,
        "partial": report.partial,
        "spec_payload": report.spec_payload,
        "spec_sha256": report.spec_sha256,
    }
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    os.replace(tmp, path)


def load_report(path: str | Path) -> ExperimentReport:
    """Load and re-verify a report: stored mean/std must match the per-seed values."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    per_seed = [SeedOutcome(**o) for o in payload["per_seed"]]
    accs = np.asarray([o.accuracy for o in per_seed if o.accuracy is not None])
    if accs.size == 0:
        raise ValidationError(f"report {path} has no successful seeds")
    if abs(accs.mean() - payload["mean"]) > 1e-9 or abs(accs.std() - payload["std"]) > 1e-9:
        raise ValidationError(f"report {path}: stored mean/std do not match per-seed values")
    return ExperimentReport(
        name=payload["name"],
        dataset=payload["dataset"],
        encoder_label=payload["encoder_label"],
        model_label=payload["model_label"],
        pipeline_label=payload["pipeline_label"],
        per_seed=per_seed,
        mean=payload["mean"],
        std=payload["std"],
        lm_seconds=payload["lm_seconds"],
        gnn_seconds=payload["gnn_seconds"],
        total_seconds=payload["total_seconds"],
        partial=payload["partial"],
        spec_payload=payload["spec_payload"],
        spec_sha256=payload["spec_sha256"],
    )


def _accuracy_cell(mean: float, std: float) -> str:
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def render_report(
    reports: Sequence[ExperimentReport],
    fmt: str = "markdown",
    allow_mixed: bool = False,
) -> str:
    """Accuracy table (percent, two decimals) across experiment reports."""
    if not reports:
        raise ValueError("no reports to render")
    datasets = {r.dataset for r in reports}
    if len(datasets) > 1 and not allow_mixed:
        raise ValueError(
            f"reports span multiple datasets {sorted(datasets)}; pass allow_mixed to combine"
        )
    header = ["dataset", "encoder", "model", "pipeline", "accuracy", "seeds", "lm_s", "gnn_s"]
    rows = [
        [
            r.dataset,
            r.encoder_label,
            r.model_label,
            r.pipeline_label,
            _accuracy_cell(r.mean, r.std),
            str(len(r.accuracies)),
            f"{r.lm_seconds:.1f}",
            f"{r.gnn_seconds:.1f}",
        ]
        for r in reports
    ]
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join(["---"] * len(header)) + "|",
        ]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv_module.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")
