"""Zero-label pipeline: LLM-annotate a node budget, then distill a network.

No ground-truth label is read anywhere in this module except to compute the
reported agreement diagnostic and the final test accuracy.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import FeatureMatrix
from .errors import InsufficientAnnotationError, InsufficientNodesError
from .gnn import ModelConfig, TrainConfig, TrainedModel, evaluate, train
from .graph import DataSplit, TextAttributedGraph
from .llm import Gateway
from .prompts import (
    DEFAULT_MODEL_ID,
    ParsedPrediction,
    PromptStrategy,
    classify_nodes,
    load_catalog,
    parse_prediction,
    _render_class_list,
)
from .llm import LlmRequest, Message
from .rng import generator

__all__ = [
    "default_budget",
    "select_nodes",
    "pseudo_split",
    "AnnotationRun",
    "distill_from_outcomes",
    "annotate_and_distill",
    "save_annotation_run",
    "load_annotation_run",
    "ConfidenceProbe",
    "probe_confidence",
]

PSEUDO_TRAIN_FRACTION = 0.75


def default_budget(graph: TextAttributedGraph, per_class: int = 20) -> int:
    """Annotation budget of ``per_class`` times the number of classes."""
    return per_class * graph.num_classes


def select_nodes(graph: TextAttributedGraph, budget: int, seed: int) -> np.ndarray:
    """Uniform selection of ``budget`` distinct nodes."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if budget > graph.node_count:
        raise InsufficientNodesError(
            f"budget {budget} exceeds node count {graph.node_count}"
        )
    chosen = generator(seed).choice(graph.node_count, size=budget, replace=False)
    return np.sort(chosen)


def pseudo_split(annotated: Sequence[int], seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle annotated nodes into pseudo train/val, 75/25 by round-half-up."""
    nodes = np.asarray(sorted(int(n) for n in annotated))
    perm = generator(seed).permutation(nodes.size)
    n_train = int(np.floor(PSEUDO_TRAIN_FRACTION * nodes.size + 0.5))
    shuffled = nodes[perm]
    return np.sort(shuffled[:n_train]), np.sort(shuffled[n_train:])


@dataclass
class AnnotationRun:
    """Everything needed to audit or resume one annotation round."""

    budget: int
    selected: np.ndarray
    responses: dict[int, str]
    pseudo_labels: dict[int, int]
    pseudo_train: np.ndarray
    pseudo_val: np.ndarray
    unmatched: tuple[int, ...]
    failed: tuple[int, ...]
    label_agreement: float


def distill_from_outcomes(
    graph: TextAttributedGraph,
    features: FeatureMatrix,
    selected: np.ndarray,
    outcomes,
    config: ModelConfig,
    tcfg: TrainConfig,
    test_nodes: np.ndarray,
    split_seed: int = 0,
) -> tuple[AnnotationRun, TrainedModel, float]:
    """Distillation half of the pipeline, from already-collected outcomes.

    Unmatched responses are dropped. Usable pseudo labels split 75/25 into
    pseudo train/val; the network trains against pseudo labels only and is
    finally scored on ``test_nodes`` against ground truth. ``label_agreement``
    (pseudo vs true over usable annotations) is reported as a diagnostic,
    never used for selection.
    """
    selected = np.asarray(selected, dtype=np.int64)
    test_nodes = np.asarray(test_nodes, dtype=np.int64)
    responses: dict[int, str] = {}
    pseudo_labels: dict[int, int] = {}
    unmatched: list[int] = []
    failed: list[int] = []
    for outcome in outcomes:
        if outcome.error is not None:
            failed.append(outcome.node)
            continue
        responses[outcome.node] = outcome.parsed.raw
        if outcome.parsed.class_index is None:
            unmatched.append(outcome.node)
        else:
            pseudo_labels[outcome.node] = int(outcome.parsed.class_index)

    counts = np.bincount(list(pseudo_labels.values()) or [0], minlength=graph.num_classes)
    if not pseudo_labels or counts.min() < 2:
        short = [graph.class_names[c] for c in np.flatnonzero(counts < 2)]
        raise InsufficientAnnotationError(
            f"fewer than 2 usable pseudo labels for class(es): {short}"
        )

    annotated = sorted(pseudo_labels)
    pseudo_train, pseudo_val = pseudo_split(annotated, split_seed)
    labels = graph.labels.copy()
    for node, lab in pseudo_labels.items():
        labels[node] = lab
    split = DataSplit(train=pseudo_train, validation=pseudo_val, test=test_nodes, seed=split_seed)
    model = train(config, tcfg, features, graph, split, labels=labels)
    test_accuracy, _ = evaluate(model, features, graph, test_nodes, graph.labels[test_nodes])
    agreement = float(
        np.mean([pseudo_labels[n] == int(graph.labels[n]) for n in annotated])
    )
    run = AnnotationRun(
        budget=int(selected.size),
        selected=selected,
        responses=responses,
        pseudo_labels=pseudo_labels,
        pseudo_train=pseudo_train,
        pseudo_val=pseudo_val,
        unmatched=tuple(unmatched),
        failed=tuple(failed),
        label_agreement=agreement,
    )
    return run, model, test_accuracy


def annotate_and_distill(
    graph: TextAttributedGraph,
    features: FeatureMatrix,
    selected: np.ndarray,
    gateway: Gateway,
    config: ModelConfig,
    tcfg: TrainConfig,
    test_nodes: np.ndarray,
    strategy: PromptStrategy | None = None,
    model_id: str = DEFAULT_MODEL_ID,
    split_seed: int = 0,
) -> tuple[AnnotationRun, TrainedModel, float]:
    """Annotate ``selected`` via the prompt pipeline, then distill a network."""
    selected = np.asarray(selected, dtype=np.int64)
    test_nodes = np.asarray(test_nodes, dtype=np.int64)
    if selected.size == 0 or test_nodes.size == 0:
        raise ValueError("selected and test_nodes must be non-empty")
    if set(selected.tolist()) & set(test_nodes.tolist()):
        raise ValueError("selected nodes must be disjoint from test_nodes")
    if strategy is None:
        strategy = PromptStrategy(mode="zero_shot")
    result = classify_nodes(
        gateway, graph, selected.tolist(), strategy, split=None, seed=split_seed, model_id=model_id
    )
    return distill_from_outcomes(
        graph, features, selected, result.outcomes, config, tcfg, test_nodes, split_seed
    )


def save_annotation_run(run: AnnotationRun, path: str | Path) -> None:
    payload = {
        "budget": run.budget,
        "selected": [int(n) for n in run.selected],
        "responses": {str(k): v for k, v in run.responses.items()},
        "pseudo_labels": {str(k): int(v) for k, v in run.pseudo_labels.items()},
        "pseudo_train": [int(n) for n in run.pseudo_train],
        "pseudo_val": [int(n) for n in run.pseudo_val],
        "unmatched": list(run.unmatched),
        "failed": list(run.failed),
        "label_agreement": run.label_agreement,
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_annotation_run(path: str | Path) -> AnnotationRun:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return AnnotationRun(
        budget=int(payload["budget"]),
        selected=np.asarray(payload["selected"], dtype=np.int64),
        responses={int(k): v for k, v in payload["responses"].items()},
        pseudo_labels={int(k): int(v) for k, v in payload["pseudo_labels"].items()},
        pseudo_train=np.asarray(payload["pseudo_train"], dtype=np.int64),
        pseudo_val=np.asarray(payload["pseudo_val"], dtype=np.int64),
        unmatched=tuple(payload["unmatched"]),
        failed=tuple(payload["failed"]),
        label_agreement=float(payload["label_agreement"]),
    )


# ---------------------------------------------------------------------------
# confidence probing


@dataclass(frozen=True)
class ConfidenceProbe:
    node: int
    parsed: ParsedPrediction
    confidence: float | None
    raw: str


_PREDICTION_RE = re.compile(r'"prediction"\s*:\s*"([^"]*)"')
_CONFIDENCE_RE = re.compile(r'"confidence"\s*:\s*"?([0-9]*\.?[0-9]+)"?')


def probe_confidence(
    gateway: Gateway,
    graph: TextAttributedGraph,
    node: int,
    model_id: str = DEFAULT_MODEL_ID,
) -> ConfidenceProbe:
    """Ask for a {"prediction", "confidence"} dict and parse both fields.

    A missing or out-of-range confidence is treated as absent (None), never
    clamped or guessed.
    """
    catalog = load_catalog()
    content = catalog["confidence_request"].format(
        node_text=graph.texts[node],
        class_list=_render_class_list(graph.class_names, "raw_identifier"),
    )
    request = LlmRequest(
        model_id=model_id,
        messages=(Message("system", catalog["system"]), Message("user", content)),
        temperature=0.0,
        max_tokens=256,
    )
    raw = gateway.complete(request).response_text
    pred_match = _PREDICTION_RE.search(raw)
    if pred_match:
        inner = parse_prediction(f"['{pred_match.group(1)}']", graph.class_names)
        parsed = ParsedPrediction(class_index=inner.class_index, method=inner.method, raw=raw)
    else:
        parsed = parse_prediction(raw, graph.class_names)
    confidence: float | None = None
    conf_match = _CONFIDENCE_RE.search(raw)
    if conf_match:
        value = float(conf_match.group(1))
        if 0.0 <= value <= 1.0:
            confidence = value
    return ConfidenceProbe(node=node, parsed=parsed, confidence=confidence, raw=raw)
