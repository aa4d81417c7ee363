"""LLM-generated text augmentations and ensembles over feature sets.

Two augmentation families: a single request per node that elicits both a
pseudo label and an explanation (the explanation becoming extra text), and
a knowledge-entity request whose term/description pairs can be injected
into the original text or encoded as a separate feature block. Downstream,
one network is trained per feature set and the softmax probability matrices
are averaged.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import FeatureMatrix
from .errors import ShapeError
from .gnn import ModelConfig, TrainConfig, network_from_model, train
from .gnn.models import maybe_sparse
from .graph import DataSplit, TextAttributedGraph
from .llm import Gateway, LlmRequest, Message
from .prompts import (
    DEFAULT_MODEL_ID,
    CLASSIFY_MAX_TOKENS,
    ParsedPrediction,
    _render_class_list,
    load_catalog,
    parse_prediction,
)

__all__ = [
    "AUGMENTATION_KINDS",
    "Augmentation",
    "generate_tape",
    "generate_kea",
    "kea_inject",
    "pseudo_label_features",
    "EnsembleResult",
    "ensemble_predict",
    "save_augmentations",
    "load_augmentations",
    "missing_nodes",
]

log = logging.getLogger(__name__)

AUGMENTATION_KINDS = ("tape_explanation", "tape_pseudo_label", "kea_entities")

# Tokenizer-invisible separator: pure punctuation, so injecting an empty
# augmentation cannot disturb a bag-of-tokens encoding of the original.
INJECT_SEPARATOR = "\n\n---\n"


@dataclass(frozen=True)
class Augmentation:
    """One generated artifact attached to a node."""

    node: int
    kind: str
    text: str
    entities: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if self.kind not in AUGMENTATION_KINDS:
            raise ValueError(f"kind must be one of {AUGMENTATION_KINDS}")


def _strip_first_bracket(raw: str) -> str:
    start = raw.find("[")
    if start == -1:
        return raw.strip()
    end = raw.find("]", start + 1)
    if end == -1:
        return raw.strip()
    return (raw[:start] + raw[end + 1 :]).strip()


def generate_tape(
    gateway: Gateway,
    graph: TextAttributedGraph,
    node: int,
    model_id: str = DEFAULT_MODEL_ID,
) -> tuple[Augmentation, Augmentation, ParsedPrediction]:
    """One request per node yielding (explanation E, pseudo label P).

    The reply's bracketed answer is parsed like any prediction; the rest of
    the reply is kept as explanation text. An unmatched P is recorded as
    unmatched while E is still kept.
    """
    catalog = load_catalog()
    content = catalog["tape_request"].format(
        class_list=_render_class_list(graph.class_names, "raw_identifier"),
        node_text=graph.texts[node],
    )
    request = LlmRequest(
        model_id=model_id,
        messages=(Message("system", catalog["system"]), Message("user", content)),
        temperature=0.0,
        max_tokens=CLASSIFY_MAX_TOKENS,
    )
    raw = gateway.complete(request).response_text
    parsed = parse_prediction(raw, graph.class_names)
    explanation = Augmentation(node=node, kind="tape_explanation", text=_strip_first_bracket(raw))
    label_text = graph.class_names[parsed.class_index] if parsed.class_index is not None else ""
    pseudo = Augmentation(node=node, kind="tape_pseudo_label", text=label_text)
    return explanation, pseudo, parsed


def _parse_entity_payload(raw: str) -> list[tuple[str, str]] | None:
    """Accepts a JSON array of {term, description} objects, single-pair
    objects, or a term->description mapping; None when unparseable."""
    start, end = raw.find("["), raw.rfind("]")
    candidates = []
    if start != -1 and end > start:
        candidates.append(raw[start : end + 1])
    brace_start, brace_end = raw.find("{"), raw.rfind("}")
    if brace_start != -1 and brace_end > brace_start:
        candidates.append(raw[brace_start : brace_end + 1])
    for snippet in candidates:
        try:
            payload = json.loads(snippet)
        except json.JSONDecodeError:
            continue
        entities: list[tuple[str, str]] = []
        if isinstance(payload, dict):
            payload = [payload] if {"term", "description"} <= payload.keys() else [
                {"term": k, "description": v} for k, v in payload.items()
            ]
        if not isinstance(payload, list):
            continue
        ok = True
        for item in payload:
            if not isinstance(item, dict):
                ok = False
                break
            if {"term", "description"} <= item.keys():
                entities.append((str(item["term"]), str(item["description"])))
            elif len(item) == 1:
                ((term, desc),) = item.items()
                entities.append((str(term), str(desc)))
            else:
                ok = False
                break
        if ok:
            return entities
    return None


def generate_kea(
    gateway: Gateway,
    graph: TextAttributedGraph,
    node: int,
    model_id: str = DEFAULT_MODEL_ID,
) -> Augmentation:
    """Knowledge entities for one node's text.

    An unparseable reply triggers exactly one retry with a stricter format
    reminder appended; if that also fails the augmentation carries an empty
    entity list (and a warning is logged) rather than raising.
    """
    catalog = load_catalog()
    content = catalog["kea_request"].format(node_text=graph.texts[node])
    messages = (Message("system", catalog["system"]), Message("user", content))
    request = LlmRequest(model_id=model_id, messages=messages, temperature=0.0, max_tokens=CLASSIFY_MAX_TOKENS)
    raw = gateway.complete(request).response_text
    entities = _parse_entity_payload(raw)
    if entities is None:
        retry_messages = messages + (
            Message("assistant", raw),
            Message("user", catalog["kea_retry_reminder"]),
        )
        retry = dataclasses.replace(request, messages=retry_messages)
        raw = gateway.complete(retry).response_text
        entities = _parse_entity_payload(raw)
        if entities is None:
            log.warning("node %d: entity reply unparseable after retry; keeping empty list", node)
            entities = []
    text = "\n".join(f"{term}: {desc}" for term, desc in entities)
    return Augmentation(node=node, kind="kea_entities", text=text, entities=tuple(entities))


def kea_inject(original: str, augmentation: Augmentation) -> str:
    """Inline entity descriptions after the original text.

    With zero entities the output is the original plus the bare separator,
    whose characters no length-2+ alphanumeric tokenizer can see.
    """
    if augmentation.kind != "kea_entities":
        raise ValueError("kea_inject expects a kea_entities augmentation")
    return original + INJECT_SEPARATOR + augmentation.text


def pseudo_label_features(
    class_indices: Sequence[int | None],
    num_classes: int,
) -> FeatureMatrix:
    """One-hot block for per-node pseudo labels; None rows stay zero."""
    values = np.zeros((len(class_indices), num_classes), dtype=np.float64)
    for row, idx in enumerate(class_indices):
        if idx is not None:
            if not 0 <= idx < num_classes:
                raise ValueError(f"pseudo label {idx} outside [0, {num_classes})")
            values[row, idx] = 1.0
    return FeatureMatrix(values=values, provenance="pseudo_label_onehot")


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    accuracy: float
    val_accuracy: float
    predictions: np.ndarray
    provenances: tuple[str, ...]


def ensemble_predict(
    feature_sets: Sequence[FeatureMatrix],
    graph: TextAttributedGraph,
    split: DataSplit,
    config: ModelConfig,
    tcfg: TrainConfig,
    labels: np.ndarray | None = None,
) -> EnsembleResult:
    """Train one network per feature set and average their probabilities.

    Every member sees the same config and seed, so a single feature set
    reduces exactly to plain training. Ties in the averaged probabilities
    resolve to the lowest class index.
    """
    if not feature_sets:
        raise ValueError("need at least one feature set")
    rows = {f.node_count for f in feature_sets}
    if rows != {graph.node_count}:
        raise ShapeError(f"feature sets must have {graph.node_count} rows, got {sorted(rows)}")
    y = graph.labels if labels is None else np.asarray(labels, dtype=np.int64)
    total = np.zeros((graph.node_count, graph.num_classes))
    for features in feature_sets:
        model = train(config, tcfg, features, graph, split, labels=labels)
        net = network_from_model(model, graph)
        total += net.forward(maybe_sparse(features.values), train_mode=False)
    probs = total / len(feature_sets)
    predictions = probs.argmax(axis=1)
    accuracy = float(np.mean(predictions[split.test] == y[split.test]))
    val_accuracy = float(np.mean(predictions[split.validation] == y[split.validation]))
    return EnsembleResult(
        accuracy=accuracy,
        val_accuracy=val_accuracy,
        predictions=predictions,
        provenances=tuple(f.provenance for f in feature_sets),
    )


# ---------------------------------------------------------------------------
# augmentation store


def save_augmentations(path: str | Path, augmentations: Sequence[Augmentation]) -> None:
    """Append records to a JSON-lines store (created if absent)."""
    path = Path(path)
    with path.open("a", encoding="utf-8") as fh:
        for aug in augmentations:
            fh.write(
                json.dumps(
                    {
                        "node_id": aug.node,
                        "kind": aug.kind,
                        "text": aug.text,
                        "entities": list(aug.entities) if aug.entities is not None else None,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_augmentations(path: str | Path) -> dict[tuple[int, str], Augmentation]:
    """Load a store keyed by (node, kind); later records win."""
    path = Path(path)
    out: dict[tuple[int, str], Augmentation] = {}
    if not path.exists():
        return out
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            entities = rec.get("entities")
            aug = Augmentation(
                node=int(rec["node_id"]),
                kind=rec["kind"],
                text=rec["text"],
                entities=tuple((str(t), str(d)) for t, d in entities) if entities is not None else None,
            )
            out[(aug.node, aug.kind)] = aug
    return out


def missing_nodes(
    store: dict[tuple[int, str], Augmentation],
    nodes: Sequence[int],
    kind: str,
) -> list[int]:
    """Nodes still lacking an augmentation of ``kind``; supports resuming."""
    return [int(n) for n in nodes if (int(n), kind) not in store]
