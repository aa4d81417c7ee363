"""Prompt construction, answer parsing, and the direct-prediction pipeline.

Prompt wording is versioned in ``prompt_catalog.json`` next to this module;
code assembles catalog entries and never hard-codes instruction text. The
answer parser degrades through four stages: bracketed exact match, edit
distance, first mention, unmatched.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import ProviderError, TransportError
from .graph import DataSplit, EgoSample, TextAttributedGraph, sample_ego
from .llm import Gateway, LlmRequest, Message
from .rng import derive_seed, generator

__all__ = [
    "MODES",
    "LABEL_DESIGNS",
    "PromptStrategy",
    "load_catalog",
    "build_prompt",
    "chat_messages",
    "classification_request",
    "levenshtein",
    "ParsedPrediction",
    "parse_prediction",
    "neighbor_records",
    "summary_requests",
    "summarize_neighbors",
    "ClassificationOutcome",
    "ClassificationResult",
    "classify_nodes",
    "labeled_pairs",
    "scan_leakage",
]

log = logging.getLogger(__name__)

MODES = (
    "zero_shot",
    "few_shot",
    "zero_shot_cot",
    "few_shot_cot",
    "zero_shot_structure",
    "few_shot_structure",
)
LABEL_DESIGNS = ("raw_identifier", "natural_language", "corpus_shorthand")

DEFAULT_MODEL_ID = "default-chat"
CLASSIFY_MAX_TOKENS = 512
SUMMARY_MAX_TOKENS = 256
SUMMARY_NEIGHBOR_CAP = 5  # neighbor attributes per summarization request
DEFAULT_CONTEXT_CHARS = 12000


@dataclass(frozen=True)
class PromptStrategy:
    """How to phrase a classification request.

    ``few_shot_k`` must be 0 for zero-shot modes and 1..2 for few-shot
    modes. ``corpus_phrase`` supplies the shorthand wording when
    ``label_design`` is ``corpus_shorthand``.
    """

    mode: str
    few_shot_k: int = 0
    label_design: str = "raw_identifier"
    corpus_phrase: str | None = None
    context_chars: int = DEFAULT_CONTEXT_CHARS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.label_design not in LABEL_DESIGNS:
            raise ValueError(f"label_design must be one of {LABEL_DESIGNS}")
        if not 0 <= self.few_shot_k <= 2:
            raise ValueError("few_shot_k must lie in [0, 2]")
        if self.is_few_shot != (self.few_shot_k > 0):
            raise ValueError("few_shot_k must be 0 exactly for zero-shot modes")
        if self.label_design == "corpus_shorthand" and not self.corpus_phrase:
            raise ValueError("corpus_shorthand label design needs a corpus_phrase")
        if self.context_chars < 200:
            raise ValueError("context_chars is too small to hold any prompt")

    @property
    def is_few_shot(self) -> bool:
        return self.mode.startswith("few_shot")

    @property
    def is_cot(self) -> bool:
        return self.mode.endswith("_cot")

    @property
    def is_structure(self) -> bool:
        return self.mode.endswith("_structure")


@lru_cache(maxsize=1)
def load_catalog() -> dict:
    text = resources.files("tagpipes").joinpath("prompt_catalog.json").read_text("utf-8")
    catalog = json.loads(text)
    if "version" not in catalog:
        raise ValueError("prompt catalog missing version field")
    return catalog


def _render_class_list(class_names: Sequence[str], design: str) -> str:
    if design == "raw_identifier":
        inner = ", ".join(f"'{name}'" for name in class_names)
        return f"[{inner}]"
    # natural_language: prose enumeration
    names = list(class_names)
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + ", or " + names[-1]


def build_prompt(
    graph: TextAttributedGraph,
    node: int,
    strategy: PromptStrategy,
    split: DataSplit | None = None,
    neighbor_summary: str | None = None,
    seed: int = 0,
) -> str:
    """Assemble the classification prompt for one node.

    Sections appear in a fixed order: task instruction, few-shot exemplars,
    chain-of-thought instruction, neighborhood summary, target text, closing
    answer-format instruction. Only the target text is ever truncated to fit
    ``strategy.context_chars``; a truncation is logged, never silent.
    """
    if not 0 <= node < graph.node_count:
        raise ValueError(f"node {node} outside [0, {graph.node_count})")
    catalog = load_catalog()
    parts: list[str] = []
    if strategy.label_design == "corpus_shorthand":
        parts.append(catalog["task_corpus_shorthand"].format(corpus_phrase=strategy.corpus_phrase))
    else:
        class_list = _render_class_list(graph.class_names, strategy.label_design)
        parts.append(catalog[f"task_{strategy.label_design}"].format(class_list=class_list))
    if strategy.is_few_shot:
        if split is None:
            raise ValueError("few-shot prompts need a split to draw exemplars from")
        pool = split.train[split.train != node]
        if pool.size < strategy.few_shot_k:
            raise ValueError(f"train split too small for {strategy.few_shot_k} exemplars")
        rng = generator(seed)
        exemplars = rng.choice(pool, size=strategy.few_shot_k, replace=False)
        for index, ex in enumerate(exemplars, start=1):
            ex = int(ex)
            parts.append(
                catalog["example_block"].format(
                    index=index,
                    text=graph.texts[ex],
                    label=graph.class_names[graph.labels[ex]],
                )
            )
    if strategy.is_cot:
        parts.append(catalog["cot_instruction"])
    if strategy.is_structure:
        if neighbor_summary is None:
            raise ValueError("structure modes need a neighbor_summary")
        parts.append(catalog["summary_section"].format(summary=neighbor_summary))

    node_text = graph.texts[node]
    skeleton = parts + [catalog["target_block"].format(node_text=""), catalog["closing"]]
    overhead = len("\n\n".join(skeleton))
    budget = strategy.context_chars - overhead
    if len(node_text) > budget:
        kept = max(0, budget)
        log.warning(
            "node %d text truncated from %d to %d chars to fit the context budget",
            node, len(node_text), kept,
        )
        node_text = node_text[:kept]
    parts.append(catalog["target_block"].format(node_text=node_text))
    parts.append(catalog["closing"])
    return "\n\n".join(parts)


def chat_messages(prompt: str) -> tuple[Message, ...]:
    """Standard (system, user) message pair for a built prompt."""
    return (Message("system", load_catalog()["system"]), Message("user", prompt))


def classification_request(prompt: str, model_id: str = DEFAULT_MODEL_ID) -> LlmRequest:
    return LlmRequest(
        model_id=model_id,
        messages=chat_messages(prompt),
        temperature=0.0,
        max_tokens=CLASSIFY_MAX_TOKENS,
    )


# ---------------------------------------------------------------------------
# answer parsing


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


@dataclass(frozen=True)
class ParsedPrediction:
    """Outcome of parsing one model answer.

    ``class_index`` is None exactly when ``method`` is ``unmatched``;
    unmatched answers count as incorrect, they are not dropped.
    """

    class_index: int | None
    method: str  # exact | edit_distance | first_mention | unmatched
    raw: str


def parse_prediction(raw: str, class_names: Sequence[str]) -> ParsedPrediction:
    """Resolve a free-form answer to a class index.

    Stages: (1) take the first ``[...]`` substring, strip quotes and
    whitespace, match case-insensitively; (2) if no exact match, minimum
    edit distance with ties to the lowest class index; (3) if there was no
    bracketed substring, earliest case-insensitive mention of any class
    name; (4) unmatched.
    """
    if not class_names:
        raise ValueError("class_names must be non-empty")
    lower_names = [n.lower() for n in class_names]
    extracted = None
    start = raw.find("[")
    if start != -1:
        end = raw.find("]", start + 1)
        if end != -1:
            extracted = raw[start + 1 : end].strip().strip("'\"").strip()
    if extracted:
        low = extracted.lower()
        for idx, name in enumerate(lower_names):
            if low == name:
                return ParsedPrediction(idx, "exact", raw)
        distances = [levenshtein(low, name) for name in lower_names]
        best = min(range(len(distances)), key=distances.__getitem__)
        return ParsedPrediction(best, "edit_distance", raw)
    lower_raw = raw.lower()
    best_pos: int | None = None
    best_idx: int | None = None
    for idx, name in enumerate(lower_names):
        pos = lower_raw.find(name)
        if pos != -1 and (best_pos is None or pos < best_pos):
            best_pos, best_idx = pos, idx
    if best_idx is not None:
        return ParsedPrediction(best_idx, "first_mention", raw)
    return ParsedPrediction(None, "unmatched", raw)


# ---------------------------------------------------------------------------
# neighborhood summarization


def neighbor_records(
    graph: TextAttributedGraph,
    ego: EgoSample,
    include_labels: bool = False,
    split: DataSplit | None = None,
) -> list[dict]:
    """Neighbor attribute dictionaries, hop-1 before hop-2.

    Labels attach only to neighbors inside ``split.train``; everything else
    is presented unlabeled so ground truth cannot leak into a prompt.
    """
    if include_labels and split is None:
        raise ValueError("include_labels needs a split to identify train nodes")
    train = set(int(i) for i in split.train) if include_labels else set()
    records = []
    for n in list(ego.hop1) + list(ego.hop2):
        rec: dict = {"attribute": graph.texts[n]}
        if include_labels and n in train:
            rec["label"] = graph.class_names[graph.labels[n]]
        records.append(rec)
    return records


def summary_requests(
    graph: TextAttributedGraph,
    ego: EgoSample,
    include_labels: bool = False,
    split: DataSplit | None = None,
    model_id: str = DEFAULT_MODEL_ID,
) -> list[LlmRequest]:
    """Summarization requests over the sampled ego, ≤5 neighbors apiece."""
    records = neighbor_records(graph, ego, include_labels, split)
    catalog = load_catalog()
    requests = []
    for i in range(0, len(records), SUMMARY_NEIGHBOR_CAP):
        chunk = records[i : i + SUMMARY_NEIGHBOR_CAP]
        label_clause = catalog["neighbor_summary_label_clause"] if any("label" in r for r in chunk) else ""
        body = "\n".join(json.dumps(r, ensure_ascii=False) for r in chunk)
        content = catalog["neighbor_summary_request"].format(
            label_clause=label_clause, neighbor_records=body
        )
        requests.append(
            LlmRequest(
                model_id=model_id,
                messages=(Message("system", catalog["system"]), Message("user", content)),
                temperature=0.0,
                max_tokens=SUMMARY_MAX_TOKENS,
            )
        )
    return requests


def summarize_neighbors(
    gateway: Gateway,
    graph: TextAttributedGraph,
    ego: EgoSample,
    include_labels: bool = False,
    split: DataSplit | None = None,
    model_id: str = DEFAULT_MODEL_ID,
) -> str:
    """Summary text for a sampled neighborhood; empty ego makes no calls."""
    requests = summary_requests(graph, ego, include_labels, split, model_id)
    if not requests:
        return ""
    return "\n".join(gateway.complete(req).response_text for req in requests)


# ---------------------------------------------------------------------------
# direct prediction over node sets


@dataclass(frozen=True)
class ClassificationOutcome:
    node: int
    parsed: ParsedPrediction | None
    error: str | None
    correct: bool | None


@dataclass(frozen=True)
class ClassificationResult:
    outcomes: tuple[ClassificationOutcome, ...]
    accuracy: float | None
    evaluated: int
    failed: int

    def predictions(self) -> dict[int, int | None]:
        return {
            o.node: (o.parsed.class_index if o.parsed is not None else None)
            for o in self.outcomes
        }


def classify_nodes(
    gateway: Gateway,
    graph: TextAttributedGraph,
    nodes: Sequence[int],
    strategy: PromptStrategy,
    split: DataSplit | None = None,
    seed: int = 0,
    model_id: str = DEFAULT_MODEL_ID,
    per_call_cap: int = 5,
    workers: int = 1,
) -> ClassificationResult:
    """Prompt-and-parse classification of ``nodes``.

    Per node, a structure-mode run samples the ego once (seed derived from
    the run seed and the node id, so ordering cannot matter), fetches the
    neighborhood summary, builds the prompt, and parses the reply. Provider
    and transport failures mark the node failed and are excluded from the
    accuracy denominator; unmatched parses count as incorrect. Results keep
    input order even when ``workers`` > 1.
    """
    nodes = [int(n) for n in nodes]
    if not nodes:
        raise ValueError("nodes must be non-empty")

    def one(node: int) -> ClassificationOutcome:
        try:
            neighbor_summary = None
            if strategy.is_structure:
                ego = sample_ego(graph, node, per_call_cap, seed=derive_seed(seed, node, 0))
                neighbor_summary = summarize_neighbors(
                    gateway, graph, ego,
                    include_labels=split is not None, split=split, model_id=model_id,
                )
            prompt = build_prompt(
                graph, node, strategy, split, neighbor_summary, seed=derive_seed(seed, node, 1)
            )
            reply = gateway.complete(classification_request(prompt, model_id)).response_text
        except (ProviderError, TransportError) as exc:
            return ClassificationOutcome(node=node, parsed=None, error=str(exc), correct=None)
        parsed = parse_prediction(reply, graph.class_names)
        correct = parsed.class_index == int(graph.labels[node])
        return ClassificationOutcome(node=node, parsed=parsed, error=None, correct=correct)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, nodes))
    else:
        outcomes = [one(n) for n in nodes]
    failed = sum(1 for o in outcomes if o.error is not None)
    evaluated = len(outcomes) - failed
    accuracy = None
    if evaluated:
        accuracy = sum(1 for o in outcomes if o.correct) / evaluated
    return ClassificationResult(
        outcomes=tuple(outcomes), accuracy=accuracy, evaluated=evaluated, failed=failed
    )


# ---------------------------------------------------------------------------
# leakage scanning


_EXAMPLE_PAIR_RE = re.compile(r"Text: (.*?)\nLabel: \['(.*?)'\]", re.S)


def labeled_pairs(prompt: str) -> list[tuple[str, str]]:
    """(text, label) pairs the prompt presents as labeled data."""
    pairs = [(m.group(1), m.group(2)) for m in _EXAMPLE_PAIR_RE.finditer(prompt)]
    for line in prompt.splitlines():
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(rec, dict) and "attribute" in rec and "label" in rec:
            pairs.append((str(rec["attribute"]), str(rec["label"])))
    return pairs


def scan_leakage(
    prompt: str,
    graph: TextAttributedGraph,
    split: DataSplit | None,
    target: int,
) -> list[str]:
    """Ground-truth leaks in one prompt; empty list means clean.

    A leak is a labeled (text, label) pair whose text is some node's text,
    whose label equals that node's true class, and where the node is the
    target or outside the train split.
    """
    train = set(int(i) for i in split.train) if split is not None else set()
    by_text: dict[str, list[int]] = {}
    for i, text in enumerate(graph.texts):
        by_text.setdefault(text, []).append(i)
    violations = []
    for text, label in labeled_pairs(prompt):
        for node in by_text.get(text, []):
            if graph.class_names[graph.labels[node]] != label:
                continue
            if node == target:
                violations.append(f"target node {node} appears with its ground-truth label")
            elif node not in train:
                violations.append(f"non-train node {node} appears with its ground-truth label")
    return violations
