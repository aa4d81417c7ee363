"""Deterministic synthetic text-attributed graphs.

Raw corpora of the usual citation benchmarks cannot be redistributed with
this repository, so experiments and tests run on generated stand-ins that
match the originals' shape: class-conditional token distributions with
deliberate cross-class confusion (capping how well text alone can do) and
homophilous edges (what graph aggregation exploits). The difficulty knobs
are calibrated so the stock pipelines land near the reference accuracies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import TextAttributedGraph, build_graph
from .rng import generator

__all__ = ["CorpusSpec", "make_corpus", "cora_like", "pubmed_like", "small_demo"]

_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"
_CODAS = ["", "", "", "n", "r", "s", "t"]

# connective filler shared by every class; realistic noise for tokenizers
_STOPWORDS = (
    "the of and to in we for with that this from are is on by an be as it "
    "which can our results show method using based new between two more "
    "model data set approach problem paper propose study present"
).split()


def _make_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < count:
        n_syll = int(rng.integers(2, 5))
        parts = []
        for _ in range(n_syll):
            parts.append(_CONSONANTS[rng.integers(len(_CONSONANTS))])
            parts.append(_VOWELS[rng.integers(len(_VOWELS))])
        word = "".join(parts) + _CODAS[rng.integers(len(_CODAS))]
        if word in taken or len(word) < 4:
            continue
        taken.add(word)
        words.append(word)
    return words


def _zipf_probs(count: int, s: float = 1.0) -> np.ndarray:
    weights = 1.0 / np.arange(1, count + 1) ** s
    return weights / weights.sum()


@dataclass(frozen=True)
class CorpusSpec:
    """Generation knobs for one synthetic corpus.

    Token sources mix per document: an own-class share drawn around
    ``own_topic_frac``, ``confusion_frac`` from the two adjacent classes'
    vocabularies (a ring, so every class has confusable partners on both
    sides), and the rest from a shared pool plus stopwords.
    ``purity_spread`` widens the per-document own-class share to
    ``own_topic_frac * [1 - spread, 1 + spread]``; large spreads leave many
    documents nearly uninformative on their own, which caps what any
    text-only classifier can do while homophilous neighborhoods (edges stay
    within a class with probability ``homophily``) still carry the signal.
    """

    name: str
    class_names: tuple[str, ...]
    node_count: int
    edge_count: int
    class_proportions: tuple[float, ...] | None = None
    class_vocab_size: int = 170
    common_vocab_size: int = 400
    doc_length: tuple[int, int] = (30, 90)
    own_topic_frac: float = 0.30
    confusion_frac: float = 0.22
    purity_spread: float = 0.8
    homophily: float = 0.83
    hetero_ring_bias: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.node_count < len(self.class_names):
            raise ValueError("need at least one node per class")
        if self.class_proportions is not None and len(self.class_proportions) != len(self.class_names):
            raise ValueError("class_proportions must match class_names")
        if not 0 <= self.own_topic_frac + self.confusion_frac <= 1:
            raise ValueError("token source fractions must sum to at most 1")
        if not 0 <= self.purity_spread <= 1:
            raise ValueError("purity_spread must lie in [0, 1]")
        if not 0 <= self.homophily <= 1:
            raise ValueError("homophily must lie in [0, 1]")
        if not 0 <= self.hetero_ring_bias <= 1:
            raise ValueError("hetero_ring_bias must lie in [0, 1]")


def _class_counts(spec: CorpusSpec) -> np.ndarray:
    c = len(spec.class_names)
    props = np.asarray(spec.class_proportions if spec.class_proportions else [1.0 / c] * c)
    props = props / props.sum()
    counts = np.floor(props * spec.node_count).astype(np.int64)
    counts = np.maximum(counts, 1)
    # hand leftovers to the largest remainders
    leftovers = spec.node_count - counts.sum()
    order = np.argsort(-(props * spec.node_count - np.floor(props * spec.node_count)))
    for i in range(abs(int(leftovers))):
        counts[order[i % c]] += 1 if leftovers > 0 else -1
    return counts


def make_corpus(spec: CorpusSpec) -> TextAttributedGraph:
    """Generate the graph for ``spec``; fully deterministic in ``spec.seed``."""
    rng = generator(spec.seed)
    c = len(spec.class_names)
    taken: set[str] = set(_STOPWORDS)
    class_words = [_make_words(rng, spec.class_vocab_size, taken) for _ in range(c)]
    common_words = _make_words(rng, spec.common_vocab_size, taken)
    class_probs = _zipf_probs(spec.class_vocab_size)
    common_probs = _zipf_probs(spec.common_vocab_size)
    stop_probs = _zipf_probs(len(_STOPWORDS), s=0.7)

    counts = _class_counts(spec)
    labels = rng.permutation(np.repeat(np.arange(c), counts))

    lo, hi = spec.doc_length
    texts: list[str] = []
    for node in range(spec.node_count):
        label = int(labels[node])
        length = int(rng.integers(lo, hi + 1))
        # per-doc own-class share; wide spread leaves some docs near-mute
        own_share = spec.own_topic_frac * (
            1.0 + spec.purity_spread * (2.0 * rng.random() - 1.0)
        )
        u = rng.random(length)
        n_own = int(np.sum(u < own_share))
        n_conf = int(np.sum(u < own_share + spec.confusion_frac)) - n_own
        n_rest = length - n_own - n_conf
        n_common = n_rest // 2
        n_stop = n_rest - n_common
        tokens = []
        if n_own:
            idx = rng.choice(spec.class_vocab_size, size=n_own, p=class_probs)
            tokens += [class_words[label][i] for i in idx]
        if n_conf:
            # contamination direction is a per-doc coin flip: one document
            # looks like class k mixed with k+1 OR with k-1, never both, so
            # text alone cannot tell a contaminated k from a contaminated
            # neighbor while a homophilous neighborhood still averages out
            partner = (label + (1 if rng.random() < 0.5 else c - 1)) % c
            idx = rng.choice(spec.class_vocab_size, size=n_conf, p=class_probs)
            tokens += [class_words[partner][i] for i in idx]
        if n_common:
            idx = rng.choice(spec.common_vocab_size, size=n_common, p=common_probs)
            tokens += [common_words[i] for i in idx]
        if n_stop:
            idx = rng.choice(len(_STOPWORDS), size=n_stop, p=stop_probs)
            tokens += [_STOPWORDS[i] for i in idx]
        order = rng.permutation(len(tokens))
        texts.append(" ".join(tokens[i] for i in order))

    members = [np.flatnonzero(labels == k) for k in range(c)]
    edges: set[tuple[int, int]] = set()
    attempts = 0
    max_attempts = 40 * spec.edge_count
    while len(edges) < spec.edge_count and attempts < max_attempts:
        attempts += 1
        u = int(rng.integers(spec.node_count))
        cu = int(labels[u])
        if rng.random() < spec.homophily:
            pool = members[cu]
        else:
            # cross-class edges prefer the adjacent (confusable) classes,
            # the way related fields cite each other
            if rng.random() < spec.hetero_ring_bias and c > 2:
                other = (cu + (1 if rng.random() < 0.5 else c - 1)) % c
            else:
                other = int(rng.integers(c - 1))
                other = other if other < cu else other + 1
            pool = members[other]
        v = int(pool[rng.integers(pool.size)])
        if u == v:
            continue
        pair = (u, v) if u < v else (v, u)
        edges.add(pair)

    return build_graph(texts, labels, spec.class_names, sorted(edges))


def cora_like(seed: int = 0) -> CorpusSpec:
    """Seven-class machine-learning citation corpus at its familiar scale."""
    return CorpusSpec(
        name="cora_synth",
        class_names=(
            "Rule Learning",
            "Neural Networks",
            "Case Based",
            "Genetic Algorithms",
            "Theory",
            "Reinforcement Learning",
            "Probabilistic Methods",
        ),
        node_count=2708,
        edge_count=5429,
        class_proportions=(0.066, 0.302, 0.110, 0.154, 0.130, 0.080, 0.158),
        class_vocab_size=380,
        common_vocab_size=400,
        doc_length=(18, 55),
        own_topic_frac=0.30,
        confusion_frac=0.18,
        purity_spread=0.85,
        homophily=0.66,
        hetero_ring_bias=0.9,
        seed=seed,
    )


def pubmed_like(seed: int = 0) -> CorpusSpec:
    """Three-class biomedical corpus at desk scale."""
    return CorpusSpec(
        name="pubmed_synth",
        class_names=(
            "Diabetes Mellitus, Experimental",
            "Diabetes Mellitus Type 1",
            "Diabetes Mellitus Type 2",
        ),
        node_count=4000,
        edge_count=9000,
        class_proportions=(0.205, 0.395, 0.400),
        class_vocab_size=420,
        common_vocab_size=360,
        doc_length=(18, 55),
        own_topic_frac=0.31,
        confusion_frac=0.21,
        purity_spread=0.90,
        homophily=0.70,
        seed=seed,
    )


def small_demo(
    seed: int = 0,
    node_count: int = 120,
    class_names: Sequence[str] = ("Alpha Systems", "Beta Methods", "Gamma Theory"),
) -> CorpusSpec:
    """Tiny corpus for unit tests and CLI demos."""
    return CorpusSpec(
        name="demo",
        class_names=tuple(class_names),
        node_count=node_count,
        edge_count=node_count * 2,
        class_vocab_size=40,
        common_vocab_size=60,
        doc_length=(12, 30),
        own_topic_frac=0.45,
        confusion_frac=0.10,
        homophily=0.85,
        seed=seed,
    )
