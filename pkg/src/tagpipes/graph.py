"""Text-attributed graphs: container, dataset IO, splits, ego sampling.

A graph couples raw node text with an undirected adjacency structure and
integer class labels. Adjacency is kept in CSR form (row pointers + sorted
column indices) with both directions stored, no self-loops, no duplicates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    FormatError,
    InsufficientClassError,
    InsufficientNodesError,
    ValidationError,
)
from .rng import generator

__all__ = [
    "TextAttributedGraph",
    "DataSplit",
    "EgoSample",
    "build_graph",
    "load_graph",
    "write_graph",
    "make_low_label_split",
    "make_high_label_split",
    "sample_ego",
]

FORMATS = ("json", "csv-pair")


@dataclass(frozen=True)
class TextAttributedGraph:
    """Undirected graph whose nodes carry raw text and a class label.

    ``directed_source`` records whether the input edge list had at least one
    pair without its reverse; the stored adjacency is symmetrized either way.
    """

    texts: tuple[str, ...]
    labels: np.ndarray
    class_names: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray
    directed_source: bool = False

    @property
    def node_count(self) -> int:
        return len(self.texts)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges (each stored in both directions)."""
        return int(self.indices.size) // 2

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def degree(self, node: int) -> int:
        return int(self.indptr[node + 1] - self.indptr[node])

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency as a scipy CSR matrix."""
        n = self.node_count
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def validate(self) -> None:
        n = self.node_count
        if len(self.labels) != n:
            raise ValidationError(f"{len(self.labels)} labels for {n} nodes")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            bad = int(np.argmax((self.labels < 0) | (self.labels >= self.num_classes)))
            raise ValidationError(
                f"label {int(self.labels[bad])} of node {bad} outside [0, {self.num_classes})"
            )
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise ValidationError("malformed CSR row pointers")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= n:
                raise ValidationError("edge endpoint outside node range")
            adj = self.adjacency()
            if (adj != adj.T).nnz:
                raise ValidationError("adjacency is not symmetric")
            if adj.diagonal().any():
                raise ValidationError("stored adjacency contains self-loops")


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train/validation/test node index sets."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def validate(self, graph: TextAttributedGraph) -> None:
        n = graph.node_count
        parts = {"train": self.train, "validation": self.validation, "test": self.test}
        seen: set[int] = set()
        for name, part in parts.items():
            arr = np.asarray(part)
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValidationError(f"{name} split references node outside [0, {n})")
            ids = set(int(i) for i in arr)
            if len(ids) != arr.size:
                raise ValidationError(f"{name} split contains duplicates")
            if ids & seen:
                raise ValidationError(f"{name} split overlaps another split")
            seen |= ids


@dataclass(frozen=True)
class EgoSample:
    """Sampled ≤2-hop neighborhood around a center node.

    ``hop1``/``hop2`` each hold at most the per-hop cap, so the total is
    bounded by twice the cap used at sampling time.
    """

    center: int
    hop1: tuple[int, ...]
    hop2: tuple[int, ...]
    sampling_seed: int


def _edges_to_csr(
    n: int, edges: Iterable[tuple[int, int]]
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Symmetrize, dedupe, and drop self-loops.

    Returns (indptr, indices, directed_source) where the flag marks inputs
    containing a pair whose reverse was absent.
    """
    src: list[int] = []
    dst: list[int] = []
    for a, b in edges:
        if a == b:
            continue  # self-loops are never stored
        src.append(a)
        dst.append(b)
    if not src:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), False
    s = np.asarray(src, dtype=np.int64)
    d = np.asarray(dst, dtype=np.int64)
    if s.min() < 0 or d.min() < 0 or s.max() >= n or d.max() >= n:
        raise ValidationError("edge endpoint outside node range")
    pairs = set(zip(src, dst))
    directed = any((b, a) not in pairs for a, b in pairs)
    rows = np.concatenate([s, d])
    cols = np.concatenate([d, s])
    coo = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj = coo.tocsr()
    adj.data[:] = 1.0  # drop duplicate multiplicity
    adj.sort_indices()
    return adj.indptr.astype(np.int64), adj.indices.astype(np.int64), directed


def build_graph(
    texts: Sequence[str],
    labels: Sequence[int],
    class_names: Sequence[str],
    edges: Iterable[tuple[int, int]],
) -> TextAttributedGraph:
    """Assemble and validate a graph from parts (edges given as pairs)."""
    n = len(texts)
    if len(labels) != n:
        raise ValidationError(f"{len(labels)} labels for {n} nodes")
    indptr, indices, directed = _edges_to_csr(n, edges)
    graph = TextAttributedGraph(
        texts=tuple(str(t) for t in texts),
        labels=np.asarray(labels, dtype=np.int64),
        class_names=tuple(str(c) for c in class_names),
        indptr=indptr,
        indices=indices,
        directed_source=directed,
    )
    graph.validate()
    return graph


# ---------------------------------------------------------------------------
# dataset IO


def _load_json(path: Path) -> TextAttributedGraph:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    for key in ("class_names", "nodes", "edges"):
        if key not in payload:
            raise FormatError(f"missing top-level key {key!r}", path=str(path))
    nodes = payload["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise FormatError("'nodes' must be a non-empty list", path=str(path))
    n = len(nodes)
    texts: list[str] = [""] * n
    labels = np.zeros(n, dtype=np.int64)
    seen_ids = np.zeros(n, dtype=bool)
    for pos, rec in enumerate(nodes):
        if not isinstance(rec, dict) or not {"id", "text", "label"} <= rec.keys():
            raise FormatError(f"node record {pos} needs id/text/label fields", path=str(path))
        try:
            nid = int(rec["id"])
            lab = int(rec["label"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"node record {pos}: non-integer id or label", path=str(path)) from exc
        if not 0 <= nid < n or seen_ids[nid]:
            raise ValidationError(f"node ids must be a permutation of 0..{n - 1} (record {pos})")
        seen_ids[nid] = True
        texts[nid] = str(rec["text"])
        labels[nid] = lab
    edges = []
    for pos, pair in enumerate(payload["edges"]):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise FormatError(f"edge record {pos} must be a [src, dst] pair", path=str(path))
        edges.append((int(pair[0]), int(pair[1])))
    return build_graph(texts, labels, payload["class_names"], edges)


def _load_csv_pair(path: Path) -> TextAttributedGraph:
    nodes_path = path / "nodes.csv"
    edges_path = path / "edges.csv"
    classes_path = path / "classes.txt"
    for p in (nodes_path, edges_path, classes_path):
        if not p.exists():
            raise FormatError(f"missing {p.name} in csv-pair directory", path=str(path))
    class_names = [ln for ln in classes_path.read_text(encoding="utf-8").splitlines() if ln]
    ids: list[int] = []
    texts: list[str] = []
    labels: list[int] = []
    with nodes_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "label", "text"]:
            raise FormatError(
                f"nodes.csv header must be id,label,text (got {reader.fieldnames})",
                path=str(nodes_path), line=1,
            )
        for rec in reader:
            line = reader.line_num
            try:
                ids.append(int(rec["id"]))
                labels.append(int(rec["label"]))
            except (TypeError, ValueError) as exc:
                raise FormatError("non-integer id or label", path=str(nodes_path), line=line) from exc
            texts.append(rec["text"] if rec["text"] is not None else "")
    n = len(ids)
    if not n:
        raise FormatError("nodes.csv has no data rows", path=str(nodes_path))
    if sorted(ids) != list(range(n)):
        raise ValidationError(f"node ids must be a permutation of 0..{n - 1}")
    order = np.argsort(np.asarray(ids))
    texts_arr = [texts[i] for i in order]
    labels_arr = [labels[i] for i in order]
    edges = []
    with edges_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["src", "dst"]:
            raise FormatError(
                f"edges.csv header must be src,dst (got {reader.fieldnames})",
                path=str(edges_path), line=1,
            )
        for rec in reader:
            try:
                edges.append((int(rec["src"]), int(rec["dst"])))
            except (TypeError, ValueError) as exc:
                raise FormatError("non-integer edge endpoint", path=str(edges_path), line=reader.line_num) from exc
    return build_graph(texts_arr, labels_arr, class_names, edges)


def load_graph(path: str | Path, format: str = "json") -> TextAttributedGraph:
    """Load a dataset file (``json``) or directory (``csv-pair``)."""
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    return _load_json(path) if format == "json" else _load_csv_pair(path)


def write_graph(graph: TextAttributedGraph, path: str | Path, format: str = "json") -> None:
    """Write a graph in either dataset format; inverse of :func:`load_graph`."""
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    # both directions written out, so a reload sees a symmetric edge list
    adj = graph.adjacency().tocoo()
    pairs = [(int(r), int(c)) for r, c in zip(adj.row, adj.col)]
    if format == "json":
        payload = {
            "class_names": list(graph.class_names),
            "nodes": [
                {"id": i, "text": graph.texts[i], "label": int(graph.labels[i])}
                for i in range(graph.node_count)
            ],
            "edges": [[a, b] for a, b in pairs],
        }
        path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
        return
    path.mkdir(parents=True, exist_ok=True)
    with (path / "nodes.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "text"])
        for i in range(graph.node_count):
            writer.writerow([i, int(graph.labels[i]), graph.texts[i]])
    with (path / "edges.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        writer.writerows(pairs)
    (path / "classes.txt").write_text("\n".join(graph.class_names) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# splits


def make_low_label_split(
    graph: TextAttributedGraph,
    seed: int,
    train_per_class: int = 20,
    val_size: int = 500,
    test_size: int = 1000,
) -> DataSplit:
    """Sparse-label protocol: fixed per-class train set, sampled val/test.

    Train takes ``train_per_class`` nodes from each class uniformly without
    replacement; validation and test are drawn uniformly from what remains.
    """
    rng = generator(seed)
    labels = graph.labels
    train_parts = []
    for c in range(graph.num_classes):
        members = np.flatnonzero(labels == c)
        if members.size < train_per_class:
            raise InsufficientClassError(
                f"class {c} ({graph.class_names[c]!r}) has {members.size} nodes; "
                f"needs {train_per_class}"
            )
        train_parts.append(rng.choice(members, size=train_per_class, replace=False))
    train = np.sort(np.concatenate(train_parts))
    pool = np.setdiff1d(np.arange(graph.node_count), train, assume_unique=False)
    if pool.size < val_size + test_size:
        raise InsufficientNodesError(
            f"{pool.size} nodes left after train; need {val_size + test_size} for val+test"
        )
    val = rng.choice(pool, size=val_size, replace=False)
    rest = np.setdiff1d(pool, val, assume_unique=False)
    test = rng.choice(rest, size=test_size, replace=False)
    return DataSplit(train=train, validation=np.sort(val), test=np.sort(test), seed=seed)


def make_high_label_split(graph: TextAttributedGraph, seed: int) -> DataSplit:
    """Dense-label protocol: shuffle, then 60/20/20 with remainder to test."""
    n = graph.node_count
    perm = generator(seed).permutation(n)
    n_train = (6 * n) // 10
    n_val = (2 * n) // 10
    train = perm[:n_train]
    val = perm[n_train : n_train + n_val]
    test = perm[n_train + n_val :]
    return DataSplit(
        train=np.sort(train), validation=np.sort(val), test=np.sort(test), seed=seed
    )


# ---------------------------------------------------------------------------
# ego sampling


def sample_ego(
    graph: TextAttributedGraph,
    center: int,
    per_call_cap: int = 5,
    seed: int = 0,
) -> EgoSample:
    """Sample up to ``per_call_cap`` hop-1 and hop-2 neighbors of ``center``.

    Hop-2 candidates are the neighbors of the *sampled* hop-1 nodes, minus
    the center and the sampled hop-1 set. Both hops draw uniformly without
    replacement; the sample is taken once per (center, seed).
    """
    if not 0 <= center < graph.node_count:
        raise ValueError(f"center {center} outside [0, {graph.node_count})")
    if per_call_cap < 1:
        raise ValueError("per_call_cap must be >= 1")
    rng = generator(seed)
    direct = graph.neighbors(center)
    if direct.size <= per_call_cap:
        hop1 = direct.copy()
    else:
        hop1 = rng.choice(direct, size=per_call_cap, replace=False)
    hop1_set = set(int(v) for v in hop1)
    candidates: set[int] = set()
    for v in hop1:
        candidates.update(int(u) for u in graph.neighbors(int(v)))
    candidates.discard(center)
    candidates -= hop1_set
    cand = np.asarray(sorted(candidates), dtype=np.int64)
    if cand.size <= per_call_cap:
        hop2 = cand
    else:
        hop2 = rng.choice(cand, size=per_call_cap, replace=False)
    return EgoSample(
        center=int(center),
        hop1=tuple(int(v) for v in hop1),
        hop2=tuple(int(v) for v in hop2),
        sampling_seed=int(seed),
    )
