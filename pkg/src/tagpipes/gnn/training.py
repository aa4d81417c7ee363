"""Full-batch training, evaluation, checkpoints, and gradient checking."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoders import FeatureMatrix
from ..errors import DivergenceError, FormatError, ShapeError
from ..graph import DataSplit, TextAttributedGraph
from .models import ModelConfig, Network, maybe_sparse, softmax_rows

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "train",
    "evaluate",
    "gradient_check",
    "save_model",
    "load_model",
    "network_from_model",
]

CHECKPOINT_VERSION = 1

# hyperparameter search space used by sweep configs (harness defaults)
DEFAULT_GRID_HIDDEN_DIMS = (8, 16, 32, 64, 128, 256)
DEFAULT_GRID_LAYER_COUNTS = (1, 2, 3)
DEFAULT_GRID_NORMALIZATIONS = ("none", "batch")
DEFAULT_GRID_LEARNING_RATES = (1e-2, 5e-2, 5e-3, 1e-3)
DEFAULT_GRID_WEIGHT_DECAYS = (1e-5, 5e-5, 5e-4, 0.0)
DEFAULT_GRID_DROPOUTS = (0.0, 0.1, 0.5, 0.8)
DEFAULT_GRID_HEADS = (1, 4, 8)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs for one full-batch training run.

    ``dropout`` overrides the model's dropout rate when set, so a sweep can
    vary it without cloning ModelConfigs. Weight decay applies to weight
    matrices and attention vectors, not biases or norm parameters.
    """

    learning_rate: float = 1e-2
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    dropout: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class TrainedModel:
    """Best-validation-epoch snapshot of a trained network."""

    config: ModelConfig
    in_dim: int
    out_dim: int
    state: dict[str, np.ndarray]
    best_epoch: int
    val_accuracy_at_best: float
    epochs_run: int = 0
    loss_history: list[float] = field(default_factory=list)


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bias1 = 1.0 - ADAM_BETA1**self.t
        bias2 = 1.0 - ADAM_BETA2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * (g * g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray, rows: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over ``rows``; returns (loss, dloss/dlogits over all rows)."""
    z = logits[rows]
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    y = labels[rows]
    loss = float(np.mean(log_norm - z[np.arange(rows.size), y]))
    probs = softmax_rows(logits[rows])
    probs[np.arange(rows.size), y] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[rows] = probs / rows.size
    return loss, dlogits


def _check_dims(features: FeatureMatrix, graph: TextAttributedGraph) -> None:
    if features.node_count != graph.node_count:
        raise ShapeError(
            f"feature rows ({features.node_count}) != graph nodes ({graph.node_count})"
        )


def train(
    config: ModelConfig,
    tcfg: TrainConfig,
    features: FeatureMatrix,
    graph: TextAttributedGraph,
    split: DataSplit,
    labels: np.ndarray | None = None,
) -> TrainedModel:
    """Full-batch training with validation-based model selection.

    Minimizes mean cross-entropy over ``split.train``, evaluates validation
    accuracy each epoch, keeps the best-epoch parameters, and stops once
    ``patience`` epochs pass without improvement (patience 0 trains exactly
    one epoch) or at ``max_epochs``. Deterministic given the seed.

    ``labels`` replaces ``graph.labels`` when supervising with pseudo labels;
    validation accuracy is then measured against the same array.
    """
    _check_dims(features, graph)
    if split.train.size == 0 or split.validation.size == 0:
        raise ValueError("train and validation splits must be non-empty")
    split.validate(graph)
    y = graph.labels if labels is None else np.asarray(labels, dtype=np.int64)
    if y.shape != (graph.node_count,):
        raise ShapeError(f"labels must have shape ({graph.node_count},)")

    if tcfg.dropout is not None:
        config = dataclasses.replace(config, dropout=tcfg.dropout)
    net = Network(config, graph, features.dim, graph.num_classes, seed=tcfg.seed)
    x = maybe_sparse(features.values)
    params = net.params()
    adam = _Adam(params, tcfg.learning_rate)
    drop_rng = np.random.default_rng(np.random.SeedSequence([int(tcfg.seed), 0x5EED]))
    decayed = net.decayed_names()

    best_state: dict[str, np.ndarray] | None = None
    best_val = -1.0
    best_epoch = 0
    losses: list[float] = []
    epoch = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        logits = net.logits(x, train_mode=True, rng=drop_rng, update_stats=True)
        loss, dlogits = _cross_entropy(logits, y, split.train)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, tcfg.learning_rate)
        losses.append(loss)
        net.backward(dlogits)
        grads = net.grads()
        if tcfg.weight_decay:
            for name in decayed:
                grads[name] = grads[name] + tcfg.weight_decay * params[name]
        adam.step(params, grads)

        val_logits = net.logits(x, train_mode=False)
        val_pred = val_logits[split.validation].argmax(axis=1)
        val_acc = float(np.mean(val_pred == y[split.validation]))
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in net.state().items()}
        if epoch - best_epoch >= tcfg.patience:
            break

    assert best_state is not None
    return TrainedModel(
        config=config,
        in_dim=features.dim,
        out_dim=graph.num_classes,
        state=best_state,
        best_epoch=best_epoch,
        val_accuracy_at_best=best_val,
        epochs_run=epoch,
        loss_history=losses,
    )


def network_from_model(model: TrainedModel, graph: TextAttributedGraph) -> Network:
    net = Network(model.config, graph, model.in_dim, model.out_dim, seed=0)
    net.load_state(model.state)
    return net


def evaluate(
    model: TrainedModel,
    features: FeatureMatrix,
    graph: TextAttributedGraph,
    nodes: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Accuracy and argmax predictions on ``nodes``.

    ``labels`` aligns with ``nodes``. Probability ties resolve to the lowest
    class index (numpy argmax keeps the first maximum).
    """
    _check_dims(features, graph)
    nodes = np.asarray(nodes)
    labels = np.asarray(labels)
    if nodes.size == 0:
        raise ValueError("nodes must be non-empty")
    if labels.shape != nodes.shape:
        raise ShapeError("labels must align one-to-one with nodes")
    net = network_from_model(model, graph)
    probs = net.forward(maybe_sparse(features.values), train_mode=False)
    predictions = probs[nodes].argmax(axis=1)
    accuracy = float(np.mean(predictions == labels))
    return accuracy, predictions


# ---------------------------------------------------------------------------
# gradient checking


def _loss_for_check(
    net: Network,
    x,
    labels: np.ndarray,
    rows: np.ndarray,
    kind: str,
) -> tuple[float, np.ndarray]:
    logits = net.logits(x, train_mode=True, rng=None, update_stats=False)
    if kind == "cross_entropy":
        return _cross_entropy(logits, labels, rows)
    if kind == "squared_error":
        onehot = np.zeros((rows.size, logits.shape[1]))
        onehot[np.arange(rows.size), labels[rows]] = 1.0
        diff = logits[rows] - onehot
        loss = float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
        dlogits = np.zeros_like(logits)
        dlogits[rows] = diff / rows.size
        return loss, dlogits
    raise ValueError(f"unknown loss kind {kind!r}")


def gradient_check(
    config: ModelConfig,
    features: FeatureMatrix,
    graph: TextAttributedGraph,
    split: DataSplit,
    epsilon: float = 1e-5,
    loss_kind: str = "cross_entropy",
    seed: int = 0,
    gradient_scale: float = 1.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout is disabled for the check (the loss must be deterministic);
    batch normalization runs in its train-mode, batch-statistics path. The
    per-array error is ``max_i |ga_i - gn_i|`` normalized by the largest
    ``|ga_i| + |gn_i|`` in that array, and the maximum over arrays is
    returned. ``gradient_scale`` multiplies the analytic gradients, which
    lets tests confirm that a corrupted gradient is flagged.
    """
    _check_dims(features, graph)
    config = dataclasses.replace(config, dropout=0.0)
    net = Network(config, graph, features.dim, graph.num_classes, seed=seed)
    x = maybe_sparse(features.values)
    rows = np.asarray(split.train)
    labels = graph.labels

    _, dlogits = _loss_for_check(net, x, labels, rows, loss_kind)
    net.backward(dlogits)
    analytic = {k: v.copy() * gradient_scale for k, v in net.grads().items()}

    params = net.params()
    worst = 0.0
    for name, theta in params.items():
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            plus, _ = _loss_for_check(net, x, labels, rows, loss_kind)
            flat[i] = original - epsilon
            minus, _ = _loss_for_check(net, x, labels, rows, loss_kind)
            flat[i] = original
            num_flat[i] = (plus - minus) / (2.0 * epsilon)
        ga = analytic[name]
        scale = float(np.max(np.abs(ga) + np.abs(numeric)))
        err = float(np.max(np.abs(ga - numeric))) / max(scale, 1e-12)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Write a versioned JSON checkpoint (row-major float64 tensors)."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "in_dim": model.in_dim,
        "out_dim": model.out_dim,
        "best_epoch": model.best_epoch,
        "val_accuracy_at_best": model.val_accuracy_at_best,
        "state": {
            name: {"shape": list(arr.shape), "data": arr.astype(np.float64).ravel().tolist()}
            for name, arr in model.state.items()
        },
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload), encoding="utf-8")
    os.replace(tmp, path)


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid checkpoint JSON: {exc.msg}", path=str(path)) from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})",
            path=str(path),
        )
    try:
        config = ModelConfig(**payload["config"])
        state = {}
        for name, rec in payload["state"].items():
            arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
            if not np.isfinite(arr).all():
                raise FormatError(f"non-finite values in tensor {name!r}", path=str(path))
            state[name] = arr
        model = TrainedModel(
            config=config,
            in_dim=int(payload["in_dim"]),
            out_dim=int(payload["out_dim"]),
            state=state,
            best_epoch=int(payload["best_epoch"]),
            val_accuracy_at_best=float(payload["val_accuracy_at_best"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}", path=str(path)) from exc
    return model
