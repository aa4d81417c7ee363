"""Network architectures with hand-written forward and backward passes.

Three architectures share one block structure: per layer, dropout on the
input (train mode only), a linear or attention transform, optional batch
normalization, and a rectifier between layers. The final layer emits
row-softmax probabilities.

- gcn: symmetric-normalized aggregation over A + I
- gat: per-edge attention with slope-0.2 leaky rectifier scores, softmax
  over each node's neighborhood plus itself; multi-head hidden layers
  (concatenated), single-head output layer
- mlp: ignores adjacency entirely
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError
from ..graph import TextAttributedGraph

ARCHITECTURES = ("gcn", "gat", "mlp")
NORMALIZATIONS = ("none", "batch")

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# Feature matrices at or below this density are fed to the first layer in
# CSR form; everything downstream of layer 1 is dense.
SPARSE_INPUT_DENSITY = 0.25

ArrayLike = Union[np.ndarray, sp.csr_matrix]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (training knobs live in TrainConfig)."""

    arch: str
    hidden_dim: int = 64
    num_layers: int = 2
    dropout: float = 0.5
    normalization: str = "none"
    heads: int = 8

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.hidden_dim < 1 or self.num_layers < 1 or self.heads < 1:
            raise ValueError("hidden_dim, num_layers, and heads must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def normalized_adjacency(graph: TextAttributedGraph) -> sp.csr_matrix:
    """D̃^{-1/2} (A + I) D̃^{-1/2} as CSR; rows of isolated nodes reduce to e_i."""
    n = graph.node_count
    a_hat = graph.adjacency() + sp.identity(n, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scaled = a_hat.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :])
    out = scaled.tocsr()
    out.sort_indices()
    return out


def _self_loop_edges(graph: TextAttributedGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(indptr, dst, src) over A + I, rows sorted; every row is non-empty."""
    n = graph.node_count
    a_hat = (graph.adjacency() + sp.identity(n, format="csr")).tocsr()
    a_hat.sort_indices()
    indptr = a_hat.indptr.astype(np.int64)
    src = a_hat.indices.astype(np.int64)
    dst = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    return indptr, dst, src


def _matmul(x: ArrayLike, w: np.ndarray) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x @ w)
    return x @ w


def _t_matmul(x: ArrayLike, d: np.ndarray) -> np.ndarray:
    """x.T @ d for dense or sparse x."""
    if sp.issparse(x):
        return np.asarray(x.T @ d)
    return x.T @ d


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _Dropout:
    """Inverted dropout; active only in train mode."""

    def __init__(self, rate: float):
        self.rate = rate
        self._mask: ArrayLike | None = None

    def forward(self, x: ArrayLike, train_mode: bool, rng: np.random.Generator | None) -> ArrayLike:
        if not train_mode or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode forward with dropout needs an rng")
        keep = 1.0 - self.rate
        if sp.issparse(x):
            out = x.copy()
            mask = (rng.random(out.data.shape) < keep) / keep
            out.data = out.data * mask
            self._mask = None  # sparse input is always the first layer
            return out
        mask = (rng.random(x.shape) < keep) / keep
        self._mask = mask
        return x * mask

    def backward(self, dx: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dx
        return dx * self._mask


class _BatchNorm:
    """Per-feature normalization over the node axis with running statistics."""

    def __init__(self, dim: int, name: str):
        self.name = name
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.g_gamma = np.zeros(dim)
        self.g_beta = np.zeros(dim)
        self._cache = None

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.gamma": self.g_gamma, f"{self.name}.beta": self.g_beta}

    def forward(self, z: np.ndarray, train_mode: bool, update_stats: bool) -> np.ndarray:
        if train_mode:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mean
                self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mean) * inv_std
        self._cache = (xhat, inv_std, train_mode)
        return self.gamma * xhat + self.beta

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, train_mode = self._cache
        self.g_beta = dout.sum(axis=0)
        self.g_gamma = (dout * xhat).sum(axis=0)
        dxhat = dout * self.gamma
        if not train_mode:
            return dxhat * inv_std
        n = dout.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )


class _LinearBlock:
    """z = x @ W + b, plain (mlp) or followed by fixed aggregation (gcn)."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_dim: int,
        out_dim: int,
        name: str,
        adjacency: sp.csr_matrix | None,
        use_bias: bool = True,
    ):
        self.name = name
        self.adjacency = adjacency
        self.W = _glorot(rng, (in_dim, out_dim))
        # a bias feeding straight into batch norm is invisible (the shift
        # cancels in the mean), so normed blocks drop it
        self.b = np.zeros(out_dim) if use_bias else None
        self.g_W = np.zeros_like(self.W)
        self.g_b = None if self.b is None else np.zeros_like(self.b)
        self._x: ArrayLike | None = None
        self.out_dim = out_dim

    def params(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.W": self.W}
        if self.b is not None:
            out[f"{self.name}.b"] = self.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.W": self.g_W}
        if self.b is not None:
            out[f"{self.name}.b"] = self.g_b
        return out

    def decayed(self) -> tuple[str, ...]:
        return (f"{self.name}.W",)

    def forward(self, x: ArrayLike) -> np.ndarray:
        self._x = x
        z = _matmul(x, self.W)
        if self.adjacency is not None:
            z = np.asarray(self.adjacency @ z)
        if self.b is not None:
            z = z + self.b
        return z

    def backward(self, dz: np.ndarray) -> np.ndarray | None:
        if self.b is not None:
            self.g_b = dz.sum(axis=0)
        if self.adjacency is not None:
            # the normalized adjacency is symmetric, so A^T dz == A dz
            dz = np.asarray(self.adjacency @ dz)
        self.g_W = _t_matmul(self._x, dz)
        if sp.issparse(self._x):
            return None
        return dz @ self.W.T


class _GatBlock:
    """Multi-head attention aggregation over each node's closed neighborhood."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_dim: int,
        out_dim: int,
        heads: int,
        name: str,
        edges: tuple[np.ndarray, np.ndarray, np.ndarray],
        use_bias: bool = True,
    ):
        self.name = name
        self.heads = heads
        self.head_dim = out_dim
        self.indptr, self.dst, self.src = edges
        self.W = _glorot(rng, (in_dim, heads * out_dim))
        self.a_self = _glorot(rng, (heads, out_dim))
        self.a_neigh = _glorot(rng, (heads, out_dim))
        self.b = np.zeros(heads * out_dim) if use_bias else None
        self.g_W = np.zeros_like(self.W)
        self.g_a_self = np.zeros_like(self.a_self)
        self.g_a_neigh = np.zeros_like(self.a_neigh)
        self.g_b = None if self.b is None else np.zeros_like(self.b)
        self._cache = None
        self.out_dim = heads * out_dim

    def params(self) -> dict[str, np.ndarray]:
        out = {
            f"{self.name}.W": self.W,
            f"{self.name}.a_self": self.a_self,
            f"{self.name}.a_neigh": self.a_neigh,
        }
        if self.b is not None:
            out[f"{self.name}.b"] = self.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {
            f"{self.name}.W": self.g_W,
            f"{self.name}.a_self": self.g_a_self,
            f"{self.name}.a_neigh": self.g_a_neigh,
        }
        if self.b is not None:
            out[f"{self.name}.b"] = self.g_b
        return out

    def decayed(self) -> tuple[str, ...]:
        return (f"{self.name}.W", f"{self.name}.a_self", f"{self.name}.a_neigh")

    def _segment_softmax(self, scores: np.ndarray) -> np.ndarray:
        starts = self.indptr[:-1]
        seg_max = np.maximum.reduceat(scores, starts)
        shifted = np.exp(scores - seg_max[self.dst])
        seg_sum = np.add.reduceat(shifted, starts)
        return shifted / seg_sum[self.dst]

    def forward(self, x: ArrayLike) -> np.ndarray:
        n = self.indptr.size - 1
        z = _matmul(x, self.W).reshape(n, self.heads, self.head_dim)
        out = np.empty((n, self.heads * self.head_dim))
        cache = []
        for h in range(self.heads):
            zh = z[:, h, :]
            q_self = zh @ self.a_self[h]
            q_neigh = zh @ self.a_neigh[h]
            e = q_self[self.dst] + q_neigh[self.src]
            s = np.where(e > 0, e, LEAKY_SLOPE * e)
            alpha = self._segment_softmax(s)
            agg = sp.csr_matrix(
                (alpha, self.src, self.indptr), shape=(n, n)
            )
            mh = np.asarray(agg @ zh)
            out[:, h * self.head_dim : (h + 1) * self.head_dim] = mh
            cache.append((zh, e, alpha, agg))
        self._cache = (x, cache)
        if self.b is not None:
            out = out + self.b
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray | None:
        x, cache = self._cache
        n = self.indptr.size - 1
        if self.b is not None:
            self.g_b = dout.sum(axis=0)
        dz = np.empty((n, self.heads, self.head_dim))
        for h in range(self.heads):
            zh, e, alpha, agg = cache[h]
            dmh = dout[:, h * self.head_dim : (h + 1) * self.head_dim]
            dzh = np.asarray(agg.T @ dmh)
            # d(alpha_e) = dmh[dst_e] . zh[src_e]
            dalpha = np.einsum("ed,ed->e", dmh[self.dst], zh[self.src])
            inner = np.bincount(self.dst, weights=alpha * dalpha, minlength=n)
            ds = alpha * (dalpha - inner[self.dst])
            de = ds * np.where(e > 0, 1.0, LEAKY_SLOPE)
            dq_self = np.bincount(self.dst, weights=de, minlength=n)
            dq_neigh = np.bincount(self.src, weights=de, minlength=n)
            self.g_a_self[h] = zh.T @ dq_self
            self.g_a_neigh[h] = zh.T @ dq_neigh
            dzh += dq_self[:, None] * self.a_self[h] + dq_neigh[:, None] * self.a_neigh[h]
            dz[:, h, :] = dzh
        dz_flat = dz.reshape(n, self.heads * self.head_dim)
        self.g_W = _t_matmul(x, dz_flat)
        if sp.issparse(x):
            return None
        return dz_flat @ self.W.T


class _Block:
    """Dropout -> transform -> optional batchnorm -> optional rectifier."""

    def __init__(self, transform, norm: _BatchNorm | None, activate: bool, dropout: float):
        self.dropout = _Dropout(dropout)
        self.transform = transform
        self.norm = norm
        self.activate = activate
        self._relu_mask: np.ndarray | None = None

    def forward(
        self,
        x: ArrayLike,
        train_mode: bool,
        rng: np.random.Generator | None,
        update_stats: bool,
    ) -> np.ndarray:
        h = self.dropout.forward(x, train_mode, rng)
        z = self.transform.forward(h)
        if self.norm is not None:
            z = self.norm.forward(z, train_mode, update_stats)
        if self.activate:
            self._relu_mask = z > 0
            z = np.where(self._relu_mask, z, 0.0)
        return z

    def backward(self, dz: np.ndarray) -> np.ndarray | None:
        if self.activate:
            dz = dz * self._relu_mask
        if self.norm is not None:
            dz = self.norm.backward(dz)
        dx = self.transform.backward(dz)
        if dx is None:
            return None
        return self.dropout.backward(dx)


class Network:
    """A stack of blocks bound to one graph's aggregation structure."""

    def __init__(self, config: ModelConfig, graph: TextAttributedGraph, in_dim: int, out_dim: int, seed: int = 0):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"invalid network dims in={in_dim} out={out_dim}")
        self.config = config
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = np.random.default_rng(seed)
        adjacency = normalized_adjacency(graph) if config.arch == "gcn" else None
        edges = _self_loop_edges(graph) if config.arch == "gat" else None
        self.blocks: list[_Block] = []
        width = in_dim
        for layer in range(config.num_layers):
            last = layer == config.num_layers - 1
            target = out_dim if last else config.hidden_dim
            name = f"layer{layer}"
            normed = config.normalization == "batch" and not last
            if config.arch == "gcn":
                transform = _LinearBlock(rng, width, target, name, adjacency, use_bias=not normed)
            elif config.arch == "mlp":
                transform = _LinearBlock(rng, width, target, name, None, use_bias=not normed)
            else:
                heads = 1 if last else config.heads
                transform = _GatBlock(rng, width, target, heads, name, edges, use_bias=not normed)
            norm = None
            if normed:
                norm = _BatchNorm(transform.out_dim, f"{name}.norm")
            self.blocks.append(_Block(transform, norm, activate=not last, dropout=config.dropout))
            width = transform.out_dim

    # -- parameter registry -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for block in self.blocks:
            out.update(block.transform.params())
            if block.norm is not None:
                out.update(block.norm.params())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for block in self.blocks:
            if block.norm is not None:
                out.update(block.norm.buffers())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params(), **self.buffers()}

    def grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for block in self.blocks:
            out.update(block.transform.grads())
            if block.norm is not None:
                out.update(block.norm.grads())
        return out

    def decayed_names(self) -> set[str]:
        return {name for block in self.blocks for name in block.transform.decayed()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state()
        for name, value in state.items():
            if name not in own:
                raise ShapeError(f"unknown parameter {name!r}")
            if own[name].shape != np.asarray(value).shape:
                raise ShapeError(
                    f"parameter {name!r}: expected shape {own[name].shape}, got {np.asarray(value).shape}"
                )
            own[name][...] = value

    # -- passes ---------------------------------------------------------------

    def logits(
        self,
        features: ArrayLike,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
        update_stats: bool = False,
    ) -> np.ndarray:
        h: ArrayLike = features
        for block in self.blocks:
            h = block.forward(h, train_mode, rng, update_stats)
        return h

    def forward(
        self,
        features: ArrayLike,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
        update_stats: bool = False,
    ) -> np.ndarray:
        return softmax_rows(self.logits(features, train_mode, rng, update_stats))

    def backward(self, dlogits: np.ndarray) -> None:
        grad: np.ndarray | None = dlogits
        for block in reversed(self.blocks):
            grad = block.backward(grad)
            if grad is None:
                break


def softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def assemble_network(
    config: ModelConfig,
    graph: TextAttributedGraph,
    in_dim: int,
    out_dim: int,
    seed: int = 0,
) -> Network:
    return Network(config, graph, in_dim, out_dim, seed)


def maybe_sparse(values: np.ndarray) -> ArrayLike:
    """CSR view of the input features when they are sparse enough to pay off."""
    density = np.count_nonzero(values) / max(1, values.size)
    if density <= SPARSE_INPUT_DENSITY:
        return sp.csr_matrix(values)
    return values


def forward(model, features, graph: TextAttributedGraph, train_mode: bool = False, seed: int = 0) -> np.ndarray:
    """Class-probability matrix for every node under a trained model."""
    from .training import network_from_model  # local import to avoid a cycle

    net = network_from_model(model, graph)
    x = maybe_sparse(features.values)
    rng = np.random.default_rng(seed) if train_mode else None
    return net.forward(x, train_mode=train_mode, rng=rng)
