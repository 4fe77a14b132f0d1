"""Forward-only decoupled decoder layer: shared self-attention then two task streams."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class QueryState:
    cls: np.ndarray  # N x d classification queries
    loc: np.ndarray  # N x d localization queries

    def __post_init__(self):
        if self.cls.shape != self.loc.shape or self.cls.ndim != 2:
            raise DimensionMismatch(f"query sets differ: {self.cls.shape} vs {self.loc.shape}")


@dataclass(frozen=True)
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass(frozen=True)
class StreamWeights:
    attn: AttentionWeights
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def init_attention(dim: int, rng: np.random.Generator, scale: float | None = None) -> AttentionWeights:
    s = scale if scale is not None else 1.0 / np.sqrt(dim)
    return AttentionWeights(*(rng.standard_normal((dim, dim)) * s for _ in range(4)))


def init_stream(dim: int, hidden: int, rng: np.random.Generator) -> StreamWeights:
    return StreamWeights(
        init_attention(dim, rng),
        rng.standard_normal((dim, hidden)) / np.sqrt(dim),
        np.zeros(hidden),
        rng.standard_normal((hidden, dim)) / np.sqrt(hidden),
        np.zeros(dim),
    )


def concat(state: QueryState) -> np.ndarray:
    return np.concatenate([state.cls, state.loc], axis=1)


def split(x: np.ndarray) -> QueryState:
    if x.shape[1] % 2:
        raise DimensionMismatch("hidden size must be even to split")
    d = x.shape[1] // 2
    return QueryState(x[:, :d], x[:, d:])


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q_in: np.ndarray, kv_in: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Single-head scaled dot-product attention, no residual."""
    if q_in.shape[1] != w.wq.shape[0] or kv_in.shape[1] != w.wk.shape[0]:
        raise DimensionMismatch("input width does not match attention weights")
    q, k, v = q_in @ w.wq, kv_in @ w.wk, kv_in @ w.wv
    scores = q @ k.T / np.sqrt(k.shape[1])
    return softmax(scores, axis=1) @ v @ w.wo


def shared_self_attention(state: QueryState, weights: AttentionWeights, residual: bool = True) -> QueryState:
    x = concat(state)
    out = attention(x, x, weights)
    return split(x + out if residual else out)


def task_stream(queries: np.ndarray, memory: np.ndarray, weights: StreamWeights,
                residual: bool = True) -> np.ndarray:
    """Cross-attention to encoder memory followed by a ReLU feed-forward map."""
    if memory.ndim != 2 or memory.shape[1] != queries.shape[1]:
        raise DimensionMismatch("memory width must match query width")
    attn = attention(queries, memory, weights.attn)
    h = queries + attn if residual else attn
    ffn = np.maximum(h @ weights.w1 + weights.b1, 0.0) @ weights.w2 + weights.b2
    return h + ffn if residual else ffn


def decoupled_layer(state: QueryState, memory: np.ndarray, shared: AttentionWeights,
                    cls_stream: StreamWeights, loc_stream: StreamWeights) -> QueryState:
    mixed = shared_self_attention(state, shared)
    return QueryState(task_stream(mixed.cls, memory, cls_stream),
                      task_stream(mixed.loc, memory, loc_stream))
