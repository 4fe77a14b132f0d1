"""Class prototype bank with level-dependent EMA updates."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .hierarchy import LabelTree


@dataclass(frozen=True)
class PrototypeBank:
    """One unit-norm row per category node; node id ``k`` lives at row ``k - 1``.

    ``leaf_momentum_override`` replaces the update coefficient at the leaf
    level (where ``epsilon ** 0 == 1`` overwrites the prototype each step).
    ``None`` keeps the literal rule.
    """

    M: np.ndarray
    tree: LabelTree
    epsilon: float = 0.1
    leaf_momentum_override: float | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.M.shape[0] != self.tree.num_categories:
            raise ValueError(f"bank has {self.M.shape[0]} rows, tree has {self.tree.num_categories} categories")

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    def row(self, node_id: int) -> np.ndarray:
        return self.M[node_id - 1]

    def coefficient(self, level: int) -> float:
        """Weight of the batch mean when updating a level-``level`` prototype."""
        if level == self.tree.depth and self.leaf_momentum_override is not None:
            return self.leaf_momentum_override
        return self.epsilon ** (self.tree.depth - level)


def init_bank(tree: LabelTree, dim: int, seed: int = 0, epsilon: float = 0.1, **kw) -> PrototypeBank:
    if dim < 2:
        raise ValueError("prototype dimension must be >= 2")
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((tree.num_categories, dim))
    M /= np.linalg.norm(M, axis=1, keepdims=True)
    return PrototypeBank(M, tree, epsilon, **kw)


def batch_class_means(batch, tree: LabelTree) -> dict[int, tuple[np.ndarray, int]]:
    """Mean row per node over every row whose label path passes through it."""
    return class_means(batch.vectors, tree.label_matrix(batch.labels))


def class_means(F: np.ndarray, anc: np.ndarray) -> dict[int, tuple[np.ndarray, int]]:
    """Same as :func:`batch_class_means` on a precomputed ancestor matrix."""
    out = {}
    for c in np.unique(anc[anc >= 0]):
        sel = np.any(anc == c, axis=1)
        out[int(c)] = (F[sel].mean(axis=0), int(sel.sum()))
    return out


def ema_update(bank: PrototypeBank, means: dict) -> PrototypeBank:
    """Blend each present class's prototype toward its batch mean, then renormalize."""
    M = bank.M.copy()
    for c, value in means.items():
        mean = value[0] if isinstance(value, tuple) else value
        if not 0 < c <= bank.tree.num_categories:
            raise ValueError(f"node {c} has no prototype")
        k = bank.coefficient(int(bank.tree.level[c]))
        row = (1.0 - k) * M[c - 1] + k * np.asarray(mean, dtype=np.float64)
        norm = np.linalg.norm(row)
        # a blend that cancels exactly keeps the old row
        if norm > 0:
            M[c - 1] = row / norm
    return replace(bank, M=M)
