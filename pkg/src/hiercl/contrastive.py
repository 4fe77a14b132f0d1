"""Supervised, hierarchical and balanced hierarchical contrastive losses.

All losses are averaged over the foreground rows ``I`` and written as
``mean_p [log(denominator) - s_ip]`` with ``s = f_i . f_p / tau``. HCL terms
are non-negative; the balanced losses average each class's contribution, so
their denominators can fall below ``exp(s_ip)`` and a term can be negative.
Gradients are with respect to the normalized rows only;
prototypes are constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateBatch, EmptyLevel, ZeroVector
from .hierarchy import HierLabel, LabelTree, penalty_weights

HCL = "hcl"
BHCL = "bhcl"
BHCL_NO_PROTO = "bhcl-noproto"
MODES = (HCL, BHCL, BHCL_NO_PROTO)


@dataclass
class EmbeddingBatch:
    """Unit-norm projected classification queries with their label paths."""

    vectors: np.ndarray
    labels: Sequence[HierLabel]
    tree: LabelTree | None = None
    check: bool = True

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        self.vectors = v if v.ndim == 2 else v.reshape(len(self.labels), -1)
        self.labels = [tuple(int(x) for x in lab) for lab in self.labels]
        if self.check and len(self.labels):
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("batch rows must have unit norm")
            if self.tree is not None:
                for lab in self.labels:
                    self.tree.validate_label(lab)

    def __len__(self):
        return len(self.labels)

    def label_matrix(self, tree: LabelTree | None = None) -> np.ndarray:
        return (tree or self.tree).label_matrix(self.labels)

    def terminal_labels(self) -> np.ndarray:
        return np.array([lab[-1] if lab else -1 for lab in self.labels], dtype=np.int64)


@dataclass
class LossConfig:
    tau: float = 0.1
    level_weights: np.ndarray | None = None
    include_prototypes: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def weights_for(self, tree: LabelTree) -> np.ndarray:
        if self.level_weights is None:
            return penalty_weights(tree.depth)
        w = np.asarray(self.level_weights, dtype=np.float64)
        if w.shape != (tree.depth,) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("level_weights must have one entry per level and sum to 1")
        return w


@dataclass
class LossTerms:
    loss: float
    per_level: np.ndarray
    grad: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def _logsumexp_offdiag(S: np.ndarray) -> np.ndarray:
    n = S.shape[0]
    masked = S.copy()
    masked[np.diag_indices(n)] = -np.inf
    m = masked.max(axis=1, keepdims=True)
    return m[:, 0] + np.log(np.exp(masked - m).sum(axis=1))


def contrastive_terms(
    F: np.ndarray,
    anc: np.ndarray,
    weights: np.ndarray,
    tau: float,
    mode: str = BHCL,
    protos: np.ndarray | None = None,
    level_nodes: Sequence[Sequence[int]] | None = None,
    with_grad: bool = True,
) -> LossTerms:
    """Shared engine for every loss in this module.

    ``anc[i, l-1]`` is the level-``l`` class id of row ``i`` (or -1).
    ``protos`` holds one row per non-root node (node id ``k`` at row ``k-1``)
    and ``level_nodes[l]`` lists the category ids at level ``l``; both are
    needed for the balanced modes only.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    F = np.asarray(F, dtype=np.float64)
    n, dim = F.shape
    depth = anc.shape[1]
    per_level = np.zeros(depth)
    grad = np.zeros_like(F)
    if n == 0:
        return LossTerms(0.0, per_level, grad if with_grad else None)
    if mode == HCL and n < 2:
        raise DegenerateBatch("pairwise contrastive loss needs at least two rows")

    S = F @ F.T / tau
    offdiag = ~np.eye(n, dtype=bool)
    A = np.zeros((n, n))  # dLoss/dS
    proto_grad = np.zeros((n, dim))  # sum_c dLoss/dT_ic * M_c

    if mode == HCL:
        logD = _logsumexp_offdiag(S)
        soft = np.exp(S - logD[:, None]) * offdiag

    for li in range(depth):
        lam = weights[li] / n
        cls = anc[:, li]
        valid = cls >= 0
        if not valid.any():
            continue
        same = (cls[:, None] == cls[None, :]) & valid[:, None] & valid[None, :] & offdiag

        if mode == HCL:
            npos = same.sum(axis=1)
            act = valid & (npos > 0)
            if not act.any():
                continue
            pos_mean = np.where(act, (S * same).sum(axis=1) / np.maximum(npos, 1), 0.0)
            per_level[li] = lam * np.sum((logD - pos_mean)[act])
            if with_grad:
                A[act] += lam * soft[act]
                A[act] -= lam * same[act] / npos[act, None]
            continue

        nodes = np.asarray(level_nodes[li + 1], dtype=np.int64)
        if nodes.size == 0:
            raise EmptyLevel(f"level {li + 1} has no categories")
        col = np.full(int(max(nodes.max(), cls.max())) + 1, -1, dtype=np.int64)
        col[nodes] = np.arange(nodes.size)
        Y = np.zeros((n, nodes.size))
        Y[np.flatnonzero(valid), col[cls[valid]]] = 1.0
        cnt = Y.sum(axis=0)
        cnt_excl = cnt[None, :] - Y  # |I_c \ {i}|
        own = np.where(valid, col[np.where(valid, cls, 0)], -1)
        rows = np.flatnonzero(valid)

        if mode == BHCL:
            M = protos[nodes - 1]
            T = F @ M.T / tau
            m = np.maximum(np.where(offdiag, S, -np.inf).max(axis=1, initial=-np.inf), T.max(axis=1))
            E = np.exp(S - m[:, None]) * offdiag
            EP = np.exp(T - m[:, None])
            size = cnt + 1.0  # |I'_c|
            # class-mean terms anchored on the prototype value so that a class
            # whose members all match the prototype gives exactly that value
            diff = (E - EP @ Y.T) * offdiag
            term = ((cnt_excl + 1.0) / size) * EP + (diff @ Y) / size
            Dt = term.sum(axis=1)
            logD = m + np.log(Dt)
            npos = cnt_excl[np.arange(n), np.maximum(own, 0)] + 1.0
            pos_sum = (S * same).sum(axis=1) + T[np.arange(n), np.maximum(own, 0)]
            act = valid
            per_level[li] = lam * np.sum((logD - pos_sum / npos)[act])
            if with_grad:
                r = rows
                w_row = (Y / size[None, :]) @ np.ones(nodes.size)  # 1/|I'_c(j)| per row j
                A[r] += lam * E[r] * w_row[None, :] / Dt[r, None]
                A[r] -= lam * same[r] / npos[r, None]
                B = lam * EP[r] / (size[None, :] * Dt[r, None])
                B[np.arange(r.size), own[r]] -= lam / npos[r]
                proto_grad[r] += B @ M
        else:
            if n < 2:
                continue
            m = np.where(offdiag, S, -np.inf).max(axis=1)
            E = np.exp(S - m[:, None]) * offdiag
            inv = np.divide(1.0, cnt, out=np.zeros_like(cnt), where=cnt > 0)
            term = (E @ Y) * inv[None, :]
            Dt = term.sum(axis=1)
            npos = same.sum(axis=1)
            act = valid & (npos > 0)
            if not act.any():
                continue
            logD = np.where(act, m + np.log(np.where(act, Dt, 1.0)), 0.0)
            pos_mean = np.where(act, (S * same).sum(axis=1) / np.maximum(npos, 1), 0.0)
            per_level[li] = lam * np.sum((logD - pos_mean)[act])
            if with_grad:
                r = np.flatnonzero(act)
                w_row = Y @ inv
                A[r] += lam * E[r] * w_row[None, :] / Dt[r, None]
                A[r] -= lam * same[r] / npos[r, None]

    loss = float(per_level.sum())
    if not with_grad:
        return LossTerms(loss, per_level)
    grad = ((A + A.T) @ F + proto_grad) / tau
    return LossTerms(loss, per_level, grad)


def pair_loss(batch: EmbeddingBatch, i: int, p: int, tau: float) -> float:
    """-log softmax of ``s_ip`` over all other rows."""
    n = len(batch)
    if n < 2:
        raise DegenerateBatch("pair loss needs at least two rows")
    if i == p:
        raise ValueError("anchor and positive must differ")
    F = batch.vectors
    s = F @ F[i] / tau
    others = np.delete(s, i)
    m = others.max()
    return float(m + np.log(np.exp(others - m).sum()) - s[p])


def scl_loss(batch: EmbeddingBatch, tau: float) -> float:
    """Single-level supervised contrastive loss on the finest label of each row."""
    if len(batch) < 2:
        raise DegenerateBatch("SCL needs at least two rows")
    anc = batch.terminal_labels()[:, None]
    return contrastive_terms(batch.vectors, anc, np.ones(1), tau, HCL, with_grad=False).loss


def hcl_loss(batch: EmbeddingBatch, tree: LabelTree, config: LossConfig) -> float:
    if len(batch) < 2:
        raise DegenerateBatch("HCL needs at least two rows")
    return contrastive_terms(
        batch.vectors, batch.label_matrix(tree), config.weights_for(tree), config.tau, HCL,
        with_grad=False,
    ).loss


def hcl_gradient(batch: EmbeddingBatch, tree: LabelTree, config: LossConfig) -> np.ndarray:
    return contrastive_terms(
        batch.vectors, batch.label_matrix(tree), config.weights_for(tree), config.tau, HCL,
    ).grad


def _bhcl_mode(config: LossConfig) -> str:
    return BHCL if config.include_prototypes else BHCL_NO_PROTO


def bhcl_terms(batch, bank, tree: LabelTree, config: LossConfig, with_grad=True) -> LossTerms:
    protos = None if bank is None else np.asarray(getattr(bank, "M", bank))
    mode = _bhcl_mode(config)
    if mode == BHCL and protos is None:
        raise ValueError("BHCL with prototypes needs a prototype bank")
    return contrastive_terms(
        batch.vectors, batch.label_matrix(tree), config.weights_for(tree), config.tau, mode,
        protos=protos, level_nodes=tree.level_nodes, with_grad=with_grad,
    )


def bhcl_loss(batch, bank, tree: LabelTree, config: LossConfig) -> float:
    return bhcl_terms(batch, bank, tree, config, with_grad=False).loss


def bhcl_gradient(batch, bank, tree: LabelTree, config: LossConfig) -> np.ndarray:
    """d bhcl_loss / d rows; prototypes are held fixed."""
    return bhcl_terms(batch, bank, tree, config).grad


def balanced_denominator_terms(batch, bank, tree: LabelTree, level: int, i: int, tau: float,
                               include_prototypes: bool = True) -> dict[int, float]:
    """Per-class terms ``(1/|I'_c|) sum_{a in I'_c minus i} exp(s_ia)`` at one level.

    Values are unshifted (no max subtraction) so they can be compared across
    batches. Classes with an empty instance set map to 0.
    """
    nodes = tree.level_nodes[level]
    if not nodes:
        raise EmptyLevel(f"level {level} has no categories")
    F = batch.vectors
    cls = batch.label_matrix(tree)[:, level - 1]

    # one scalar route for rows and prototypes: equal vectors give equal bits
    def sim(v):
        return math.exp(math.fsum(float(x) * float(y) for x, y in zip(v, F[i])) / tau)

    out = {}
    for c in nodes:
        members = np.flatnonzero(cls == c)
        others = members[members != i]
        if include_prototypes:
            mp = sim(bank.M[c - 1])
            size = members.size + 1
            diff = math.fsum(sim(F[a]) - mp for a in others)
            out[c] = ((others.size + 1.0) / size) * mp + diff / size
        else:
            out[c] = math.fsum(sim(F[a]) for a in others) / members.size if members.size else 0.0
    return out


def balanced_pair_loss(batch, bank, tree: LabelTree, level: int, i: int, p, tau: float,
                       include_prototypes: bool = True) -> float:
    """Balanced pair loss; ``p=None`` selects the prototype of i's level ancestor."""
    cls = batch.label_matrix(tree)[:, level - 1]
    if cls[i] < 0:
        raise ValueError(f"row {i} has no label at level {level}")
    F = batch.vectors
    if p is None:
        if not include_prototypes:
            raise ValueError("prototype positive requested without prototypes")
        num = float(bank.M[cls[i] - 1] @ F[i]) / tau
    else:
        num = float(F[p] @ F[i]) / tau
    terms = balanced_denominator_terms(batch, bank, tree, level, i, tau, include_prototypes)
    return float(np.log(sum(terms.values())) - num)


def project_and_normalize(raw: np.ndarray, projector: np.ndarray, return_norms: bool = False):
    """Rows of ``raw @ projector`` scaled to unit length.

    With ``return_norms`` also returns the pre-normalization norms, which with
    :func:`normalize_backward` gives the chain rule through the scaling.
    """
    g = np.asarray(raw, dtype=np.float64) @ np.asarray(projector, dtype=np.float64)
    norms = np.linalg.norm(g, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("cannot normalize a zero row")
    f = g / norms[:, None]
    return (f, norms) if return_norms else f


def normalize_backward(f: np.ndarray, norms: np.ndarray, grad_f: np.ndarray) -> np.ndarray:
    """Map d/df to d/dg for ``f = g/|g|``: ``(I - f f^T) grad / |g|``."""
    radial = np.sum(f * grad_f, axis=1, keepdims=True)
    return (grad_f - radial * f) / norms[:, None]
