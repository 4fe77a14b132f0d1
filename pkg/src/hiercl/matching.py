"""Query-to-ground-truth bipartite matching with a focal + rotated IoU + L1 cost."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleShape
from .geometry import RotatedBox, l1_cost, rotated_iou, rotated_iou_matrix, boxes_to_array, wrap_angle


@dataclass(frozen=True)
class Prediction:
    class_probs: np.ndarray
    box: RotatedBox

    def __post_init__(self):
        p = np.asarray(self.class_probs, dtype=np.float64)
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("class_probs must be a probability vector")
        object.__setattr__(self, "class_probs", p)


@dataclass(frozen=True)
class CostWeights:
    cls: float = 2.0
    iou: float = 5.0
    l1: float = 2.0
    alpha: float = 0.25
    gamma: float = 2.0
    norm: float = 1.0  # image extent used to scale the L1 term

    def __post_init__(self):
        if min(self.cls, self.iou, self.l1) < 0 or self.cls == self.iou == self.l1 == 0:
            raise ValueError("cost weights must be non-negative and not all zero")


def focal_cost(probs, target: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    pt = min(max(float(probs[target]), 1e-12), 1.0)
    return alpha * (1.0 - pt) ** gamma * -math.log(pt)


def match_cost(pred: Prediction, gt: tuple[int, RotatedBox], w: CostWeights = CostWeights()) -> float:
    label, box = gt
    return (w.cls * focal_cost(pred.class_probs, label, w.alpha, w.gamma)
            + w.iou * (1.0 - rotated_iou(pred.box, box))
            + w.l1 * l1_cost(pred.box, box, w.norm))


def cost_matrix(preds, gts, w: CostWeights = CostWeights()) -> np.ndarray:
    """G x N matrix: rows are ground truths, columns are queries."""
    if not gts or not preds:
        return np.zeros((len(gts), len(preds)))
    P = np.stack([p.class_probs for p in preds])
    labels = np.array([g[0] for g in gts])
    pt = np.clip(P[:, labels].T, 1e-12, 1.0)
    focal = w.alpha * (1.0 - pt) ** w.gamma * -np.log(pt)
    pb = boxes_to_array([p.box for p in preds])
    gb = boxes_to_array([g[1] for g in gts])
    iou = rotated_iou_matrix(gb, pb)
    lin = np.abs(gb[:, None, :4] - pb[None, :, :4]).sum(axis=-1) / w.norm
    dtheta = np.vectorize(wrap_angle)(gb[:, None, 4] - pb[None, :, 4])
    return w.cls * focal + w.iou * (1.0 - iou) + w.l1 * (lin + np.abs(dtheta) / math.pi)


def _shortest_augmenting_path(cost: np.ndarray):
    """Rectangular Hungarian method (rows <= cols). Returns (row->col, u, v)."""
    n, m = cost.shape
    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _has_matching(adj, rows, banned_cols, m, saturate_cols=None):
    """Kuhn's algorithm: can every row in ``rows`` (or every column in
    ``saturate_cols``) be matched inside ``adj`` avoiding ``banned_cols``?"""
    if saturate_cols is not None:
        # saturating columns == saturating rows of the transposed graph
        cols_adj = {c: [r for r in rows if c in adj[r]] for c in saturate_cols}
        return _has_matching(cols_adj, list(saturate_cols), set(), None)
    match: dict = {}

    def try_row(r, seen):
        for c in adj[r]:
            if c in banned_cols or c in seen:
                continue
            seen.add(c)
            if c not in match or try_row(match[c], seen):
                match[c] = r
                return True
        return False

    return all(try_row(r, set()) for r in rows)


def hungarian(cost) -> tuple[list[tuple[int, int]], list[int]]:
    """Minimum-cost injective map from ground truths (rows) to queries (columns).

    Returns ``(pairs, background)`` with ``pairs`` as ``(gt, query)`` sorted by
    gt and ``background`` the unmatched query indices. Among equal-cost optima
    the lexicographically smallest assignment is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    g, n = cost.shape
    if n < g:
        raise InfeasibleShape(f"{g} ground truths cannot be matched to {n} queries")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    if g == 0:
        return [], list(range(n))
    row_to_col, u, v = _shortest_augmenting_path(cost)
    best = [int(c) for c in row_to_col]
    best_total = math.fsum(cost[k, c] for k, c in enumerate(best))

    # lexicographic tie-break over optimal solutions: tight edges under the
    # optimal duals, columns with negative potential must stay matched
    tol = 1e-9 * (1.0 + float(np.abs(cost).max()))
    reduced = cost - u[:, None] - v[None, :]
    adj = [set(np.flatnonzero(reduced[k] <= tol).tolist()) for k in range(g)]
    must = set(np.flatnonzero(v < -tol).tolist())
    chosen: list[int] = []
    for k in range(g):
        rest = list(range(k + 1, g))
        for c in sorted(adj[k]):
            if c in chosen:
                continue
            taken = set(chosen) | {c}
            sub = {r: adj[r] - taken for r in rest}
            if not _has_matching(sub, rest, set(), n):
                continue
            if not _has_matching(sub, rest, set(), n, saturate_cols=must - taken):
                continue
            chosen.append(c)
            break
        else:
            chosen = best
            break
    total = math.fsum(cost[k, c] for k, c in enumerate(chosen))
    if total > best_total + tol:
        chosen = best
    used = set(chosen)
    return [(k, c) for k, c in enumerate(chosen)], [q for q in range(n) if q not in used]
