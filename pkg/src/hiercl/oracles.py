"""Independent reference computations used by the verification commands.

These are deliberately naive: plain loops over the formulas, no shared code
with the vectorized paths they check.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from ._kernels import raster_iou_pairs


def _dot(u, v):
    return math.fsum(float(a) * float(b) for a, b in zip(u, v))


def pair_loss_oracle(F, i, p, tau):
    denom = math.fsum(math.exp(_dot(F[i], F[a]) / tau) for a in range(len(F)) if a != i)
    return -math.log(math.exp(_dot(F[i], F[p]) / tau) / denom)


def hcl_oracle(F, paths, weights, tau):
    """Level-weighted SCL by direct summation; paths are tuples of node ids."""
    n = len(F)
    total = []
    for i in range(n):
        for lvl, lam in enumerate(weights, start=1):
            if len(paths[i]) < lvl:
                continue
            pos = [p for p in range(n) if p != i and len(paths[p]) >= lvl
                   and paths[p][lvl - 1] == paths[i][lvl - 1]]
            if not pos:
                continue
            total.append(lam / len(pos) * math.fsum(pair_loss_oracle(F, i, p, tau) for p in pos))
    return math.fsum(total) / n


def scl_oracle(F, finest, tau):
    return hcl_oracle(F, [(c,) for c in finest], [1.0], tau)


def bhcl_oracle(F, paths, weights, tau, protos, level_nodes, use_prototypes=True):
    """Balanced hierarchical loss by direct summation.

    ``protos`` maps node id -> vector; ``level_nodes[l]`` lists level-l ids.
    """
    n = len(F)
    if n == 0:
        return 0.0
    total = []
    for i in range(n):
        for lvl, lam in enumerate(weights, start=1):
            if len(paths[i]) < lvl:
                continue
            own = paths[i][lvl - 1]
            denom_terms = []
            for c in level_nodes[lvl]:
                members = [a for a in range(n) if len(paths[a]) >= lvl and paths[a][lvl - 1] == c]
                vals = [math.exp(_dot(F[i], F[a]) / tau) for a in members if a != i]
                size = len(members)
                if use_prototypes:
                    vals.append(math.exp(_dot(F[i], protos[c]) / tau))
                    size += 1
                if size:
                    denom_terms.append(math.fsum(vals) / size)
            denom = math.fsum(denom_terms)
            sims = [_dot(F[i], F[p]) / tau for p in range(n) if p != i
                    and len(paths[p]) >= lvl and paths[p][lvl - 1] == own]
            if use_prototypes:
                sims.append(_dot(F[i], protos[own]) / tau)
            if not sims:
                continue
            losses = [math.log(denom) - s for s in sims]
            total.append(lam / len(sims) * math.fsum(losses))
    return math.fsum(total) / n


def finite_difference_gradient(fn, X, step=1e-5):
    """Central differences of scalar ``fn`` w.r.t. every entry of ``X``."""
    X = np.array(X, dtype=np.float64)
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        orig = X[idx]
        X[idx] = orig + step
        hi = fn(X)
        X[idx] = orig - step
        lo = fn(X)
        X[idx] = orig
        g[idx] = (hi - lo) / (2 * step)
    return g


def brute_force_assignment(cost):
    """Exhaustive minimum over injective gt -> query maps. Returns (total, pairs)."""
    cost = np.asarray(cost, dtype=np.float64)
    g, n = cost.shape
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n), g):
        total = math.fsum(cost[k, q] for k, q in enumerate(perm))
        if total < best:
            best, best_perm = total, perm
    if best_perm is None:
        return 0.0, []
    return best, [(k, q) for k, q in enumerate(best_perm)]


def monte_carlo_iou(boxes_a, boxes_b, samples=1_000_000):
    """Rasterized IoU of box pairs on a sqrt(samples)^2 grid over their joint extent."""
    side = int(round(math.sqrt(samples)))
    return raster_iou_pairs(np.atleast_2d(boxes_a), np.atleast_2d(boxes_b), side)
