"""Synthetic long-tail data, embedding training loop, and evaluation reports.

Training optimizes a linear projector ``W`` (input_dim x dim) so that
``normalize(x @ W)`` minimizes the weighted contrastive loss on mini-batches
drawn from a hierarchical long-tail dataset. Held-out draws come from the
same class centers, so evaluation measures how well ``W`` generalizes.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .contrastive import (
    BHCL, BHCL_NO_PROTO, HCL, MODES, contrastive_terms, normalize_backward, project_and_normalize,
)
from .errors import DivergenceDetected
from .geometry import RotatedBox, l1_cost, rotated_iou
from .hierarchy import LabelTree, load_tree, penalty_weights
from .matching import CostWeights, Prediction, focal_cost
from .prototypes import PrototypeBank, class_means, ema_update, init_bank

log = logging.getLogger(__name__)

SEED_ENV = "HIERCL_SEED"


@dataclass
class LossWeights:
    bhcl: float = 0.6
    cls: float = 2.0
    iou: float = 2.0
    l1: float = 5.0
    tau: float = 0.1
    epsilon: float = 0.1

    def __post_init__(self):
        if self.bhcl < 0:
            raise ValueError("bhcl weight must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass
class SyntheticConfig:
    hierarchy: str = "toy3"
    n_train: int = 2400
    exponent: float = 0.0
    input_dim: int = 32
    dim: int = 16
    noise: float = 0.12
    offset_decay: float = 0.7
    other_fraction: float = 0.0
    heldout_per_leaf: int = 40
    batch_size: int = 64
    steps: int = 200
    lr: float = 0.05
    optimizer: str = "sgd"
    mode: str = BHCL
    bank_init: str = "data"
    leaf_momentum_override: float | None = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.n_train <= 0 or self.batch_size <= 0 or self.heldout_per_leaf <= 0:
            raise ValueError("counts must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError("optimizer must be 'sgd' or 'adamw'")
        if self.bank_init not in ("data", "random"):
            raise ValueError("bank_init must be 'data' or 'random'")

    @classmethod
    def from_dict(cls, doc: dict, env: dict | None = None) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**doc)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            cfg.seed = int(env[SEED_ENV])
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    tree: LabelTree
    centers: dict
    leaves: list
    counts: np.ndarray
    x_train: np.ndarray
    labels_train: list
    x_test: np.ndarray
    labels_test: list

    @property
    def head3_mass(self) -> float:
        c = np.sort(self.counts)[::-1]
        return float(c[:3].sum() / c.sum())

    def tail_leaves(self) -> list:
        """The least frequent half of the leaves."""
        order = np.argsort(self.counts, kind="stable")
        return [self.leaves[k] for k in order[: len(self.leaves) // 2]]


def long_tail_counts(n_leaves: int, total: int, exponent: float) -> np.ndarray:
    p = np.arange(1, n_leaves + 1, dtype=np.float64) ** -exponent
    p /= p.sum()
    return np.maximum(1, np.round(p * total)).astype(np.int64)


def _class_centers(tree: LabelTree, dim: int, decay: float, rng) -> dict:
    centers = {tree.root_id: np.zeros(dim)}
    for node in tree.nodes[1:]:
        if node.is_other:
            continue
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        centers[node.id] = centers[node.parent] + decay ** (node.level - 1) * direction
    return centers


def generate_synthetic(config: SyntheticConfig) -> SyntheticData:
    """Hierarchical class centers plus Gaussian noise with power-law leaf counts."""
    rng = np.random.default_rng(config.seed)
    tree = load_tree(config.hierarchy)
    centers = _class_centers(tree, config.input_dim, config.offset_decay, rng)
    leaves = tree.leaves()
    ranks = rng.permutation(len(leaves))  # which leaves are the head classes
    counts = long_tail_counts(len(leaves), config.n_train, config.exponent)[ranks]

    def draw(leaf_list):
        x = np.stack([centers[c] for c in leaf_list])
        return x + config.noise * rng.standard_normal(x.shape)

    train_leaves = np.repeat(leaves, counts)
    x_train = draw(train_leaves)
    labels_train = [tree.path(int(c)) for c in train_leaves]
    if config.other_fraction > 0:
        # some instances only carry an ancestor label, as reassigned Other* annotations do
        for k in np.flatnonzero(rng.random(len(labels_train)) < config.other_fraction):
            lab = labels_train[k]
            if len(lab) > 1:
                labels_train[k] = lab[: int(rng.integers(1, len(lab)))]
    test_leaves = np.repeat(leaves, config.heldout_per_leaf)
    x_test = draw(test_leaves)
    labels_test = [tree.path(int(c)) for c in test_leaves]
    return SyntheticData(tree, centers, list(leaves), counts, x_train, labels_train, x_test, labels_test)


def total_loss(components: dict, weights: LossWeights) -> float:
    """Weighted sum of the contrastive, classification, IoU and L1 terms."""
    return (weights.bhcl * components.get("bhcl", 0.0) + weights.cls * components.get("cls", 0.0)
            + weights.iou * components.get("iou", 0.0) + weights.l1 * components.get("l1", 0.0))


def detection_losses(preds, gts, pairs, cost: CostWeights = CostWeights()) -> dict:
    """Mean focal, (1 - IoU) and L1 terms over matched (gt, query) pairs."""
    if not pairs:
        return {"cls": 0.0, "iou": 0.0, "l1": 0.0}
    cls = [focal_cost(preds[q].class_probs, gts[g][0], cost.alpha, cost.gamma) for g, q in pairs]
    iou = [1.0 - rotated_iou(preds[q].box, gts[g][1]) for g, q in pairs]
    l1 = [l1_cost(preds[q].box, gts[g][1], cost.norm) for g, q in pairs]
    return {"cls": float(np.mean(cls)), "iou": float(np.mean(iou)), "l1": float(np.mean(l1))}


def synthetic_scene(rng: np.random.Generator, n_gt: int, n_queries: int, n_classes: int):
    """Random ground truths and noisy predictions around them, plus distractors."""
    gts = []
    for _ in range(n_gt):
        box = RotatedBox(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.2, 2), rng.uniform(-1.5, 1.5))
        gts.append((int(rng.integers(n_classes)), box))
    preds = []
    for q in range(n_queries):
        logits = rng.standard_normal(n_classes)
        if q < n_gt:
            label, b = gts[q]
            logits[label] += 3.0
            box = RotatedBox(b.cx + rng.normal(0, 0.01), b.cy + rng.normal(0, 0.01),
                             b.w * rng.uniform(0.9, 1.1), b.h * rng.uniform(0.9, 1.1), b.theta + rng.normal(0, 0.05))
        else:
            box = RotatedBox(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.2, 2), rng.uniform(-1.5, 1.5))
        p = np.exp(logits - logits.max())
        preds.append(Prediction(p / p.sum(), box))
    perm = rng.permutation(n_queries)
    return [preds[k] for k in perm], gts


# -- evaluation --------------------------------------------------------------

def class_mean_prototypes(F: np.ndarray, labels, tree: LabelTree, fallback: np.ndarray | None = None) -> np.ndarray:
    """Normalized mean embedding per category node (descendants included)."""
    anc = tree.label_matrix(labels)
    M = np.zeros((tree.num_categories, F.shape[1])) if fallback is None else fallback.copy()
    for c in tree.category_ids():
        sel = np.any(anc == c, axis=1)
        if sel.any():
            v = F[sel].sum(axis=0)
            norm = np.linalg.norm(v)
            if norm > 0:
                M[c - 1] = v / norm
    return M


def nearest_prototype_accuracy(F, labels, tree: LabelTree, protos: np.ndarray, level: int,
                               per_class: bool = False):
    anc = tree.label_matrix(labels)[:, level - 1]
    nodes = np.asarray(tree.level_nodes[level])
    rows = np.flatnonzero(anc >= 0)
    if rows.size == 0:
        return ({}, float("nan")) if per_class else float("nan")
    pred = nodes[np.argmax(F[rows] @ protos[nodes - 1].T, axis=1)]
    hit = pred == anc[rows]
    if not per_class:
        return float(hit.mean())
    accs = {int(c): float(hit[anc[rows] == c].mean()) for c in np.unique(anc[rows])}
    return accs, float(hit.mean())


def clustering_report(F: np.ndarray, labels, tree: LabelTree, protos: np.ndarray) -> list[dict]:
    """Per-level cosine statistics and nearest-prototype accuracy."""
    anc = tree.label_matrix(labels)
    cos = F @ F.T
    iu = np.triu_indices(len(F), k=1)
    out = []
    for level in range(1, tree.depth + 1):
        a = anc[:, level - 1]
        parent = anc[:, level - 2] if level > 1 else np.zeros(len(F), dtype=np.int64)
        both = (a[:, None] >= 0) & (a[None, :] >= 0)
        same = both & (a[:, None] == a[None, :])
        diff = both & (a[:, None] != a[None, :])
        sib = diff & (parent[:, None] == parent[None, :])
        cross = diff & (parent[:, None] != parent[None, :])

        def mean_over(mask):
            vals = cos[iu][mask[iu]]
            return float(vals.mean()) if vals.size else float("nan")

        out.append({
            "level": level,
            "intra": mean_over(same),
            "inter": mean_over(diff),
            "inter_sibling": mean_over(sib),
            "inter_cross_parent": mean_over(cross),
            "nearest_prototype_accuracy": nearest_prototype_accuracy(F, labels, tree, protos, level),
        })
    return out


# -- training ----------------------------------------------------------------

@dataclass
class TrainReport:
    config: dict
    losses: list
    per_level: list
    W: np.ndarray
    bank: PrototypeBank
    eval_prototypes: np.ndarray
    test_embeddings: np.ndarray
    clustering: list
    leaf_accuracy: float
    tail_accuracy: float
    head_accuracy: float
    per_class_accuracy: dict
    loss_decreasing: bool

    def summary(self) -> dict:
        return {
            "mode": self.config["mode"],
            "seed": self.config["seed"],
            "steps": len(self.losses),
            "initial_loss": self.losses[0] if self.losses else None,
            "final_loss": self.losses[-1] if self.losses else None,
            "loss_decreasing": self.loss_decreasing,
            "leaf_accuracy": self.leaf_accuracy,
            "tail_accuracy": self.tail_accuracy,
            "head_accuracy": self.head_accuracy,
            "clustering": self.clustering,
        }


class _AdamW:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = self.v = None
        self.t = 0

    def step(self, W, g):
        if self.m is None:
            self.m, self.v = np.zeros_like(W), np.zeros_like(W)
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return W * (1 - self.lr * self.wd) - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _check_divergence(losses, window=50, factor=10.0):
    if len(losses) > window and all(x > factor * losses[0] for x in losses[-window:]):
        raise DivergenceDetected(f"loss above {factor}x its initial value for {window} steps")


def train_embeddings(config: SyntheticConfig, data: SyntheticData | None = None, callback=None) -> TrainReport:
    """Gradient descent on the projector under the configured contrastive loss."""
    data = data or generate_synthetic(config)
    tree = data.tree
    rng = np.random.default_rng(config.seed + 1)
    w = config.weights
    lam = penalty_weights(tree.depth)
    W = rng.standard_normal((config.input_dim, config.dim)) / math.sqrt(config.input_dim)
    bank = init_bank(tree, config.dim, seed=config.seed + 2, epsilon=w.epsilon,
                     leaf_momentum_override=config.leaf_momentum_override)
    if config.bank_init == "data":
        F0 = project_and_normalize(data.x_train, W)
        bank = PrototypeBank(class_mean_prototypes(F0, data.labels_train, tree, bank.M), tree,
                             w.epsilon, config.leaf_momentum_override)
    anc_all = tree.label_matrix(data.labels_train)
    opt = _AdamW(config.lr) if config.optimizer == "adamw" else None
    losses, per_level = [], []
    n = len(data.x_train)
    for step in range(config.steps):
        idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
        x = data.x_train[idx]
        F, norms = project_and_normalize(x, W, return_norms=True)
        terms = contrastive_terms(F, anc_all[idx], lam, w.tau, config.mode, protos=bank.M,
                                  level_nodes=tree.level_nodes)
        loss = total_loss({"bhcl": terms.loss}, w)
        losses.append(loss)
        per_level.append(terms.per_level.tolist())
        grad_g = normalize_backward(F, norms, w.bhcl * terms.grad)
        grad_W = x.T @ grad_g
        W = opt.step(W, grad_W) if opt else W - config.lr * grad_W
        # EMA on the same batch, using the embeddings the loss saw
        bank = ema_update(bank, class_means(F, anc_all[idx]))
        _check_divergence(losses)
        if callback:
            callback(step, loss, terms.per_level)

    F_train = project_and_normalize(data.x_train, W)
    eval_protos = class_mean_prototypes(F_train, data.labels_train, tree, bank.M)
    F_test = project_and_normalize(data.x_test, W)
    per_class, leaf_acc = _leaf_accuracy(F_test, data, eval_protos)
    tail = set(data.tail_leaves())
    tail_acc = float(np.mean([per_class[c] for c in per_class if c in tail]))
    head_acc = float(np.mean([per_class[c] for c in per_class if c not in tail]))
    k = max(1, len(losses) // 10)
    return TrainReport(
        config=config.to_dict(), losses=losses, per_level=per_level, W=W, bank=bank,
        eval_prototypes=eval_protos, test_embeddings=F_test,
        clustering=clustering_report(F_test, data.labels_test, tree, eval_protos),
        leaf_accuracy=leaf_acc, tail_accuracy=tail_acc, head_accuracy=head_acc,
        per_class_accuracy=per_class,
        loss_decreasing=bool(losses and np.mean(losses[-k:]) < np.mean(losses[:k])),
    )


def _leaf_accuracy(F_test, data: SyntheticData, protos):
    """Per-leaf nearest-prototype accuracy among leaf prototypes (any depth)."""
    leaves = np.asarray(data.leaves)
    truth = np.array([lab[-1] for lab in data.labels_test])
    pred = leaves[np.argmax(F_test @ protos[leaves - 1].T, axis=1)]
    hit = pred == truth
    per_class = {int(c): float(hit[truth == c].mean()) for c in leaves}
    return per_class, float(np.mean(list(per_class.values())))


# 34-leaf long-tail preset for the balance comparison (head-3 mass about 0.84)
LONG_TAIL_PRESET = dict(hierarchy="fair1m", exponent=2.0, n_train=3000, steps=300)


def long_tail_config(**overrides) -> SyntheticConfig:
    return SyntheticConfig(**{**LONG_TAIL_PRESET, **overrides})


def ab_balance(config: SyntheticConfig, seeds, modes=(BHCL, HCL, BHCL_NO_PROTO)) -> list[dict]:
    """Train every mode on the same data per seed; one record per (seed, mode)."""
    rows = []
    for seed in seeds:
        cfg = SyntheticConfig(**{**config.to_dict(), "seed": seed})
        data = generate_synthetic(cfg)
        for mode in modes:
            run_cfg = SyntheticConfig(**{**cfg.to_dict(), "mode": mode})
            rep = train_embeddings(run_cfg, data)
            rows.append({"seed": seed, "mode": mode, "tail_accuracy": rep.tail_accuracy,
                         "head_accuracy": rep.head_accuracy, "leaf_accuracy": rep.leaf_accuracy,
                         "head3_mass": data.head3_mass, "final_loss": rep.losses[-1]})
    return rows


def ab_summary(rows: list[dict]) -> dict:
    """Per-seed comparisons between modes, counted as wins."""
    by_seed: dict = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["mode"]] = r

    def ratio(r):
        return r["tail_accuracy"] / r["head_accuracy"] if r["head_accuracy"] > 0 else float("nan")

    out = {"seeds": len(by_seed)}
    runs = list(by_seed.values())
    if all(BHCL in r and HCL in r for r in runs):
        out["bhcl_tail_beats_hcl"] = sum(r[BHCL]["tail_accuracy"] > r[HCL]["tail_accuracy"] for r in runs)
        out["bhcl_ratio_beats_hcl"] = sum(ratio(r[BHCL]) > ratio(r[HCL]) for r in runs)
    if all(BHCL in r and BHCL_NO_PROTO in r for r in runs):
        out["proto_tail_beats_noproto"] = sum(
            r[BHCL]["tail_accuracy"] > r[BHCL_NO_PROTO]["tail_accuracy"] for r in runs)
    return out


# -- gradient check ----------------------------------------------------------

def random_tree(rng: np.random.Generator, depth: int, min_children=2, max_children=6) -> LabelTree:
    from .hierarchy import build_tree

    edges, frontier, serial = [], ["root"], 0
    for _ in range(depth):
        nxt = []
        for parent in frontier:
            for _ in range(int(rng.integers(min_children, max_children + 1))):
                name = f"n{serial:04d}"
                serial += 1
                edges.append((name, parent))
                nxt.append(name)
        frontier = nxt
    return build_tree(edges)


def grad_check_trial(rng: np.random.Generator, step: float = 1e-5, tau: float = 0.1) -> dict:
    from .oracles import finite_difference_gradient

    depth = int(rng.integers(1, 4))
    tree = random_tree(rng, depth)
    dim = int(rng.choice([4, 16]))
    n = int(rng.integers(2, 11))
    leaves = tree.leaves()
    # draw from a few classes so positives exist
    pool = rng.choice(leaves, size=min(len(leaves), int(rng.integers(1, 5))), replace=False)
    labels = [tree.path(int(rng.choice(pool))) for _ in range(n)]
    labels = [lab[: int(rng.integers(1, len(lab) + 1))] if rng.random() < 0.2 else lab for lab in labels]
    F = rng.standard_normal((n, dim))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    bank = init_bank(tree, dim, seed=int(rng.integers(1 << 31)))
    anc = tree.label_matrix(labels)
    lam = penalty_weights(depth)

    def fn(X):
        return contrastive_terms(X, anc, lam, tau, BHCL, bank.M, tree.level_nodes, with_grad=False).loss

    g = contrastive_terms(F, anc, lam, tau, BHCL, bank.M, tree.level_nodes).grad
    fd = finite_difference_gradient(fn, F, step)
    return {"depth": depth, "dim": dim, "rows": n, "max_rel_error": relative_error(g, fd)}


def relative_error(g: np.ndarray, ref: np.ndarray) -> float:
    """Max over components of |g - ref| / max(|g|, |ref|, 1)."""
    scale = np.maximum(np.maximum(np.abs(g), np.abs(ref)), 1.0)
    return float(np.max(np.abs(g - ref) / scale))


def grad_check(seed: int = 0, trials: int = 100) -> list[dict]:
    rng = np.random.default_rng(seed)
    return [grad_check_trial(rng) for _ in range(trials)]
