"""Hierarchical label tree: construction, ancestor lookup, level weights."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    HierarchyError,
    LevelOutOfRange,
    MultipleRoots,
    UnknownCategory,
    UnknownParent,
)

HierLabel = tuple  # node ids from level 1 down to the annotated node


@dataclass(frozen=True)
class NodeRecord:
    id: int
    name: str
    parent: int | None
    level: int
    is_other: bool = False


class LabelTree:
    """Immutable rooted tree over category names.

    Category nodes get dense ids ``0..C`` in breadth-first order (root is 0,
    siblings sorted by name). ``Other*`` nodes are annotation aliases: they
    receive ids ``C+1..`` after all categories, so they never take part in
    level partitions or prototype indexing.
    """

    def __init__(self, nodes: Sequence[NodeRecord]):
        self.nodes = tuple(nodes)
        self.root_id = 0
        self._by_name = {n.name: n for n in self.nodes}
        cats = [n for n in self.nodes if not n.is_other]
        self.num_categories = len(cats) - 1  # C, root excluded
        self.depth = max(n.level for n in cats)  # L
        self.parent = np.array([-1 if n.parent is None else n.parent for n in self.nodes], dtype=np.int64)
        self.level = np.array([n.level for n in self.nodes], dtype=np.int64)
        self.level_nodes = [
            tuple(n.id for n in cats if n.level == lvl) for lvl in range(self.depth + 1)
        ]
        # ancestors[id, l] = ancestor of id at level l (or -1 when l > level(id))
        anc = np.full((len(self.nodes), self.depth + 1), -1, dtype=np.int64)
        for n in self.nodes:
            cur = n.id
            while cur >= 0:
                anc[n.id, self.level[cur]] = cur
                cur = self.parent[cur]
        self.ancestors = anc
        children: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            if n.parent is not None:
                children[n.parent].append(n.id)
        self.children = {k: tuple(v) for k, v in children.items()}

    @property
    def L(self) -> int:
        return self.depth

    @property
    def root(self) -> NodeRecord:
        return self.nodes[0]

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, name):
        return name in self._by_name

    def node(self, key) -> NodeRecord:
        if isinstance(key, (int, np.integer)):
            return self.nodes[int(key)]
        try:
            return self._by_name[key]
        except KeyError:
            raise UnknownCategory(f"unknown category {key!r}") from None

    def id_of(self, name: str) -> int:
        return self.node(name).id

    def name_of(self, node_id: int) -> str:
        return self.nodes[node_id].name

    def category_ids(self) -> list[int]:
        """Non-root, non-alias node ids (the prototype rows, in order)."""
        return list(range(1, self.num_categories + 1))

    def leaves(self) -> list[int]:
        return [i for i in self.category_ids() if not any(
            not self.nodes[c].is_other for c in self.children[i])]

    def path(self, node_id: int) -> HierLabel:
        """Ids from level 1 down to ``node_id``."""
        lvl = int(self.level[node_id])
        return tuple(int(x) for x in self.ancestors[node_id, 1:lvl + 1])

    def label_matrix(self, labels: Sequence[HierLabel]) -> np.ndarray:
        """N x L matrix of level ancestors, -1 where a path stops early."""
        out = np.full((len(labels), self.depth), -1, dtype=np.int64)
        for i, lab in enumerate(labels):
            if len(lab):
                out[i, :len(lab)] = lab
        return out

    def validate_label(self, label: HierLabel) -> None:
        prev = self.root_id
        for k, node_id in enumerate(label):
            if not 0 < node_id <= self.num_categories:
                raise UnknownCategory(f"invalid category id {node_id}")
            if self.parent[node_id] != prev or self.level[node_id] != k + 1:
                raise HierarchyError(f"label {tuple(label)} is not a root-to-node path")
            prev = node_id

    def to_records(self) -> list[dict]:
        return [
            {"name": n.name,
             "parent": None if n.parent is None else self.nodes[n.parent].name,
             "other": n.is_other}
            for n in self.nodes
        ]


def build_tree(edges: Iterable[tuple[str, str | None]], other: Iterable[str] = ()) -> LabelTree:
    """Build a :class:`LabelTree` from ``(child, parent)`` name pairs.

    A pair with ``parent=None`` declares the root explicitly; every parent must
    then be declared as a child too. Without such a pair the root is the one
    name that only ever appears as a parent.
    """
    edges = list(edges)
    other = set(other)
    parent_of: dict[str, str | None] = {}
    for child, parent in edges:
        if child in parent_of and parent_of[child] != parent:
            raise HierarchyError(f"{child!r} has more than one parent")
        parent_of[child] = parent

    explicit = [c for c, p in parent_of.items() if p is None]
    if explicit:
        if len(explicit) > 1:
            raise MultipleRoots(f"several parentless nodes: {sorted(explicit)}")
        for child, parent in parent_of.items():
            if parent is not None and parent not in parent_of:
                raise UnknownParent(f"parent {parent!r} of {child!r} is not declared")
        root = explicit[0]
    else:
        roots = sorted({p for p in parent_of.values()} - set(parent_of))
        if len(roots) > 1:
            raise MultipleRoots(f"several parentless nodes: {roots}")
        if not roots:
            raise CycleDetected("no root: every node has a parent")
        root = roots[0]
        parent_of[root] = None
    if root in other:
        raise HierarchyError("the root cannot be an Other* category")

    children: dict[str, list[str]] = {name: [] for name in parent_of}
    for child, parent in parent_of.items():
        if parent is not None:
            children[parent].append(child)
    for name in other:
        if name not in parent_of:
            raise UnknownCategory(f"Other* category {name!r} is not in the edge list")
        if children[name]:
            raise HierarchyError(f"Other* category {name!r} must be a leaf")

    order, levels = [], {root: 0}
    queue = deque([root])
    while queue:
        name = queue.popleft()
        order.append(name)
        for child in sorted(children[name]):
            levels[child] = levels[name] + 1
            queue.append(child)
    unreached = set(parent_of) - set(order)
    if unreached:
        raise CycleDetected(f"nodes not reachable from root {root!r}: {sorted(unreached)}")

    cats = [n for n in order if n not in other]
    aliases = [n for n in order if n in other]
    ids = {name: i for i, name in enumerate(cats + aliases)}
    nodes = [
        NodeRecord(
            id=ids[name],
            name=name,
            parent=None if parent_of[name] is None else ids[parent_of[name]],
            level=levels[name],
            is_other=name in other,
        )
        for name in cats + aliases
    ]
    return LabelTree(nodes)


def tree_from_records(records: Sequence[dict]) -> LabelTree:
    """Records of the form ``{"name", "parent" (or null), "other"}``."""
    edges = [(r["name"], r.get("parent")) for r in records]
    other = [r["name"] for r in records if r.get("other", False)]
    return build_tree(edges, other)


def load_tree(path) -> LabelTree:
    """Load a hierarchy JSON file, or a bundled one by name (``fair1m``, ``shiprs``, ``toy3``)."""
    p = Path(path)
    if not p.exists():
        bundled = Path(__file__).parent / "data" / f"{path}.json"
        if bundled.exists():
            p = bundled
    with open(p) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc["nodes"]
    return tree_from_records(doc)


def ancestor_at_level(tree: LabelTree, node: int, level: int) -> int:
    node_level = int(tree.level[node])
    if level < 1 or level > node_level:
        raise LevelOutOfRange(f"level {level} outside 1..{node_level}")
    return int(tree.ancestors[node, level])


def penalty_weights(depth: int) -> np.ndarray:
    """Normalized exponential level weights, heaviest at the leaf level."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    z = 1.0 / (depth + 1.0 - np.arange(1, depth + 1))
    e = np.exp(z - z.max())
    return e / e.sum()


def resolve_label(tree: LabelTree, name: str) -> HierLabel:
    """Annotation name -> label path; ``Other*`` names resolve to their parent."""
    node = tree.node(name)
    if node.id == tree.root_id:
        raise UnknownCategory("the root is not an annotation target")
    target = node.parent if node.is_other else node.id
    return tree.path(target)
