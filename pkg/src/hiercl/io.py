"""File formats used by the command line: prototype banks, detection records, embedding batches."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .contrastive import EmbeddingBatch
from .geometry import RotatedBox
from .hierarchy import LabelTree, load_tree, resolve_label
from .metrics import Detection, GroundTruth
from .prototypes import PrototypeBank

BANK_MAGIC = "# hiercl-prototypes 1"


def dump_bank(bank: PrototypeBank, path) -> None:
    """Text matrix with a header naming the row count, width, epsilon and node order."""
    tree = bank.tree
    ids = tree.category_ids()
    override = "none" if bank.leaf_momentum_override is None else repr(float(bank.leaf_momentum_override))
    lines = [
        BANK_MAGIC,
        f"# rows {bank.M.shape[0]} dim {bank.dim} epsilon {bank.epsilon!r} leaf_override {override}",
        "# nodes " + " ".join(str(k) for k in ids),
        "# names " + json.dumps([tree.name_of(k) for k in ids]),
    ]
    lines += [" ".join(f"{x:.17g}" for x in bank.M[k - 1]) for k in ids]
    Path(path).write_text("\n".join(lines) + "\n")


def load_bank(path, tree: LabelTree) -> PrototypeBank:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != BANK_MAGIC:
        raise ValueError(f"{path}: not a prototype bank file")
    head = text[1].split()
    meta = dict(zip(head[1::2], head[2::2]))
    rows, dim = int(meta["rows"]), int(meta["dim"])
    ids = [int(k) for k in text[2].split()[2:]]
    names = json.loads(text[3][len("# names "):])
    expected = tree.category_ids()
    if ids != expected or names != [tree.name_of(k) for k in expected]:
        raise ValueError(f"{path}: node order does not match the hierarchy")
    body = np.array([[float(x) for x in line.split()] for line in text[4:] if line.strip()])
    if body.shape != (rows, dim):
        raise ValueError(f"{path}: expected a {rows}x{dim} matrix, found {body.shape}")
    M = np.empty_like(body)
    for r, k in enumerate(ids):
        M[k - 1] = body[r]
    override = None if meta["leaf_override"] == "none" else float(meta["leaf_override"])
    return PrototypeBank(M, tree, float(meta["epsilon"]), override)


def _read_jsonl(path):
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: {exc.msg}") from None


def _box(rec) -> RotatedBox:
    return RotatedBox.from_degrees(*(float(rec[k]) for k in ("cx", "cy", "w", "h", "deg")))


def read_detections(path) -> list[Detection]:
    return [Detection(r["image_id"], r["class"], float(r["score"]), _box(r)) for r in _read_jsonl(path)]


def read_ground_truth(path) -> list[GroundTruth]:
    return [GroundTruth(r["image_id"], r["class"], _box(r)) for r in _read_jsonl(path)]


def parse_label(tree: LabelTree, label) -> tuple:
    """A category name (``Other*`` resolves to its parent) or an explicit path of names."""
    if isinstance(label, str):
        return resolve_label(tree, label)
    path = tuple(tree.id_of(name) for name in label)
    tree.validate_label(path)
    return path


def read_batch(path, hierarchy=None):
    """Embedding batch file: ``{"hierarchy"?, "vectors", "labels", "prototypes"?}``.

    Returns ``(batch, tree, bank_path)``; ``bank_path`` is resolved relative
    to the batch file and is ``None`` when absent.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    source = hierarchy or doc.get("hierarchy")
    if source is None:
        raise ValueError(f"{path}: no hierarchy given")
    tree = load_tree(source)
    labels = [parse_label(tree, lab) for lab in doc["labels"]]
    vectors = np.asarray(doc["vectors"], dtype=np.float64)
    batch = EmbeddingBatch(vectors, labels, tree)
    bank = doc.get("prototypes")
    return batch, tree, (path.parent / bank if bank else None)


def jsonable(obj):
    """Plain JSON values; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(record) -> str:
    return json.dumps(jsonable(record), sort_keys=True, allow_nan=False)
