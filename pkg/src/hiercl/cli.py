"""``hiercl`` command line.

Every command writes line-delimited JSON records to stdout and a short
human-readable summary to stderr (silenced by ``--quiet``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .contrastive import BHCL, MODES, LossConfig, bhcl_terms, hcl_loss
from .errors import HierclError
from .geometry import RotatedBox, rotated_iou
from .harness import (
    SyntheticConfig, ab_balance, ab_summary, grad_check, long_tail_config, train_embeddings,
)
from .hierarchy import load_tree
from .metrics import COCO_THRESHOLDS, average_precision
from .prototypes import init_bank

GRAD_TOL = 1e-5


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def record(self, rec: dict) -> None:
        sys.stdout.write(io.dumps(rec) + "\n")

    def say(self, text: str) -> None:
        if not self.quiet:
            sys.stderr.write(text + "\n")


def _parse_box(text: str) -> RotatedBox:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("a box is cx,cy,w,h,deg")
    return RotatedBox.from_degrees(*parts)


def _parse_seeds(text: str) -> list[int]:
    if "," in text or "-" in text[1:]:
        seeds = []
        for part in text.split(","):
            lo, _, hi = part.partition("-")
            seeds += list(range(int(lo), int(hi) + 1)) if hi else [int(lo)]
        return seeds
    return list(range(int(text)))


def _load_config(path, hierarchy, base=SyntheticConfig) -> SyntheticConfig:
    doc = json.loads(Path(path).read_text()) if path else {}
    if hierarchy:
        doc["hierarchy"] = hierarchy
    if base is SyntheticConfig:
        return SyntheticConfig.from_dict(doc)
    return SyntheticConfig.from_dict({**base().to_dict(), **doc})


def cmd_train(args, out: _Out) -> int:
    cfg = _load_config(args.config, args.hierarchy)

    def on_step(step, loss, per_level):
        if args.log_every and step % args.log_every == 0:
            out.record({"event": "step", "step": step, "loss": loss, "per_level": per_level})

    report = train_embeddings(cfg, callback=on_step)
    out.record({"event": "config", **cfg.to_dict()})
    out.record({"event": "summary", **report.summary()})
    if args.bank_out:
        io.dump_bank(report.bank, args.bank_out)
    leaf = report.clustering[-1]
    out.say(f"trained {cfg.steps} steps ({cfg.mode}, seed {cfg.seed}): loss "
            f"{report.losses[0]:.4f} -> {report.losses[-1]:.4f}, leaf accuracy {report.leaf_accuracy:.3f}, "
            f"tail {report.tail_accuracy:.3f}, head {report.head_accuracy:.3f}, "
            f"leaf intra {leaf['intra']:.3f} vs cross-parent {leaf['inter_cross_parent']:.3f}")
    return 0


def cmd_grad_check(args, out: _Out) -> int:
    rows = grad_check(args.seed, args.trials)
    for k, r in enumerate(rows):
        out.record({"event": "trial", "trial": k, **r})
    worst = max(r["max_rel_error"] for r in rows) if rows else 0.0
    ok = worst <= GRAD_TOL
    out.record({"event": "summary", "trials": len(rows), "worst_rel_error": worst, "tolerance": GRAD_TOL,
                "passed": ok})
    out.say(f"{len(rows)} trials, worst relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} at {GRAD_TOL:g})")
    return 0 if ok else 1


def cmd_ab_balance(args, out: _Out) -> int:
    cfg = _load_config(args.config, args.hierarchy, base=long_tail_config)
    rows = ab_balance(cfg, _parse_seeds(args.seeds))
    for r in rows:
        out.record({"event": "run", **r})
    summary = ab_summary(rows)
    out.record({"event": "summary", **summary})
    n = summary["seeds"]
    out.say(f"BHCL tail accuracy above HCL in {summary.get('bhcl_tail_beats_hcl')}/{n} seeds; "
            f"prototypes above no-prototype in {summary.get('proto_tail_beats_noproto')}/{n} seeds")
    return 0


def cmd_loss_eval(args, out: _Out) -> int:
    batch, tree, bank_path = io.read_batch(args.batch, args.hierarchy)
    if args.prototypes:
        bank_path = Path(args.prototypes)
    config = LossConfig(tau=args.tau, include_prototypes=args.mode == BHCL)
    if args.mode == "hcl":
        loss = hcl_loss(batch, tree, config)
        out.record({"event": "loss", "mode": "hcl", "loss": loss})
        out.say(f"hcl loss {loss:.10g}")
        return 0
    bank = None
    if args.mode == BHCL:
        if bank_path is None:
            raise HierclError("bhcl needs a prototype bank (batch 'prototypes' field or --prototypes)")
        bank = io.load_bank(bank_path, tree)
    terms = bhcl_terms(batch, bank, tree, config, with_grad=False)
    for level, value in enumerate(terms.per_level, 1):
        out.record({"event": "level", "level": level, "term": value})
    out.record({"event": "loss", "mode": args.mode, "loss": terms.loss})
    out.say(f"{args.mode} loss {terms.loss:.10g} (levels: "
            + ", ".join(f"{v:.6g}" for v in terms.per_level) + ")")
    return 0


def cmd_iou(args, out: _Out) -> int:
    value = rotated_iou(args.a, args.b)
    out.record({"event": "iou", "a": list(args.a.as_array()), "b": list(args.b.as_array()), "iou": value})
    out.say(f"IoU {value:.10f}")
    return 0


def cmd_ap(args, out: _Out) -> int:
    dets, gts = io.read_detections(args.dets), io.read_ground_truth(args.gts)
    means = {}
    for thr in COCO_THRESHOLDS:
        per_class, mean = average_precision(dets, gts, thr)
        means[thr] = mean
        for cls in sorted(per_class, key=str):
            out.record({"event": "class_ap", "iou_threshold": thr, "class": cls, "ap": per_class[cls]})
    ap50, ap75 = means[0.5], means[0.75]
    ap_all = float(np.mean(list(means.values()))) if gts else float("nan")
    out.record({"event": "summary", "AP50": ap50, "AP75": ap75, "AP50:95": ap_all,
                "detections": len(dets), "ground_truths": len(gts)})
    out.say(f"AP50 {ap50:.5f}  AP75 {ap75:.5f}  AP50:95 {ap_all:.5f}")
    return 0


def cmd_prototypes(args, out: _Out) -> int:
    tree = load_tree(args.hierarchy or "toy3")
    if args.action == "dump":
        bank = init_bank(tree, args.dim, seed=args.seed, epsilon=args.epsilon)
        io.dump_bank(bank, args.path)
        out.record({"event": "dump", "path": str(args.path), "rows": bank.M.shape[0], "dim": bank.dim})
        out.say(f"wrote {bank.M.shape[0]} prototypes of width {bank.dim} to {args.path}")
        return 0
    bank = io.load_bank(args.path, tree)
    norms = np.linalg.norm(bank.M, axis=1)
    out.record({"event": "load", "path": str(args.path), "rows": bank.M.shape[0], "dim": bank.dim,
                "epsilon": bank.epsilon, "max_norm_error": float(np.max(np.abs(norms - 1.0)))})
    out.say(f"{args.path}: {bank.M.shape[0]} x {bank.dim}, epsilon {bank.epsilon}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--hierarchy", help="hierarchy JSON file or bundled name (fair1m, shiprs, toy3)")
    common.add_argument("--quiet", action="store_true", help="no human summary on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hiercl", description="Balanced hierarchical contrastive loss toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train embeddings on synthetic long-tail data")
    s.add_argument("--config", help="JSON config with SyntheticConfig fields")
    s.add_argument("--log-every", type=int, default=10, help="emit a step record every N steps (0: never)")
    s.add_argument("--bank-out", help="write the final prototype bank here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("grad-check", parents=[common], help="analytic vs finite-difference gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("ab-balance", parents=[common], help="BHCL vs HCL vs no-prototype on long-tail data")
    s.add_argument("--seeds", default="5", help="a count (N -> 0..N-1) or a list like 0,3,7-9")
    s.add_argument("--config", help="JSON overrides on top of the long-tail preset")
    s.set_defaults(func=cmd_ab_balance)

    s = sub.add_parser("loss-eval", parents=[common], help="per-level loss terms for an embedding batch")
    s.add_argument("--batch", required=True)
    s.add_argument("--mode", choices=MODES, default=BHCL)
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--prototypes", help="prototype bank file (overrides the batch file's entry)")
    s.set_defaults(func=cmd_loss_eval)

    s = sub.add_parser("iou", parents=[common], help="rotated IoU of two boxes")
    s.add_argument("--a", type=_parse_box, required=True, metavar="cx,cy,w,h,deg")
    s.add_argument("--b", type=_parse_box, required=True, metavar="cx,cy,w,h,deg")
    s.set_defaults(func=cmd_iou)

    s = sub.add_parser("ap", parents=[common], help="COCO-style AP for rotated detections")
    s.add_argument("--dets", required=True)
    s.add_argument("--gts", required=True)
    s.set_defaults(func=cmd_ap)

    s = sub.add_parser("prototypes", parents=[common], help="write or check a prototype bank file")
    s.add_argument("action", choices=("dump", "load"))
    s.add_argument("path")
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.set_defaults(func=cmd_prototypes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, _Out(args.quiet))
    except (HierclError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"hiercl {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
