"""Command line entry point.

Subcommands: gen (synthesize a dataset), train (fit both distributions),
infer (dump samples and decoded predictions), eval (score predictions),
ablate (run the term/pointwise grid), render (draw sample-evolution
panels). Exit codes: 0 success, 2 bad usage or config, 3 runtime failure.
"""

import argparse
import dataclasses
import glob
import json
import multiprocessing
import os
import sys

import numpy as np

from .ablation import ablation_run
from .condnet import InferenceError, sample_k
from .config import ConfigError, RunConfig, load_config, save_config
from .prednet import decode, predict
from .render import render_predictions
from .scenes import DatasetFormatError, load_dataset, save_dataset
from .synthgen import (EmptyPoolError, PlacementError, filter_by_boxes,
                       make_scene)
from .scenes import rebuild_with_pool
from .train import (TrainingError, evaluate_params, fit, load_checkpoint,
                    save_checkpoint, write_log_csv)
from .evaluate import evaluate_predictions

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _resolved_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    env = os.environ.get("ANNOCONSIST_SEED")
    if env is not None:
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ConfigError("ANNOCONSIST_SEED must be an integer") from None
    # the master seed drives every stage, including training
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def _dataset_path(data: str, split: str) -> str:
    if os.path.isdir(data):
        return os.path.join(data, f"{split}.jsonl")
    return data


def _load_split(data: str, split: str) -> list:
    return load_dataset(_dataset_path(data, split))


def _gen_worker(payload):
    scene_cfg, prop_cfg, seed, sid = payload
    return make_scene(scene_cfg, prop_cfg, seed, sid)


def _gen_records(cfg: RunConfig, ids: range, jobs: int) -> list:
    payloads = [(cfg.scene, cfg.proposal, cfg.seed, sid) for sid in ids]
    if jobs <= 1 or len(payloads) <= 1:
        return [_gen_worker(p) for p in payloads]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(jobs) as pool:
        return pool.map(_gen_worker, payloads)


def cmd_gen(args) -> int:
    cfg = _resolved_config(args)
    os.makedirs(args.out, exist_ok=True)
    train_ids = range(0, cfg.n_scenes)
    eval_ids = range(cfg.n_scenes, cfg.n_scenes + cfg.n_eval_scenes)
    train_recs = _gen_records(cfg, train_ids, args.jobs)
    eval_recs = _gen_records(cfg, eval_ids, args.jobs)
    save_dataset(os.path.join(args.out, "train.jsonl"), train_recs)
    save_dataset(os.path.join(args.out, "eval.jsonl"), eval_recs)
    save_config(os.path.join(args.out, "config.json"), cfg)
    pools = [r.num_proposals for r in train_recs + eval_recs]
    print(f"wrote {len(train_recs)} train + {len(eval_recs)} eval scenes to "
          f"{args.out} (pool sizes {min(pools)}..{max(pools)})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    records = _load_split(args.data, args.split)
    res = fit(records, cfg.train, cfg.inference, cfg.loss,
              verbose=args.verbose)
    os.makedirs(args.out, exist_ok=True)
    for i, snap in enumerate(res.snapshots):
        last = i == len(res.snapshots) - 1
        name = ("checkpoint_final.json" if last
                else f"checkpoint_iter{snap['outer']:02d}.json")
        save_checkpoint(os.path.join(args.out, name), snap["cond"],
                        snap["pred"], meta={"outer": snap["outer"]})
    write_log_csv(os.path.join(args.out, "log.csv"), res.log)
    save_config(os.path.join(args.out, "config.json"), cfg)
    print(f"trained on {len(records)} scenes "
          f"({res.skipped_scenes} skipped); train map50="
          f"{res.final_map50:.4f}; wrote {args.out}")
    return EXIT_OK


def _sample_payload(rec, cond, cfg, tag: int) -> list:
    """K sample labelings over the scene's original pool indices."""
    tcfg = cfg.train
    if tcfg.supervision == "box" and rec.annotation.boxes is not None:
        keep = filter_by_boxes(rec.pool, rec.annotation.boxes,
                               tcfg.box_min_iou)
        if keep.size == 0:
            return []
        prep = rebuild_with_pool(rec, keep, cfg.proposal.dilation)
    else:
        keep = None
        prep = dataclasses.replace(rec,
                                   annotation=rec.annotation.without_boxes())
    try:
        samples = sample_k(cond, prep, tcfg.k, cfg.seed, cfg.inference,
                           term_mode=tcfg.term_mode,
                           zero_noise=tcfg.cond_pointwise, noise_tag=tag)
    except InferenceError:
        return []
    if keep is None:
        labels = samples.labels
    else:
        labels = np.zeros((samples.k, rec.num_proposals), dtype=np.int64)
        labels[:, keep] = samples.labels
    return [row.tolist() for row in labels]


def _decode_payload(pred, rec, cfg) -> list:
    state = predict(pred, rec)
    out = []
    for d in decode(state, rec, cfg.train.decode_thresh, cfg.train.decode_nms):
        out.append({"proposal_index": int(d.proposal_index),
                    "class_id": int(d.class_id),
                    "confidence": float(d.confidence)})
    return out


def cmd_infer(args) -> int:
    cfg = load_config(os.path.join(args.model, "config.json"))
    env = os.environ.get("ANNOCONSIST_SEED")
    if env is not None:
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ConfigError("ANNOCONSIST_SEED must be an integer") from None
    records = _load_split(args.data, args.split)
    iter_paths = sorted(glob.glob(os.path.join(args.model,
                                               "checkpoint_iter*.json")))
    final_path = os.path.join(args.model, "checkpoint_final.json")
    if not os.path.exists(final_path):
        raise ConfigError(f"{args.model}: missing checkpoint_final.json")
    scenes = []
    for rec in records:
        iterations = []
        for path in iter_paths:
            cond, pred, meta = load_checkpoint(path)
            tag = 0x7E57 + int(meta.get("outer", len(iterations)))
            iterations.append({
                "outer": int(meta.get("outer", len(iterations))),
                "samples": _sample_payload(rec, cond, cfg, tag),
                "decode": _decode_payload(pred, rec, cfg),
            })
        cond, pred, meta = load_checkpoint(final_path)
        final = {
            "outer": int(meta.get("outer", len(iter_paths))),
            "samples": _sample_payload(rec, cond, cfg, 0x7E57 + 0x99),
            "decode": _decode_payload(pred, rec, cfg),
        }
        scenes.append({"scene_id": rec.scene_id, "iterations": iterations,
                       "final": final})
    obj = {"format_version": 1, "k": cfg.train.k, "scenes": scenes}
    with open(args.out, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    print(f"wrote predictions for {len(scenes)} scenes to {args.out}")
    return EXIT_OK


class _EvalPred:
    __slots__ = ("class_id", "confidence", "mask")

    def __init__(self, class_id, confidence, mask):
        self.class_id = class_id
        self.confidence = confidence
        self.mask = mask


def _load_predictions(path: str) -> dict:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: invalid JSON ({exc})") from exc
    if obj.get("format_version") != 1:
        raise DatasetFormatError(f"{path}: unsupported prediction format")
    return obj


def cmd_eval(args) -> int:
    obj = _load_predictions(args.pred)
    records = _load_split(args.data, args.split)
    by_id = {rec.scene_id: rec for rec in records}
    thresholds = (0.25, 0.50, 0.70, 0.75)
    if args.config:
        thresholds = load_config(args.config).eval.thresholds
    preds_by_scene = {}
    for entry in obj["scenes"]:
        sid = entry["scene_id"]
        if sid not in by_id:
            continue
        rec = by_id[sid]
        preds_by_scene[sid] = [
            _EvalPred(d["class_id"], d["confidence"],
                      rec.pool[d["proposal_index"]])
            for d in entry["final"]["decode"]
        ]
    gts_by_scene = {sid: by_id[sid].gt for sid in preds_by_scene}
    res = evaluate_predictions(preds_by_scene, gts_by_scene, thresholds)
    for t in res.thresholds:
        print(f"mAP@{t:.2f}  {res.map_r[t]:.4f}")
    classes = sorted({j for (_, j) in res.per_class})
    for j in classes:
        row = "  ".join(f"{res.per_class[(t, j)]:.4f}" for t in res.thresholds)
        print(f"class {j}: {row}  (n={res.num_gt[j]})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolved_config(args)
    train_recs = _load_split(args.data, "train")
    eval_recs = _load_split(args.data, "eval")
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    result = ablation_run(train_recs, eval_recs, cfg.train, cfg.inference,
                          cfg.loss, seeds=seeds, verbose=args.verbose)
    result.to_csv(args.out)
    print(result.format_table())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    obj = _load_predictions(args.pred)
    records = _load_split(args.data, args.split)
    by_id = {rec.scene_id: rec for rec in records}
    paths = render_predictions(obj, by_id, args.out)
    print(f"wrote {len(paths)} panels to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annoconsist",
        description="Annotation-consistent weakly supervised instance "
                    "segmentation on synthetic scenes.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", help="run config JSON (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="fit both distributions")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--data", required=True, help="dataset directory or file")
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--split", default="train", help="dataset split name")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write samples and decoded predictions")
    p.add_argument("--model", required=True, help="model directory from train")
    p.add_argument("--data", required=True, help="dataset directory or file")
    p.add_argument("--out", required=True, help="output predictions JSON")
    p.add_argument("--split", default="eval", help="dataset split name")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a predictions file")
    p.add_argument("--pred", required=True, help="predictions JSON from infer")
    p.add_argument("--data", required=True, help="dataset directory or file")
    p.add_argument("--split", default="eval", help="dataset split name")
    p.add_argument("--config", help="run config JSON (for eval thresholds)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the term/pointwise ablation grid")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output CSV table")
    p.add_argument("--seeds", help="comma-separated seeds for averaging")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="draw per-scene sample-evolution panels")
    p.add_argument("--pred", required=True, help="predictions JSON from infer")
    p.add_argument("--data", required=True, help="dataset directory or file")
    p.add_argument("--out", required=True, help="output image directory")
    p.add_argument("--split", default="eval", help="dataset split name")
    p.set_defaults(func=cmd_render)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if exc.code is not None else 0
        return int(code)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError,
            NotADirectoryError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, InferenceError, PlacementError, EmptyPoolError,
            ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entry()
