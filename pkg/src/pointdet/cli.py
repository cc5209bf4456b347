"""Command-line entry point: ``pointdet <command> ...``.

Exit codes: 0 success, 2 bad input, 3 configuration error. Failures print a
one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import PipelineConfig, load_config
from .errors import ConfigError, FormatError
from .evaluation import evaluate
from .interp import FeatureCloud, multi_stage_interpolate
from .io import (
    atomic_write_bytes,
    atomic_write_text,
    dump_json,
    group_by_frame,
    load_boxes,
    load_manifest,
    load_pointcloud,
    save_boxes,
    save_pointcloud,
)
from .losses import make_aux_targets
from .nms import multi_group_nms
from .pointcloud import aggregate_sweeps, apply_augmentation, draw_augmentation
from .render import render_bev_svg
from .sampling import (
    build_gt_database,
    build_histogram,
    ds_sample_plan,
    gt_aug,
    kl_to_uniform,
    load_gt_database,
    planned_histogram,
    save_gt_database,
)
from .synth import generate_dataset
from .voxel import VoxelConfig, downsample, grid_summary, save_voxel_grid, voxelize

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_CONFIG = 3

AUX_DTYPE = np.dtype([("s", "u1"), ("dp", "<f4", (3,)), ("owner", "<i4")])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message, self.prog)
        sys.exit(EXIT_BAD_INPUT)


def _emit_error(kind: str, message: str, command: Optional[str]) -> None:
    rec = {"error": kind, "message": message, "command": command}
    print(json.dumps(rec), file=sys.stderr)


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _json_arg(text: str):
    p = Path(text)
    if p.exists():
        text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"cannot parse JSON argument: {e}") from None


def _seed(args, cfg: PipelineConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _print(obj) -> None:
    print(json.dumps(obj, indent=2))


def _with(obj, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return obj
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_synth(args, cfg):
    mix = _json_arg(args.class_mix) if args.class_mix else None
    n_sweeps = args.sweeps if args.sweeps is not None else cfg.sampling.n_sweeps
    manifest = generate_dataset(args.output, args.frames, _seed(args, cfg), n_sweeps, mix)
    _print({"output": str(args.output), "frames": len(manifest.frames), "sweeps_per_frame": n_sweeps})


def cmd_aggregate(args, cfg):
    manifest = load_manifest(args.dataset)
    n = args.sweeps if args.sweeps is not None else cfg.sampling.n_sweeps
    pc = aggregate_sweeps(manifest.load_sweepset(manifest.frame(args.frame)), n)
    save_pointcloud(pc, args.output)
    _print({"output": str(args.output), "points": pc.count, "n_sweeps": pc.meta["n_sweeps"]})


def _voxel_cfg(args, cfg) -> VoxelConfig:
    try:
        return VoxelConfig(
            args.range_min or cfg.voxel.range_min,
            args.range_max or cfg.voxel.range_max,
            args.voxel_size or cfg.voxel.voxel_size,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_voxelize(args, cfg):
    vcfg = _voxel_cfg(args, cfg)
    grid = voxelize(load_pointcloud(args.points), vcfg)
    if args.stride > 1:
        s = 1
        while s < args.stride:
            grid = downsample(grid, 2)
            s *= 2
    if args.output:
        save_voxel_grid(grid, args.output)
    summary = grid_summary(grid)
    summary["input_grid_dims"] = list(vcfg.grid_dims)
    _print(summary)


def cmd_sample_plan(args, cfg):
    manifest = load_manifest(args.dataset)
    cap = args.cap if args.cap is not None else cfg.sampling.cap
    hist = build_histogram(manifest)
    plan = ds_sample_plan(hist, manifest, cap=cap, rng_seed=_seed(args, cfg))
    after = planned_histogram(plan, manifest)
    classes = hist.present()
    doc = {
        "plan": plan.to_dict(),
        "histogram_before": hist.counts,
        "histogram_after": after.counts,
        "kl_to_uniform_before": kl_to_uniform(hist, classes),
        "kl_to_uniform_after": kl_to_uniform(after, classes),
    }
    if args.output:
        dump_json(args.output, doc)
    _print({k: v for k, v in doc.items() if k != "plan"} | {"frames": len(plan.copies),
                                                             "planned_frames": plan.total})


def cmd_gtaug(args, cfg):
    manifest = load_manifest(args.dataset)
    if args.db and Path(args.db, "summary.json").exists():
        db = load_gt_database(args.db)
    else:
        db = build_gt_database(manifest, threads=args.threads)
        if args.db:
            save_gt_database(db, args.db)
    quota = dict(cfg.sampling.quota)
    if args.quota:
        quota.update({str(k): int(v) for k, v in _json_arg(args.quota).items()})
    retry = args.retry_limit if args.retry_limit is not None else cfg.sampling.retry_limit
    fr = manifest.frame(args.frame)
    pc, boxes = gt_aug(manifest.load_points(fr), manifest.load_boxes(fr), db, quota,
                       _seed(args, cfg), retry)
    out = Path(args.output)
    save_pointcloud(pc, out / "points.bin")
    save_boxes(out / "boxes.json", boxes, with_score=False)
    report = {"frame": fr.frame_id, "points": pc.count, "boxes": len(boxes),
              "db_skipped": db.skipped, **pc.meta["gt_aug"]}
    dump_json(out / "report.json", report)
    _print(report)


def cmd_augment(args, cfg):
    acfg = _with(cfg.augment, seed=_seed(args, cfg), flip_prob=args.flip_prob,
                 trans_mode=args.trans_mode)
    draw = draw_augmentation(acfg)
    pc, boxes = apply_augmentation(load_pointcloud(args.points), load_boxes(args.boxes), draw)
    out = Path(args.output)
    save_pointcloud(pc, out / "points.bin")
    save_boxes(out / "boxes.json", boxes, with_score=False)
    dump_json(out / "transform.json", pc.meta["augment"])
    _print(pc.meta["augment"])


def cmd_aux_targets(args, cfg):
    pc = load_pointcloud(args.points)
    t = make_aux_targets(pc, load_boxes(args.boxes))
    rec = np.zeros(pc.count, dtype=AUX_DTYPE)
    rec["s"] = t.s
    rec["dp"] = t.dp
    rec["owner"] = t.owner
    atomic_write_bytes(args.output, _npy_bytes(rec))
    _print({"output": str(args.output), "points": pc.count, "foreground": t.num_pos})


def _npy_bytes(arr: np.ndarray) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def cmd_interp(args, cfg):
    radii = args.radii or list(cfg.interp.stage_radii)
    strides = args.strides or list(cfg.interp.stage_strides)
    if len(radii) != len(strides):
        raise ConfigError("--radii and --strides need the same number of entries")
    pc = load_pointcloud(args.points)
    grid = voxelize(pc, _voxel_cfg(args, cfg))
    stages = []
    for r, s in zip(radii, strides):
        g = grid
        while g.stride < s:
            g = downsample(g, 2)
        if g.stride != s:
            raise ConfigError(f"stride {s} is not a power of two")
        stages.append((FeatureCloud.from_voxel_grid(g), r))
    feats, covered = multi_stage_interpolate(pc.xyz, stages, cfg.interp.epsilon)
    out = Path(args.output)
    atomic_write_bytes(out / "features.npy", _npy_bytes(feats.astype("<f4")))
    atomic_write_bytes(out / "covered.npy", _npy_bytes(covered))
    summary = {
        "points": pc.count,
        "feature_dim": int(feats.shape[1]),
        "stages": [{"radius": r, "stride": s, "feature_points": len(fc.positions),
                    "covered": int(covered[:, k].sum())}
                   for k, ((fc, r), s) in enumerate(zip(stages, strides))],
    }
    dump_json(out / "summary.json", summary)
    _print(summary)


def cmd_nms(args, cfg):
    ncfg = _with(cfg.nms, score_thresh=args.score_thresh, iou_in_group=args.iou_in_group,
                 iou_cross_group=args.iou_cross_group, pre_nms_top_k=args.top_k,
                 max_per_group=args.max_per_group)
    dets = load_boxes(args.preds, require_score=True)
    frames = list(group_by_frame(dets).items())

    def run(item):
        return multi_group_nms(item[1], cfg.groups, ncfg)

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as ex:
            kept = list(ex.map(run, frames))
    else:
        kept = [run(f) for f in frames]
    out = [b for ks in kept for b in ks]
    if args.output:
        save_boxes(args.output, out, with_score=True, with_frame=True)
    _print({"input": len(dets), "kept": len(out), "config": dataclasses.asdict(ncfg)})


def cmd_eval(args, cfg):
    ecfg = cfg.eval
    if args.dist_ths:
        ecfg = _with(ecfg, dist_ths=tuple(args.dist_ths))
    ecfg = _with(ecfg, tp_mode=args.tp_mode)
    preds = load_boxes(args.preds, require_score=True)
    gts = load_boxes(args.gts)
    report = evaluate(preds, gts, ecfg)
    if args.output:
        dump_json(args.output, report.to_dict(include_pr=args.include_pr))
    if args.pr_csv:
        atomic_write_text(args.pr_csv, report.pr_csv())
    print(report.summary())


def cmd_render(args, cfg):
    pc = load_pointcloud(args.points) if args.points else None
    gts = load_boxes(args.gt) if args.gt else []
    preds = load_boxes(args.pred) if args.pred else []
    if args.frame is not None:
        gts = [b for b in gts if b.frame_id in ("", args.frame)]
        preds = [b for b in preds if b.frame_id in ("", args.frame)]
    svg = render_bev_svg(pc, gts, preds)
    atomic_write_text(args.output, svg)
    _print({"output": str(args.output), "gt": len(gts), "pred": len(preds)})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (defaults built in)")
    common.add_argument("--seed", type=int, help="u64 seed; overrides the config seed (default: 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")

    def out_arg(p, required=True, help="output path"):
        p.add_argument("--output", "-o", required=required, help=help)

    def voxel_args(p):
        p.add_argument("--voxel-size", type=_floats, help="sx,sy,sz in m (default: 0.1,0.1,0.2)")
        p.add_argument("--range-min", type=_floats, help="x,y,z in m (default: -50.4,-51.2,-5.0)")
        p.add_argument("--range-max", type=_floats, help="x,y,z in m (default: 50.4,51.2,3.0)")

    parser = _Parser(prog="pointdet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--frames", type=int, default=10, help="number of keyframes (default: 10)")
    p.add_argument("--sweeps", type=int, help="sweeps per frame incl. keyframe (default: 10)")
    p.add_argument("--class-mix", help="JSON object or file of class -> weight")
    out_arg(p, help="dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aggregate", parents=[common], help="merge a keyframe with its sweeps")
    p.add_argument("dataset")
    p.add_argument("--frame", required=True)
    p.add_argument("--sweeps", type=int, help="sweeps incl. keyframe (default: 10)")
    out_arg(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("voxelize", parents=[common], help="voxelize a point cloud")
    p.add_argument("points")
    voxel_args(p)
    p.add_argument("--stride", type=int, default=1, help="downsample to this power-of-two stride (default: 1)")
    out_arg(p, required=False, help="voxel grid dump path")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("sample-plan", parents=[common], help="class-balanced frame duplication plan")
    p.add_argument("dataset")
    p.add_argument("--cap", type=int, help="maximum copies per frame (default: 10)")
    out_arg(p, required=False)
    p.set_defaults(func=cmd_sample_plan)

    p = sub.add_parser("gtaug", parents=[common], help="paste database objects into a frame")
    p.add_argument("dataset")
    p.add_argument("--frame", required=True)
    p.add_argument("--db", help="ground-truth database directory (built and saved if missing)")
    p.add_argument("--quota", help="JSON object or file of class -> target count")
    p.add_argument("--retry-limit", type=int, help="draws per requested object (default: 20)")
    out_arg(p, help="output directory")
    p.set_defaults(func=cmd_gtaug)

    p = sub.add_parser("augment", parents=[common], help="random global flip/rotate/scale/shift")
    p.add_argument("points")
    p.add_argument("boxes")
    p.add_argument("--flip-prob", type=float, help="probability of flipping y (default: 0.5)")
    p.add_argument("--trans-mode", choices=["gaussian", "uniform"],
                   help="translation noise, sigma/half-width 0.2 m (default: gaussian)")
    out_arg(p, help="output directory")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("aux-targets", parents=[common], help="per-point foreground and center offsets")
    p.add_argument("points")
    p.add_argument("boxes")
    out_arg(p, help="output .npy sidecar")
    p.set_defaults(func=cmd_aux_targets)

    p = sub.add_parser("interp", parents=[common], help="multi-stage inverse-distance features")
    p.add_argument("points")
    voxel_args(p)
    p.add_argument("--radii", type=_floats, help="ball radius per stage in m (default: 0.2,0.4,0.8)")
    p.add_argument("--strides", type=_ints, help="voxel stride per stage (default: 1,2,4)")
    out_arg(p, help="output directory")
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("nms", parents=[common], help="multi-group NMS over a detection file")
    p.add_argument("preds")
    p.add_argument("--score-thresh", type=float, help="drop scores below this (default: 0.1)")
    p.add_argument("--iou-in-group", type=float, help="BEV IoU threshold within a group (default: 0.2)")
    p.add_argument("--iou-cross-group", type=float, help="BEV IoU threshold across groups (default: 0.3)")
    p.add_argument("--top-k", type=int, help="pre-NMS proposals kept per group (default: 1000)")
    p.add_argument("--max-per-group", type=int, help="boxes kept per group after NMS (default: 80)")
    out_arg(p, required=False)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", parents=[common], help="score detections: mAP, TP errors, NDS")
    p.add_argument("preds")
    p.add_argument("gts")
    p.add_argument("--dist-ths", type=_floats, help="matching distances in m (default: 0.5,1,2,3)")
    p.add_argument("--tp-mode", choices=["per_match", "recall_averaged"],
                   help="TP error aggregation (default: per_match)")
    p.add_argument("--include-pr", action="store_true", help="embed sampled PR curves in the report")
    p.add_argument("--pr-csv", help="also write sampled PR curves as CSV")
    out_arg(p, required=False, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="BEV SVG of points and boxes")
    p.add_argument("points", nargs="?")
    p.add_argument("--gt", help="ground-truth box JSON")
    p.add_argument("--pred", help="prediction box JSON")
    p.add_argument("--frame", help="only draw boxes of this frame_id")
    out_arg(p, help="SVG path")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        args.func(args, cfg)
    except ConfigError as e:
        _emit_error("config", str(e), args.command)
        return EXIT_CONFIG
    except (FormatError, OSError, KeyError, ValueError) as e:
        _emit_error(type(e).__name__, str(e), args.command)
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
