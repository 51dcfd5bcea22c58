"""Batch command line interface.

Exit codes: 0 success, 1 input error (bad file, bad flag, mismatched
archives), 2 runtime failure (degenerate geometry, every frame failed).
Set ``POSELIFT_LOG`` to a logging level name (e.g. ``DEBUG``) for verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from . import analysis, augment, geometry, io, metrics, representations
from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateSpread,
    LabelMismatch,
    NonPositiveDepth,
    ParseError,
    PoseLiftError,
    RankDeficient,
)
from .poses import Frame, Pose2D, Pose3D
from .skeleton import DEFAULT_SKELETON, build_skeleton, load_skeleton

log = logging.getLogger("poselift")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
_RUNTIME_ERRORS = (DegenerateSpread, NonPositiveDepth, DegenerateConfiguration, RankDeficient,
                   BehindCamera)


class RunFailure(Exception):
    """Raised by a subcommand when the run itself failed (exit code 2)."""


def _parse_range(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric range {text!r}") from None
    return lo, hi, step


def _parse_proportions(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric proportions {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated proportions")
    return vals


def _camera(args, archive: io.PoseArchive | None = None) -> geometry.CameraIntrinsics:
    if not args.calib:
        raise ParseError("--calib is required for this subcommand")
    cams = io.read_calibration(args.calib)
    cid = args.camera or (archive.camera_id if archive is not None else None)
    if cid is None:
        if len(cams) != 1:
            raise ParseError(f"calibration has cameras {sorted(cams)}; choose one with --camera")
        cid = next(iter(cams))
    if cid not in cams:
        raise ParseError(f"camera {cid!r} not in calibration (has {sorted(cams)})")
    return cams[cid]


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# Subcommands -------------------------------------------------------------------

def cmd_project(args) -> int:
    sk = load_skeleton(args.skeleton)
    tree = build_skeleton(sk)
    arc = io.read_pose_archive(args.poses, sk)
    if arc.frame_type != "camera_global":
        raise ParseError(f"{args.poses}: project needs a camera_global archive, got {arc.frame_type}")
    cam = _camera(args, arc)

    def one(joints):
        if args.model == "pinhole":
            return geometry.pinhole_project(joints, cam)
        root = joints[tree.root]
        rel = Pose3D(joints - root, Frame.ROOT_RELATIVE, sk.name)
        return geometry.weak_perspective_project(rel, root, cam).points

    pts = np.stack(_map(one, list(arc.values), args.threads))
    out = io.PoseArchive(sk.name, "image", arc.frames, pts, arc.labels, arc.camera_id or args.camera)
    io.write_pose_archive(out, args.out)
    print(f"projected {len(out)} frames ({args.model}) -> {args.out}")
    return EXIT_OK


def cmd_lift(args) -> int:
    sk = load_skeleton(args.skeleton)
    tree = build_skeleton(sk)
    p3 = io.read_pose_archive(args.poses3d, sk)
    k2 = io.read_pose_archive(args.keypoints, sk)
    if p3.frame_type != "root_relative" or k2.frame_type != "image":
        raise ParseError("lift needs a root_relative 3D archive and an image keypoint archive")
    if len(p3) == 0:
        raise ParseError(f"{args.poses3d}: archive is empty; nothing to lift")
    if not np.array_equal(p3.frames, k2.frames):
        raise LabelMismatch("3D and 2D archives cover different frame indices")
    cam = _camera(args, k2)
    crops = io.read_crops(args.crops) if args.crops else {}

    def one(i):
        fr = int(p3.frames[i])
        try:
            pose = Pose3D(p3.values[i], Frame.ROOT_RELATIVE, sk.name)
            g, _ = geometry.lift_to_global(pose, Pose2D(k2.values[i], sk.name), cam,
                                           args.depth_mode, args.correction,
                                           crops.get(fr), tree)
            return g.joints
        except _RUNTIME_ERRORS as e:
            log.warning("frame %d skipped: %s", fr, e)
            return None

    results = _map(one, range(len(p3)), args.threads)
    ok = [i for i, r in enumerate(results) if r is not None]
    failed = len(results) - len(ok)
    print(f"lifted {len(ok)} frames, {failed} failed")
    if not ok:
        raise RunFailure("every frame failed to lift")
    labels = [p3.labels[i] for i in ok] if p3.labels is not None else None
    out = io.PoseArchive(sk.name, "camera_global", p3.frames[ok],
                         np.stack([results[i] for i in ok]), labels, k2.camera_id or args.camera)
    io.write_pose_archive(out, args.out)
    return EXIT_OK


def _paired(args, sk):
    pred = io.read_pose_archive(args.pred, sk)
    gt = io.read_pose_archive(args.gt, sk)
    if pred.frame_type != gt.frame_type:
        raise LabelMismatch(f"prediction is {pred.frame_type}, ground truth is {gt.frame_type}")
    if not np.array_equal(pred.frames, gt.frames):
        raise LabelMismatch("prediction and ground-truth archives cover different frame indices")
    labels = gt.labels if gt.labels is not None else pred.labels
    if gt.labels is not None and pred.labels is not None and gt.labels != pred.labels:
        raise LabelMismatch("prediction and ground-truth archives carry different labels")
    return pred, gt, labels


def cmd_evaluate(args) -> int:
    sk = load_skeleton(args.skeleton)
    pred, gt, labels = _paired(args, sk)
    cfg = metrics.EvalConfig.for_skeleton(sk, threshold=args.threshold, auc_range=args.auc_range,
                                          stride=args.stride, align=args.align)
    report = metrics.evaluate_arrays(pred.values, gt.values, labels, cfg)
    out = Path(args.out)
    io.write_text_atomic(out / "report.json", io._dump_json(report.to_dict()))
    io.write_text_atomic(out / "report.csv", report.to_csv())
    print(f"evaluated {report.frame_count} frames: MPJPE {report.mpjpe:.2f} mm, "
          f"3DPCK {report.pck:.4f}, AUC {report.auc:.4f}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    sk = load_skeleton(args.skeleton)
    arc = io.read_pose_archive(args.poses, sk)
    if arc.frame_type != "root_relative":
        raise ParseError(f"{args.poses}: clustering needs root_relative poses")
    cl = analysis.kmeans_poses(arc.poses(), args.k, args.seed, args.max_iters, args.tol)
    if args.class_map:
        cl = analysis.assign_classes(cl, io.read_class_map(args.class_map))
    io.write_clusters(cl, args.out)
    print(f"clustered {len(arc)} poses into {cl.k} clusters, inertia {cl.inertia:.6g}")
    return EXIT_OK


def cmd_retarget(args) -> int:
    if args.map:
        if not args.poses:
            raise ParseError("--map needs --poses to apply it to")
        rmap = io.read_retarget_map(args.map)
        arc = io.read_pose_archive(args.poses)
        mapped = [analysis.apply_retarget_map(rmap, p) for p in arc.poses()]
        io.write_pose_archive(io.PoseArchive.from_poses(arc.frames, mapped, arc.labels, arc.camera_id),
                              args.out)
        print(f"retargeted {len(mapped)} frames {rmap.source} -> {rmap.target}")
        return EXIT_OK
    if not (args.src and args.tgt):
        raise ParseError("retarget needs --src and --tgt to fit, or --map and --poses to apply")
    src = io.read_pose_archive(args.src)
    tgt = io.read_pose_archive(args.tgt)
    if not np.array_equal(src.frames, tgt.frames):
        raise LabelMismatch("source and target archives cover different frame indices")
    rmap = analysis.fit_retarget_map(src.poses(), tgt.poses(), args.ridge, args.affine)
    io.write_retarget_map(rmap, args.out)
    print(f"fitted {rmap.matrix.shape[0]}x{rmap.matrix.shape[1]} map on {len(src)} frames")
    return EXIT_OK


def cmd_augment(args) -> int:
    entries = io.read_manifest(args.manifest)
    ids = [e["id"] for e in entries]
    if args.plan:
        plan = io.read_plan(args.plan)
        missing = set(ids) - set(plan.tiers)
        if missing:
            raise ParseError(f"{args.plan}: no tier for frame(s) {sorted(missing)[:5]}")
    else:
        plan = augment.plan_augmentation(ids, args.proportions, args.seed)
    out = Path(args.out)

    def one(k):
        e = entries[k]
        frame = augment.load_image(e["frame"])
        m = {r: (augment.load_mask(e["masks"][r]) if r in e["masks"] else np.zeros(frame.shape[:2]))
             for r in augment.REGIONS}
        masks = augment.MaskSet(**m)
        tier = plan.tiers[e["id"]]
        # per-frame seed derived from the run seed and manifest position
        img = augment.composite(frame, masks, e["assets"], seed=args.seed * 1_000_003 + k,
                                regions=augment.TIER_REGIONS[tier], gain=args.gain)
        buf = BytesIO()
        Image.fromarray(img).save(buf, format="PNG")
        io.write_bytes_atomic(out / f"{e['id']}.png", buf.getvalue())

    _map(one, range(len(entries)), args.threads)
    io.write_text_atomic(out / "plan.json", io._dump_json(io.plan_to_dict(plan)))
    c = plan.counts()
    print(f"augmented {len(entries)} frames: none={c[augment.Tier.NONE]} "
          f"bg_chair={c[augment.Tier.BG_CHAIR]} full={c[augment.Tier.FULL]}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    sk = load_skeleton(args.skeleton)
    tree = build_skeleton(sk)
    p = io.read_pose_archive(args.p, sk)
    o1 = io.read_pose_archive(args.o1, sk)
    o2 = io.read_pose_archive(args.o2, sk)
    if not (np.array_equal(p.frames, o1.frames) and np.array_equal(p.frames, o2.frames)):
        raise LabelMismatch("P / O1 / O2 archives cover different frame indices")
    if (p.frame_type, o1.frame_type, o2.frame_type) != ("root_relative", "order1", "order2"):
        raise ParseError("fuse needs root_relative, order1 and order2 archives")
    triples = list(zip(p.poses(), o1.rel_poses(), o2.rel_poses()))
    if args.fit_gt:
        gt = io.read_pose_archive(args.fit_gt, sk)
        if not np.array_equal(p.frames, gt.frames):
            raise LabelMismatch("ground truth covers different frame indices")
        weights = representations.fit_fusion_weights(
            [(a, b, c, g) for (a, b, c), g in zip(triples, gt.poses())], tree, args.ridge)
        if args.weights_out:
            io.write_fusion_weights(weights, sk.name, args.weights_out)
    elif args.weights:
        weights, wsk = io.read_fusion_weights(args.weights)
        if wsk != sk.name:
            raise ParseError(f"{args.weights}: weights are for skeleton {wsk!r}, not {sk.name!r}")
    else:
        weights = representations.FusionWeights.uniform(sk.n_joints)
    fused = [representations.fuse(a, b, c, weights, tree) for a, b, c in triples]
    io.write_pose_archive(io.PoseArchive.from_poses(p.frames, fused, p.labels, p.camera_id), args.out)
    print(f"fused {len(fused)} frames")
    return EXIT_OK


# Parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--skeleton", default=DEFAULT_SKELETON,
                        help="skeleton config file or bundled id (default: %(default)s)")
    shared.add_argument("--calib", help="calibration JSON {camera_id: {f, cx, cy, width, height}}")
    shared.add_argument("--camera", help="camera id in the calibration file "
                        "(default: archive header, or the only camera)")
    shared.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    shared.add_argument("--threads", type=int, default=1, help="worker threads (default: %(default)s)")
    shared.add_argument("--out", required=True, help="output file or directory")

    p = argparse.ArgumentParser(prog="poselift", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("project", parents=[shared], help="project camera-space poses to 2D")
    s.add_argument("--poses", required=True, help="camera_global pose archive")
    s.add_argument("--model", choices=["pinhole", "weak"], default="pinhole",
                   help="projection model; 'weak' linearizes at the root depth (default: %(default)s)")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("lift", parents=[shared], help="place root-relative poses in camera space")
    s.add_argument("--poses3d", required=True, help="root_relative pose archive")
    s.add_argument("--keypoints", required=True, help="2D keypoint archive (frame_type image)")
    s.add_argument("--depth-mode", choices=[m.value for m in geometry.DepthMode], default="exact",
                   help="depth estimator (default: %(default)s)")
    s.add_argument("--correction", choices=[c.value for c in geometry.CorrectionSource],
                   default="centroid", help="perspective correction source (default: %(default)s)")
    s.add_argument("--no-persp-correction", dest="correction", action="store_const", const="off",
                   help="same as --correction off")
    s.add_argument("--crops", help="CSV frame,u,v,width,height for --correction crop "
                   "(default: 2D keypoint bounding box)")
    s.set_defaults(func=cmd_lift)

    s = sub.add_parser("evaluate", parents=[shared], help="MPJPE / 3DPCK / AUC report")
    s.add_argument("--pred", required=True, help="predicted pose archive")
    s.add_argument("--gt", required=True, help="ground-truth pose archive (same frames)")
    s.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD,
                   help="3DPCK threshold in mm (default: %(default)s)")
    s.add_argument("--auc-range", type=_parse_range, default=metrics.DEFAULT_AUC_RANGE,
                   help="AUC thresholds start:stop:step in mm (default: 0:150:5)")
    s.add_argument("--stride", type=int, default=1,
                   help="evaluate every n-th frame, starting at the first (default: %(default)s)")
    s.add_argument("--align", choices=[a.value for a in metrics.AlignMode], default="none",
                   help="alignment before scoring (default: %(default)s)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("cluster", parents=[shared], help="K-means pose clusters")
    s.add_argument("--poses", required=True, help="root_relative pose archive")
    s.add_argument("--k", type=int, default=analysis.DEFAULT_K, help="clusters (default: %(default)s)")
    s.add_argument("--max-iters", type=int, default=analysis.DEFAULT_MAX_ITERS,
                   help="Lloyd iteration cap (default: %(default)s)")
    s.add_argument("--tol", type=float, default=analysis.DEFAULT_TOL,
                   help="centroid shift tolerance in mm (default: %(default)s)")
    s.add_argument("--class-map", help="JSON {cluster_id: class_name}")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("retarget", parents=[shared], help="fit or apply a linear joint map")
    s.add_argument("--src", help="source pose archive (fit)")
    s.add_argument("--tgt", help="target pose archive (fit)")
    s.add_argument("--ridge", type=float, default=0.0, help="ridge lambda (default: %(default)s)")
    s.add_argument("--affine", action="store_true", help="add a constant offset column")
    s.add_argument("--map", help="map file to apply instead of fitting")
    s.add_argument("--poses", help="pose archive to apply --map to")
    s.set_defaults(func=cmd_retarget)

    s = sub.add_parser("augment", parents=[shared], help="chroma-key appearance augmentation")
    s.add_argument("--manifest", required=True, help="JSON frame/mask/asset bindings")
    s.add_argument("--plan", help="existing plan JSON (default: create one)")
    s.add_argument("--proportions", type=_parse_proportions, default=(0.25, 0.40, 0.35),
                   help="none,bg_chair,full fractions (default: 0.25,0.40,0.35)")
    s.add_argument("--gain", type=float, default=1.0, help="shading gain (default: %(default)s)")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("fuse", parents=[shared], help="fuse P / O1 / O2 estimates")
    s.add_argument("--p", required=True, help="root_relative archive")
    s.add_argument("--o1", required=True, help="order1 archive")
    s.add_argument("--o2", required=True, help="order2 archive")
    s.add_argument("--weights", help="fusion weights JSON (default: uniform)")
    s.add_argument("--fit-gt", help="fit weights against this ground-truth archive")
    s.add_argument("--ridge", type=float, default=0.0, help="ridge lambda for --fit-gt (default: %(default)s)")
    s.add_argument("--weights-out", help="write fitted weights here")
    s.set_defaults(func=cmd_fuse)
    return p


def main(argv=None) -> int:
    level = os.environ.get("POSELIFT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except RunFailure as e:
        print(f"poselift {args.command}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except _RUNTIME_ERRORS as e:
        print(f"poselift {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PoseLiftError, OSError) as e:
        print(f"poselift {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
