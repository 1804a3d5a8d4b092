"""Command-line entry point: ``panoscene <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import gradcheck, selftest
from .cluster import ClusterParams, instances_from_ssc
from .decode import affinity_scores, panoptic_aggregate
from .geometry import CameraModel, DepthMap, GridSpec, lift_features, unproject_depth, visibility_split, voxelize
from .io import FormatError, read_ften, read_voxl, write_ften, write_voxl
from .matching import match_segments
from .metrics import SEMANTIC_KITTI, evaluate, segments_from_grid
from .tensor import ShapeError

log = logging.getLogger("panoscene")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _dump_json(doc, path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def _grid_args(p):
    p.add_argument("--dims", type=int, nargs=3, metavar=("X", "Y", "Z"), default=[128, 128, 16])
    p.add_argument("--voxel-size", type=float, default=0.4)
    p.add_argument("--origin", type=float, nargs=3, metavar=("OX", "OY", "OZ"), default=[0.0, -25.6, -2.0])


def cmd_lift(args) -> int:
    cam = CameraModel.from_json(args.camera)
    grid = GridSpec(tuple(args.dims), args.voxel_size, tuple(args.origin))
    frustum_feats = lift_features(read_ften(args.f2d), read_ften(args.dr))
    v = voxelize(frustum_feats, cam, grid)
    write_ften(args.out, v)
    if args.depth:
        cloud = unproject_depth(DepthMap(read_ften(args.depth)), cam)
        visible, invisible, mask = visibility_split(v, cloud, grid)
        if args.out_vis:
            write_ften(args.out_vis, visible)
        if args.out_invis:
            write_ften(args.out_invis, invisible)
        print(f"visible_voxels\t{int(mask.sum())}")
    print(f"volume\t{'x'.join(map(str, v.shape))}")
    return EXIT_OK


def cmd_decode(args) -> int:
    aff = affinity_scores(read_ften(args.vf), read_ften(args.inst_feats))
    grid = panoptic_aggregate(aff, read_ften(args.il), args.upsample)
    spec = GridSpec(grid.shape, args.voxel_size / args.upsample, tuple(args.origin))
    write_voxl(args.out, grid, spec)
    print(f"instances\t{len(np.unique(grid.instance[grid.instance > 0]))}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    grid, spec = read_voxl(args.ssc)
    params = ClusterParams(args.eps, args.minpts, args.eps_units)
    things = args.thing_classes if args.thing_classes is not None else sorted(SEMANTIC_KITTI.thing_ids)
    out = instances_from_ssc(grid, spec, params, things)
    write_voxl(args.out, out, spec)
    print(f"instances\t{len(np.unique(out.instance[out.instance > 0]))}")
    return EXIT_OK


def cmd_match(args) -> int:
    pred, _ = read_voxl(args.pred)
    gt, _ = read_voxl(args.gt)
    ps, gs = segments_from_grid(pred), segments_from_grid(gt)
    rep = match_segments(ps, gs, args.threshold)
    doc = rep.to_json()
    doc["threshold"] = args.threshold
    doc["pred_segments"] = [{"class": s.class_id, "size": len(s)} for s in ps]
    doc["gt_segments"] = [{"class": s.class_id, "size": len(s)} for s in gs]
    _dump_json(doc, args.out)
    if args.out and args.out != "-":
        print(f"tp\t{len(rep.tp)}\nfp\t{len(rep.fp)}\nfn\t{len(rep.fn)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, _ = read_voxl(args.pred)
    gt, _ = read_voxl(args.gt)
    mode = "dagger" if args.mode == "dagger" else "strict"
    report = evaluate(pred, gt, SEMANTIC_KITTI, mode, args.threshold, args.mean_mode)
    doc = report.to_json()
    doc["config"] = {"mode": args.mode, "threshold": args.threshold, "mean_mode": args.mean_mode}
    if args.timestamps:
        doc["generated"] = datetime.now(timezone.utc).isoformat()
    if args.report:
        _dump_json(doc, args.report)
    lines = ["class\tpq\tsq\trq"]
    lines += [f"{name}\t{v['pq']:.2f}\t{v['sq']:.2f}\t{v['rq']:.2f}" for name, v in doc["per_class"].items()]
    for group in ("all", "thing", "stuff"):
        g = doc[group]
        lines.append(f"[{group}]\t{_fmt(g['pq'])}\t{_fmt(g['sq'])}\t{_fmt(g['rq'])}")
    lines.append(f"[pq_dagger]\t{_fmt(doc['pq_dagger']['all'])}\t\t")
    lines.append(f"[iou/miou]\t{doc['iou']:.2f}\t{doc['miou']:.2f}\t")
    print("\n".join(lines))
    if args.figure:
        from .plotting import plot_class_scores
        plot_class_scores(doc, args.figure)
    return EXIT_OK


def cmd_loss_check(args) -> int:
    rows = [gradcheck.check_loss(name, args.trials, args.seed) for name in gradcheck.CASES]
    print(gradcheck.format_table(rows))
    if args.figure:
        from .plotting import plot_gradient_check
        plot_gradient_check(rows, args.figure)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_DATA


def cmd_selftest(args) -> int:
    results = selftest.run(args.seed)
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}\t{name}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="panoscene", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("lift", help="lift pixel features into a voxel volume (FTEN in/out)")
    p.add_argument("--f2d", required=True, help="H*W*C context features")
    p.add_argument("--dr", required=True, help="H*W*D depth-bin probabilities")
    p.add_argument("--camera", required=True, help="camera JSON")
    p.add_argument("--depth", help="U*V metric depth map for the visibility split")
    p.add_argument("--out", required=True)
    p.add_argument("--out-vis")
    p.add_argument("--out-invis")
    _grid_args(p)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("decode", help="affinity + argmax panoptic aggregation to a VOXL grid")
    p.add_argument("--vf", required=True, help="X*Y*Z*C voxel features")
    p.add_argument("--if", dest="inst_feats", required=True, help="K*C instance features")
    p.add_argument("--il", required=True, help="K*L instance class logits")
    p.add_argument("--upsample", type=int, default=1)
    p.add_argument("--voxel-size", type=float, default=0.4, help="voxel size of the input grid")
    p.add_argument("--origin", type=float, nargs=3, default=[0.0, -25.6, -2.0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("cluster", help="DBSCAN instances for thing classes of a semantic grid")
    p.add_argument("--ssc", required=True)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--minpts", type=int, default=8)
    p.add_argument("--eps-units", choices=("meters", "voxels"), default="meters")
    p.add_argument("--thing-classes", type=int, nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("match", help="segment matching report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="PQ/SQ/RQ, PQ-dagger and IoU/mIoU")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("strict", "dagger"), default="strict")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--mean-mode", choices=("present", "all"), default="present")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--figure", help="per-class score chart (PNG/PDF/SVG by extension)")
    p.add_argument("--timestamps", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-check", help="analytic vs finite-difference gradient table")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figure")
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("selftest", help="run the brute-force oracle suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (FormatError, ShapeError, ValueError, KeyError, OSError) as exc:
        print(f"panoscene {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
