"""Command-line entry point: ``tiny3det {info,detect,eval,anchors,bench}``."""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .anchors import DEFAULT_ANCHOR_SET, AnchorSet, WHBox, assign_anchors_to_scales, kmeans_anchors
from .bench import per_layer_profile, pipeline_step, time_pipeline
from .detect import detect_pipeline
from .errors import InsufficientData, NoGroundTruth, Tiny3Error
from .evalkit import map_report
from .graph import (YOLO, build_custom_tiny3, build_original_tiny, layer_output_shapes,
                    load_darknet_weights, random_network)
from .image_io import draw_boxes, load_ppm, read_detections, read_labels, write_detections, write_ppm
from .tensor import Tensor3
from .train import PreprocessConfig, preprocess


class CliError(Exception):
    """Usage problem detected before any work starts."""


def layer_table(spec):
    """Rows ``Layer, Type, Size/Stride, Filters, Output``, tab separated."""
    shapes = layer_output_shapes(spec)
    rows = ["Layer\tType\tSize/Stride\tFilters\tOutput"]
    for i, (layer, shape) in enumerate(zip(spec.layers, shapes)):
        kind, size, filters = layer.describe()
        shown = "" if layer.kind == YOLO or kind.startswith("Route") else str(shape)
        rows.append(f"{i}\t{kind}\t{size}\t{filters}\t{shown}".rstrip("\t"))
    return "\n".join(rows) + "\n"


def _anchor_set(args):
    if not args.anchors:
        return DEFAULT_ANCHOR_SET
    path = Path(args.anchors)
    text = path.read_text() if path.is_file() else args.anchors
    return AnchorSet.parse(text.strip().splitlines()[0])


def _spec(args):
    build = build_original_tiny if args.arch == "original" else build_custom_tiny3
    anchors = _anchor_set(args) if getattr(args, "anchors", None) else DEFAULT_ANCHOR_SET
    return build(args.size, args.classes, anchors)


def _network(args):
    spec = _spec(args)
    if args.weights:
        return load_darknet_weights(spec, Path(args.weights).read_bytes())
    if args.random_weights:
        return random_network(spec, seed=args.seed)
    raise CliError("--weights or --random-weights is required")


def _image_paths(args):
    if args.image:
        paths = [Path(args.image)]
    elif args.images:
        paths = sorted(Path(args.images).glob("*.ppm"))
        if not paths:
            raise CliError(f"no .ppm images in {args.images}")
    else:
        raise CliError("--image or --images is required")
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"image not found: {p}")
    return paths


def _detect_image(net, path, args, anchors):
    img = load_ppm(path)
    x = preprocess(img.pixels, PreprocessConfig(target_size=net.spec.input_size))
    dets = detect_pipeline(x, net, anchors, args.conf, args.nms_iou, img.width, img.height,
                           img.id)
    return img, dets


def cmd_info(args, out):
    out.write(layer_table(_spec(args)))
    return 0


def cmd_detect(args, out):
    paths = _image_paths(args)
    net = _network(args)
    anchors = _anchor_set(args)
    out_dir = Path(args.out or "detections")
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".jsonl" if args.jsonl else ".txt"
    for path in paths:
        img, dets = _detect_image(net, path, args, anchors)
        (out_dir / (img.id + suffix)).write_text(write_detections(dets, img.id, args.jsonl))
        if args.annotate:
            (out_dir / (img.id + "_det.ppm")).write_bytes(write_ppm(draw_boxes(img, dets)))
        out.write(f"{img.id}: {len(dets)} detections\n")
    return 0


def _image_dims(args):
    """Image id -> (width, height) read from PPM headers when --images is given."""
    if not args.images:
        return {}
    return {p.stem: (img.width, img.height)
            for p in sorted(Path(args.images).glob("*.ppm")) for img in [load_ppm(p)]}


def _load_ground_truth(labels_dir, dims, default):
    gts = []
    for path in sorted(Path(labels_dir).glob("*.txt")):
        w, h = dims.get(path.stem, default)
        gts.extend(read_labels(path.read_text(), w, h, path.stem))
    return gts


def cmd_eval(args, out):
    if not args.labels:
        raise CliError("--labels is required")
    targets = [float(t) for t in args.iou_targets.split(",") if t.strip()]
    dims = _image_dims(args)
    gts = _load_ground_truth(args.labels, dims, (args.size, args.size))
    if not gts:
        raise NoGroundTruth(f"no ground-truth boxes under {args.labels}")
    if args.dets:
        src = Path(args.dets)
        files = sorted(f for f in src.iterdir() if f.suffix in (".txt", ".jsonl")) if src.is_dir() else [src]
        dets = [d for f in files for d in read_detections(f.read_text())]
    else:
        net = _network(args)
        anchors = _anchor_set(args)
        dets = []
        saved_conf, args.conf = args.conf, 0.0
        try:
            for path in _image_paths(args):
                dets.extend(_detect_image(net, path, args, anchors)[1])
        finally:
            args.conf = saved_conf
    report = map_report(dets, gts, targets, args.conf, inclusive=args.iou_ge)
    out.write(report.to_text())
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in report.results:
        for cls, curve in r.curves.items():
            name = f"pr_curve_iou{r.iou_target:.2f}_class{cls}.csv"
            (out_dir / name).write_text(curve.to_text())
    return 0


def cmd_anchors(args, out):
    if not args.labels:
        raise CliError("--labels is required")
    boxes = []
    for path in sorted(Path(args.labels).glob("*.txt")):
        for gt in read_labels(path.read_text(), args.size, args.size, path.stem):
            x0, y0, x1, y1 = gt.box
            if x1 > x0 and y1 > y0:
                boxes.append(WHBox(x1 - x0, y1 - y0))
    if len(boxes) < args.k:
        raise InsufficientData(f"need at least {args.k} boxes, found {len(boxes)}")
    res = kmeans_anchors(boxes, args.k, args.seed, args.iterations or 300)
    if args.k == 9:
        line = assign_anchors_to_scales(res.centroids).to_line()
    else:
        line = ",".join(f"{v:.2f}" for b in res.centroids for v in (b.w, b.h))
    out.write(line + "\n")
    out.write(f"mean IOU {res.mean_iou:.6f}\n")
    if args.out:
        Path(args.out).write_text(line + "\n")
    return 0


def cmd_bench(args, out):
    net = _network(args)
    if args.image:
        raw = load_ppm(args.image).pixels
    else:
        rng = np.random.default_rng(args.seed)
        raw = Tensor3(rng.integers(0, 256, size=(args.size, args.size, 3)))
    step = pipeline_step(net, raw, args.conf, args.nms_iou, _anchor_set(args))
    report = time_pipeline(step, args.iterations or 20, args.warmup, soak_seconds=args.soak_seconds,
                           parallel=args.parallel)
    if args.per_layer:
        x = preprocess(raw, PreprocessConfig(target_size=net.spec.input_size))
        report.per_layer = per_layer_profile(net, x, 1, parallel=args.parallel)
    out.write(report.to_text())
    out.write(report.to_json() + "\n")
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


COMMANDS = {"info": cmd_info, "detect": cmd_detect, "eval": cmd_eval,
            "anchors": cmd_anchors, "bench": cmd_bench}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--arch", choices=("original", "custom3"), default="custom3")
    common.add_argument("--size", type=int, default=608, help="network input side")
    common.add_argument("--classes", type=int, default=1)
    common.add_argument("--anchors", help="18 comma-separated numbers, or a file holding them")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--eq5-literal", action="store_true",
                        help="reserved: printed-form AdamW update for optimizer demos")

    engine = argparse.ArgumentParser(add_help=False)
    engine.add_argument("--weights", help="darknet .weights file")
    engine.add_argument("--random-weights", action="store_true",
                        help="seeded random parameters instead of a weights file")
    engine.add_argument("--image", help="single P6 .ppm image")
    engine.add_argument("--images", help="directory of P6 .ppm images")
    engine.add_argument("--conf", type=float, default=0.25, help="confidence threshold c")
    engine.add_argument("--nms-iou", type=float, default=0.45)

    parser = argparse.ArgumentParser(prog="tiny3det", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("info", parents=[common], help="print the layer table")

    p = sub.add_parser("detect", parents=[common, engine], help="run detection on images")
    p.add_argument("--annotate", action="store_true", help="also write boxed copies of the images")
    p.add_argument("--jsonl", action="store_true", help="one JSON object per detection")

    p = sub.add_parser("eval", parents=[common, engine], help="precision, recall and mAP")
    p.add_argument("--labels", help="directory of per-image label files")
    p.add_argument("--dets", help="detection file or directory of detection files")
    p.add_argument("--iou-targets", default="0.5,0.75")
    p.add_argument("--iou-ge", action="store_true", help="match on IOU >= target")

    p = sub.add_parser("anchors", parents=[common], help="cluster label boxes into anchors")
    p.add_argument("--labels", help="directory of per-image label files")
    p.add_argument("--k", type=int, default=9, help="number of clusters")
    p.add_argument("--iterations", type=int, help="maximum Lloyd iterations (default 300)")

    p = sub.add_parser("bench", parents=[common, engine], help="time the pipeline")
    p.add_argument("--iterations", type=int, help="timed iterations (default 20)")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--soak-seconds", type=float, default=0.0)
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--parallel", action="store_true", help="allow multithreaded BLAS")
    return parser


def main(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except (Tiny3Error, CliError, OSError) as exc:
        err.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
