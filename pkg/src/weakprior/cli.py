"""Command-line front end chaining the pipeline stages through files.

Exit codes: 0 success, 2 usage error, 3 format/data error, 4 numeric failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import io
from ._validation import DimensionError, DivergenceError, NonFiniteError
from .cam import binarize_cam, combine_multiclass, compute_cam
from .crf import THETA_MAX, DenseCRF, RegionPartition
from .fusion import fuse_foreground
from .losses import VARIANTS, MaskError, loss_and_grad
from .metrics import (
    confusion,
    confusion_csv,
    format_confusion_table,
    format_iou_table,
    iou,
    iou_csv,
    trimap_accuracy,
)
from .synth import SynthConfig, synth_dataset
from .tensor_core import resize_stack
from .training import HeadParams, TrainConfig, build_masks, predict, scene_features, train_head

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4

logger = logging.getLogger("weakprior")


class UsageError(Exception):
    pass


def _rank(arr, rank, path):
    if arr.ndim != rank:
        raise io.FormatError(f"{path}: expected a rank-{rank} tensor, got shape {arr.shape}")
    return arr


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"{what} contains non-finite values")
    return arr


def cmd_fuse(args):
    conv4 = _rank(io.read_tensor(args.conv4), 3, args.conv4)
    conv5 = _rank(io.read_tensor(args.conv5), 3, args.conv5)
    pf = fuse_foreground(conv4, conv5, args.h, args.w)
    io.write_tensor(args.out, pf)


def cmd_cam(args):
    feats = _rank(io.read_tensor(args.features), 3, args.features)
    weights = _rank(io.read_tensor(args.weights), 2, args.weights)
    cams = compute_cam(feats, weights, normalize=not args.raw)
    io.write_tensor(args.out, cams)
    if args.binary_out:
        io.write_tensor(args.binary_out, np.stack([binarize_cam(m, args.rho) for m in cams]))


def cmd_combine(args):
    pf = _rank(io.read_tensor(args.pf), 2, args.pf)
    cams = _rank(io.read_tensor(args.cams), 3, args.cams)
    if cams.shape[1:] != pf.shape:
        cams = resize_stack(cams, *pf.shape)
    io.write_tensor(args.out, combine_multiclass(pf, cams, args.alpha, args.rho))


def cmd_crf(args):
    probs = _rank(io.read_tensor(args.probs), 3, args.probs)
    image = io.read_image(args.image)
    if image.ndim != 3:
        raise io.FormatError(f"{args.image}: expected a color (P6) image")
    regions = None
    if args.regions:
        ids = io.read_image(args.regions)
        if ids.ndim != 2:
            raise io.FormatError(f"{args.regions}: expected a gray (P5) image")
        regions = RegionPartition.from_labels(ids)
    crf = DenseCRF(
        w_app=args.w_app,
        theta_a=args.theta_a,
        theta_b=args.theta_b,
        w_smooth=args.w_smooth,
        theta_g=args.theta_g,
        iters=args.iters,
        theta_max=args.theta_max,
        unary=args.unary,
        approx=args.approx,
    )
    q = _finite(crf.predict_proba(probs, image.astype(np.float64), regions), "marginals")
    labels = np.argmax(q, axis=0)
    io.write_image(args.out_labels, labels, maxval=255 if labels.max() <= 255 else 65535)
    if args.out_probs:
        io.write_tensor(args.out_probs, q)


def _read_mask(path):
    m = io.read_image(path)
    if m.ndim != 2:
        raise io.FormatError(f"{path}: expected a gray (P5) mask")
    return m > 0


def cmd_loss(args):
    scores = _rank(io.read_tensor(args.scores), 3, args.scores)
    tags = io.read_tags(args.tags, scores.shape[0])
    masks = None
    if args.variant == "fgbg":
        if not args.mask:
            raise UsageError("--variant fgbg needs --mask")
        masks = _read_mask(args.mask)
    elif args.variant == "multiclass":
        if not args.masks:
            raise UsageError("--variant multiclass needs --masks DIR")
        masks = {}
        for k in range(scores.shape[0]):
            path = os.path.join(args.masks, f"{k}.pgm")
            if os.path.exists(path):
                masks[k] = _read_mask(path)
    loss, grad = loss_and_grad(scores, tags, args.variant, masks)
    if not np.isfinite(loss):
        raise DivergenceError("loss is not finite")
    print(repr(loss))
    if args.grad_out:
        io.write_tensor(args.grad_out, _finite(grad, "gradient"))


def cmd_synth(args):
    cfg = SynthConfig(args.h, args.w, args.max_objects or min(3, args.classes), args.classes)
    os.makedirs(args.out, exist_ok=True)
    for i, scene in enumerate(synth_dataset(args.seed, args.count, cfg)):
        io.save_scene(os.path.join(args.out, f"scene_{i:04d}"), scene)


def _load_dataset(root):
    dirs = io.scene_dirs(root)
    if not dirs:
        raise io.FormatError(f"{root}: no scene directories found")
    return dirs, [io.load_scene(d) for d in dirs]


def cmd_train(args):
    _, scenes = _load_dataset(args.data)
    variant = args.variant
    cfg = TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        seed=args.seed,
        variant=variant,
    )
    crf = DenseCRF()
    masks = [build_masks(sc, variant, crf, args.higher_order) for sc in scenes]
    head, history = train_head(scenes, cfg, masks=masks)
    io.write_tensor(args.out, head.to_array())
    if args.history:
        with open(args.history, "w", encoding="utf-8") as f:
            f.write("epoch,loss\n")
            for e, v in enumerate(history):
                f.write(f"{e},{v!r}\n")


def cmd_predict(args):
    head = HeadParams.from_array(_rank(io.read_tensor(args.model), 2, args.model))
    dirs, scenes = _load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    for d, sc in zip(dirs, scenes):
        scores = _finite(predict(head, scene_features(sc)), "scores")
        io.write_image(os.path.join(args.out, os.path.basename(d) + ".pgm"), np.argmax(scores, axis=0))


def _gt_path(gt_root, name):
    flat = os.path.join(gt_root, name + ".pgm")
    if os.path.isfile(flat):
        return flat
    nested = os.path.join(gt_root, name, io.SCENE_FILES["gt"])
    if os.path.isfile(nested):
        return nested
    raise io.FormatError(f"no ground truth for {name!r} under {gt_root}")


def cmd_eval(args):
    names = sorted(f[:-4] for f in os.listdir(args.pred) if f.endswith(".pgm"))
    if not names:
        raise io.FormatError(f"{args.pred}: no .pgm predictions")
    preds = [io.read_image(os.path.join(args.pred, n + ".pgm")) for n in names]
    gts = [io.read_image(_gt_path(args.gt, n)) for n in names]
    for n, p, g in zip(names, preds, gts):
        if p.ndim != 2 or g.ndim != 2:
            raise io.FormatError(f"{n}: label maps must be gray images")
    n_classes = args.classes
    if n_classes is None:
        n_classes = int(max(max(p.max() for p in preds), max(g.max() for g in gts)))
    report = iou(preds, gts, n_classes)
    print(format_iou_table(report))
    csv_parts = [iou_csv(report)]
    if args.trimap_band:
        acc = trimap_accuracy(preds, gts, args.trimap_band)
        shown = "undefined" if acc is None else f"{acc:.4f}"
        print(f"trimap accuracy (band {args.trimap_band}px): {shown}")
        csv_parts.append(f"trimap_band,trimap_accuracy\n{args.trimap_band},{'' if acc is None else f'{acc:.6f}'}\n")
    if args.confusion:
        cm = confusion(preds, gts, n_classes)
        print(format_confusion_table(cm))
        csv_parts.append(confusion_csv(cm))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write("\n".join(csv_parts))


def build_parser():
    parser = argparse.ArgumentParser(prog="weakprior", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="foreground map from two activation stacks")
    p.add_argument("--conv4", required=True)
    p.add_argument("--conv5", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--h", type=int)
    p.add_argument("--w", type=int)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("cam", help="class activation maps from features and weights")
    p.add_argument("--features", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rho", type=float, default=0.2, help="threshold for --binary-out")
    p.add_argument("--binary-out", help="also write the thresholded masks")
    p.add_argument("--raw", action="store_true", help="skip min-max rescaling of the maps")
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("combine", help="multi-class probabilities from pf and CAMs")
    p.add_argument("--pf", required=True)
    p.add_argument("--cams", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.2)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("crf", help="dense CRF smoothing of a probability stack")
    p.add_argument("--probs", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-probs")
    p.add_argument("--regions")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--w-app", type=float, default=5.0)
    p.add_argument("--theta-a", type=float, default=30.0)
    p.add_argument("--theta-b", type=float, default=13.0)
    p.add_argument("--w-smooth", type=float, default=3.0)
    p.add_argument("--theta-g", type=float, default=3.0)
    p.add_argument("--theta-max", type=float, default=THETA_MAX)
    p.add_argument("--unary", choices=("softmax", "log"), default="softmax")
    p.add_argument("--approx", action="store_true")
    p.set_defaults(func=cmd_crf)

    p = sub.add_parser("loss", help="evaluate a weak loss (and its gradient)")
    p.add_argument("--scores", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--mask")
    p.add_argument("--masks")
    p.add_argument("--grad-out")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--h", type=int, default=48)
    p.add_argument("--w", type=int, default=48)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--max-objects", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a linear head on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--higher-order", action="store_true", help="region terms in mask generation")
    p.add_argument("--history", help="write per-epoch losses as CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label maps from a trained head")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="IoU / trimap / confusion reports")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--trimap-band", type=int)
    p.add_argument("--confusion", action="store_true")
    p.add_argument("--classes", type=int)
    p.add_argument("--csv", help="write machine-readable reports here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DivergenceError, NonFiniteError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, DimensionError, MaskError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
