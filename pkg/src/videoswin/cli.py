"""Command-line entry points.

    videoswin analyze   --variant t --frames 32 --size 224 --window 8x7x7 --design joint --format table
    videoswin inflate   --in 2d.vswt --out 3d.vswt --embed inflate --relpos duplicate
    videoswin infer     --ckpt m.vswt --clip c.vswt --views 4x3
    videoswin train-toy --config toy.json --seed 0

Exit status: 0 success, 2 configuration error, 3 checkpoint format error.
"""
import argparse
import json
import logging
import sys

import numpy as np

from . import analyzer
from .checkpoint import InitMode, NamedTensorStore, arch_from_2d_store, inflate_checkpoint, model_from_store
from .errors import ConfigError, FormatError
from .model import build_variant
from .train import TrainConfig, train_toy, steps_to_full_accuracy
from .views import ViewSpec, infer
from .windowing import WindowSpec

EXIT_CONFIG = 2
EXIT_FORMAT = 3


def _cmd_analyze(args):
    overrides = dict(clip=(args.frames, args.size, args.size), num_classes=args.classes)
    if args.window:
        overrides["window"] = WindowSpec.parse(args.window)
    arch = build_variant(args.variant, **overrides)
    report = analyzer.analyze(arch, args.design)
    sys.stdout.write(analyzer.emit_report(report, args.format))


def _cmd_inflate(args):
    store2d = NamedTensorStore.load(args.inp)
    arch = arch_from_2d_store(
        store2d, window_p=args.temporal_window, num_classes=args.classes, clip=(args.frames, args.size, args.size)
    )
    store3d = inflate_checkpoint(store2d, arch, InitMode(embed=args.embed, relpos=args.relpos), seed=args.seed)
    store3d.save(args.out)
    print(f"wrote {len(store3d)} tensors to {args.out}")


def _cmd_infer(args):
    model = model_from_store(NamedTensorStore.load(args.ckpt))
    clip_store = NamedTensorStore.load(args.clip)
    if "clip" not in clip_store:
        raise FormatError("clip file has no tensor named 'clip'")
    video = clip_store["clip"]
    t, h, w = model.cfg.clip
    if h != w:
        raise ConfigError("square crops only")
    base = ViewSpec.parse(args.views)
    spec = ViewSpec(base.temporal_clips, base.spatial_crops, clip_len=t, frame_stride=args.stride, crop_size=h)
    probs, top = infer(model, video, spec, workers=args.threads)
    order = np.argsort(-probs)[: args.topk]
    print(json.dumps({"argmax": top, "top": [[int(i), float(probs[i])] for i in order], "views": spec.num_views}))


def _cmd_train_toy(args):
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    _, hist = train_toy(cfg, checkpoint_path=args.out)
    print(
        json.dumps(
            {
                "steps": len(hist["loss"]),
                "final_loss": hist["loss"][-1],
                "final_accuracy": hist["final_accuracy"],
                "steps_to_full_accuracy": steps_to_full_accuracy(hist),
            }
        )
    )


def build_parser():
    ap = argparse.ArgumentParser(prog="videoswin", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("analyze", help="parameter and FLOP report")
    a.add_argument("--variant", choices=list("tsbl"), type=str.lower, default="t")
    a.add_argument("--frames", type=int, default=32)
    a.add_argument("--size", type=int, default=224)
    a.add_argument("--window", default=None, help="PxMxM, default 8x7x7")
    a.add_argument("--design", choices=analyzer.DESIGNS, default="joint")
    a.add_argument("--format", choices=["table", "json-lines"], default="table")
    a.add_argument("--classes", type=int, default=400)
    a.set_defaults(func=_cmd_analyze)

    i = sub.add_parser("inflate", help="initialize a 3D checkpoint from a 2D one")
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--embed", choices=["inflate", "center"], default="inflate")
    i.add_argument("--relpos", choices=["duplicate", "center"], default="duplicate")
    i.add_argument("--temporal-window", type=int, default=8)
    i.add_argument("--classes", type=int, default=400)
    i.add_argument("--frames", type=int, default=32)
    i.add_argument("--size", type=int, default=224)
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=_cmd_inflate)

    f = sub.add_parser("infer", help="multi-view inference on a stored clip")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--clip", required=True)
    f.add_argument("--views", default="4x3")
    f.add_argument("--stride", type=int, default=2)
    f.add_argument("--threads", type=int, default=None)
    f.add_argument("--topk", type=int, default=5)
    f.set_defaults(func=_cmd_infer)

    t = sub.add_parser("train-toy", help="train the micro model on synthetic clips")
    t.add_argument("--config", default=None, help="JSON training config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="write the final checkpoint here")
    t.set_defaults(func=_cmd_train_toy)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
