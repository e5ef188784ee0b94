"""Command-line entry point: ``ican {synth,train,infer,eval,attn-dump,bench}``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .attention import ContextMode, attention_to_pgm
from .data_io import FormatError, load_detections, load_feature_maps, load_ground_truth, load_predictions
from .evaluation import format_report, role_map
from .inference import bench, filter_detections
from .kernels import BACKEND
from .model import ModelConfig, init_weights
from .pipeline import (
    load_dataset,
    load_model,
    parse_config,
    predict,
    save_model,
    train_model,
    write_predictions,
    write_synth_dataset,
)
from .synth import SynthSpec
from .tensor import Tensor, no_grad
from .training import TrainConfig

log = logging.getLogger("ican")

CONTEXT_CHOICES = ["none", "global", "whole_image", "bottom_up", "ican", "instance_centric"]


def cmd_synth(args):
    spec = SynthSpec(
        seed=args.seed,
        images=args.images,
        actions=args.actions,
        categories=args.categories,
        channels=args.channels,
        grid=args.grid,
    )
    images, gt = write_synth_dataset(spec, args.out)
    n_trip = sum(len(v) for v in gt.images.values())
    print(f"wrote {len(images)} images, {n_trip} ground-truth triplets to {args.out}")
    return 0


def cmd_train(args):
    model_kw, train_kw = parse_config(Path(args.config).read_text()) if args.config else ({}, {})
    if args.iters is not None:
        train_kw["iters"] = args.iters
    train_kw["seed"] = args.seed
    fmaps, dets, gt = load_dataset(args.data)
    cfg, weights, curve = train_model(fmaps, dets, gt, model_kw, TrainConfig(**train_kw))
    save_model(args.out, cfg, weights, gt.vocab)
    tail = curve[-min(len(curve), 50) :]
    print(f"trained {len(curve)} iterations, final loss {np.mean(tail):.6f}; checkpoint {args.out}")
    return 0


def _load_for_inference(args):
    model, vocab = load_model(args.weights)
    if args.context is not None:
        want = ContextMode.parse(args.context)
        if want.value != model.cfg.context:
            raise ValueError(f"checkpoint was trained with context {model.cfg.context!r}, not {want.value!r}")
    return model, vocab


def cmd_infer(args):
    model, vocab = _load_for_inference(args)
    fmaps = load_feature_maps(args.features)
    images = load_detections(args.detections)
    triplets = predict(model, vocab, fmaps, images, args.mode)
    write_predictions(args.out, triplets, vocab)
    print(f"wrote {len(triplets)} triplets for {len(images)} images to {args.out}")
    return 0


def cmd_eval(args):
    gt = load_ground_truth(args.gt)
    preds = load_predictions(args.preds, gt.vocab)
    unknown = sorted({p.image_id for p in preds} - set(gt.images))
    if unknown:
        raise FormatError(f"predictions reference images absent from ground truth: {unknown[:5]}")
    result = role_map(preds, gt, args.setting)
    report = format_report(result, gt.vocab, args.rare_threshold)
    if args.out:
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    return 0


def cmd_attn_dump(args):
    model, _ = _load_for_inference(args)
    fmaps = load_feature_maps(args.features)
    images = load_detections(args.detections)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    with no_grad():
        for im in images:
            fmap = Tensor(fmaps[im.image_id])
            emb_h, emb_o = model.map_embeddings(fmap)
            humans, objects = filter_detections(im.detections)
            jobs = [(i, "human", model.human_forward, emb_h) for i in humans]
            jobs += [(i, "object", model.object_forward, emb_o) for i in objects]
            for idx, role, forward, emb in jobs:
                _, _, _, att = forward(fmap, im.detections[idx].box, emb)
                if att is None:
                    raise ValueError(f"context mode {model.cfg.context!r} has no {role} attention map")
                weights = np.asarray(att.weights.data)
                stem = out / f"{im.image_id}_{idx}_{role}"
                Path(f"{stem}.pgm").write_bytes(attention_to_pgm(weights))
                np.savetxt(f"{stem}.csv", weights, delimiter=",", fmt="%.17g")
                count += 1
    print(f"wrote {count} attention maps to {out}")
    return 0


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    cfg = ModelConfig(
        num_actions=args.actions,
        channels=args.channels,
        inst_dim=64,
        embed_dim=128,
        hidden=64,
        raster=16,
        sp_channels1=8,
        sp_channels2=16,
        fusion="early",
    )
    vocab = SynthSpec(actions=args.actions).vocabulary()
    rows = bench(sizes, cfg, vocab, init_weights(cfg, args.seed), args.seed, args.repeats)
    print(f"kernel backend: {BACKEND}")
    print(f"{'n=m':>5} {'mode':>6} {'seconds':>10} {'peak MiB':>9} {'streams':>8} {'pair heads':>10} {'fusions':>8}")
    for r in rows:
        c = r.counter
        print(
            f"{r.n:>5} {r.mode:>6} {r.seconds:>10.4f} {r.peak_bytes / 2**20:>9.2f} "
            f"{c.stream_evals:>8} {c.pairwise_stream + c.pair_head:>10} {c.fusions:>8}"
        )
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ican", description="Instance-centric attention HOI detector")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--images", type=int, default=100)
    s.add_argument("--actions", type=int, default=6)
    s.add_argument("--categories", type=int, default=4)
    s.add_argument("--channels", type=int, default=12)
    s.add_argument("--grid", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="flat key=value file")
    s.add_argument("--iters", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="detect HOI triplets")
    s.add_argument("--weights", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--mode", choices=["late", "early"], default="late")
    s.add_argument("--context", choices=CONTEXT_CHOICES)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="role mAP of predictions against ground truth")
    s.add_argument("--preds", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--setting", choices=["default", "known_object"], default="default")
    s.add_argument("--rare-threshold", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("attn-dump", help="write attention maps as PGM and CSV")
    s.add_argument("--weights", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--context", choices=CONTEXT_CHOICES)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attn_dump)

    s = sub.add_parser("bench", help="late vs early fusion timing")
    s.add_argument("--sizes", default="1,5,10,20")
    s.add_argument("--actions", type=int, default=6)
    s.add_argument("--channels", type=int, default=12)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FormatError, checkpoint.CheckpointError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
