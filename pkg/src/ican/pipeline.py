"""Glue between the on-disk formats, training, inference and evaluation."""

import json
from dataclasses import fields
from pathlib import Path

from . import checkpoint
from .data_io import (
    FormatError,
    ImageDetections,
    load_detections,
    load_feature_maps,
    load_ground_truth,
    save_detections,
    save_feature_map,
    save_ground_truth,
    triplet_record,
)
from .evaluation import GroundTruth, Prediction, role_map
from .inference import check_image_size, infer
from .model import HOIModel, ModelConfig
from .streams import ActionVocabulary
from .synth import synth_generate
from .tensor import Tensor
from .training import TrainConfig, build_samples, train

FEATURES_DIR = "features"
DETECTIONS_FILE = "detections.jsonl"
GT_FILE = "gt.json"


def write_synth_dataset(spec, out):
    """Write a synthetic dataset directory: features/*.fmap, detections.jsonl, gt.json."""
    out = Path(out)
    (out / FEATURES_DIR).mkdir(parents=True, exist_ok=True)
    images, gt = synth_generate(spec)
    for im in images:
        save_feature_map(out / FEATURES_DIR / f"{im.image_id}.fmap", im.fmap, im.image_id)
    save_detections(out / DETECTIONS_FILE, [ImageDetections(im.image_id, im.detections, im.width, im.height) for im in images])
    save_ground_truth(out / GT_FILE, gt, spec.category_ids)
    return images, gt


def load_dataset(root):
    root = Path(root)
    fmaps = load_feature_maps(root / FEATURES_DIR)
    dets = load_detections(root / DETECTIONS_FILE)
    gt = load_ground_truth(root / GT_FILE)
    return fmaps, dets, gt


# --------------------------------------------------------------------------
# config files

_MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig) if f.name != "num_actions"}
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(kind, raw, key):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text):
    """Parse flat ``key = value`` lines into (model kwargs, train kwargs).

    Blank lines and ``#`` comments are skipped; unknown keys are an error.
    """
    model_kw, train_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _MODEL_KEYS:
            model_kw[key] = _coerce(_MODEL_KEYS[key], raw, key)
        elif key in _TRAIN_KEYS:
            train_kw[key] = _coerce(_TRAIN_KEYS[key], raw, key)
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return model_kw, train_kw


# --------------------------------------------------------------------------
# train / infer / evaluate


def train_model(fmaps, images, gt, model_kw, train_cfg):
    """Train on ``images`` (ImageDetections); returns (config, weights, loss curve)."""
    vocab = gt.vocab
    cfg = ModelConfig(num_actions=len(vocab), channels=_channels(fmaps), **model_kw)
    dets = {im.image_id: im.detections for im in images}
    samples = build_samples(fmaps, dets, gt.images, vocab)
    weights, curve = train(samples, fmaps, cfg, vocab, train_cfg)
    return cfg, weights, curve


def _channels(fmaps):
    shapes = {f.shape[0] for f in fmaps.values()}
    if len(shapes) != 1:
        raise FormatError(f"feature maps disagree on channel count: {sorted(shapes)}")
    return shapes.pop()


def save_model(path, cfg, weights, vocab):
    checkpoint.save(path, weights, {"model": cfg.to_dict(), "vocabulary": vocab.to_json()})


def load_model(path, **overrides):
    meta = checkpoint.load_meta(path) or {}
    if "model" not in meta or "vocabulary" not in meta:
        raise checkpoint.CheckpointError(f"{path}: sidecar lacks model config or vocabulary")
    cfg_dict = dict(meta["model"], **overrides)
    cfg = ModelConfig.from_dict(cfg_dict)
    weights = {k: Tensor(v) for k, v in checkpoint.load(path).items()}
    return HOIModel(cfg, weights), ActionVocabulary.from_json(meta["vocabulary"])


def predict(model, vocab, fmaps, images, mode="late"):
    """Run inference over every image; returns ``[(image_id, HoiTriplet)]`` in input order."""
    out = []
    for im in images:
        if im.image_id not in fmaps:
            raise FormatError(f"no feature map for image {im.image_id!r}")
        fmap = fmaps[im.image_id]
        if im.width is not None and im.height is not None:
            check_image_size(fmap.shape, im.width, im.height, model.cfg.feature_stride)
        out.extend((im.image_id, t) for t in infer(fmap, im.detections, model, vocab, mode))
    return out


def to_predictions(triplets):
    return [
        Prediction(image_id, t.human.box, None if t.object is None else t.object.box, t.action, t.score)
        for image_id, t in triplets
    ]


def write_predictions(path, triplets, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, t in triplets:
            fh.write(json.dumps(triplet_record(image_id, t, vocab)) + "\n")


def subset_gt(gt, image_ids):
    ids = list(image_ids)
    return GroundTruth(gt.vocab, {i: gt.images.get(i, []) for i in ids}, {i: gt.categories.get(i, set()) for i in ids})


def evaluate_model(model, vocab, fmaps, images, gt, setting="default"):
    preds = to_predictions(predict(model, vocab, fmaps, images))
    return role_map(preds, subset_gt(gt, [im.image_id for im in images]), setting)
