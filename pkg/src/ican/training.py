"""Multi-label training of all streams with momentum SGD."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import iou
from .inference import filter_detections
from .model import HOIModel, init_weights

log = logging.getLogger(__name__)


@dataclass
class TrainSample:
    image_id: str
    human: object  # BBox
    object: object  # BBox
    labels: np.ndarray  # pair labels
    human_labels: np.ndarray
    object_labels: np.ndarray

    def __post_init__(self):
        for arr in (self.labels, self.human_labels, self.object_labels):
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError("labels must be 0/1")

    @property
    def positive(self):
        return bool(self.labels.any())


@dataclass
class OptimState:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    iteration: int = 0
    velocity: dict = field(default_factory=dict)


@dataclass
class TrainConfig:
    iters: int = 1000
    seed: int = 0
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch: int = 8
    neg_ratio: float = 3.0
    log_every: int = 100


def bce_loss(scores, labels):
    """Mean binary cross-entropy of probabilities against 0/1 labels."""
    s = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in length")
    # back to logits so the loss shares the stable formulation used in training
    s = np.clip(s, 1e-300, 1 - 1e-16)
    return T.bce_with_logits(T.Tensor(np.log(s) - np.log1p(-s)), y).item()


def sgd_step(params, state):
    """In-place momentum SGD with coupled weight decay.

    v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
    """
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v + (g + state.weight_decay * p.data)
        state.velocity[name] = v
        p.data = p.data - state.lr * v
    state.iteration += 1


def build_samples(fmaps, detections, ground_truth, vocab):
    """Label every (human, object) detection pair of every image against GT.

    Pair labels use both IoU gates; human labels collect all actions of GT
    agents the human box matches; object labels collect object actions of
    GT targets the object box matches.
    """
    num = len(vocab)
    samples = []
    for image_id in sorted(detections):
        if image_id not in fmaps:
            continue
        dets = detections[image_id]
        gts = ground_truth.get(image_id, [])
        humans, objects = filter_detections(dets)
        for hi in humans:
            hb = dets[hi].box
            h_match = [iou(hb, g.human) >= 0.5 for g in gts]
            y_h = np.zeros(num)
            for g, ok in zip(gts, h_match):
                if ok:
                    y_h[g.action] = 1
            for oi in objects:
                if oi == hi:
                    continue
                ob = dets[oi].box
                y = np.zeros(num)
                y_o = np.zeros(num)
                for g, ok in zip(gts, h_match):
                    if g.object is None or iou(ob, g.object) < 0.5:
                        continue
                    y_o[g.action] = 1
                    if ok:
                        y[g.action] = 1
                samples.append(TrainSample(image_id, hb, ob, y, y_h, y_o))
    return samples


def sample_losses(model, fmap, sample, object_mask):
    """Per-stream BCE losses for one pair; returns a dict of scalar tensors."""
    h_logits, h_feat, inst, _ = model.human_forward(fmap, sample.human)
    o_logits, o_feat, _, _ = model.object_forward(fmap, sample.object)
    sp_logits, sp_feat = model.pair_forward(sample.human, sample.object, inst)
    losses = {
        "human": T.bce_with_logits(h_logits, sample.human_labels),
        "object": T.bce_with_logits(o_logits, sample.object_labels, object_mask),
        "pairwise": T.bce_with_logits(sp_logits, sample.labels, object_mask),
    }
    if model.cfg.fusion == "early":
        losses["early"] = T.bce_with_logits(model.early_forward(h_feat, o_feat, sp_feat), sample.labels, object_mask)
    return losses


def _draw_batch(rng, pos, neg, batch, neg_ratio):
    n_pos = int(round(batch / (1.0 + neg_ratio)))
    if not neg:
        n_pos = batch
    elif not pos:
        n_pos = 0
    n_neg = batch - n_pos
    picks = []
    if n_pos:
        picks.extend(pos[i] for i in rng.integers(0, len(pos), size=n_pos))
    if n_neg:
        picks.extend(neg[i] for i in rng.integers(0, len(neg), size=n_neg))
    return picks


def train(samples, fmaps, model_cfg, vocab, cfg, weights=None, callback=None):
    """Train from scratch (or from ``weights``); returns (weights, loss_curve).

    ``loss_curve`` holds the mean batch loss of every iteration.
    """
    if not samples:
        raise ValueError("empty training set")
    if weights is None:
        weights = init_weights(model_cfg, cfg.seed)
    model = HOIModel(model_cfg, weights)
    params = model.named_parameters()
    state = OptimState(cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    pos = [s for s in samples if s.positive]
    neg = [s for s in samples if not s.positive]
    object_mask = vocab.object_mask.astype(np.float64)
    tensors = {k: T.Tensor(v) for k, v in fmaps.items()}
    curve = []
    for it in range(cfg.iters):
        batch = _draw_batch(rng, pos, neg, cfg.batch, cfg.neg_ratio)
        for _, p in params:
            p.grad = None
        total = None
        per_stream = {}
        for s in batch:
            for name, loss in sample_losses(model, tensors[s.image_id], s, object_mask).items():
                per_stream[name] = per_stream.get(name, 0.0) + loss.item()
                total = loss if total is None else total + loss
        total = total * (1.0 / len(batch))
        value = total.item()
        if not np.isfinite(value):
            bad = [k for k, v in per_stream.items() if not np.isfinite(v)]
            raise FloatingPointError(f"non-finite loss at iteration {it} in stream(s) {bad or list(per_stream)}")
        T.backward(total, [p for _, p in params])
        sgd_step(params, state)
        curve.append(value)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d loss %.6f", it + 1, float(np.mean(curve[-cfg.log_every :])))
        if callback is not None:
            callback(it, value)
    return weights, curve
