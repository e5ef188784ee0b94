"""Pair enumeration, score fusion and cascade inference."""

import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import BBox
from .streams import ActionScores, pairwise_binary_map

HUMAN_THRESHOLD = 0.8
OBJECT_THRESHOLD = 0.4


@dataclass(frozen=True)
class Detection:
    box: BBox
    category: int
    score: float
    is_person: bool = False

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class HoiTriplet:
    human: Detection
    object: Detection  # None for object-free actions
    action: int
    score: float
    human_index: int = 0
    object_index: int = -1

    def sort_key(self):
        return (-self.score, self.human_index, self.object_index, self.action)


@dataclass
class EvalCounter:
    """Counts of network evaluations made by one inference call."""

    human_stream: int = 0
    object_stream: int = 0
    pairwise_stream: int = 0
    pair_head: int = 0
    fusions: int = 0

    @property
    def stream_evals(self):
        return self.human_stream + self.object_stream


def filter_detections(dets):
    """Split into (humans, objects) by the strict 0.8 / 0.4 score thresholds.

    Returns index lists into ``dets``; persons may appear in both.
    """
    humans = [i for i, d in enumerate(dets) if d.is_person and d.score > HUMAN_THRESHOLD]
    objects = [i for i, d in enumerate(dets) if d.score > OBJECT_THRESHOLD]
    return humans, objects


def _vals(x):
    return x.values if isinstance(x, ActionScores) else np.asarray(x, dtype=np.float64)


def fuse_scores(s_h, s_o, sa_h, sa_o, sa_sp):
    """Per-action s_h * s_o * (sa_h + sa_o) * sa_sp."""
    sa_h, sa_o, sa_sp = _vals(sa_h), _vals(sa_o), _vals(sa_sp)
    if not (sa_h.shape == sa_o.shape == sa_sp.shape):
        raise ValueError(f"action score lengths differ: {sa_h.shape}, {sa_o.shape}, {sa_sp.shape}")
    return s_h * s_o * (sa_h + sa_o) * sa_sp


def score_human_only(human, sa_h, vocab, human_index=0):
    sa_h = _vals(sa_h)
    return [HoiTriplet(human, None, a, human.score * float(sa_h[a]), human_index, -1) for a in vocab.objectless]


def _sigmoid_np(logits):
    return T.sigmoid(logits).data


def _pair_triplets(dets, hi, oi, fused, vocab):
    return [HoiTriplet(dets[hi], dets[oi], a, float(fused[a]), hi, oi) for a in range(len(vocab)) if vocab.object_involved[a]]


def infer_late(fmap, dets, model, vocab, counter=None):
    """Cascade inference: per-instance streams once, then cheap per-pair fusion."""
    if counter is None:
        counter = EvalCounter()
    fmap = fmap if isinstance(fmap, T.Tensor) else T.Tensor(fmap)
    humans, objects = filter_detections(dets)
    out = []
    if not humans:
        return out
    with T.no_grad():
        emb_h, emb_o = model.map_embeddings(fmap)
        human_cache = {}
        for hi in humans:
            logits, _, inst, _ = model.human_forward(fmap, dets[hi].box, emb_h)
            human_cache[hi] = (_sigmoid_np(logits), inst)
            counter.human_stream += 1
        object_cache = {}
        for oi in objects:
            logits, _, _, _ = model.object_forward(fmap, dets[oi].box, emb_o)
            object_cache[oi] = _sigmoid_np(logits)
            counter.object_stream += 1
        for hi in humans:
            sa_h, inst = human_cache[hi]
            out.extend(score_human_only(dets[hi], sa_h, vocab, hi))
            for oi in objects:
                if oi == hi:
                    continue
                logits, _ = model.pair_forward(dets[hi].box, dets[oi].box, inst)
                counter.pairwise_stream += 1
                fused = fuse_scores(dets[hi].score, dets[oi].score, sa_h, object_cache[oi], _sigmoid_np(logits))
                counter.fusions += 1
                out.extend(_pair_triplets(dets, hi, oi, fused, vocab))
    out.sort(key=HoiTriplet.sort_key)
    return out


def infer_early(fmap, dets, model, vocab, counter=None):
    """Early fusion: one pair head over concatenated features for every pair.

    The fused score keeps the spatial stream as its own factor:
    s_h * s_o * early * sa_sp.
    """
    if counter is None:
        counter = EvalCounter()
    fmap = fmap if isinstance(fmap, T.Tensor) else T.Tensor(fmap)
    humans, objects = filter_detections(dets)
    out = []
    if not humans:
        return out
    with T.no_grad():
        emb_h, emb_o = model.map_embeddings(fmap)
        human_cache = {}
        for hi in humans:
            logits, feat, inst, _ = model.human_forward(fmap, dets[hi].box, emb_h)
            human_cache[hi] = (_sigmoid_np(logits), feat, inst)
            counter.human_stream += 1
        object_feats = {}
        for oi in objects:
            # only the appearance feature is needed; no object head evaluation
            feat, _, _ = model.object.forward(fmap, dets[oi].box, model.cfg.object_mode, emb_o)
            object_feats[oi] = feat
        for hi in humans:
            sa_h, h_feat, inst = human_cache[hi]
            out.extend(score_human_only(dets[hi], sa_h, vocab, hi))
            for oi in objects:
                if oi == hi:
                    continue
                sp_logits, sp_feat = model.pair_forward(dets[hi].box, dets[oi].box, inst)
                counter.pairwise_stream += 1
                early = _sigmoid_np(model.early_forward(h_feat, object_feats[oi], sp_feat))
                counter.pair_head += 1
                fused = dets[hi].score * dets[oi].score * early * _sigmoid_np(sp_logits)
                out.extend(_pair_triplets(dets, hi, oi, fused, vocab))
    out.sort(key=HoiTriplet.sort_key)
    return out


def infer(fmap, dets, model, vocab, mode="late", counter=None):
    if mode == "late":
        return infer_late(fmap, dets, model, vocab, counter)
    if mode == "early":
        return infer_early(fmap, dets, model, vocab, counter)
    raise ValueError(f"unknown fusion mode {mode!r}")


def check_image_size(fmap_shape, width, height, stride):
    """Raise when the feature grid does not cover the image at the given stride."""
    _, h, w = fmap_shape
    exp_w, exp_h = int(np.ceil(width / stride)), int(np.ceil(height / stride))
    if (exp_w, exp_h) != (w, h):
        raise ValueError(f"feature map {h}x{w} does not match image {height}x{width} at stride {stride} (expected {exp_h}x{exp_w})")


# --------------------------------------------------------------------------
# benchmark


def synthetic_scene(n_humans, n_objects, cfg, seed=0):
    """Random feature map plus ``n_humans`` persons and ``n_objects`` other objects."""
    rng = np.random.default_rng(seed)
    grid = 16
    size = grid * cfg.feature_stride
    fmap = rng.standard_normal((cfg.channels, grid, grid))
    dets = []
    for k in range(n_humans + n_objects):
        x1, y1 = rng.uniform(0, size * 0.7, size=2)
        w, h = rng.uniform(size * 0.1, size * 0.3, size=2)
        is_person = k < n_humans
        dets.append(Detection(BBox(x1, y1, x1 + w, y1 + h), 0 if is_person else 1 + k % 4, 0.95, is_person))
    return fmap, dets


@dataclass
class BenchRow:
    n: int
    mode: str
    seconds: float
    peak_bytes: int
    counter: EvalCounter = field(default_factory=EvalCounter)


def bench(sizes, cfg, vocab, weights, seed=0, repeats=3):
    """Time late and early fusion on synthetic scenes with n humans and n objects.

    Wall time is best-of-``repeats``; peak memory comes from one traced run.
    """
    from .model import HOIModel

    model = HOIModel(cfg, weights)
    rows = []
    for n in sizes:
        fmap, dets = synthetic_scene(n, n, cfg, seed + n)
        for mode in ("late", "early"):
            best = float("inf")
            for _ in range(repeats):
                counter = EvalCounter()
                t0 = time.perf_counter()
                infer(fmap, dets, model, vocab, mode, counter)
                best = min(best, time.perf_counter() - t0)
            tracemalloc.start()
            infer(fmap, dets, model, vocab, mode)
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            rows.append(BenchRow(n, mode, best, peak, counter))
    return rows
