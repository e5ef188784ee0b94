"""Role mAP for HOI triplets (Default and Known-Object settings)."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .boxes import iou

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class GtTriplet:
    human: object  # BBox
    action: int
    object: object = None  # BBox or None


@dataclass
class GroundTruth:
    vocab: object  # ActionVocabulary
    images: dict  # image_id -> list[GtTriplet]
    categories: dict = field(default_factory=dict)  # image_id -> set of object categories present

    def num_gt(self, action):
        return sum(1 for trips in self.images.values() for g in trips if g.action == action)


@dataclass(frozen=True)
class Prediction:
    image_id: str
    human: object
    object: object
    action: int
    score: float


@dataclass
class EvalResult:
    ap: dict  # action -> AP, or None when the class has no GT
    num_gt: dict
    tp: dict
    fp: dict
    setting: str = "default"

    @property
    def missed(self):
        return {a: self.num_gt[a] - self.tp[a] for a in self.num_gt}

    @property
    def mean_ap(self):
        vals = [v for v in self.ap.values() if v is not None]
        return float(np.mean(vals)) if vals else 0.0


def rank(preds):
    """Stable descending-score order (input order breaks ties)."""
    return sorted(preds, key=lambda p: -p.score)


def _gates(pred, gt_list, action, object_involved):
    """IoU pairs (iou_h, iou_o) of ``pred`` against each GT of ``action``, or None when a gate fails."""
    out = []
    for g in gt_list:
        if g.action != action:
            out.append(None)
            continue
        ih = iou(pred.human, g.human)
        if object_involved:
            if pred.object is None or g.object is None:
                out.append(None)
                continue
            io = iou(pred.object, g.object)
        else:
            io = ih
        out.append((ih, io) if ih >= IOU_THRESHOLD and io >= IOU_THRESHOLD else None)
    return out


def match_triplets(preds, gt, action):
    """Greedy score-ordered one-to-one matching; returns a bool TP flag per prediction.

    Among several unmatched eligible GT triplets the one with the largest
    min(iou_h, iou_o) wins, lower GT index on ties.
    """
    scores = [p.score for p in preds]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise ValueError("predictions must be sorted by descending score")
    involved = gt.vocab.object_involved[action]
    used = {img: [False] * len(trips) for img, trips in gt.images.items()}
    flags = np.zeros(len(preds), dtype=bool)
    for k, p in enumerate(preds):
        if p.image_id not in gt.images:
            raise KeyError(f"prediction references unknown image {p.image_id!r}")
        best, best_j = -1.0, -1
        for j, gate in enumerate(_gates(p, gt.images[p.image_id], action, involved)):
            if gate is None or used[p.image_id][j]:
                continue
            q = min(gate)
            if q > best:
                best, best_j = q, j
        if best_j >= 0:
            used[p.image_id][best_j] = True
            flags[k] = True
    return flags


def average_precision(flags, num_gt):
    """All-points interpolated AP: area under the monotone precision envelope.

    Returns None when ``num_gt`` is zero (class excluded from the mean).
    """
    flags = np.asarray(flags, dtype=bool)
    tp_total = int(flags.sum())
    if num_gt < 0:
        raise ValueError("num_gt must be non-negative")
    if tp_total > num_gt:
        raise ValueError(f"{tp_total} true positives exceed {num_gt} ground-truth instances")
    if num_gt == 0:
        return None
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    rec = tp / num_gt
    prec = tp / (tp + fp)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _select(preds, gt, action, setting):
    for p in preds:
        if p.image_id not in gt.images:
            raise KeyError(f"prediction references unknown image {p.image_id!r}")
    chosen = [p for p in preds if p.action == action]
    targets = set(gt.vocab.target_categories[action])
    if setting == "known_object" and gt.vocab.object_involved[action] and targets:
        chosen = [p for p in chosen if gt.categories.get(p.image_id, set()) & targets]
    return rank(chosen)


def _evaluate(preds, gt, setting, matcher):
    if setting not in ("default", "known_object"):
        raise ValueError(f"unknown setting {setting!r}")
    ap, num, tp, fp = {}, {}, {}, {}
    for a in range(len(gt.vocab)):
        ranked = _select(preds, gt, a, setting)
        flags = matcher(ranked, gt, a)
        num[a] = gt.num_gt(a)
        tp[a] = int(np.sum(flags))
        fp[a] = int(len(flags) - tp[a])
        ap[a] = average_precision(flags, num[a])
    return EvalResult(ap, num, tp, fp, setting)


def role_map(preds, gt, setting="default"):
    return _evaluate(preds, gt, setting, match_triplets)


MAX_ORACLE_PREDS = 12


def oracle_match(preds, gt, action):
    """Exhaustive search over one-to-one assignments consistent with the IoU gates.

    Returns the lexicographically largest TP pattern in ranking order, which
    maximises the TP count at every prefix of the ranking.
    """
    if len(preds) > MAX_ORACLE_PREDS:
        raise ValueError(f"oracle limited to {MAX_ORACLE_PREDS} predictions per action, got {len(preds)}")
    involved = gt.vocab.object_involved[action]
    keys = [(img, j) for img in sorted(gt.images) for j in range(len(gt.images[img]))]
    slot = {k: n for n, k in enumerate(keys)}
    options = []
    for p in preds:
        gates = _gates(p, gt.images[p.image_id], action, involved)
        options.append(tuple(slot[(p.image_id, j)] for j, g in enumerate(gates) if g is not None))

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(preds):
            return ()
        candidates = [(False,) + best(i + 1, used)]
        for s in options[i]:
            if not used & (1 << s):
                candidates.append((True,) + best(i + 1, used | (1 << s)))
        return max(candidates)

    return np.array(best(0, 0), dtype=bool)


def oracle_role_map(preds, gt, setting="default"):
    return _evaluate(preds, gt, setting, oracle_match)


def format_report(result, vocab, rare_threshold=None):
    """Plain-text table: per-action AP (4 decimals), GT/TP/FP counts, role mAP."""
    lines = [f"setting: {result.setting}"]
    header = f"{'action':<24} {'AP':>8} {'#GT':>6} {'TP':>6} {'FP':>6}"
    if rare_threshold is not None:
        header += "  split"
    lines.append(header)
    for a, name in enumerate(vocab.names):
        ap = result.ap[a]
        ap_s = "n/a" if ap is None else f"{ap:.4f}"
        row = f"{name:<24} {ap_s:>8} {result.num_gt[a]:>6} {result.tp[a]:>6} {result.fp[a]:>6}"
        if rare_threshold is not None:
            row += "  " + ("rare" if result.num_gt[a] < rare_threshold else "non-rare")
        lines.append(row)
    if rare_threshold is not None:
        for split, keep in (("rare", lambda n: n < rare_threshold), ("non-rare", lambda n: n >= rare_threshold)):
            vals = [result.ap[a] for a in result.ap if result.ap[a] is not None and keep(result.num_gt[a])]
            lines.append(f"mAP ({split}): {np.mean(vals):.4f}" if vals else f"mAP ({split}): n/a")
    lines.append(f"role mAP: {result.mean_ap:.4f}")
    return "\n".join(lines) + "\n"
