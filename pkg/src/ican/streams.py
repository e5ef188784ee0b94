"""Human, object and pairwise scoring streams plus the early-fusion head."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class ActionVocabulary:
    names: tuple
    object_involved: tuple
    # per action: tuple of object categories the action can target (empty = any)
    target_categories: tuple = field(default=None)

    def __post_init__(self):
        names = tuple(self.names)
        flags = tuple(bool(f) for f in self.object_involved)
        if not names:
            raise ValueError("vocabulary needs at least one action")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate action names: {dup}")
        if len(flags) != len(names):
            raise ValueError("object_involved length differs from names")
        targets = self.target_categories
        targets = tuple(() for _ in names) if targets is None else tuple(tuple(int(c) for c in t) for t in targets)
        if len(targets) != len(names):
            raise ValueError("target_categories length differs from names")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "object_involved", flags)
        object.__setattr__(self, "target_categories", targets)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    @property
    def objectless(self):
        return [a for a, f in enumerate(self.object_involved) if not f]

    @property
    def object_mask(self):
        return np.array(self.object_involved, dtype=bool)

    def to_json(self):
        return {
            "actions": [
                {"name": n, "object_involved": f, "target_categories": list(t)}
                for n, f, t in zip(self.names, self.object_involved, self.target_categories)
            ]
        }

    @classmethod
    def from_json(cls, block):
        acts = block["actions"]
        return cls(
            tuple(a["name"] for a in acts),
            tuple(bool(a.get("object_involved", True)) for a in acts),
            tuple(tuple(a.get("target_categories", ())) for a in acts),
        )


@dataclass
class ActionScores:
    values: np.ndarray
    stream: str = "human"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError(f"action scores must be a vector, got shape {self.values.shape}")

    def __len__(self):
        return self.values.size


def head_logits(feat, weights, prefix):
    """Two fully connected layers with a relu in between."""
    w1 = weights[f"{prefix}.fc1.w"]
    if feat.size != w1.shape[0]:
        raise T.ShapeError(f"{prefix}: feature length {feat.size} does not match weights {w1.shape}")
    hidden = T.relu(T.linear(feat, w1, weights[f"{prefix}.fc1.b"]))
    return T.linear(hidden, weights[f"{prefix}.fc2.w"], weights[f"{prefix}.fc2.b"])


def human_stream_scores(feat, weights, prefix="human.head"):
    return ActionScores(T.sigmoid(head_logits(feat, weights, prefix)).data, "human")


def object_stream_scores(feat, weights, prefix="object.head"):
    return ActionScores(T.sigmoid(head_logits(feat, weights, prefix)).data, "object")


def pairwise_binary_map(b_h, b_o, size=64):
    """Two-channel raster of the human and object boxes inside their union.

    A cell is 1 when its centre falls in the half-open box [x1, x2) x [y1, y2).
    """
    ref = b_h.union(b_o)
    centers = np.arange(size) + 0.5
    out = np.zeros((2, size, size))
    for ch, b in enumerate((b_h, b_o)):
        # centre test in reference-normalised units, scaled by `size` to stay exact on integers
        cols = ((b.x1 - ref.x1) * size <= centers * ref.width) & (centers * ref.width < (b.x2 - ref.x1) * size)
        rows = ((b.y1 - ref.y1) * size <= centers * ref.height) & (centers * ref.height < (b.y2 - ref.y1) * size)
        out[ch] = np.outer(rows, cols)
    return out


def spatial_features(bmap, weights, prefix="pair"):
    """Two conv -> relu -> 2x2 max-pool stages on the binary map, flattened."""
    x = bmap if isinstance(bmap, T.Tensor) else T.Tensor(bmap)
    for stage in ("conv1", "conv2"):
        x = T.max_pool2d(T.relu(T.conv2d(x, weights[f"{prefix}.{stage}.w"], weights[f"{prefix}.{stage}.b"], pad=1)), 2)
    return T.reshape(x, (x.size,))


def pairwise_logits(bmap, human_inst, weights, prefix="pair", sp=None):
    if sp is None:
        sp = spatial_features(bmap, weights, prefix)
    vec = human_inst.vector if hasattr(human_inst, "vector") else human_inst
    return head_logits(T.concat([sp, vec]), weights, f"{prefix}.head")


def pairwise_stream_scores(bmap, human_inst, weights, prefix="pair"):
    return ActionScores(T.sigmoid(pairwise_logits(bmap, human_inst, weights, prefix)).data, "pairwise")


def early_fusion_logits(h_feat, o_feat, sp_feat, weights, prefix="early"):
    return head_logits(T.concat([h_feat, o_feat, sp_feat]), weights, f"{prefix}.head")


def early_fusion_scores(h_feat, o_feat, sp_feat, weights, prefix="early"):
    return ActionScores(T.sigmoid(early_fusion_logits(h_feat, o_feat, sp_feat, weights, prefix)).data, "fused_early")
