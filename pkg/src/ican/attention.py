"""Instance-centric attention and the context-mode variants.

A branch turns one detected box into ``concat(instance_feature, context)``.
The instance feature is ROI max pooling -> residual block -> global average
pooling. The context depends on the mode:

- ``none``: no context
- ``whole_image``: global average of the feature map
- ``bottom_up``: softmax attention from a learned 1x1 projection of the map
  alone, identical for every instance of an image
- ``instance_centric``: map cells and the instance feature are embedded into
  a shared space; the attention logit of a cell is the dot product of the two
  embeddings, softmaxed over all cells
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T


class ContextMode(str, Enum):
    NONE = "none"
    WHOLE_IMAGE = "whole_image"
    BOTTOM_UP = "bottom_up"
    INSTANCE_CENTRIC = "instance_centric"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"global": cls.WHOLE_IMAGE, "ican": cls.INSTANCE_CENTRIC}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown context mode {value!r}; expected one of {[m.value for m in cls]} or global/ican") from None


@dataclass
class InstanceFeature:
    vector: T.Tensor
    role: str = "human"


@dataclass
class AttentionMap:
    weights: T.Tensor  # H x W, non-negative, sums to one
    source: object = None


def residual_block(x, weights, prefix):
    """conv3x3 -> relu -> conv1x1, plus a 1x1 projection shortcut, then relu."""
    h = T.relu(T.conv2d(x, weights[f"{prefix}.conv1.w"], weights[f"{prefix}.conv1.b"], pad=1))
    h = T.conv2d(h, weights[f"{prefix}.conv2.w"], weights[f"{prefix}.conv2.b"])
    skip = T.conv2d(x, weights[f"{prefix}.proj.w"], weights[f"{prefix}.proj.b"])
    return T.relu(h + skip)


def extract_instance_feature(fmap, box, weights, prefix, roi_size=7, spatial_scale=1.0, role="human"):
    pooled = T.roi_pool(fmap, box, out=roi_size, spatial_scale=spatial_scale)
    return InstanceFeature(T.global_avg_pool(residual_block(pooled, weights, f"{prefix}.res")), role)


def embed_feature_map(fmap, w, b):
    """1x1 convolution into the embedding space, flattened to E x (H*W)."""
    emb = T.conv2d(fmap, w, b)
    return T.reshape(emb, (emb.shape[0], emb.shape[1] * emb.shape[2]))


def attention_from_embedding(emb, inst_vec, w, b, spatial):
    """Softmax over cells of dot(cell embedding, embedded instance)."""
    query = T.linear(inst_vec, w, b)
    logits = T.matmul(T.reshape(query, (1, query.size)), emb)
    att = T.softmax(T.reshape(logits, (logits.size,)))
    return T.reshape(att, spatial)


def attention_map(fmap, inst, fmap_w, fmap_b, inst_w, inst_b, emb=None):
    vec = inst.vector if isinstance(inst, InstanceFeature) else inst
    if emb is None:
        emb = embed_feature_map(fmap, fmap_w, fmap_b)
    return AttentionMap(attention_from_embedding(emb, vec, inst_w, inst_b, fmap.shape[1:]), inst)


def bottom_up_map(fmap, embed_w, embed_b, score_w, emb=None):
    if emb is None:
        emb = embed_feature_map(fmap, embed_w, embed_b)
    logits = T.matmul(score_w, emb)
    return AttentionMap(T.reshape(T.softmax(T.reshape(logits, (logits.size,))), fmap.shape[1:]))


def context_feature(fmap, att):
    weights = att.weights if isinstance(att, AttentionMap) else att
    c, h, w = fmap.shape
    if weights.shape != (h, w):
        raise T.ShapeError(f"attention {weights.shape} does not match feature map {fmap.shape}")
    flat = T.matmul(T.reshape(fmap, (c, h * w)), T.reshape(weights, (h * w, 1)))
    return T.reshape(flat, (c,))


class ICANBranch:
    """One human or object branch bound to its weights.

    ``prefix`` names the residual-block weights; ``att_prefix`` names the
    attention weights (equal to ``prefix`` unless attention is shared).
    """

    def __init__(self, weights, prefix, att_prefix=None, roi_size=7, spatial_scale=1.0, role="human"):
        self.weights = weights
        self.prefix = prefix
        self.att_prefix = att_prefix or prefix
        self.roi_size = roi_size
        self.spatial_scale = spatial_scale
        self.role = role

    def instance_feature(self, fmap, box):
        return extract_instance_feature(fmap, box, self.weights, self.prefix, self.roi_size, self.spatial_scale, self.role)

    def map_embedding(self, fmap, mode):
        """Per-image embedding of the map; reusable across instances."""
        w, p = self.weights, self.att_prefix
        mode = ContextMode.parse(mode)
        if mode is ContextMode.INSTANCE_CENTRIC:
            return embed_feature_map(fmap, w[f"{p}.att.fmap.w"], w[f"{p}.att.fmap.b"])
        if mode is ContextMode.BOTTOM_UP:
            return embed_feature_map(fmap, w[f"{p}.bu.fmap.w"], w[f"{p}.bu.fmap.b"])
        return None

    def attention(self, fmap, inst, mode=ContextMode.INSTANCE_CENTRIC, emb=None):
        w, p = self.weights, self.att_prefix
        mode = ContextMode.parse(mode)
        if mode is ContextMode.INSTANCE_CENTRIC:
            return attention_map(fmap, inst, w[f"{p}.att.fmap.w"], w[f"{p}.att.fmap.b"], w[f"{p}.att.inst.w"], w[f"{p}.att.inst.b"], emb)
        if mode is ContextMode.BOTTOM_UP:
            return bottom_up_map(fmap, w[f"{p}.bu.fmap.w"], w[f"{p}.bu.fmap.b"], w[f"{p}.bu.score"], emb)
        return None

    def forward(self, fmap, box, mode, emb=None):
        """Return ``(feature, instance_feature, attention_map_or_None)``."""
        mode = ContextMode.parse(mode)
        inst = self.instance_feature(fmap, box)
        if mode is ContextMode.NONE:
            return inst.vector, inst, None
        if mode is ContextMode.WHOLE_IMAGE:
            return T.concat([inst.vector, T.global_avg_pool(fmap)]), inst, None
        att = self.attention(fmap, inst, mode, emb)
        return T.concat([inst.vector, context_feature(fmap, att)]), inst, att


def ican_forward(fmap, box, mode, weights, prefix="human", **kwargs):
    feat, _, _ = ICANBranch(weights, prefix, **kwargs).forward(fmap, box, mode)
    return feat


def attention_to_pgm(weights):
    """Encode an attention map as binary 8-bit PGM, max-normalised to [0, 255]."""
    a = np.asarray(weights, dtype=np.float64)
    peak = a.max()
    scaled = np.zeros_like(a) if peak <= 0 else a / peak
    pixels = np.clip(np.floor(scaled * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()
