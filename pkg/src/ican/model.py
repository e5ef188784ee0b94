"""Model configuration, weight initialisation and the assembled network."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .attention import ContextMode, ICANBranch
from .streams import early_fusion_logits, head_logits, pairwise_binary_map, spatial_features


@dataclass
class ModelConfig:
    num_actions: int
    channels: int = 16
    inst_dim: int = 1024
    embed_dim: int = 512
    hidden: int = 512
    roi_size: int = 7
    raster: int = 64
    sp_channels1: int = 16
    sp_channels2: int = 32
    feature_stride: float = 16.0
    context: str = "instance_centric"
    human_attention: bool = True
    object_attention: bool = True
    share_attention: bool = False
    fusion: str = "late"

    def __post_init__(self):
        self.context = ContextMode.parse(self.context).value
        if self.fusion not in ("late", "early"):
            raise ValueError(f"fusion must be 'late' or 'early', got {self.fusion!r}")
        if self.num_actions < 1:
            raise ValueError("num_actions must be positive")
        if self.raster < 4:
            raise ValueError("raster must be at least 4 (two 2x2 pooling stages)")

    @property
    def human_mode(self):
        return ContextMode(self.context) if self.human_attention else ContextMode.NONE

    @property
    def object_mode(self):
        return ContextMode(self.context) if self.object_attention else ContextMode.NONE

    def feature_dim(self, mode):
        return self.inst_dim + (0 if mode is ContextMode.NONE else self.channels)

    @property
    def spatial_dim(self):
        return self.sp_channels2 * (self.raster // 4) ** 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in known:
                continue
            out[k] = v
        return cls(**out)


def _shapes(cfg):
    """Ordered (name, shape, fan_in) for every parameter of the network."""
    c, d, e = cfg.channels, cfg.inst_dim, cfg.embed_dim
    specs = []

    def conv(name, f, cin, k):
        specs.append((f"{name}.w", (f, cin, k, k), cin * k * k))
        specs.append((f"{name}.b", (f,), 0))

    def fc(name, nin, nout):
        specs.append((f"{name}.w", (nin, nout), nin))
        specs.append((f"{name}.b", (nout,), 0))

    for role, mode in (("human", cfg.human_mode), ("object", cfg.object_mode)):
        conv(f"{role}.res.conv1", d, c, 3)
        conv(f"{role}.res.conv2", d, d, 1)
        conv(f"{role}.res.proj", d, c, 1)
        owns_attention = role == "human" or not cfg.share_attention
        if owns_attention and mode is ContextMode.INSTANCE_CENTRIC:
            conv(f"{role}.att.fmap", e, c, 1)
            fc(f"{role}.att.inst", d, e)
        if owns_attention and mode is ContextMode.BOTTOM_UP:
            conv(f"{role}.bu.fmap", e, c, 1)
            specs.append((f"{role}.bu.score", (1, e), e))
        fc(f"{role}.head.fc1", cfg.feature_dim(mode), cfg.hidden)
        fc(f"{role}.head.fc2", cfg.hidden, cfg.num_actions)
    if cfg.share_attention and cfg.object_mode is not ContextMode.NONE and cfg.human_mode is not cfg.object_mode:
        raise ValueError("shared attention needs the same context mode on both branches")
    conv("pair.conv1", cfg.sp_channels1, 2, 3)
    conv("pair.conv2", cfg.sp_channels2, cfg.sp_channels1, 3)
    fc("pair.head.fc1", cfg.spatial_dim + d, cfg.hidden)
    fc("pair.head.fc2", cfg.hidden, cfg.num_actions)
    if cfg.fusion == "early":
        nin = cfg.feature_dim(cfg.human_mode) + cfg.feature_dim(cfg.object_mode) + cfg.spatial_dim
        fc("early.head.fc1", nin, cfg.hidden)
        fc("early.head.fc2", cfg.hidden, cfg.num_actions)
    return specs


def init_weights(cfg, seed=0):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape, fan_in in _shapes(cfg):
        if fan_in == 0:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        weights[name] = T.Tensor(data, requires_grad=True)
    return weights


class HOIModel:
    def __init__(self, cfg, weights):
        expected = {name: shape for name, shape, _ in _shapes(cfg)}
        missing = sorted(set(expected) - set(weights))
        if missing:
            raise KeyError(f"missing weights: {missing}")
        for name, shape in expected.items():
            if tuple(weights[name].shape) != shape:
                raise T.ShapeError(f"weight {name} has shape {weights[name].shape}, expected {shape}")
        self.cfg = cfg
        self.weights = weights
        scale = 1.0 / cfg.feature_stride
        self.human = ICANBranch(weights, "human", roi_size=cfg.roi_size, spatial_scale=scale, role="human")
        att = "human" if cfg.share_attention else "object"
        self.object = ICANBranch(weights, "object", att_prefix=att, roi_size=cfg.roi_size, spatial_scale=scale, role="object")

    def parameters(self):
        return [self.weights[k] for k in sorted(self.weights)]

    def named_parameters(self):
        return [(k, self.weights[k]) for k in sorted(self.weights)]

    def map_embeddings(self, fmap):
        """Per-image attention embeddings for both branches (cacheable)."""
        return self.human.map_embedding(fmap, self.cfg.human_mode), self.object.map_embedding(fmap, self.cfg.object_mode)

    def human_forward(self, fmap, box, emb=None):
        feat, inst, att = self.human.forward(fmap, box, self.cfg.human_mode, emb)
        return head_logits(feat, self.weights, "human.head"), feat, inst, att

    def object_forward(self, fmap, box, emb=None):
        feat, inst, att = self.object.forward(fmap, box, self.cfg.object_mode, emb)
        return head_logits(feat, self.weights, "object.head"), feat, inst, att

    def pair_forward(self, b_h, b_o, human_inst):
        bmap = T.Tensor(pairwise_binary_map(b_h, b_o, self.cfg.raster))
        sp = spatial_features(bmap, self.weights, "pair")
        vec = human_inst.vector if hasattr(human_inst, "vector") else human_inst
        return head_logits(T.concat([sp, vec]), self.weights, "pair.head"), sp

    def early_forward(self, h_feat, o_feat, sp_feat):
        if "early.head.fc1.w" not in self.weights:
            raise KeyError("early-fusion head weights are not loaded")
        return early_fusion_logits(h_feat, o_feat, sp_feat, self.weights, "early")
