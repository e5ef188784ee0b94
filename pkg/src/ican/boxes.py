import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in image pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"invalid box {vals}: need x1 < x2 and y1 < y2")

    @classmethod
    def of(cls, seq):
        x1, y1, x2, y2 = (float(v) for v in seq)
        return cls(x1, y1, x2, y2)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]

    def __iter__(self):
        return iter((self.x1, self.y1, self.x2, self.y2))

    def union(self, other):
        return BBox(min(self.x1, other.x1), min(self.y1, other.y1), max(self.x2, other.x2), max(self.y2, other.y2))


def iou(a, b):
    """Intersection over union of two boxes; 0 when they are disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a, b):
    """IoU between every box of ``a`` and every box of ``b``."""
    a = np.asarray([list(x) for x in a], dtype=np.float64).reshape(-1, 4)
    b = np.asarray([list(x) for x in b], dtype=np.float64).reshape(-1, 4)
    return kernels.iou_matrix(a, b)
