"""Seeded synthetic HOI scenes with a planted, learnable interaction rule.

Each image holds 1-4 persons and 1-5 objects on a cell-aligned grid. An
interacting object sits flush against its person on one side (the layout
bucket); the action is ``rule[category][bucket]``. Non-interacting objects
keep at least one empty cell between themselves and every person. Some
persons also carry an object-free action, visible only in their own
appearance (the pose channel).

Feature-map channels: person, pose, one signature per object category,
x, y and x^2 + y^2 coordinates, then noise.
"""

from dataclasses import dataclass

import numpy as np

from .boxes import BBox
from .evaluation import GroundTruth, GtTriplet, Prediction
from .inference import Detection
from .streams import ActionVocabulary

# right, left, above, below: direction of the object relative to the person
BUCKETS = ((1, 0), (-1, 0), (0, -1), (0, 1))
OBJECT_FREE_NAMES = ("walk", "smile", "stand", "run")


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    images: int = 100
    actions: int = 6
    categories: int = 4
    channels: int = 12
    grid: int = 16
    stride: float = 16.0
    buckets: int = 2
    object_free: int = 1
    max_humans: int = 4
    max_objects: int = 5
    interact_prob: float = 0.8
    pose_prob: float = 0.3
    noise: float = 0.05

    def __post_init__(self):
        if self.actions < 2:
            raise ValueError("need at least two actions")
        if not 0 <= self.object_free < self.actions:
            raise ValueError("object_free must leave at least one object action")
        if not 1 <= self.buckets <= len(BUCKETS):
            raise ValueError(f"buckets must be in 1..{len(BUCKETS)}")
        if self.categories < 1:
            raise ValueError("need at least one object category")
        if self.channels < self.first_noise_channel:
            raise ValueError(f"need at least {self.first_noise_channel} channels for {self.categories} categories")
        if self.grid < 8:
            raise ValueError(f"grid {self.grid} too small: need at least 8 cells per side")

    @property
    def object_actions(self):
        return self.actions - self.object_free

    @property
    def coord_channel(self):
        return 2 + self.categories

    @property
    def first_noise_channel(self):
        return self.coord_channel + 3

    def rule(self, category, bucket):
        """Action id for an object of ``category`` (1-based) in ``bucket``."""
        return ((category - 1) * self.buckets + bucket) % self.object_actions

    def vocabulary(self):
        names, involved, targets = [], [], []
        for a in range(self.object_actions):
            names.append(f"interact_{a}")
            involved.append(True)
            targets.append(
                tuple(sorted({k for k in range(1, self.categories + 1) for b in range(self.buckets) if self.rule(k, b) == a}))
            )
        for j in range(self.object_free):
            names.append(OBJECT_FREE_NAMES[j] if j < len(OBJECT_FREE_NAMES) else f"pose_{j}")
            involved.append(False)
            targets.append(())
        return ActionVocabulary(tuple(names), tuple(involved), tuple(targets))

    @property
    def category_ids(self):
        return list(range(1, self.categories + 1))


@dataclass
class SynthImage:
    image_id: str
    fmap: np.ndarray
    detections: list
    triplets: list
    categories: set
    width: float
    height: float


def _overlaps(cells, occupied, margin=0):
    r0, c0, r1, c1 = cells
    for q0, p0, q1, p1 in occupied:
        if r0 < q1 + margin and q0 < r1 + margin and c0 < p1 + margin and p0 < c1 + margin:
            return True
    return False


def _inside(cells, grid):
    r0, c0, r1, c1 = cells
    return 0 <= r0 < r1 <= grid and 0 <= c0 < c1 <= grid


def _adjacent_cells(person, bucket, h, w, rng):
    r0, c0, r1, c1 = person
    dx, dy = BUCKETS[bucket]
    if dx:
        col = c1 if dx > 0 else c0 - w
        row = int(rng.integers(r0, max(r0, r1 - h) + 1))
        return (row, col, row + h, col + w)
    row = r1 if dy > 0 else r0 - h
    col = int(rng.integers(c0 - w + 1, c1))
    return (row, col, row + h, col + w)


def _generate_image(spec, rng, index):
    g = spec.grid
    persons, objects = [], []  # cells (r0, c0, r1, c1) plus attributes
    occupied = []
    n_h = int(rng.integers(1, spec.max_humans + 1))
    n_o = int(rng.integers(1, spec.max_objects + 1))
    for _ in range(n_h):
        for _ in range(100):
            h, w = int(rng.integers(4, 7)), int(rng.integers(2, 4))
            r, c = int(rng.integers(0, g - h + 1)), int(rng.integers(0, g - w + 1))
            cells = (r, c, r + h, c + w)
            if not _overlaps(cells, occupied, margin=1):
                pose = int(rng.integers(0, spec.object_free)) if spec.object_free and rng.random() < spec.pose_prob else -1
                persons.append((cells, pose))
                occupied.append(cells)
                break
    if not persons:
        raise ValueError(f"grid {g} too small to place any person")
    triplet_cells = []
    for p_idx, (pcells, _) in enumerate(persons):
        if len(objects) >= n_o or rng.random() >= spec.interact_prob:
            continue
        for _ in range(30):
            bucket = int(rng.integers(0, spec.buckets))
            h, w = int(rng.integers(2, 4)), int(rng.integers(2, 4))
            cells = _adjacent_cells(pcells, bucket, h, w, rng)
            others = [o for o in occupied if o != pcells]
            if _inside(cells, g) and not _overlaps(cells, occupied) and not _overlaps(cells, others, margin=1):
                cat = int(rng.integers(1, spec.categories + 1))
                objects.append((cells, cat))
                occupied.append(cells)
                triplet_cells.append((p_idx, len(objects) - 1, spec.rule(cat, bucket)))
                break
    while len(objects) < n_o:
        placed = False
        for _ in range(100):
            h, w = int(rng.integers(2, 4)), int(rng.integers(2, 4))
            r, c = int(rng.integers(0, g - h + 1)), int(rng.integers(0, g - w + 1))
            cells = (r, c, r + h, c + w)
            if not _overlaps(cells, occupied, margin=1):
                objects.append((cells, int(rng.integers(1, spec.categories + 1))))
                occupied.append(cells)
                placed = True
                break
        if not placed:
            if not objects:
                raise ValueError(f"grid {g} too small to place any object")
            break

    fmap = np.zeros((spec.channels, g, g))
    ys, xs = np.meshgrid((np.arange(g) + 0.5) / g, (np.arange(g) + 0.5) / g, indexing="ij")
    cc = spec.coord_channel
    fmap[cc], fmap[cc + 1], fmap[cc + 2] = xs, ys, xs**2 + ys**2
    for (r0, c0, r1, c1), pose in persons:
        fmap[0, r0:r1, c0:c1] = 1.0
        if pose >= 0:
            # pose signature: upper half of the person, scaled per object-free action
            fmap[1, r0 : (r0 + r1) // 2, c0:c1] = 1.0 + pose
    for (r0, c0, r1, c1), cat in objects:
        fmap[1 + cat, r0:r1, c0:c1] = 1.0
    fmap += spec.noise * rng.standard_normal(fmap.shape)

    s = spec.stride

    def to_box(cells):
        r0, c0, r1, c1 = cells
        return BBox(c0 * s, r0 * s, c1 * s, r1 * s)

    dets, triplets = [], []
    for (cells, pose) in persons:
        dets.append(Detection(to_box(cells), 0, float(np.round(rng.uniform(0.85, 1.0), 6)), True))
    for cells, cat in objects:
        dets.append(Detection(to_box(cells), cat, float(np.round(rng.uniform(0.5, 1.0), 6)), False))
    for p_idx, o_idx, action in triplet_cells:
        triplets.append(GtTriplet(to_box(persons[p_idx][0]), action, to_box(objects[o_idx][0])))
    for cells, pose in persons:
        if pose >= 0:
            triplets.append(GtTriplet(to_box(cells), spec.object_actions + pose, None))
    return SynthImage(f"synth_{spec.seed}_{index:05d}", fmap, dets, triplets, {cat for _, cat in objects}, g * s, g * s)


def synth_generate(spec):
    """Return (images, ground_truth); fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    images = [_generate_image(spec, rng, i) for i in range(spec.images)]
    gt = GroundTruth(spec.vocabulary(), {im.image_id: im.triplets for im in images}, {im.image_id: im.categories for im in images})
    return images, gt


def layout_bucket(human, obj, stride):
    """Bucket of a flush-adjacent object, or None when the boxes do not touch."""
    touch_x = abs(obj.x1 - human.x2) < 1e-9 or abs(obj.x2 - human.x1) < 1e-9
    touch_y = abs(obj.y1 - human.y2) < 1e-9 or abs(obj.y2 - human.y1) < 1e-9
    overlap_y = min(obj.y2, human.y2) - max(obj.y1, human.y1) > 0
    overlap_x = min(obj.x2, human.x2) - max(obj.x1, human.x1) > 0
    if touch_x and overlap_y:
        return 0 if abs(obj.x1 - human.x2) < 1e-9 else 1
    if touch_y and overlap_x:
        return 2 if abs(obj.y2 - human.y1) < 1e-9 else 3
    return None


def planted_rule_predictions(images, spec):
    """Predictions from the generating rule applied to detections and the map.

    Uses only observable inputs (boxes, categories, pose channel), so it is
    the Bayes-optimal predictor on clean data.
    """
    preds = []
    for im in images:
        persons = [d for d in im.detections if d.is_person]
        objects = [d for d in im.detections if not d.is_person]
        for p in persons:
            for o in objects:
                b = layout_bucket(p.box, o.box, spec.stride)
                if b is not None and b < spec.buckets:
                    preds.append(Prediction(im.image_id, p.box, o.box, spec.rule(o.category, b), 1.0))
            r0, c0 = int(p.box.y1 / spec.stride), int(p.box.x1 / spec.stride)
            pose_val = im.fmap[1, r0, c0]
            if spec.object_free and pose_val > 0.5:
                pose = int(np.clip(np.round(pose_val - 1.0), 0, spec.object_free - 1))
                preds.append(Prediction(im.image_id, p.box, None, spec.object_actions + pose, 1.0))
    return preds
