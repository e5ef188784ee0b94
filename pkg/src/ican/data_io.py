"""File formats, loaders and the seeded synthetic dataset generator."""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import BBox
from .evaluation import GroundTruth, GtTriplet, Prediction
from .inference import Detection
from .streams import ActionVocabulary

FMAP_MAGIC = b"FMAP01"


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# feature maps


def encode_feature_map(fmap, image_id):
    arr = np.ascontiguousarray(fmap, dtype="<f8")
    if arr.ndim != 3:
        raise FormatError(f"feature map must be C x H x W, got shape {arr.shape}")
    raw = image_id.encode("utf-8")
    return FMAP_MAGIC + struct.pack("<3I", *arr.shape) + struct.pack("<I", len(raw)) + raw + arr.tobytes()


def decode_feature_map(blob):
    if blob[:6] != FMAP_MAGIC:
        raise FormatError(f"bad feature-map magic {blob[:6]!r}")
    if len(blob) < 22:
        raise FormatError("truncated feature-map header")
    c, h, w, nlen = struct.unpack("<4I", blob[6:22])
    if len(blob) < 22 + nlen:
        raise FormatError("truncated feature-map image id")
    image_id = blob[22 : 22 + nlen].decode("utf-8")
    payload = blob[22 + nlen :]
    if len(payload) != 8 * c * h * w:
        raise FormatError(f"feature-map payload is {len(payload)} bytes, expected {8 * c * h * w}")
    return np.frombuffer(payload, dtype="<f8").reshape(c, h, w).astype(np.float64), image_id


def save_feature_map(path, fmap, image_id):
    Path(path).write_bytes(encode_feature_map(fmap, image_id))


def load_feature_map(path):
    return decode_feature_map(Path(path).read_bytes())


def load_feature_maps(path):
    """A single ``.fmap`` file or every ``*.fmap`` in a directory, keyed by image id."""
    path = Path(path)
    files = sorted(path.glob("*.fmap")) if path.is_dir() else [path]
    out = {}
    for f in files:
        fmap, image_id = load_feature_map(f)
        out[image_id] = fmap
    return out


# --------------------------------------------------------------------------
# detections


@dataclass
class ImageDetections:
    image_id: str
    detections: list
    width: float = None
    height: float = None


def _box(values, where):
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        raise FormatError(f"{where}: box must be [x1, y1, x2, y2], got {values!r}")
    try:
        return BBox.of(values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def parse_detection_line(line, lineno=0):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or "image_id" not in rec or not isinstance(rec.get("detections"), list):
        raise FormatError(f"line {lineno}: expected an object with image_id and detections")
    image_id = str(rec["image_id"])
    dets = []
    for k, d in enumerate(rec["detections"]):
        where = f"image {image_id!r} detection {k}"
        if not isinstance(d, dict):
            raise FormatError(f"{where}: not an object")
        box = _box(d.get("box"), where)
        score = d.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not (0.0 <= score <= 1.0):
            raise FormatError(f"{where}: score {score!r} outside [0, 1]")
        cat = d.get("category")
        if not isinstance(cat, int) or isinstance(cat, bool):
            raise FormatError(f"{where}: category must be an integer id")
        is_person = d.get("is_person", False)
        if not isinstance(is_person, bool):
            raise FormatError(f"{where}: is_person must be a boolean")
        dets.append(Detection(box, cat, float(score), is_person))
    return ImageDetections(image_id, dets, rec.get("width"), rec.get("height"))


def load_detections(path):
    """JSONL, one image per line; returns a list of ImageDetections."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_detection_line(line, lineno))
    return out


def detection_record(img):
    rec = {"image_id": img.image_id}
    if img.width is not None:
        rec["width"] = img.width
        rec["height"] = img.height
    rec["detections"] = [
        {"box": d.box.as_list(), "category": d.category, "score": d.score, "is_person": d.is_person} for d in img.detections
    ]
    return rec


def save_detections(path, images):
    with open(path, "w", encoding="utf-8") as fh:
        for img in images:
            fh.write(json.dumps(detection_record(img)) + "\n")


# --------------------------------------------------------------------------
# ground truth


def parse_ground_truth(doc):
    try:
        vblock = doc["vocabulary"]
        cats = vblock.get("object_categories", [])
        cat_ids = {int(c["id"]) if isinstance(c, dict) else int(c) for c in cats}
        vocab = ActionVocabulary.from_json(vblock)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed vocabulary block: {exc}") from None
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    for name, targets in zip(vocab.names, vocab.target_categories):
        unknown = sorted(set(targets) - cat_ids)
        if unknown:
            raise FormatError(f"action {name!r} references unknown object categories {unknown}")
    images, categories = {}, {}
    for rec in doc.get("images", []):
        image_id = str(rec["image_id"])
        if image_id in images:
            raise FormatError(f"duplicate image {image_id!r}")
        present = set(int(c) for c in rec.get("categories", []))
        if present - cat_ids:
            raise FormatError(f"image {image_id!r} lists unknown categories {sorted(present - cat_ids)}")
        trips = []
        for k, t in enumerate(rec.get("triplets", [])):
            where = f"image {image_id!r} triplet {k}"
            name = t.get("action")
            if name not in vocab.names:
                raise FormatError(f"{where}: unknown action {name!r}")
            a = vocab.index(name)
            obj = t.get("object")
            if vocab.object_involved[a] and obj is None:
                raise FormatError(f"{where}: action {name!r} needs an object box")
            if not vocab.object_involved[a] and obj is not None:
                raise FormatError(f"{where}: action {name!r} takes no object")
            trips.append(GtTriplet(_box(t.get("human"), where), a, None if obj is None else _box(obj, where)))
        images[image_id] = trips
        categories[image_id] = present
    return GroundTruth(vocab, images, categories), sorted(cat_ids)


def load_ground_truth(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed ground-truth JSON: {exc}") from None
    return parse_ground_truth(doc)[0]


def ground_truth_doc(gt, category_ids):
    vblock = gt.vocab.to_json()
    vblock["object_categories"] = [int(c) for c in category_ids]
    images = []
    for image_id in gt.images:
        images.append(
            {
                "image_id": image_id,
                "categories": sorted(int(c) for c in gt.categories.get(image_id, ())),
                "triplets": [
                    {
                        "human": t.human.as_list(),
                        "action": gt.vocab.names[t.action],
                        "object": None if t.object is None else t.object.as_list(),
                    }
                    for t in gt.images[image_id]
                ],
            }
        )
    return {"vocabulary": vblock, "images": images}


def save_ground_truth(path, gt, category_ids):
    Path(path).write_text(json.dumps(ground_truth_doc(gt, category_ids), indent=1))


# --------------------------------------------------------------------------
# predictions


def format_score(score):
    return f"{score:.9g}"


def triplet_record(image_id, trip, vocab):
    return {
        "image_id": image_id,
        "human": trip.human.box.as_list(),
        "object": None if trip.object is None else trip.object.box.as_list(),
        "action": vocab.names[trip.action],
        "score": format_score(trip.score),
    }


def load_predictions(path, vocab):
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                name = rec["action"]
                if name not in vocab.names:
                    raise FormatError(f"line {lineno}: unknown action {name!r}")
                obj = rec.get("object")
                preds.append(
                    Prediction(
                        str(rec["image_id"]),
                        _box(rec["human"], f"line {lineno}"),
                        None if obj is None else _box(obj, f"line {lineno}"),
                        vocab.index(name),
                        float(rec["score"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(f"line {lineno}: malformed prediction ({exc})") from None
    return preds
