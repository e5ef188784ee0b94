import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ican import checkpoint
from ican.data_io import (
    FormatError,
    ImageDetections,
    decode_feature_map,
    encode_feature_map,
    load_detections,
    load_ground_truth,
    load_predictions,
    parse_detection_line,
    save_detections,
    save_ground_truth,
)
from ican.boxes import BBox
from ican.evaluation import role_map
from ican.inference import Detection
from ican.synth import SynthSpec, planted_rule_predictions, synth_generate


# --- feature maps -------------------------------------------------------------


def test_feature_map_roundtrip_bit_exact(rng):
    x = rng.standard_normal((3, 4, 5))
    y, image_id = decode_feature_map(encode_feature_map(x, "img-7"))
    assert image_id == "img-7" and y.tobytes() == x.tobytes()


def test_feature_map_payload_length(rng):
    blob = encode_feature_map(rng.standard_normal((2, 3, 3)), "a")
    assert len(blob) == 6 + 16 + 1 + 8 * 18
    with pytest.raises(FormatError):
        decode_feature_map(blob[:-8])
    with pytest.raises(FormatError):
        decode_feature_map(b"FMAP02" + blob[6:])


# --- detections ---------------------------------------------------------------


def write_lines(path, lines):
    path.write_text("".join(l + "\n" for l in lines))
    return path


def test_empty_detection_file(tmp_path):
    assert load_detections(write_lines(tmp_path / "d.jsonl", [])) == []


def test_detection_score_out_of_range(tmp_path):
    rec = {"image_id": "x", "detections": [{"box": [0, 0, 1, 1], "category": 1, "score": 1.2, "is_person": False}]}
    with pytest.raises(FormatError, match="score"):
        load_detections(write_lines(tmp_path / "d.jsonl", [json.dumps(rec)]))


def test_malformed_line_reports_line_number(tmp_path):
    good = json.dumps({"image_id": "x", "detections": []})
    with pytest.raises(FormatError, match="line 2"):
        load_detections(write_lines(tmp_path / "d.jsonl", [good, "{not json"]))


def test_invalid_box_names_image(tmp_path):
    rec = {"image_id": "img42", "detections": [{"box": [5, 0, 1, 1], "category": 1, "score": 0.5, "is_person": False}]}
    with pytest.raises(FormatError, match="img42"):
        load_detections(write_lines(tmp_path / "d.jsonl", [json.dumps(rec)]))


coord = st.floats(0, 1000, allow_nan=False, allow_infinity=False)
det_strategy = st.builds(
    lambda x, y, w, h, cat, score, person: Detection(BBox(x, y, x + w, y + h), cat, score, person),
    coord,
    coord,
    st.floats(0.01, 100),
    st.floats(0.01, 100),
    st.integers(0, 90),
    st.floats(0, 1),
    st.booleans(),
)
image_strategy = st.builds(ImageDetections, st.text("abcdef0123_", min_size=1, max_size=8), st.lists(det_strategy, max_size=5))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(image_strategy, max_size=4))
def test_detection_roundtrip(tmp_path, images):
    path = tmp_path / "rt.jsonl"
    save_detections(path, images)
    first = path.read_bytes()
    loaded = load_detections(path)
    assert [(i.image_id, i.detections) for i in loaded] == [(i.image_id, i.detections) for i in images]
    save_detections(path, loaded)
    assert path.read_bytes() == first


VALID_DET = {"image_id": "a", "detections": [{"box": [0, 0, 2, 2], "category": 1, "score": 0.5, "is_person": True}]}


@pytest.mark.parametrize(
    "mutate",
    [
        lambda r: r["detections"][0].update(box=[0, 0, 0, 2]),
        lambda r: r["detections"][0].update(box=[0, 3, 2, 2]),
        lambda r: r["detections"][0].update(box=[0, 0, 2]),
        lambda r: r["detections"][0].update(score=-0.1),
        lambda r: r["detections"][0].update(score="0.5"),
        lambda r: r["detections"][0].update(category="cup"),
        lambda r: r["detections"][0].update(is_person="yes"),
        lambda r: r.pop("image_id"),
        lambda r: r.update(detections={}),
    ],
)
def test_detection_validator_rejects_mutations(mutate):
    rec = json.loads(json.dumps(VALID_DET))
    parse_detection_line(json.dumps(rec))
    mutate(rec)
    with pytest.raises(FormatError):
        parse_detection_line(json.dumps(rec))


# --- ground truth ---------------------------------------------------------------


def gt_doc(**over):
    doc = {
        "vocabulary": {
            "object_categories": [1, 2],
            "actions": [
                {"name": "hold", "object_involved": True, "target_categories": [1]},
                {"name": "smile", "object_involved": False, "target_categories": []},
            ],
        },
        "images": [{"image_id": "a", "categories": [1], "triplets": [{"human": [0, 0, 2, 4], "action": "hold", "object": [2, 0, 4, 2]}]}],
    }
    doc.update(over)
    return doc


def dump(tmp_path, doc):
    p = tmp_path / "gt.json"
    p.write_text(json.dumps(doc))
    return p


def test_minimal_ground_truth(tmp_path):
    gt = load_ground_truth(dump(tmp_path, gt_doc()))
    assert len(gt.vocab) == 2 and len(gt.images) == 1 and len(gt.images["a"]) == 1
    assert gt.categories["a"] == {1}


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda d: d["images"][0]["triplets"].append({"human": [0, 0, 1, 1], "action": "smile", "object": [0, 0, 1, 1]}), "no object"),
        (lambda d: d["images"][0]["triplets"].append({"human": [0, 0, 1, 1], "action": "hold", "object": None}), "needs an object"),
        (lambda d: d["vocabulary"]["actions"][0].update(target_categories=[9]), "unknown object categories"),
        (lambda d: d["vocabulary"]["actions"].append({"name": "hold", "object_involved": True}), "duplicate"),
        (lambda d: d["images"][0]["triplets"].append({"human": [0, 0, 1, 1], "action": "kick", "object": None}), "unknown action"),
        (lambda d: d["images"][0]["triplets"][0].update(human=[3, 0, 1, 1]), "invalid box"),
        (lambda d: d["images"][0].update(categories=[7]), "unknown categories"),
    ],
)
def test_ground_truth_rejects(tmp_path, mutate, msg):
    doc = gt_doc()
    mutate(doc)
    with pytest.raises(FormatError, match=msg):
        load_ground_truth(dump(tmp_path, doc))


def test_vcoco_sized_vocabulary(tmp_path):
    actions = [{"name": f"verb{i}", "object_involved": i % 5 != 0, "target_categories": []} for i in range(26)]
    doc = gt_doc(vocabulary={"object_categories": [1, 2], "actions": actions}, images=[])
    assert len(load_ground_truth(dump(tmp_path, doc)).vocab) == 26


def test_predictions_reject_unknown_action(tmp_path):
    gt = load_ground_truth(dump(tmp_path, gt_doc()))
    p = write_lines(tmp_path / "p.jsonl", [json.dumps({"image_id": "a", "human": [0, 0, 1, 1], "object": None, "action": "kick", "score": "0.5"})])
    with pytest.raises(FormatError, match="kick"):
        load_predictions(p, gt.vocab)


# --- checkpoints ------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"b": rng.standard_normal((2, 3)), "a.w": rng.standard_normal(4), "scalarish": np.array([1.5])}
    checkpoint.save(tmp_path / "c.bin", params, {"x": 1})
    back = checkpoint.load(tmp_path / "c.bin")
    assert list(back) == sorted(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    assert checkpoint.load_meta(tmp_path / "c.bin") == {"x": 1}


def test_checkpoint_rejects_bad_magic_and_truncation(rng):
    blob = checkpoint.encode({"w": rng.standard_normal(3)})
    assert blob[:6] == b"ICAN01"
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.decode(b"XXXX01" + blob[6:])
    for cut in (7, 12, len(blob) - 1):
        with pytest.raises(checkpoint.CheckpointError, match="truncated"):
            checkpoint.decode(blob[:cut])


# --- synthetic data ---------------------------------------------------------------


def write_synth(tmp_path, spec):
    from ican.cli import write_synth_dataset

    out = tmp_path / f"s{spec.seed}"
    write_synth_dataset(spec, out)
    return out


def test_synth_same_seed_byte_identical(tmp_path):
    spec = SynthSpec(seed=3, images=6)
    a = write_synth(tmp_path / "a", spec)
    b = write_synth(tmp_path / "b", spec)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files_a == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_synth_degenerate_rule_single_label():
    spec = SynthSpec(seed=2, images=20, actions=3, categories=1, buckets=1)
    _, gt = synth_generate(spec)
    labels = {t.action for trips in gt.images.values() for t in trips if t.object is not None}
    assert labels == {0}


def test_synth_planted_rule_scores_perfectly():
    spec = SynthSpec(seed=5, images=40)
    images, gt = synth_generate(spec)
    assert role_map(planted_rule_predictions(images, spec), gt).mean_ap == 1.0


def test_synth_output_passes_loaders(tmp_path):
    spec = SynthSpec(seed=4, images=5)
    out = write_synth(tmp_path, spec)
    images, gt = synth_generate(spec)
    dets = load_detections(out / "detections.jsonl")
    assert [(d.image_id, d.detections) for d in dets] == [(im.image_id, im.detections) for im in images]
    loaded = load_ground_truth(out / "gt.json")
    assert loaded.images == gt.images and loaded.vocab == gt.vocab and loaded.categories == gt.categories
    save_ground_truth(tmp_path / "again.json", loaded, spec.category_ids)
    assert (tmp_path / "again.json").read_bytes() == (out / "gt.json").read_bytes()


def test_synth_grid_too_small():
    with pytest.raises(ValueError, match="grid"):
        SynthSpec(grid=4)


def test_synth_structure():
    spec = SynthSpec(seed=9, images=30)
    images, gt = synth_generate(spec)
    for im in images:
        persons = [d for d in im.detections if d.is_person]
        objects = [d for d in im.detections if not d.is_person]
        assert 1 <= len(persons) <= 4 and 1 <= len(objects) <= 5
        assert im.fmap.shape == (spec.channels, spec.grid, spec.grid)
    interacting = sum(1 for t in gt.images.values() for g in t if g.object is not None)
    assert interacting > 0
