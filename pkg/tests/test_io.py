import json

import numpy as np
import pytest

from sthoid.features import Skeleton
from sthoid.geometry import Box, Trajectory
from sthoid.io import (AnnotationRecord, DataError, DatasetManifest, FeatureGridFile, RelationInstance, VideoEntry,
                       load_annotation, load_detections, load_embeddings, load_feature_grids, load_keypoints,
                       load_manifest, load_model, load_predictions, load_trajectories, save_annotation,
                       save_detections, save_embeddings, save_keypoints, save_manifest, save_model,
                       save_predictions, save_trajectories, write_feature_grids)
from sthoid.recognition import FactorizedPredicateClassifier, HoiInstance, LabelSpace
from sthoid.tracklets import Detection

from conftest import still_trajectory


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_detection_round_trip(tmp_path):
    recs = [("v1", Detection(0, Box(1.5, 2, 3, 4), "cup", 0.25)), ("v1", Detection(0, Box(9, 9, 1, 1), "dog", 1.0)),
            ("v2", Detection(7, Box(0, 0, 5, 5), "cup", 0.5))]
    save_detections(tmp_path / "d.jsonl", recs)
    out = load_detections(tmp_path / "d.jsonl")
    assert [d for d in out["v1"][0]] == [recs[0][1], recs[1][1]]
    assert out["v2"][7] == [recs[2][1]]


@pytest.mark.parametrize("rec, message", [
    ({"video": "v", "frame": -1, "box": [0, 0, 1, 1], "category": "cup", "score": 0.5}, "negative frame"),
    ({"video": "v", "frame": 0, "box": [0, 0, 1, 1], "category": "cup", "score": 1.5}, "outside"),
    ({"video": "v", "frame": 0, "box": [0, 0, 0, 1], "category": "cup", "score": 0.5}, "bad detection"),
    ({"video": "v", "frame": 0, "category": "cup", "score": 0.5}, "box"),
])
def test_detection_errors_name_the_line(tmp_path, rec, message):
    good = {"video": "v", "frame": 0, "box": [0, 0, 1, 1], "category": "cup", "score": 0.5}
    path = write_lines(tmp_path / "d.jsonl", [good, rec])
    with pytest.raises(DataError, match=message) as info:
        load_detections(path)
    assert info.value.line == 2


def test_detection_unknown_category(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [{"video": "v", "frame": 0, "box": [0, 0, 1, 1], "category": "yak",
                                               "score": 0.5}])
    with pytest.raises(DataError, match="yak"):
        load_detections(path, categories={"cup"})


def test_malformed_json_line(tmp_path):
    (tmp_path / "d.jsonl").write_text("{not json\n")
    with pytest.raises(DataError):
        load_detections(tmp_path / "d.jsonl")


def test_keypoint_round_trip_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    sk = Skeleton(rng.uniform(0, 50, (17, 2)), rng.uniform(0, 1, 17))
    save_keypoints(tmp_path / "k.jsonl", [("v", 3, sk)])
    (back,) = load_keypoints(tmp_path / "k.jsonl")["v"][3]
    np.testing.assert_array_equal(back.joints, sk.joints)
    np.testing.assert_array_equal(back.visibility, sk.visibility)
    write_lines(tmp_path / "bad.jsonl", [{"video": "v", "frame": 0, "keypoints": [[0, 0, 1]] * 16}])
    with pytest.raises(DataError, match="17"):
        load_keypoints(tmp_path / "bad.jsonl")


def test_feature_grid_round_trip_and_random_access(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.normal(size=(6, 3, 4, 5)).astype(np.float32)
    path = tmp_path / "g.bin"
    write_feature_grids(path, values, first_frame=10, frame_w=320, frame_h=240)
    f = FeatureGridFile(path)
    assert f.frames == range(10, 16)
    grids = f.read(12, 13)
    assert [g.frame for g in grids] == [12, 13]
    np.testing.assert_array_equal(grids[1].values, values[3])
    assert grids[0].frame_w == 320 and grids[0].frame_h == 240
    assert len(load_feature_grids(path)) == 6
    with pytest.raises(DataError, match="outside"):
        f.read(15, 16)


def test_feature_grid_corruption(tmp_path):
    path = tmp_path / "g.bin"
    write_feature_grids(path, np.zeros((2, 1, 2, 2)), 0, 10, 10)
    raw = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-4])
    with pytest.raises(DataError, match="size"):
        FeatureGridFile(tmp_path / "trunc.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError, match="magic"):
        FeatureGridFile(tmp_path / "magic.bin")
    (tmp_path / "short.bin").write_bytes(raw[:10])
    with pytest.raises(DataError, match="truncated"):
        FeatureGridFile(tmp_path / "short.bin")


def test_embedding_round_trip_and_errors(tmp_path):
    save_embeddings(tmp_path / "e.txt", {"human": [0.1, -2.0], "cup": [1 / 3, 5.0]})
    table = load_embeddings(tmp_path / "e.txt")
    assert table["cup"][0] == 1 / 3 and table.dim == 2
    (tmp_path / "bad.txt").write_text("a 1 2\nb 1\n")
    with pytest.raises(DataError, match="dimension"):
        load_embeddings(tmp_path / "bad.txt")
    (tmp_path / "dup.txt").write_text("a 1\na 2\n")
    with pytest.raises(DataError, match="duplicate"):
        load_embeddings(tmp_path / "dup.txt")


def _annotation():
    h = still_trajectory((0, 0, 20, 40), 0, 9, track_id="0")
    o = still_trajectory((25, 10, 10, 10), 2, 9, "cup", track_id="1")
    return AnnotationRecord("v", 12, 100, 80, 25.0, {"0": h, "1": o}, [RelationInstance("0", "1", "hold", 3, 7)])


def test_annotation_round_trip(tmp_path):
    ann = _annotation()
    save_annotation(tmp_path / "a.json", ann)
    back = load_annotation(tmp_path / "a.json")
    assert back.relations == ann.relations and back.fps == 25.0
    for tid, t in ann.trajectories.items():
        assert back.trajectories[tid].span == t.span
        np.testing.assert_array_equal(back.trajectories[tid].boxes, t.boxes)
    (inst,) = back.hoi_instances()
    assert inst.label == ("hold", "cup") and inst.span == (3, 7)


def test_annotation_errors(tmp_path):
    ann = _annotation()
    ann.relations = [RelationInstance("0", "1", "hold", 0, 7)]
    save_annotation(tmp_path / "a.json", ann)
    with pytest.raises(DataError, match="outside trajectory"):
        load_annotation(tmp_path / "a.json")
    ann.relations = [RelationInstance("1", "0", "hold", 3, 7)]
    save_annotation(tmp_path / "b.json", ann)
    with pytest.raises(DataError, match="not human"):
        load_annotation(tmp_path / "b.json")


def test_trajectory_and_prediction_round_trip(tmp_path):
    t = Trajectory(4, np.arange(12, dtype=float).reshape(3, 4) + 1, "cup", 0.75, track_id="t3")
    save_trajectories(tmp_path / "t.jsonl", {"v": [t]})
    (back,) = load_trajectories(tmp_path / "t.jsonl")["v"]
    assert back.track_id == "t3" and back.score == 0.75
    np.testing.assert_array_equal(back.boxes, t.boxes)

    inst = HoiInstance("v", "hold", "cup", still_trajectory((0, 0, 5, 5), 4, 6), t, 0.123456789)
    save_predictions(tmp_path / "p.jsonl", [inst])
    (p,) = load_predictions(tmp_path / "p.jsonl")
    assert p.score == inst.score and p.label == inst.label
    np.testing.assert_array_equal(p.object.boxes, t.boxes)


def test_trajectory_box_count_mismatch(tmp_path):
    write_lines(tmp_path / "t.jsonl", [{"video": "v", "begin": 0, "end": 3, "category": "cup",
                                        "boxes": [[0, 0, 1, 1]]}])
    with pytest.raises(DataError, match="4 frames"):
        load_trajectories(tmp_path / "t.jsonl")
    write_lines(tmp_path / "u.jsonl", [{"begin": 0, "end": 0, "category": "cup", "boxes": [[0, 0, 1, 1]]}])
    with pytest.raises(DataError):
        load_trajectories(tmp_path / "u.jsonl")


def test_manifest_round_trip_and_missing_file(tmp_path):
    (tmp_path / "e.txt").write_text("human 1\ncup 2\n")
    (tmp_path / "d.jsonl").write_text("")
    manifest = DatasetManifest(LabelSpace(("human", "cup"), ("hold",)), tmp_path / "e.txt",
                               [VideoEntry("v", 10, 64, 48, 30.0, detections=tmp_path / "d.jsonl")], root=tmp_path)
    save_manifest(tmp_path / "m.json", manifest)
    back = load_manifest(tmp_path / "m.json")
    assert back.labels == manifest.labels and back.videos[0].detections == tmp_path / "d.jsonl"
    (tmp_path / "d.jsonl").unlink()
    with pytest.raises(DataError, match="does not exist"):
        load_manifest(tmp_path / "m.json")
    with pytest.raises(DataError, match="not found"):
        load_manifest(tmp_path / "nope.json")


def _model():
    rng = np.random.default_rng(2)
    clf = FactorizedPredicateClassifier(predicates=("hold", "push"), objects=("cup", "dog"), block_dims=(3, 2, 2),
                                        hidden=4, epochs=2)
    return clf.fit(rng.normal(size=(8, 7)), (rng.random((8, 2)) < 0.5).astype(float), ["cup", "dog"] * 4)


def test_model_round_trip(tmp_path):
    clf = _model()
    save_model(tmp_path / "m.bin", clf, extra={"channels": 3})
    back, extra = load_model(tmp_path / "m.bin")
    assert extra == {"channels": 3}
    assert back.get_params() == clf.get_params()
    X = np.random.default_rng(3).normal(size=(5, 7))
    objs = ["cup", "dog", "cup", "dog", "cup"]
    np.testing.assert_array_equal(back.predict_proba(X, objs), clf.predict_proba(X, objs))
    np.testing.assert_array_equal(back.mask_, clf.mask_)


def test_model_corruption_detected(tmp_path):
    save_model(tmp_path / "m.bin", _model())
    raw = bytearray((tmp_path / "m.bin").read_bytes())
    raw[-1] ^= 0xFF
    (tmp_path / "c.bin").write_bytes(bytes(raw))
    with pytest.raises(DataError, match="checksum"):
        load_model(tmp_path / "c.bin")
    (tmp_path / "x.bin").write_bytes(b"garbage" * 4)
    with pytest.raises(DataError, match="magic"):
        load_model(tmp_path / "x.bin")
