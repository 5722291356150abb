import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from actar.errors import CorruptImage, DimensionMismatch, DuplicateFrame, MissingFrame, SchemaViolation
from actar.pose_data import (FrameStore, PoseFrame, frame_filename, load_frames, parse_pose_tracks,
                             save_frames, serialize_sequence, validate_sequence)


def joints(cx=50.0, cy=50.0):
    return [[cx + j, cy + 2 * j, 0.9] for j in range(17)]


def make_doc(frames=(0, 1), num_frames=2, width=100, height=120, bbox=(10, 10, 40, 60)):
    return {
        "sequence_id": "s0", "num_frames": num_frames, "width": width, "height": height, "fps": 25.0,
        "tracks": [{
            "track_id": 7,
            "detections": [{"frame": f, "bbox": list(bbox), "score": 0.9, "flow_magnitude": 1.5} for f in frames],
            "poses": [{"frame": f, "joints": joints(), "bbox": list(bbox)} for f in frames],
        }],
    }


def test_minimal_document():
    rec = parse_pose_tracks(json.dumps(make_doc()))
    assert rec.num_frames == 2
    assert len(rec.tracks) == 1
    assert rec.track(7).frames == [0, 1]
    assert rec.poses[(7, 1)].joints.shape == (17, 3)
    assert rec.label is None


def test_sixteen_joints_rejected():
    doc = make_doc()
    doc["tracks"][0]["poses"][0]["joints"] = joints()[:16]
    with pytest.raises(SchemaViolation):
        parse_pose_tracks(doc)


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("width"),
    lambda d: d["tracks"][0]["detections"][0].pop("score"),
    lambda d: d["tracks"][0]["detections"][0].__setitem__("flow_magnitude", float("nan")),
    lambda d: d["tracks"][0]["detections"][0].__setitem__("score", 1.5),
    lambda d: d["tracks"][0]["poses"][0]["joints"][3].__setitem__(0, float("inf")),
    lambda d: d["tracks"][0]["detections"][0].__setitem__("frame", 5),
    lambda d: d["tracks"][0]["detections"].pop(),  # pose left without a detection
])
def test_schema_violations(mutate):
    doc = make_doc()
    mutate(doc)
    with pytest.raises(SchemaViolation):
        parse_pose_tracks(doc)


def test_duplicate_frame():
    doc = make_doc()
    doc["tracks"][0]["detections"][1]["frame"] = 0
    with pytest.raises(DuplicateFrame):
        parse_pose_tracks(doc)


def test_detections_sorted_after_parse():
    doc = make_doc(frames=(3, 0, 2), num_frames=4)
    rec = parse_pose_tracks(doc)
    assert rec.track(7).frames == [0, 2, 3]
    assert [p.frame_index for p in rec.poses_for(7)] == [0, 2, 3]


finite = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)


@st.composite
def documents(draw):
    n = draw(st.integers(1, 6))
    tracks = []
    for tid in draw(st.lists(st.integers(0, 50), min_size=1, max_size=3, unique=True)):
        frames = sorted(draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True)))
        dets, poses = [], []
        for f in frames:
            box = [draw(finite), draw(finite), draw(st.floats(0.5, 300)), draw(st.floats(0.5, 300))]
            dets.append({"frame": f, "bbox": box, "score": draw(st.floats(0, 1)),
                         "flow_magnitude": draw(st.floats(0, 50))})
            if draw(st.booleans()):
                pts = [[draw(finite), draw(finite), draw(st.floats(0, 1))] for _ in range(17)]
                poses.append({"frame": f, "joints": pts, "bbox": box})
        tracks.append({"track_id": tid, "detections": dets, "poses": poses})
    doc = {"sequence_id": "x", "num_frames": n, "width": 64, "height": 48, "fps": 25.0, "tracks": tracks}
    if draw(st.booleans()):
        doc["label"] = draw(st.integers(0, 5))
    return doc


@settings(max_examples=60, deadline=None)
@given(documents())
def test_round_trip(doc):
    rec = parse_pose_tracks(doc)
    canon = serialize_sequence(rec)
    assert serialize_sequence(parse_pose_tracks(json.dumps(canon))) == canon
    # canonical form equals the input up to float coercion
    assert canon["tracks"][0]["track_id"] == doc["tracks"][0]["track_id"]
    assert len(canon["tracks"]) == len(doc["tracks"])


def test_pose_frame_readonly_and_keypoints():
    p = PoseFrame(0, np.array(joints()), (0, 0, 5, 5))
    with pytest.raises(ValueError):
        p.joints[0, 0] = 1.0
    kp = p.keypoints[2]
    assert (kp.x, kp.y, kp.confidence) == (52.0, 54.0, 0.9)


def test_validate_consistent():
    rec = parse_pose_tracks(make_doc())
    frames = FrameStore(np.zeros((2, 120, 100), np.uint8))
    assert validate_sequence(rec, frames) == []


def test_validate_bbox_far_outside_edge():
    rec = parse_pose_tracks(make_doc(frames=(0,), num_frames=1, bbox=(60, 10, 90, 20)))  # right edge at 150
    kinds = {v.kind for v in validate_sequence(rec)}
    assert kinds == {"BBoxOutOfBounds"}


def test_validate_small_overshoot_is_clamped(caplog):
    rec = parse_pose_tracks(make_doc(frames=(0,), num_frames=1, bbox=(60, 10, 45, 20)))  # 5 px over
    assert validate_sequence(rec) == []
    assert "clamped" in caplog.text


def test_validate_fully_outside():
    rec = parse_pose_tracks(make_doc(frames=(0,), num_frames=1, bbox=(200, 10, 10, 10)))
    assert {v.kind for v in validate_sequence(rec)} == {"BBoxOutside"}


def test_validate_frame_count_mismatch():
    rec = parse_pose_tracks(make_doc())
    kinds = [v.kind for v in validate_sequence(rec, FrameStore(np.zeros((1, 120, 100), np.uint8)))]
    assert kinds == ["FrameCountMismatch"]


def test_load_frames_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, size=(10, 256, 293), dtype=np.uint8)
    save_frames(FrameStore(data), tmp_path)
    store = load_frames(tmp_path)
    assert store.num_frames == 10 and (store.width, store.height) == (293, 256)
    assert np.array_equal(store.frames, data)
    assert (tmp_path / frame_filename(3)).read_bytes()[:2] == b"P5"


def test_missing_frame(tmp_path):
    save_frames(FrameStore(np.zeros((10, 8, 8), np.uint8)), tmp_path)
    (tmp_path / frame_filename(3)).unlink()
    with pytest.raises(MissingFrame) as info:
        load_frames(tmp_path, 10)
    assert info.value.index == 3


def test_wrong_dimensions(tmp_path):
    save_frames(FrameStore(np.zeros((4, 8, 8), np.uint8)), tmp_path)
    Image.fromarray(np.zeros((9, 8), np.uint8)).save(tmp_path / frame_filename(2), format="PPM")
    with pytest.raises(DimensionMismatch):
        load_frames(tmp_path)


def test_corrupt_image(tmp_path):
    save_frames(FrameStore(np.zeros((2, 8, 8), np.uint8)), tmp_path)
    (tmp_path / frame_filename(1)).write_bytes(b"P5 garbage")
    with pytest.raises(CorruptImage):
        load_frames(tmp_path)
