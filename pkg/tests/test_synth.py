import json

import numpy as np
import pytest

from actar.errors import GeometryError
from actar.pose_data import read_sequence, serialize_sequence
from actar.synth import (CLASS_NAMES, SynthSpec, generate_dataset, generate_sequence, mean_displacement,
                         reference_poses)


def track_flows(rec):
    return {tr.track_id: np.mean([d.flow_magnitude for d in tr.detections]) for tr in rec.tracks}


def test_jump_main_actor_dominates():
    rec, _, truth = generate_sequence(SynthSpec(2, num_actors=3, motion_ratio=2.0, seed=42))
    flows = track_flows(rec)
    main = flows[truth.key_actor_id]
    for tid, f in flows.items():
        if tid != truth.key_actor_id:
            # the distractor amplitude is set so the ratio is exactly 2
            assert main >= 2 * f * (1 - 1e-9)


def test_deterministic_bytes():
    spec = SynthSpec(1, num_actors=2, seed=5)
    a_rec, a_frames, a_truth = generate_sequence(spec, "x")
    b_rec, b_frames, b_truth = generate_sequence(spec, "x")
    assert json.dumps(serialize_sequence(a_rec)) == json.dumps(serialize_sequence(b_rec))
    assert a_frames.frames.tobytes() == b_frames.frames.tobytes()
    assert a_truth.to_dict() == b_truth.to_dict()


def test_single_actor():
    rec, frames, truth = generate_sequence(SynthSpec(0, num_actors=1, seed=1))
    assert len(rec.tracks) == 1
    assert truth.key_actor_id == rec.tracks[0].track_id
    assert frames.frames.shape == (40, 256, 293)


def test_flow_matches_joint_displacement():
    rec, _, truth = generate_sequence(SynthSpec(1, num_actors=3, seed=9))
    for tr in rec.tracks:
        expected = mean_displacement(truth.true_joints[tr.track_id])
        got = np.array([d.flow_magnitude for d in tr.detections])
        assert np.max(np.abs(got - expected)) < 1e-6


@pytest.mark.parametrize("bad", [dict(motion_ratio=1.0), dict(num_frames=15), dict(num_actors=0),
                                 dict(class_id=3)])
def test_spec_invariants(bad):
    args = dict(class_id=0)
    args.update(bad)
    with pytest.raises(ValueError):
        SynthSpec(**args)


def test_geometry_error():
    with pytest.raises(GeometryError):
        generate_sequence(SynthSpec(1, num_actors=12, seed=0))


def _energy(traj, joints, axis):
    rel = traj[:, joints, axis] - traj[:, [11, 12], axis].mean(axis=1, keepdims=True)
    return float(np.var(rel, axis=0).sum())


@pytest.mark.parametrize("seed", range(5))
def test_motion_family_matches_label(seed):
    """The dominant moving body part of the main actor identifies its class."""
    found = {}
    for cls in range(3):
        rec, _, truth = generate_sequence(SynthSpec(cls, num_actors=1, seed=seed))
        traj = truth.true_joints[truth.key_actor_id]
        hips_y = float(np.var(traj[:, [11, 12], 1].mean(axis=1)))
        arm = _energy(traj, [7, 8, 9, 10], 0) + _energy(traj, [7, 8, 9, 10], 1)
        leg_x = _energy(traj, [13, 14, 15, 16], 0)
        scores = {"wave": arm if hips_y < 1e-9 and leg_x < 1e-9 else 0.0,
                  "walk": leg_x if hips_y < 1e-9 else 0.0,
                  "jump": hips_y}
        found[CLASS_NAMES[cls]] = max(scores, key=scores.get)
    assert found == {"wave": "wave", "walk": "walk", "jump": "jump"}


def test_walk_drifts_horizontally():
    rec, _, truth = generate_sequence(SynthSpec(1, num_actors=1, seed=3))
    hips = truth.true_joints[truth.key_actor_id][:, [11, 12], 0].mean(axis=1)
    assert abs(hips[-1] - hips[0]) > 5.0


def test_reference_poses_jitter():
    clean = reference_poses(10, seed=1)
    noisy = reference_poses(10, seed=1, noise_std=1.0)
    assert all(np.all(p.confidence == 1.0) for p in clean)
    diffs = [np.abs(a.xy - b.xy).max() for a, b in zip(clean, noisy)]
    assert 0 < max(diffs) < 6


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    return generate_dataset(root / "a", per_class=4, seed=0, num_frames=16, reference_count=40)


def test_dataset_manifest(small_dataset):
    doc = json.loads(small_dataset.read_text())
    seqs = doc["sequences"]
    assert len(seqs) == 12
    assert doc["classes"] == ["wave", "walk", "jump"]
    train = {s["sequence_id"] for s in seqs if s["split"] == "train"}
    test = {s["sequence_id"] for s in seqs if s["split"] == "test"}
    assert len(train) == 9 and len(test) == 3 and not train & test
    for s in seqs:
        rec = read_sequence(small_dataset.parent / s["document"])
        assert rec.label == s["label"]
        assert s["key_actor_id"] in rec.track_ids()
    assert sorted(s["label"] for s in seqs if s["split"] == "test") == [0, 1, 2]


def test_full_size_split_counts():
    from actar.synth import split_indices
    labels = [c for c in range(3) for _ in range(40)]
    splits = split_indices(labels, seed=0)
    assert splits.count("train") == 90 and splits.count("test") == 30


def test_two_seeds_give_different_splits():
    from actar.synth import split_indices
    labels = [c for c in range(3) for _ in range(40)]
    assert split_indices(labels, 0) != split_indices(labels, 1)


def test_class_subset_labels(tmp_path):
    path = generate_dataset(tmp_path, classes=(2, 0), per_class=2, seed=1, num_frames=16, reference_count=40)
    doc = json.loads(path.read_text())
    assert doc["classes"] == ["jump", "wave"]
    assert sorted({s["label"] for s in doc["sequences"]}) == [0, 1]
