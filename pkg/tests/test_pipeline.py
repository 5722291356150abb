import json
from dataclasses import replace

import numpy as np
import pytest

from actar import pipeline
from actar.errors import Corrupt, DataError, VersionMismatch
from actar.grid import read_grid
from actar.stages import read_actors, read_vectors, units_for


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        pipeline.load_manifest(tmp_path / "nope.json")


def test_manifest_splits(small_manifest):
    m = pipeline.load_manifest(small_manifest)
    assert len(m.entries) == 12 and len(m.classes) == 3
    assert len(m.split("train")) + len(m.split("test")) == 12
    assert {e.label for e in m.split("test")} == {0, 1, 2}


def test_vote():
    assert pipeline.vote([np.array([0.6, 0.4]), np.array([0.1, 0.9])]) == 1  # tie on votes, higher sum
    assert pipeline.vote([np.array([0.5, 0.5])]) == 0
    assert pipeline.vote([np.array([0.9, 0.1]), np.array([0.8, 0.2]), np.array([0.0, 1.0])]) == 0


@pytest.fixture(scope="module")
def run(small_manifest, tmp_path_factory):
    from conftest import quick_config
    root = tmp_path_factory.mktemp("run")
    cfg = quick_config(small_manifest, root)
    return cfg, pipeline.run_pipeline(cfg)


def test_report_consistent(run):
    cfg, report = run
    assert report.is_consistent()
    assert len(report.predictions) == 3
    assert 0 <= report.accuracy <= 1 and report.key_actor_accuracy == 1.0
    doc = json.loads((pipeline.Path(cfg.output_dir) / "report.json").read_text())
    assert doc["accuracy"] == report.accuracy


def test_stage_artifacts(run):
    cfg, _ = run
    out = pipeline.Path(cfg.output_dir)
    for name in ("predictions.csv", "per_class.csv", "per_class.png", "filter_model.json"):
        assert (out / name).exists(), name
    m = pipeline.load_manifest(cfg.manifest)
    seq = m.entries[0].sequence_id
    doc = read_actors(out, seq)
    assert doc["key_actor_id"] in [t for t, _ in units_for(out, seq)]
    (tid, unit), = units_for(out, seq)
    frames, vectors = read_vectors(out / "encoded" / f"{unit}.csv")
    assert vectors.shape[1] == 34 and len(frames) == len(vectors)
    g = read_grid(out / "grids" / f"{unit}.pgm")
    assert g.image.shape == (233, 463)


def test_bundle_round_trip_and_errors(run, tmp_path):
    cfg, _ = run
    path = pipeline.Path(cfg.model_dir) / "bundle.json"
    b = pipeline.load_bundle(path)
    assert b.classifier.n_classes == 3 and b.filter_model is not None and len(b.cluster_models) == 12
    again = pipeline.save_bundle(b, tmp_path / "copy.json")
    assert again.read_bytes() == path.read_bytes()
    doc = json.loads(path.read_text())
    (tmp_path / "v.json").write_text(json.dumps(dict(doc, version=99)))
    with pytest.raises(VersionMismatch):
        pipeline.load_bundle(tmp_path / "v.json")
    (tmp_path / "t.json").write_bytes(path.read_bytes()[:200])
    with pytest.raises(Corrupt):
        pipeline.load_bundle(tmp_path / "t.json")


def test_filtering_does_not_change_key_actor(quick, small_manifest):
    m = pipeline.load_manifest(small_manifest)
    cfg = quick()
    fm = pipeline.train_filter_model(cfg, m)
    for entry in m.entries[:4]:
        on = pipeline.process_sequence(cfg, entry, fm)
        off = pipeline.process_sequence(replace(cfg, ablation=replace(cfg.ablation, filtering=False)), entry, fm)
        assert on.key_actor_id == off.key_actor_id == entry.key_actor_id


def test_key_poses_are_distinct_frames(quick, small_manifest):
    m = pipeline.load_manifest(small_manifest)
    cfg = quick()
    res = pipeline.process_sequence(cfg, m.entries[0], pipeline.train_filter_model(cfg, m))
    actor, = res.actors
    assert len(actor.selected) == len(set(actor.selected)) == 8
    assert set(actor.selected) <= set(actor.frames_used)
    assert len(actor.kept_vectors) == len(actor.frames_used)
    assert sorted(actor.frames_used + actor.discarded) == sorted(actor.encoded_frames)


def test_all_actors_mode(quick):
    cfg = quick(**{"ablation.all_actors": True, "ablation.random_frames": True, "ablation.filtering": False})
    report = pipeline.run_pipeline(cfg, write_artifacts=False)
    assert len(report.predictions) == 3 and report.is_consistent()


def test_workers_do_not_change_results(quick, tmp_path):
    a = quick(save_bundle=False)
    b = replace(a, workers=3)
    ra = pipeline.run_pipeline(a, write_artifacts=False)
    rb = pipeline.run_pipeline(b, write_artifacts=False)
    assert ra.metrics() == rb.metrics()
    assert [p["probabilities"] for p in ra.predictions] == [p["probabilities"] for p in rb.predictions]


def test_ablation_table(quick):
    cfg = quick(**{"classifier.epochs": 1})
    rows = pipeline.run_ablation(cfg, rows=pipeline.ABLATION_ROWS[:2])
    assert [r["name"] for r in rows] == [n for n, _ in pipeline.ABLATION_ROWS[:2]]
    assert (pipeline.Path(cfg.output_dir) / "ablation.csv").exists()
