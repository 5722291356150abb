"""End-to-end orchestration: manifest in, stage artifacts and a run report out.

Stages per sequence: key-actor identification, pose encoding, pose
filtering, key-frame selection, grid building. The pose filter is trained
once per run on reference poses; the classifier is trained on the training
split's grids and evaluated on the test split.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import classifier as clf
from . import dec, grid, motion, pose_filter, stages
from .config import PipelineConfig
from .encoding import encode_poses
from .errors import ActarError, Corrupt, DataError, StageError, VersionMismatch
from .plotting import plot_ablation, plot_class_precision
from .pose_data import SequenceRecord, load_frames, read_sequence
from .seeding import derive_seed
from .synth import poses_from_dict

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "actar-bundle"
BUNDLE_VERSION = 1


# --------------------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    sequence_id: str
    document: Path
    frames: Path
    label: int
    split: str
    key_actor_id: Optional[object] = None


@dataclass
class Manifest:
    path: Path
    classes: List[str]
    entries: List[ManifestEntry]
    reference: Optional[Path] = None

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
        base = path.parent
        entries = [ManifestEntry(str(s["sequence_id"]), base / s["document"], base / s["frames"],
                                 int(s["label"]), s.get("split", "train"), s.get("key_actor_id"))
                   for s in doc["sequences"]]
        ref = base / doc["reference"] if doc.get("reference") else None
        return Manifest(path, list(doc["classes"]), entries, ref)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc


# --------------------------------------------------------------------------- per-sequence stages

@dataclass
class ActorResult:
    track_id: object
    grid_id: str
    encoded_frames: List[int]
    encoded: np.ndarray
    frames_used: List[int]
    kept_vectors: np.ndarray
    discarded: List[int]
    selected: List[int]
    grid: grid.ActionGrid
    cluster_model: Optional[dec.ClusterModel] = None


@dataclass
class SequenceResult:
    sequence_id: str
    label: int
    split: str
    key_actor_id: object
    scores: List[motion.TrackScore]
    actors: List[ActorResult]


def encode_track(rec: SequenceRecord, track_id, cartesian: bool = False) -> Tuple[List[int], np.ndarray]:
    poses = rec.poses_for(track_id)
    return [p.frame_index for p in poses], encode_poses(poses, not cartesian, rec.width, rec.height)


def select_frames(cfg: PipelineConfig, vectors: np.ndarray, frames: List[int], seed: int,
                  filter_model: Optional[pose_filter.FilterModel]):
    """Indices into ``frames`` of the chosen key frames (chronological), plus the cluster model."""
    k = min(cfg.cluster.K, len(frames))
    if cfg.ablation.random_frames:
        rng = np.random.default_rng(seed)
        return sorted(rng.choice(len(frames), size=k, replace=False).tolist()), None
    if cfg.cluster.method == "kmeans":
        model, q = dec.kmeans_baseline(vectors, k, seed, encoder=filter_model)
    else:
        model, q = dec.dec_fit(vectors, k, seed, epochs=cfg.cluster.epochs,
                               update_interval=cfg.cluster.update_interval, batch_size=cfg.cluster.batch,
                               lr=cfg.cluster.lr, encoder=filter_model)
    keys = dec.select_key_poses(model, q, vectors, frames)
    return [kp.index for kp in keys], model


def build_actor_grid(cfg: PipelineConfig, rec: SequenceRecord, frames_store, track_id,
                     frame_ids: Sequence[int], provenance: dict) -> grid.ActionGrid:
    g = cfg.grid
    tiles = []
    for f in frame_ids:
        pose = rec.poses[(track_id, f)]
        tiles.append(grid.extract_tile(frames_store[f], pose.bbox, g.tile_size, f,
                                       pose.joints if g.overlay_joints else None))
    tiles, padded = grid.pad_tiles(tiles, g.rows * g.cols)
    prov = dict(provenance, padded=padded)
    return grid.assemble_grid(tiles[:g.rows * g.cols], g.rows, g.cols, g.border, rec.label, prov)


def process_sequence(cfg: PipelineConfig, entry: ManifestEntry,
                     filter_model: Optional[pose_filter.FilterModel]) -> SequenceResult:
    stage = "load"
    try:
        rec = read_sequence(entry.document)
        rec = replace(rec, label=entry.label)
        stage = "identify-actor"
        key_id, scores = motion.identify_key_actor(rec, cfg.score_threshold)
        actor_ids = [s.track_id for s in scores] if cfg.ablation.all_actors else [key_id]
        stage = "load-frames"
        store = load_frames(entry.frames, rec.num_frames, (rec.width, rec.height))
        actors = []
        for tid in actor_ids:
            stage = "encode"
            all_frames, all_vectors = encode_track(rec, tid, cfg.ablation.cartesian)
            frames, vectors = all_frames, all_vectors
            discarded: List[int] = []
            if cfg.ablation.filtering and filter_model is not None and len(frames):
                stage = "filter"
                kept, dropped = pose_filter.filter_poses(filter_model, vectors)
                if kept:
                    discarded = [frames[i] for i in dropped]
                    frames = [frames[i] for i in kept]
                    vectors = vectors[kept]
                else:
                    log.warning("%s track %s: every pose rejected by the filter; keeping all", rec.sequence_id, tid)
            if not frames:
                continue
            stage = "cluster"
            seed = derive_seed(cfg.seed, rec.sequence_id, str(tid))
            idx, model = select_frames(cfg, vectors, frames, seed, filter_model)
            selected = [frames[i] for i in idx]
            stage = "build-grids"
            gid = stages.unit_id(rec.sequence_id, tid)
            g = build_actor_grid(cfg, rec, store, tid, selected,
                                 {"sequence_id": rec.sequence_id, "key_actor_id": key_id, "track_id": tid})
            actors.append(ActorResult(tid, gid, all_frames, all_vectors, frames, vectors, discarded,
                                      selected, g, model))
        return SequenceResult(rec.sequence_id, entry.label, entry.split, key_id, scores, actors)
    except ActarError as exc:
        raise StageError(stage, entry.sequence_id, exc) from exc


# --------------------------------------------------------------------------- filter model

def reference_vectors(cfg: PipelineConfig, manifest: Manifest) -> np.ndarray:
    """Encoded reference poses; falls back to training-split key-actor poses."""
    first = read_sequence(manifest.entries[0].document)
    if manifest.reference is not None and manifest.reference.is_file():
        poses = poses_from_dict(json.loads(manifest.reference.read_text()))
        return encode_poses(poses, not cfg.ablation.cartesian, first.width, first.height)
    chunks = []
    for e in manifest.split("train"):
        rec = read_sequence(e.document)
        key_id, _ = motion.identify_key_actor(rec, cfg.score_threshold)
        chunks.append(encode_track(rec, key_id, cfg.ablation.cartesian)[1])
    return np.concatenate(chunks)


def train_filter_model(cfg: PipelineConfig, manifest: Manifest) -> pose_filter.FilterModel:
    try:
        ref = reference_vectors(cfg, manifest)
        f = cfg.filter
        return pose_filter.train_autoencoder(ref, f.epochs, f.lr, f.batch, derive_seed(cfg.seed, "filter"), f.k)
    except ActarError as exc:
        raise StageError("train-filter", None, exc) from exc


# --------------------------------------------------------------------------- report

@dataclass
class RunReport:
    predictions: List[dict]
    per_class: Dict[int, float]
    mean_precision: float
    accuracy: float
    class_names: List[str]
    config: dict
    timings: Dict[str, float] = field(default_factory=dict)
    key_actor_accuracy: Optional[float] = None

    def metrics(self) -> dict:
        return {"accuracy": self.accuracy, "mean_precision": self.mean_precision,
                "per_class": {str(k): v for k, v in self.per_class.items()},
                "predictions": [(p["sequence_id"], p["predicted"]) for p in self.predictions]}

    def recompute(self) -> Tuple[Dict[int, float], float, float]:
        pred = [p["predicted"] for p in self.predictions]
        true = [p["label"] for p in self.predictions]
        per_class, mean = clf.average_precision(pred, true, len(self.class_names))
        return per_class, mean, clf.accuracy(pred, true)

    def is_consistent(self) -> bool:
        per_class, mean, acc = self.recompute()
        return per_class == self.per_class and mean == self.mean_precision and acc == self.accuracy

    def to_dict(self) -> dict:
        return {"predictions": self.predictions, "per_class": {str(k): v for k, v in self.per_class.items()},
                "mean_precision": self.mean_precision, "accuracy": self.accuracy,
                "class_names": self.class_names, "key_actor_accuracy": self.key_actor_accuracy,
                "config": self.config, "timings": self.timings}


def vote(probabilities: Sequence[np.ndarray]) -> int:
    """Most frequent argmax; ties go to the larger summed probability, then the lower class."""
    preds = [int(np.argmax(p)) for p in probabilities]
    counts = Counter(preds)
    top = max(counts.values())
    tied = sorted(c for c, n in counts.items() if n == top)
    total = np.sum(probabilities, axis=0)
    return max(tied, key=lambda c: (total[c], -c))


def write_per_class_csv(path, per_class: Dict[int, float], mean: float, class_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "name", "average_precision"])
        for c in sorted(per_class):
            w.writerow([c, class_names[c] if c < len(class_names) else c, f"{100 * per_class[c]:.2f}"])
        w.writerow(["mean", "", f"{100 * mean:.2f}"])


def write_predictions_csv(path, predictions: Sequence[dict], class_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence_id", "label", "predicted"] + [f"p_{n}" for n in class_names])
        for p in predictions:
            w.writerow([p["sequence_id"], p["label"], p["predicted"]] + [repr(v) for v in p["probabilities"]])


# --------------------------------------------------------------------------- bundle

@dataclass
class Bundle:
    config: dict
    filter_model: Optional[pose_filter.FilterModel]
    cluster_models: Dict[str, dec.ClusterModel]
    classifier: clf.ClassifierModel


def bundle_to_dict(b: Bundle) -> dict:
    return {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "config": b.config,
        "filter": pose_filter.filter_to_dict(b.filter_model) if b.filter_model else None,
        "clusters": {k: dec.cluster_to_dict(m) for k, m in sorted(b.cluster_models.items())},
        "classifier": clf.classifier_to_dict(b.classifier),
    }


def save_bundle(b: Bundle, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(bundle_to_dict(b), sort_keys=True))
    return path


def load_bundle(path) -> Bundle:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise Corrupt(f"{path}: not a readable bundle ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != BUNDLE_FORMAT:
        raise Corrupt(f"{path}: not a model bundle")
    if doc.get("version") != BUNDLE_VERSION:
        raise VersionMismatch(f"{path}: bundle version {doc.get('version')!r}, expected {BUNDLE_VERSION}")
    try:
        return Bundle(doc["config"],
                      pose_filter.filter_from_dict(doc["filter"]) if doc.get("filter") else None,
                      {k: dec.cluster_from_dict(v) for k, v in doc["clusters"].items()},
                      clf.classifier_from_dict(doc["classifier"]))
    except (KeyError, TypeError) as exc:
        raise Corrupt(f"{path}: incomplete bundle ({exc})") from exc


# --------------------------------------------------------------------------- stage artifacts

def _write_stage_outputs(out: Path, results: Sequence[SequenceResult]) -> None:
    for r in results:
        stages.write_actors(out, r.sequence_id, r.key_actor_id, r.scores, [a.track_id for a in r.actors])
        for a in r.actors:
            stages.write_vectors(out / "encoded" / f"{a.grid_id}.csv", a.encoded_frames, a.encoded)
            stages.write_vectors(out / "filtered" / f"{a.grid_id}.csv", a.frames_used, a.kept_vectors)
            stages.write_json(out / "filtered" / f"{a.grid_id}.json",
                              {"kept": a.frames_used, "discarded": a.discarded})
            stages.write_json(out / "keyposes" / f"{a.grid_id}.json", {
                "sequence_id": r.sequence_id, "track_id": a.track_id, "key_frames": a.selected})
            grid.write_grid(a.grid, out / "grids" / f"{a.grid_id}.pgm")


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def run_pipeline(cfg: PipelineConfig, manifest: Optional[Manifest] = None,
                 write_artifacts: bool = True) -> RunReport:
    cfg.validate()
    timings: Dict[str, float] = {}
    manifest = manifest or load_manifest(cfg.manifest)
    out = Path(cfg.output_dir)
    if write_artifacts:
        out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    need_filter = cfg.ablation.filtering or (not cfg.ablation.random_frames)
    filter_model = train_filter_model(cfg, manifest) if need_filter else None
    timings["train-filter"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    results = _map(lambda e: process_sequence(cfg, e, filter_model), manifest.entries, cfg.workers)
    timings["per-sequence"] = time.perf_counter() - t0

    known = [(r, e) for r, e in zip(results, manifest.entries) if e.key_actor_id is not None]
    key_acc = float(np.mean([r.key_actor_id == e.key_actor_id for r, e in known])) if known else None

    t0 = time.perf_counter()
    train = [(r.sequence_id, a) for r in results if r.split == "train" for a in r.actors]
    if not train:
        raise StageError("train-classifier", None, DataError("no training grids"))
    c = cfg.classifier
    try:
        model = clf.train_classifier([a.grid for _, a in train], [a.grid.label for _, a in train],
                                     c.epochs, c.lr, c.batch, derive_seed(cfg.seed, "classifier"), c.hidden,
                                     manifest.classes, keys=[a.grid_id for _, a in train])
    except ActarError as exc:
        raise StageError("train-classifier", None, exc) from exc
    timings["train-classifier"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    predictions = []
    for r in results:
        if r.split != "test" or not r.actors:
            continue
        probs = clf.predict_batch(model, [a.grid for a in r.actors])
        if cfg.ablation.all_actors:
            pred = vote(list(probs))
            p = np.mean(probs, axis=0)
        else:
            p = probs[0]
            pred = int(np.argmax(p))
        predictions.append({"sequence_id": r.sequence_id, "label": r.label, "predicted": pred,
                            "probabilities": [float(v) for v in p]})
    timings["predict"] = time.perf_counter() - t0

    if predictions:
        per_class, mean = clf.average_precision([p["predicted"] for p in predictions],
                                                [p["label"] for p in predictions], len(manifest.classes))
        acc = clf.accuracy([p["predicted"] for p in predictions], [p["label"] for p in predictions])
    else:
        per_class, mean, acc = {}, 0.0, 0.0
    report = RunReport(predictions, per_class, mean, acc, list(manifest.classes), cfg.to_dict(),
                       timings, key_acc)

    if write_artifacts:
        _write_stage_outputs(out, results)
        if filter_model is not None:
            (out / "filter_model.json").write_text(json.dumps(pose_filter.filter_to_dict(filter_model)))
        write_predictions_csv(out / "predictions.csv", predictions, manifest.classes)
        write_per_class_csv(out / "per_class.csv", per_class, mean, manifest.classes)
        if per_class:
            plot_class_precision(per_class, manifest.classes, out / "per_class.png")
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    if cfg.save_bundle:
        clusters = {a.grid_id: a.cluster_model for r in results for a in r.actors if a.cluster_model is not None}
        save_bundle(Bundle(cfg.to_dict(), filter_model, clusters, model), Path(cfg.model_dir) / "bundle.json")
    return report


# --------------------------------------------------------------------------- ablation

ABLATION_ROWS = [
    ("all actors + random frames", dict(all_actors=True, random_frames=True, cartesian=True, filtering=False)),
    ("key actor + random frames", dict(all_actors=False, random_frames=True, cartesian=True, filtering=False)),
    ("key actor + key poses", dict(all_actors=False, random_frames=False, cartesian=True, filtering=False)),
    ("+ polar encoding", dict(all_actors=False, random_frames=False, cartesian=False, filtering=False)),
    ("+ pose filtering", dict(all_actors=False, random_frames=False, cartesian=False, filtering=True)),
]


def run_ablation(cfg: PipelineConfig, rows=ABLATION_ROWS, manifest: Optional[Manifest] = None,
                 write_artifacts: bool = True) -> List[dict]:
    """Run the pipeline once per toggle row; returns one result dict per row."""
    manifest = manifest or load_manifest(cfg.manifest)
    out = Path(cfg.output_dir)
    table = []
    for i, (name, toggles) in enumerate(rows):
        sub = replace(cfg, ablation=replace(cfg.ablation, **toggles), save_bundle=False,
                      output_dir=str(out / f"ablation_{i}"))
        rep = run_pipeline(sub, manifest, write_artifacts=write_artifacts)
        table.append({"name": name, **toggles, "accuracy": rep.accuracy,
                      "mean_precision": rep.mean_precision, "report": rep})
        log.info("%s: accuracy %.4f, mean precision %.4f", name, rep.accuracy, rep.mean_precision)
    if write_artifacts:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "all_actors", "random_frames", "cartesian", "filtering",
                        "accuracy", "average_precision"])
            for r in table:
                w.writerow([r["name"], r["all_actors"], r["random_frames"], r["cartesian"], r["filtering"],
                            f"{100 * r['accuracy']:.2f}", f"{100 * r['mean_precision']:.2f}"])
        plot_ablation(table, out / "ablation.png")
    return table


def run_k_sweep(cfg: PipelineConfig, ks: Sequence[int], methods: Sequence[str] = ("kmeans", "dec"),
                manifest: Optional[Manifest] = None) -> List[dict]:
    """Full pipeline per (method, K), the clustering comparison study."""
    manifest = manifest or load_manifest(cfg.manifest)
    rows = []
    for method in methods:
        for k in ks:
            sub = replace(cfg, cluster=replace(cfg.cluster, K=int(k), method=method), save_bundle=False)
            rep = run_pipeline(sub, manifest, write_artifacts=False)
            rows.append({"method": method, "k": int(k), "accuracy": rep.accuracy,
                         "mean_precision": rep.mean_precision})
    return rows
