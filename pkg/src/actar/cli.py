"""Command-line interface: ``actar <subcommand> [--config FILE] [--<field> VALUE ...]``.

Every configuration field can be overridden with a flag of the same dotted
name, e.g. ``--cluster.K 6`` or ``--ablation.filtering false``.

Exit codes: 0 success, 1 data error, 2 config error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import classifier as clf
from . import dec, grid, motion, pose_filter, stages
from .config import PipelineConfig, apply_overrides, iter_fields, load_config
from .encoding import encode_poses
from .errors import ActarError, ConfigError, DataError, StageError
from .pipeline import (ABLATION_ROWS, build_actor_grid, load_bundle, load_manifest, run_ablation,
                       run_k_sweep, run_pipeline, select_frames, train_filter_model, vote,
                       write_per_class_csv, write_predictions_csv)
from .plotting import plot_class_precision, plot_k_sweep
from .pose_data import load_frames, read_sequence, validate_sequence
from .seeding import derive_seed

log = logging.getLogger("actar")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3


# --------------------------------------------------------------------------- helpers

def _records(cfg: PipelineConfig):
    """Yield (manifest entry, record with label) for every manifest sequence."""
    manifest = load_manifest(cfg.manifest)
    for entry in manifest.entries:
        try:
            yield entry, replace(read_sequence(entry.document), label=entry.label)
        except ActarError as exc:
            raise StageError("load", entry.sequence_id, exc) from exc


def _units(cfg: PipelineConfig):
    out = Path(cfg.output_dir)
    for entry, rec in _records(cfg):
        for tid, unit in stages.units_for(out, entry.sequence_id):
            yield entry, rec, tid, unit


def _parse_range(text: str) -> List[int]:
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise ConfigError(f"expected a range like 2..12, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad range {text!r}")
    return list(range(lo, hi + 1))


def _print_table(rows: Sequence[Sequence], out=None) -> None:
    csv.writer(out or sys.stdout, lineterminator="\n").writerows(rows)


def _precision_rows(per_class, mean, names):
    rows = [["class", "name", "average_precision"]]
    rows += [[c, names[c], f"{100 * per_class[c]:.2f}"] for c in sorted(per_class)]
    rows.append(["mean", "", f"{100 * mean:.2f}"])
    return rows


# --------------------------------------------------------------------------- subcommands

def cmd_synth(cfg: PipelineConfig, args) -> int:
    from .synth import CLASS_NAMES, generate_dataset

    names = [c.strip() for c in args.classes.split(",") if c.strip()]
    unknown = [c for c in names if c not in CLASS_NAMES]
    if unknown or not names:
        raise ConfigError(f"unknown classes {unknown}; choose from {', '.join(CLASS_NAMES)}")
    try:
        path = generate_dataset(args.out, [CLASS_NAMES.index(c) for c in names], args.per_class, cfg.seed,
                                num_frames=args.frames, noise_std=args.noise, corrupt_rate=args.corrupt_rate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(path)
    return EXIT_OK


def cmd_validate(cfg: PipelineConfig, args) -> int:
    rows = [["sequence_id", "kind", "track_id", "frame", "detail"]]
    if args.documents:
        items = [(Path(d).stem, read_sequence(d), None) for d in args.documents]
    else:
        items = [(e.sequence_id, rec, e.frames) for e, rec in _records(cfg)]
    for seq_id, rec, frames_dir in items:
        store = None
        if frames_dir is not None and not args.skip_frames:
            store = load_frames(frames_dir, rec.num_frames)
        for v in validate_sequence(rec, store, args.tolerance):
            rows.append([seq_id, v.kind, v.track_id, v.frame, v.detail])
    _print_table(rows)
    return EXIT_DATA if len(rows) > 1 else EXIT_OK


def cmd_identify_actor(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.output_dir)
    rows = [["sequence_id", "key_actor_id", "score"]]
    for entry, rec in _records(cfg):
        try:
            key_id, scores = motion.identify_key_actor(rec, cfg.score_threshold)
        except ActarError as exc:
            raise StageError("identify-actor", entry.sequence_id, exc) from exc
        tracks = [s.track_id for s in scores] if cfg.ablation.all_actors else [key_id]
        stages.write_actors(out, entry.sequence_id, key_id, scores, tracks)
        rows.append([entry.sequence_id, key_id, next(s.score for s in scores if s.track_id == key_id)])
    _print_table(rows)
    return EXIT_OK


def cmd_encode(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.output_dir)
    n = 0
    for entry, rec, tid, unit in _units(cfg):
        poses = rec.poses_for(tid)
        vectors = encode_poses(poses, not cfg.ablation.cartesian, rec.width, rec.height)
        stages.write_vectors(out / "encoded" / f"{unit}.csv", [p.frame_index for p in poses], vectors)
        n += 1
    log.info("encoded %d tracks", n)
    return EXIT_OK


def _filter_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.model_dir) / "filter.json"


def _load_filter(cfg: PipelineConfig) -> pose_filter.FilterModel:
    return pose_filter.filter_from_dict(stages.read_json(_filter_path(cfg), "train-filter"))


def cmd_train_filter(cfg: PipelineConfig, args) -> int:
    model = train_filter_model(cfg, load_manifest(cfg.manifest))
    stages.write_json(_filter_path(cfg), pose_filter.filter_to_dict(model))
    print(f"threshold {model.threshold!r} (mean {model.err_mean!r}, std {model.err_std!r}, k {model.k})")
    return EXIT_OK


def cmd_filter(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.output_dir)
    model = _load_filter(cfg) if cfg.ablation.filtering else None
    rows = [["unit", "kept", "discarded"]]
    for entry, rec, tid, unit in _units(cfg):
        frames, vectors = stages.read_vectors(out / "encoded" / f"{unit}.csv")
        kept = list(range(len(frames)))
        dropped: List[int] = []
        if model is not None:
            k, d = pose_filter.filter_poses(model, vectors)
            if k:
                kept, dropped = k, d
            else:
                log.warning("%s: every pose rejected by the filter; keeping all", unit)
        stages.write_vectors(out / "filtered" / f"{unit}.csv", [frames[i] for i in kept], vectors[kept])
        stages.write_json(out / "filtered" / f"{unit}.json",
                          {"kept": [frames[i] for i in kept], "discarded": [frames[i] for i in dropped]})
        rows.append([unit, len(kept), len(dropped)])
    _print_table(rows)
    return EXIT_OK


def _write_sweep(out: Path, rows) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "k_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "k", "accuracy", "average_precision"])
        for r in rows:
            w.writerow([r["method"], r["k"], f"{100 * r['accuracy']:.2f}", f"{100 * r['mean_precision']:.2f}"])
    plot_k_sweep(rows, out / "k_sweep.png")


def cmd_cluster(cfg: PipelineConfig, args) -> int:
    cluster = cfg.cluster
    if args.k is not None:
        cluster = replace(cluster, K=args.k)
    if args.epochs is not None:
        cluster = replace(cluster, epochs=args.epochs)
    if args.update_interval is not None:
        cluster = replace(cluster, update_interval=args.update_interval)
    if args.method is not None:
        cluster = replace(cluster, method=args.method)
    cfg = replace(cfg, cluster=cluster).validate()
    out = Path(cfg.output_dir)
    if args.sweep:
        rows = run_k_sweep(cfg, _parse_range(args.sweep))
        _write_sweep(out, rows)
        _print_table([["method", "k", "accuracy", "mean_precision"]] +
                     [[r["method"], r["k"], r["accuracy"], r["mean_precision"]] for r in rows])
        return EXIT_OK
    encoder = None
    if not cfg.ablation.random_frames:
        encoder = _load_filter(cfg)
    for entry, rec, tid, unit in _units(cfg):
        frames, vectors = stages.read_vectors(out / "filtered" / f"{unit}.csv")
        try:
            idx, model = select_frames(cfg, vectors, frames, derive_seed(cfg.seed, rec.sequence_id, str(tid)), encoder)
        except ActarError as exc:
            raise StageError("cluster", entry.sequence_id, exc) from exc
        stages.write_json(out / "keyposes" / f"{unit}.json",
                          {"sequence_id": rec.sequence_id, "track_id": tid, "key_frames": [frames[i] for i in idx]})
        if model is not None:
            stages.write_json(Path(cfg.model_dir) / "clusters" / f"{unit}.json", dec.cluster_to_dict(model))
    return EXIT_OK


def cmd_build_grids(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.output_dir)
    stores = {}
    for entry, rec, tid, unit in _units(cfg):
        doc = stages.read_json(out / "keyposes" / f"{unit}.json", "cluster")
        if entry.sequence_id not in stores:
            stores = {entry.sequence_id: load_frames(entry.frames, rec.num_frames, (rec.width, rec.height))}
        try:
            g = build_actor_grid(cfg, rec, stores[entry.sequence_id], tid, doc["key_frames"],
                                 {"sequence_id": rec.sequence_id, "track_id": tid})
        except ActarError as exc:
            raise StageError("build-grids", entry.sequence_id, exc) from exc
        grid.write_grid(g, out / "grids" / f"{unit}.pgm")
    return EXIT_OK


def _split_grids(cfg: PipelineConfig, split: Optional[str]):
    """(entry, [(unit, ActionGrid)]) per sequence of the requested split."""
    out = Path(cfg.output_dir)
    manifest = load_manifest(cfg.manifest)
    for entry in manifest.entries:
        if split is not None and entry.split != split:
            continue
        units = stages.units_for(out, entry.sequence_id)
        yield manifest, entry, [(u, grid.read_grid(out / "grids" / f"{u}.pgm")) for _, u in units]


def _classifier_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.model_dir) / "classifier.json"


def cmd_train_classifier(cfg: PipelineConfig, args) -> int:
    grids, labels, keys, names = [], [], [], None
    for manifest, entry, units in _split_grids(cfg, "train"):
        names = manifest.classes
        for unit, g in units:
            grids.append(g)
            labels.append(entry.label)
            keys.append(unit)
    if not grids:
        raise DataError("no training grids found")
    c = cfg.classifier
    model = clf.train_classifier(grids, labels, c.epochs, c.lr, c.batch, derive_seed(cfg.seed, "classifier"),
                                 c.hidden, names, keys=keys)
    stages.write_json(_classifier_path(cfg), clf.classifier_to_dict(model))
    print(f"final training loss {model.history[-1] if model.history else float('nan')!r}")
    return EXIT_OK


def cmd_predict(cfg: PipelineConfig, args) -> int:
    if args.bundle:
        model = load_bundle(args.bundle).classifier
    else:
        model = clf.classifier_from_dict(stages.read_json(_classifier_path(cfg), "train-classifier"))
    out = Path(cfg.output_dir)
    predictions = []
    for manifest, entry, units in _split_grids(cfg, None if args.split == "all" else args.split):
        if not units:
            continue
        probs = clf.predict_batch(model, [g for _, g in units])
        pred = vote(list(probs)) if len(units) > 1 else int(np.argmax(probs[0]))
        predictions.append({"sequence_id": entry.sequence_id, "label": entry.label, "predicted": pred,
                            "probabilities": [float(v) for v in probs.mean(axis=0)]})
    stages.write_json(out / "predictions.json", {"class_names": list(model.class_names),
                                                 "predictions": predictions})
    write_predictions_csv(out / "predictions.csv", predictions, model.class_names)
    _print_table([["sequence_id", "label", "predicted"]] +
                 [[p["sequence_id"], p["label"], p["predicted"]] for p in predictions])
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.output_dir)
    doc = stages.read_json(Path(args.predictions) if args.predictions else out / "predictions.json", "predict")
    preds = doc["predictions"]
    if not preds:
        raise DataError("no predictions to evaluate")
    names = doc["class_names"]
    per_class, mean = clf.average_precision([p["predicted"] for p in preds], [p["label"] for p in preds],
                                            len(names))
    acc = clf.accuracy([p["predicted"] for p in preds], [p["label"] for p in preds])
    write_per_class_csv(out / "per_class.csv", per_class, mean, names)
    plot_class_precision(per_class, names, out / "per_class.png")
    _print_table(_precision_rows(per_class, mean, names) + [["accuracy", "", f"{100 * acc:.2f}"]])
    return EXIT_OK


def cmd_run(cfg: PipelineConfig, args) -> int:
    report = run_pipeline(cfg)
    _print_table(_precision_rows(report.per_class, report.mean_precision, report.class_names) +
                 [["accuracy", "", f"{100 * report.accuracy:.2f}"]])
    return EXIT_OK


def cmd_ablate(cfg: PipelineConfig, args) -> int:
    manifest = load_manifest(cfg.manifest)
    table = run_ablation(cfg, ABLATION_ROWS, manifest)
    _print_table([["row", "accuracy", "average_precision"]] +
                 [[r["name"], f"{100 * r['accuracy']:.2f}", f"{100 * r['mean_precision']:.2f}"] for r in table])
    if args.k_sweep:
        rows = run_k_sweep(cfg, _parse_range(args.k_sweep), manifest=manifest)
        _write_sweep(Path(cfg.output_dir), rows)
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON configuration file")
    parent.add_argument("-v", "--verbose", action="store_true")
    group = parent.add_argument_group("configuration overrides")
    for name, typ, default in iter_fields():
        group.add_argument(f"--{name}", dest=f"cfg:{name}", default=argparse.SUPPRESS, metavar=str(typ).upper(),
                           help=f"default: {default}")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog="actar", description="Key-actor action recognition pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[parent], help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--classes", default="wave,walk,jump")
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--corrupt-rate", type=float, default=0.05)

    p = add("validate", cmd_validate, "check sequence documents and frames")
    p.add_argument("documents", nargs="*", help="pose-track documents (default: every manifest sequence)")
    p.add_argument("--tolerance", type=float, default=10.0, help="bbox overshoot tolerated, in pixels")
    p.add_argument("--skip-frames", action="store_true")

    add("identify-actor", cmd_identify_actor, "select the key actor of each sequence")
    add("encode", cmd_encode, "encode poses of the selected tracks")
    add("train-filter", cmd_train_filter, "train the pose-filter autoencoder")
    add("filter", cmd_filter, "drop poses with high reconstruction error")

    p = add("cluster", cmd_cluster, "select key poses by clustering")
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--update-interval", type=int)
    p.add_argument("--method", choices=("dec", "kmeans"))
    p.add_argument("--sweep", metavar="KMIN..KMAX", help="full-pipeline comparison of k-means and DEC over K")

    add("build-grids", cmd_build_grids, "assemble action grids from key poses")
    add("train-classifier", cmd_train_classifier, "train the grid classifier on the training split")

    p = add("predict", cmd_predict, "classify grids")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--bundle", help="take the classifier from a saved model bundle")

    p = add("eval", cmd_eval, "per-class precision table from predictions")
    p.add_argument("--predictions", help="predictions.json (default: <output_dir>/predictions.json)")

    add("run", cmd_run, "full pipeline")
    p = add("ablate", cmd_ablate, "component ablation sweep")
    p.add_argument("--k-sweep", metavar="KMIN..KMAX")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    return apply_overrides(cfg, overrides) if overrides else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConfigError):
            return EXIT_CONFIG
        return EXIT_DATA if isinstance(exc.cause, DataError) else EXIT_INTERNAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
