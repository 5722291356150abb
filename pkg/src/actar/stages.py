"""On-disk stage artifacts, so every CLI subcommand can run on its own.

Layout under the output directory::

    actors/<seq>.json        key actor, motion scores, tracks to process
    encoded/<unit>.csv       frame, v0..v33 for every pose of a track
    filtered/<unit>.csv      same columns, poses that passed the filter
    filtered/<unit>.json     kept / discarded frame lists
    keyposes/<unit>.json     selected key frames (chronological)
    grids/<unit>.pgm         action grid (+ .json sidecar with label/provenance)

A *unit* is one (sequence, track) pair, named ``<seq>_t<track>``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import Corrupt, DataError


def unit_id(sequence_id: str, track_id) -> str:
    return f"{sequence_id}_t{track_id}"


def write_actors(out: Path, sequence_id: str, key_actor_id, scores, tracks: Sequence) -> Path:
    path = Path(out) / "actors" / f"{sequence_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({
        "sequence_id": sequence_id,
        "key_actor_id": key_actor_id,
        "scores": [{"track_id": s.track_id, "score": s.score} for s in scores],
        "tracks": list(tracks),
    }))
    return path


def read_actors(out: Path, sequence_id: str) -> dict:
    return _read_json(Path(out) / "actors" / f"{sequence_id}.json", "identify-actor")


def write_vectors(path: Path, frames: Sequence[int], vectors: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(len(frames), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"v{i}" for i in range(vectors.shape[1])])
        for f, row in zip(frames, vectors):
            w.writerow([int(f)] + [repr(float(v)) for v in row])
    return path


def read_vectors(path: Path) -> Tuple[List[int], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing stage output {path}")
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        frames = [int(r[0]) for r in body]
        vectors = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
        return frames, vectors.reshape(len(body), len(header) - 1)
    except (IndexError, ValueError) as exc:
        raise Corrupt(f"{path}: unreadable vector table ({exc})") from exc


def write_json(path: Path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))
    return path


def _read_json(path: Path, producer: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing stage output {path} (run `{producer}` first)")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise Corrupt(f"{path}: {exc}") from exc


def read_json(path: Path, producer: str = "the previous stage") -> dict:
    return _read_json(path, producer)


def units_for(out: Path, sequence_id: str) -> List[Tuple[object, str]]:
    """(track_id, unit name) for every track listed in the actor file."""
    doc = read_actors(out, sequence_id)
    return [(tid, unit_id(sequence_id, tid)) for tid in doc["tracks"]]
