"""Sequences, tracks and poses: domain types, parsing, validation, frame I/O.

A sequence document is JSON of the form::

    {"sequence_id": ..., "num_frames": T, "width": W, "height": H, "fps": ...,
     "label": optional int,
     "tracks": [{"track_id": ...,
                 "detections": [{"frame", "bbox": [l, t, w, h], "score", "flow_magnitude"}],
                 "poses": [{"frame", "joints": [[x, y, c] * 17], "bbox": [l, t, w, h]}]}]}

Frames are binary 8-bit PGM files named by zero-padded frame index.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImage, DimensionMismatch, DuplicateFrame, MissingFrame, SchemaViolation

log = logging.getLogger(__name__)

COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
NUM_JOINTS = len(COCO_JOINTS)
LEFT_HIP, RIGHT_HIP = 11, 12

FRAME_DIGITS = 6
_FRAME_RE = re.compile(r"^(\d+)\.pgm$")

TrackId = Union[int, str]
BBox = Tuple[float, float, float, float]


def track_sort_key(track_id: TrackId):
    """Orders ints numerically and before strings."""
    return (isinstance(track_id, str), track_id)


@dataclass(frozen=True)
class Keypoint2D:
    x: float
    y: float
    confidence: float


@dataclass(frozen=True, eq=False)
class PoseFrame:
    """One pose estimate. ``joints`` is a read-only (17, 3) array of x, y, confidence."""

    frame_index: int
    joints: np.ndarray
    bbox: BBox

    def __post_init__(self):
        joints = np.array(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, 3):
            raise SchemaViolation(f"pose needs {NUM_JOINTS} joints of (x, y, c), got shape {joints.shape}")
        joints.setflags(write=False)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def xy(self) -> np.ndarray:
        return self.joints[:, :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.joints[:, 2]

    @property
    def keypoints(self) -> Tuple[Keypoint2D, ...]:
        return tuple(Keypoint2D(*map(float, row)) for row in self.joints)


@dataclass(frozen=True)
class Detection:
    frame: int
    bbox: BBox
    score: float
    flow_magnitude: float


@dataclass(frozen=True)
class Track:
    track_id: TrackId
    detections: Tuple[Detection, ...]

    @property
    def frames(self) -> List[int]:
        return [d.frame for d in self.detections]


@dataclass(frozen=True, eq=False)
class SequenceRecord:
    sequence_id: str
    num_frames: int
    width: int
    height: int
    fps: float
    tracks: Tuple[Track, ...]
    poses: Dict[Tuple[TrackId, int], PoseFrame] = field(default_factory=dict)
    label: Optional[int] = None

    def track(self, track_id: TrackId) -> Track:
        for tr in self.tracks:
            if tr.track_id == track_id:
                return tr
        raise KeyError(track_id)

    def track_ids(self) -> List[TrackId]:
        return [tr.track_id for tr in self.tracks]

    def poses_for(self, track_id: TrackId) -> List[PoseFrame]:
        """Poses of one track in frame order."""
        items = [(f, p) for (tid, f), p in self.poses.items() if tid == track_id]
        return [p for _, p in sorted(items, key=lambda kv: kv[0])]


@dataclass(frozen=True, eq=False)
class FrameStore:
    """Stack of 8-bit grayscale frames, shape (T, H, W)."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.dtype != np.uint8:
            raise DimensionMismatch(f"expected (T, H, W) uint8 frames, got {frames.shape} {frames.dtype}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __getitem__(self, index: int) -> np.ndarray:
        return self.frames[index]


# --------------------------------------------------------------------------- parsing

def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{where}: missing field {key!r}")
    return obj[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaViolation(f"{where}: non-finite number")
    return value


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(f"{where}: expected an integer, got {value!r}")
    return value


def _bbox(value, where: str) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise SchemaViolation(f"{where}: bbox must be [left, top, width, height]")
    box = tuple(_number(v, where) for v in value)
    if box[2] <= 0 or box[3] <= 0:
        raise SchemaViolation(f"{where}: bbox width and height must be positive")
    return box


def _joints(value, where: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != NUM_JOINTS:
        n = len(value) if isinstance(value, (list, tuple)) else "?"
        raise SchemaViolation(f"{where}: expected {NUM_JOINTS} joints, got {n}")
    out = np.empty((NUM_JOINTS, 3))
    for j, kp in enumerate(value):
        if not isinstance(kp, (list, tuple)) or len(kp) != 3:
            raise SchemaViolation(f"{where}: joint {j} must be [x, y, confidence]")
        out[j] = [_number(v, f"{where} joint {j}") for v in kp]
        if not 0.0 <= out[j, 2] <= 1.0:
            raise SchemaViolation(f"{where}: joint {j} confidence outside [0, 1]")
    return out


def parse_pose_tracks(document: Union[str, bytes, dict]) -> SequenceRecord:
    """Build a :class:`SequenceRecord` from a sequence document (JSON text or decoded dict)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise SchemaViolation("sequence document must be an object")

    seq_id = _require(document, "sequence_id", "sequence")
    if not isinstance(seq_id, (str, int)) or isinstance(seq_id, bool):
        raise SchemaViolation("sequence_id must be a string or integer")
    num_frames = _int(_require(document, "num_frames", "sequence"), "num_frames")
    if num_frames < 1:
        raise SchemaViolation("num_frames must be >= 1")
    width = _int(_require(document, "width", "sequence"), "width")
    height = _int(_require(document, "height", "sequence"), "height")
    if width < 1 or height < 1:
        raise SchemaViolation("width and height must be positive")
    fps = _number(_require(document, "fps", "sequence"), "fps")
    label = document.get("label")
    if label is not None:
        label = _int(label, "label")

    tracks: List[Track] = []
    poses: Dict[Tuple[TrackId, int], PoseFrame] = {}
    seen_ids = set()
    for t_doc in _require(document, "tracks", "sequence"):
        tid = _require(t_doc, "track_id", "track")
        if isinstance(tid, bool) or not isinstance(tid, (int, str)):
            raise SchemaViolation(f"track_id must be an integer or string, got {tid!r}")
        if tid in seen_ids:
            raise SchemaViolation(f"duplicate track_id {tid!r}")
        seen_ids.add(tid)
        where = f"track {tid!r}"

        dets: Dict[int, Detection] = {}
        for d in _require(t_doc, "detections", where):
            frame = _int(_require(d, "frame", where), f"{where} frame")
            if not 0 <= frame < num_frames:
                raise SchemaViolation(f"{where}: frame {frame} outside [0, {num_frames})")
            if frame in dets:
                raise DuplicateFrame(f"{where}: two detections at frame {frame}")
            score = _number(_require(d, "score", where), f"{where} score")
            flow = _number(_require(d, "flow_magnitude", where), f"{where} flow_magnitude")
            if not 0.0 <= score <= 1.0:
                raise SchemaViolation(f"{where}: detection score {score} outside [0, 1]")
            if flow < 0:
                raise SchemaViolation(f"{where}: negative flow_magnitude")
            dets[frame] = Detection(frame, _bbox(_require(d, "bbox", where), where), score, flow)
        tracks.append(Track(tid, tuple(dets[f] for f in sorted(dets))))

        for p in t_doc.get("poses", []):
            frame = _int(_require(p, "frame", where), f"{where} pose frame")
            if frame not in dets:
                raise SchemaViolation(f"{where}: pose at frame {frame} has no detection")
            if (tid, frame) in poses:
                raise DuplicateFrame(f"{where}: two poses at frame {frame}")
            joints = _joints(_require(p, "joints", where), f"{where} pose {frame}")
            poses[(tid, frame)] = PoseFrame(frame, joints, _bbox(_require(p, "bbox", where), where))

    return SequenceRecord(str(seq_id) if not isinstance(seq_id, str) else seq_id,
                          num_frames, width, height, fps, tuple(tracks), poses, label)


def serialize_sequence(rec: SequenceRecord) -> dict:
    """Canonical document for ``rec`` (inverse of :func:`parse_pose_tracks`)."""
    doc: Dict[str, Any] = {
        "sequence_id": rec.sequence_id,
        "num_frames": rec.num_frames,
        "width": rec.width,
        "height": rec.height,
        "fps": rec.fps,
    }
    if rec.label is not None:
        doc["label"] = rec.label
    tracks = []
    for tr in rec.tracks:
        tracks.append({
            "track_id": tr.track_id,
            "detections": [
                {"frame": d.frame, "bbox": list(d.bbox), "score": d.score, "flow_magnitude": d.flow_magnitude}
                for d in tr.detections
            ],
            "poses": [
                {"frame": p.frame_index, "joints": p.joints.tolist(), "bbox": list(p.bbox)}
                for p in rec.poses_for(tr.track_id)
            ],
        })
    doc["tracks"] = tracks
    return doc


def read_sequence(path) -> SequenceRecord:
    with open(path) as fh:
        return parse_pose_tracks(fh.read())


def write_sequence(rec: SequenceRecord, path) -> None:
    with open(path, "w") as fh:
        json.dump(serialize_sequence(rec), fh)


# --------------------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    track_id: Optional[TrackId] = None
    frame: Optional[int] = None


def clamp_bbox(bbox: Sequence[float], width: int, height: int) -> Optional[BBox]:
    """Intersect ``bbox`` with the frame; ``None`` when nothing is left."""
    l, t, w, h = bbox
    x0, y0 = max(l, 0.0), max(t, 0.0)
    x1, y1 = min(l + w, float(width)), min(t + h, float(height))
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def _overshoot(bbox: Sequence[float], width: int, height: int) -> float:
    l, t, w, h = bbox
    return max(0.0, -l, -t, l + w - width, t + h - height)


def validate_sequence(rec: SequenceRecord, frames: Optional[FrameStore] = None,
                      tolerance: float = 10.0) -> List[Violation]:
    """Check record invariants and frame geometry; an empty list means consistent.

    Boxes overshooting the frame by at most ``tolerance`` pixels are accepted
    (they get clamped on use) with a logged warning.
    """
    out: List[Violation] = []
    if rec.num_frames < 1:
        out.append(Violation("FrameCountMismatch", "num_frames < 1"))
    if frames is not None:
        if frames.num_frames != rec.num_frames:
            out.append(Violation("FrameCountMismatch",
                                 f"record has {rec.num_frames} frames, store has {frames.num_frames}"))
        if (frames.width, frames.height) != (rec.width, rec.height):
            out.append(Violation("DimensionMismatch",
                                 f"record is {rec.width}x{rec.height}, frames are {frames.width}x{frames.height}"))

    def check_box(bbox, tid, frame, what):
        if clamp_bbox(bbox, rec.width, rec.height) is None:
            out.append(Violation("BBoxOutside", f"{what} bbox lies outside the frame", tid, frame))
            return
        over = _overshoot(bbox, rec.width, rec.height)
        if over > tolerance:
            out.append(Violation("BBoxOutOfBounds", f"{what} bbox exceeds frame by {over:g}px", tid, frame))
        elif over > 0:
            log.warning("track %s frame %s: %s bbox clamped (%.3gpx over)", tid, frame, what, over)

    det_frames = {}
    for tr in rec.tracks:
        frames_seen = [d.frame for d in tr.detections]
        if any(b <= a for a, b in zip(frames_seen, frames_seen[1:])):
            out.append(Violation("TrackOrder", "detections not strictly frame-ordered", tr.track_id))
        det_frames[tr.track_id] = set(frames_seen)
        for d in tr.detections:
            if not 0 <= d.frame < rec.num_frames:
                out.append(Violation("FrameIndexOutOfRange", f"frame {d.frame}", tr.track_id, d.frame))
            if not 0.0 <= d.score <= 1.0 or d.flow_magnitude < 0:
                out.append(Violation("DetectionValue", "score or flow_magnitude out of range", tr.track_id, d.frame))
            check_box(d.bbox, tr.track_id, d.frame, "detection")

    for (tid, frame), pose in rec.poses.items():
        if frame not in det_frames.get(tid, ()):
            out.append(Violation("PoseWithoutDetection", "pose has no matching detection", tid, frame))
        if not np.all(np.isfinite(pose.xy)):
            out.append(Violation("NonFiniteJoint", "joint coordinates must be finite", tid, frame))
        check_box(pose.bbox, tid, frame, "pose")
    return out


# --------------------------------------------------------------------------- frames

def frame_filename(index: int) -> str:
    return f"{index:0{FRAME_DIGITS}d}.pgm"


def load_frames(path, num_frames: Optional[int] = None,
                size: Optional[Tuple[int, int]] = None) -> FrameStore:
    """Load ``<index>.pgm`` frames from a directory.

    ``num_frames`` defaults to one past the largest index present; ``size`` is
    an optional expected (width, height).
    """
    path = Path(path)
    if not path.is_dir():
        raise MissingFrame(0, path)
    found = {}
    for name in os.listdir(path):
        m = _FRAME_RE.match(name)
        if m:
            found[int(m.group(1))] = path / name
    if num_frames is None:
        if not found:
            raise MissingFrame(0, path)
        num_frames = max(found) + 1
    images = []
    for i in range(num_frames):
        if i not in found:
            raise MissingFrame(i, path)
        try:
            with Image.open(found[i]) as im:
                if im.mode != "L":
                    raise CorruptImage(f"{found[i]}: expected 8-bit grayscale, got mode {im.mode}")
                arr = np.asarray(im, dtype=np.uint8)
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise CorruptImage(f"{found[i]}: {exc}") from exc
        expected = size if size is not None else (images[0].shape[1], images[0].shape[0]) if images else None
        if expected is not None and (arr.shape[1], arr.shape[0]) != tuple(expected):
            raise DimensionMismatch(f"frame {i} is {arr.shape[1]}x{arr.shape[0]}, expected {expected[0]}x{expected[1]}")
        images.append(arr)
    return FrameStore(np.stack(images))


def save_frames(store: FrameStore, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i in range(store.num_frames):
        Image.fromarray(np.ascontiguousarray(store[i]), mode="L").save(path / frame_filename(i), format="PPM")
