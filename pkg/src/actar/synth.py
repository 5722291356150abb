"""Deterministic synthetic multi-actor infrared scenes.

One main actor performs a class motion (wave, walk, jump); the other actors
sway idly with a mean motion ``motion_ratio`` times smaller. Frames render
every joint as a Gaussian blob on a dark background. Pose estimates are the
true joints plus Gaussian jitter, with a small fraction of poses corrupted
by shuffling joints (a stand-in for pose-estimator failures).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GeometryError, InsufficientData
from .pose_data import (NUM_JOINTS, FrameStore, PoseFrame, SequenceRecord, Detection, Track,
                        save_frames, serialize_sequence)
from .seeding import derive_seed

CLASS_NAMES = ("wave", "walk", "jump")
IDLE = -1
BLOB_SIGMA = 2.0
BLOB_PEAK = 200.0
BACKGROUND = 20.0
MANIFEST_FORMAT = "actar-manifest"

# Standing skeleton in body units, mid-hip at the origin, y pointing up.
TEMPLATE = np.array([
    [0.00, 0.50],                  # nose
    [0.03, 0.53], [-0.03, 0.53],   # eyes
    [0.06, 0.51], [-0.06, 0.51],   # ears
    [0.12, 0.36], [-0.12, 0.36],   # shoulders
    [0.16, 0.18], [-0.16, 0.18],   # elbows
    [0.18, 0.02], [-0.18, 0.02],   # wrists
    [0.08, 0.00], [-0.08, 0.00],   # hips
    [0.09, -0.25], [-0.09, -0.25], # knees
    [0.09, -0.50], [-0.09, -0.50], # ankles
])
HEAD = [0, 1, 2, 3, 4]


@dataclass(frozen=True)
class SynthSpec:
    class_id: int
    num_actors: int = 3
    num_frames: int = 40
    width: int = 293
    height: int = 256
    motion_ratio: float = 2.0
    noise_std: float = 1.0
    seed: int = 0
    fps: float = 25.0
    corrupt_rate: float = 0.05
    low_score_rate: float = 0.05

    def __post_init__(self):
        if self.class_id not in range(len(CLASS_NAMES)):
            raise ValueError(f"class_id must be one of {list(range(len(CLASS_NAMES)))}")
        if self.num_actors < 1:
            raise ValueError("num_actors must be >= 1")
        if not self.motion_ratio > 1:
            raise ValueError("motion_ratio must be > 1")
        if self.num_frames < 16:
            raise ValueError("num_frames must be >= 16")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass
class GroundTruth:
    key_actor_id: int
    class_id: int
    true_joints: Dict[int, np.ndarray]  # track id -> (T, 17, 2) noise-free pixels
    phases: List[str]  # main actor, per frame
    hip_lift: np.ndarray  # main actor vertical hip offset in pixels (up is positive), per frame
    corrupted: Dict[int, List[int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"key_actor_id": self.key_actor_id, "class_id": self.class_id, "phases": self.phases,
                "hip_lift": self.hip_lift.tolist(),
                "corrupted": {str(k): v for k, v in self.corrupted.items()}}


# --------------------------------------------------------------------------- motion families

def _wave(phase: float, amp: float) -> Tuple[np.ndarray, float, str]:
    pose = TEMPLATE.copy()
    swing = 0.6 * amp * np.sin(phase)
    pose[8] = pose[6] + [-0.10 - 0.03 * amp * np.sin(phase), 0.16]
    pose[10] = pose[8] + 0.18 * np.array([-np.sin(0.3 + swing), np.cos(0.3 + swing)])
    return pose, 0.0, "wave"


def _walk(phase: float, amp: float) -> Tuple[np.ndarray, float, str]:
    pose = TEMPLATE.copy()
    s = np.sin(phase)
    pose[13, 0] += 0.10 * amp * s
    pose[14, 0] -= 0.10 * amp * s
    pose[15, 0] += 0.22 * amp * s
    pose[16, 0] -= 0.22 * amp * s
    pose[[13, 15], 1] += 0.04 * amp * max(s, 0.0)
    pose[[14, 16], 1] += 0.04 * amp * max(-s, 0.0)
    pose[7, 0] -= 0.06 * amp * s
    pose[8, 0] += 0.06 * amp * s
    pose[9, 0] -= 0.14 * amp * s
    pose[10, 0] += 0.14 * amp * s
    return pose, 0.0, "stride"


def _jump(phase: float, amp: float) -> Tuple[np.ndarray, float, str]:
    pose = TEMPLATE.copy()
    s = np.sin(phase)
    up, crouch = max(s, 0.0), max(-s, 0.0)
    # crouch: legs fold towards the hips, knees splay, torso leans in
    pose[[13, 14], 1] += 0.14 * amp * crouch
    pose[13, 0] += 0.08 * amp * crouch
    pose[14, 0] -= 0.08 * amp * crouch
    pose[[15, 16], 1] += 0.22 * amp * crouch
    pose[:11, 1] -= 0.08 * amp * crouch
    # apex: arms go overhead
    pose[[7, 8], 1] += 0.30 * amp * up
    pose[[9, 10], 1] += 0.62 * amp * up
    lift = 0.35 * amp * up - 0.10 * amp * crouch
    label = "apex" if s > 0.5 else "crouch" if s < -0.5 else "mid"
    return pose, lift, label


def _idle(phase: float, amp: float) -> Tuple[np.ndarray, float, str]:
    """Offsets only (linear in ``amp``): a gentle sway with a head bob."""
    off = np.zeros_like(TEMPLATE)
    off[:, 0] = 0.10 * amp * np.sin(phase)
    off[HEAD, 1] = 0.03 * amp * np.cos(phase)
    off[[9, 10], 0] += 0.04 * amp * np.sin(phase)
    return off, 0.0, "idle"


FAMILIES = {0: _wave, 1: _walk, 2: _jump}


def class_pose(class_id: int, phase: float, amp: float = 1.0) -> Tuple[np.ndarray, float, str]:
    """Body-unit skeleton (y up), vertical lift in body units and a phase label."""
    if class_id == IDLE:
        off, lift, label = _idle(phase, amp)
        return TEMPLATE + off, lift, label
    return FAMILIES[class_id](phase, amp)


# --------------------------------------------------------------------------- rendering

def mean_displacement(traj: np.ndarray) -> np.ndarray:
    """Per-frame mean joint displacement of a (T, 17, 2) trajectory; frame 0 copies frame 1."""
    d = np.linalg.norm(np.diff(traj, axis=0), axis=2).mean(axis=1)
    return np.concatenate([d[:1], d])


def render_frames(trajectories: Sequence[np.ndarray], width: int, height: int,
                  rng: np.random.Generator) -> np.ndarray:
    num_frames = trajectories[0].shape[0]
    frames = np.full((num_frames, height, width), BACKGROUND)
    frames += rng.normal(0.0, 3.0, size=frames.shape)
    rad = int(np.ceil(3 * BLOB_SIGMA))
    offs = np.arange(-rad, rad + 1)
    for traj in trajectories:
        for t in range(num_frames):
            img = frames[t]
            for x, y in traj[t]:
                cx, cy = int(round(x)), int(round(y))
                xs, ys = cx + offs, cy + offs
                xs, ys = xs[(xs >= 0) & (xs < width)], ys[(ys >= 0) & (ys < height)]
                if not len(xs) or not len(ys):
                    continue
                g = np.exp(-((xs[None, :] - x) ** 2 + (ys[:, None] - y) ** 2) / (2 * BLOB_SIGMA ** 2))
                img[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] += BLOB_PEAK * g
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


def _bbox_of(points: np.ndarray, pad: float, width: int, height: int) -> Tuple[float, float, float, float]:
    x0, y0 = points.min(axis=0) - pad
    x1, y1 = points.max(axis=0) + pad
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, float(width)), min(y1, float(height))
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


# --------------------------------------------------------------------------- generation

def _actor_trajectory(class_id, t, period, phase0, amp, scale, cx, cy, drift):
    poses, lifts, labels = [], [], []
    for k in t:
        body, lift, label = class_pose(class_id, phase0 + 2 * np.pi * k / period, amp)
        poses.append(body)
        lifts.append(lift)
        labels.append(label)
    poses = np.asarray(poses)
    lifts = np.asarray(lifts) * scale
    px = np.empty_like(poses)
    px[..., 0] = cx + drift[:, None] + scale * poses[..., 0]
    px[..., 1] = cy - lifts[:, None] - scale * poses[..., 1]
    return px, lifts, labels


def generate_sequence(spec: SynthSpec, sequence_id: Optional[str] = None):
    """Returns ``(SequenceRecord, FrameStore, GroundTruth)``."""
    rng = np.random.default_rng(spec.seed)
    T, W, H, n = spec.num_frames, spec.width, spec.height, spec.num_actors
    t = np.arange(T)
    region = W / n
    track_ids = [int(v) for v in rng.permutation(n) + 1]
    main_slot = int(rng.integers(n))

    trajs, lifts_main, phases = [], None, None
    params = []
    for slot in range(n):
        params.append(dict(
            scale=0.27 * H * rng.uniform(0.85, 1.15),
            period=rng.uniform(12.0, 20.0),
            phase0=rng.uniform(0, 2 * np.pi),
            amp=rng.uniform(0.85, 1.15),
            cx=(slot + 0.5) * region,
            cy=H * rng.uniform(0.58, 0.64),
        ))

    main = params[main_slot]
    drift = np.zeros(T)
    if spec.class_id == 1:
        direction = 1.0 if rng.random() < 0.5 else -1.0
        drift = direction * 0.30 * main["scale"] * (t / (T - 1) - 0.5)
    main_traj, lifts_main, phases = _actor_trajectory(
        spec.class_id, t, main["period"], main["phase0"], main["amp"], main["scale"], main["cx"], main["cy"], drift)
    main_flow_mean = mean_displacement(main_traj).mean()

    for slot in range(n):
        if slot == main_slot:
            trajs.append(main_traj)
            continue
        p = params[slot]
        unit, _, _ = _actor_trajectory(IDLE, t, p["period"], p["phase0"], 1.0, p["scale"], p["cx"], p["cy"], np.zeros(T))
        base, _, _ = _actor_trajectory(IDLE, t, p["period"], p["phase0"], 0.0, p["scale"], p["cx"], p["cy"], np.zeros(T))
        unit_mean = mean_displacement(unit).mean()
        amp = main_flow_mean / (spec.motion_ratio * unit_mean)
        trajs.append(base + amp * (unit - base))

    margin = 2.0
    for slot, traj in enumerate(trajs):
        lo, hi = slot * region, (slot + 1) * region
        if (traj[..., 0].min() < max(lo, margin) or traj[..., 0].max() > min(hi, W - margin)
                or traj[..., 1].min() < margin or traj[..., 1].max() > H - margin):
            raise GeometryError(f"actor {slot} does not fit a {W}x{H} frame with {n} actors")

    frames = render_frames(trajs, W, H, rng)

    tracks, poses, true_joints, corrupted = [], {}, {}, {}
    for slot, traj in enumerate(trajs):
        tid = track_ids[slot]
        scale = params[slot]["scale"]
        flow = mean_displacement(traj)
        observed = traj + rng.normal(0.0, spec.noise_std, size=traj.shape)
        conf = rng.uniform(0.6, 1.0, size=(T, NUM_JOINTS))
        low = rng.random(T) < spec.low_score_rate
        scores = np.where(low, rng.uniform(0.05, 0.45, size=T), rng.uniform(0.6, 1.0, size=T))
        bad = rng.random(T) < spec.corrupt_rate
        dets = []
        corrupted[tid] = [int(k) for k in np.flatnonzero(bad)]
        for k in range(T):
            bbox = _bbox_of(traj[k], 0.15 * scale, W, H)
            dets.append(Detection(k, bbox, float(scores[k]), float(flow[k])))
            joints = observed[k]
            if bad[k]:
                joints = joints[rng.permutation(NUM_JOINTS)]
            poses[(tid, k)] = PoseFrame(k, np.column_stack([joints, conf[k]]), bbox)
        tracks.append(Track(tid, tuple(dets)))
        true_joints[tid] = traj

    order = sorted(range(n), key=lambda s: track_ids[s])
    rec = SequenceRecord(
        sequence_id if sequence_id is not None else f"synth_{CLASS_NAMES[spec.class_id]}_{spec.seed}",
        T, W, H, spec.fps, tuple(tracks[s] for s in order), poses, spec.class_id)
    truth = GroundTruth(track_ids[main_slot], spec.class_id, true_joints, phases, lifts_main, corrupted)
    return rec, FrameStore(frames), truth


def reference_poses(count: int, seed: int = 0, width: int = 293, height: int = 256,
                    noise_std: float = 0.0) -> List[PoseFrame]:
    """Uncorrupted poses from every motion family at random phase and scale.

    ``noise_std`` adds per-joint Gaussian jitter in pixels (annotation noise);
    at 0 the poses are exact.
    """
    rng = np.random.default_rng(seed)
    jitter = np.random.default_rng(derive_seed(seed, "jitter"))
    families = list(FAMILIES) + [IDLE]
    out = []
    for i in range(count):
        cls = families[i % len(families)]
        body, lift, _ = class_pose(cls, rng.uniform(0, 2 * np.pi), rng.uniform(0.7, 1.3))
        scale = 0.27 * height * rng.uniform(0.7, 1.3)
        cx, cy = width * rng.uniform(0.3, 0.7), height * rng.uniform(0.55, 0.65)
        xy = np.column_stack([cx + scale * body[:, 0], cy - scale * (lift + body[:, 1])])
        bbox = _bbox_of(xy, 0.15 * scale, width, height)
        if noise_std > 0:
            xy = xy + jitter.normal(0.0, noise_std, size=xy.shape)
        out.append(PoseFrame(i, np.column_stack([xy, np.ones(NUM_JOINTS)]), bbox))
    return out


def poses_to_dict(poses: Sequence[PoseFrame]) -> dict:
    return {"poses": [{"frame": p.frame_index, "joints": p.joints.tolist(), "bbox": list(p.bbox)} for p in poses]}


def poses_from_dict(doc: dict) -> List[PoseFrame]:
    return [PoseFrame(p["frame"], np.asarray(p["joints"]), tuple(p["bbox"])) for p in doc["poses"]]


def split_indices(labels: Sequence[int], seed: int, train_fraction: float = 0.75) -> List[str]:
    """Stratified seeded split; returns "train"/"test" per item."""
    rng = np.random.default_rng(derive_seed(seed, "split"))
    out = ["test"] * len(labels)
    labels = np.asarray(labels)
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        n_train = max(1, int(round(train_fraction * len(idx))))
        for i in rng.permutation(idx)[:n_train]:
            out[int(i)] = "train"
    return out


def generate_dataset(out_dir, classes: Sequence[int] = (0, 1, 2), per_class: int = 40, seed: int = 0,
                     num_frames: int = 40, width: int = 293, height: int = 256,
                     actors: Tuple[int, int] = (1, 3), ratio: Tuple[float, float] = (2.0, 4.0),
                     noise_std: float = 1.0, corrupt_rate: float = 0.05,
                     reference_count: int = 1200) -> Path:
    """Write sequences, frames, ground truth and a manifest under ``out_dir``.

    Returns the manifest path.
    """
    if per_class < 1 or not classes:
        raise InsufficientData("need at least one sequence per class")
    out = Path(out_dir)
    for sub in ("sequences", "frames", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(seed, "dataset"))
    items = []
    index = 0
    for label, cls in enumerate(classes):
        for _ in range(per_class):
            seq_id = f"seq_{index:04d}"
            spec = SynthSpec(int(cls), num_actors=int(rng.integers(actors[0], actors[1] + 1)),
                             num_frames=num_frames, width=width, height=height,
                             motion_ratio=float(rng.uniform(*ratio)), noise_std=noise_std,
                             seed=derive_seed(seed, index), corrupt_rate=corrupt_rate)
            rec, frames, truth = generate_sequence(spec, seq_id)
            rec = replace(rec, label=label)
            with open(out / "sequences" / f"{seq_id}.json", "w") as fh:
                json.dump(serialize_sequence(rec), fh)
            save_frames(frames, out / "frames" / seq_id)
            (out / "truth" / f"{seq_id}.json").write_text(json.dumps(truth.to_dict()))
            items.append({"sequence_id": seq_id, "document": f"sequences/{seq_id}.json",
                          "frames": f"frames/{seq_id}", "truth": f"truth/{seq_id}.json",
                          "label": label, "key_actor_id": truth.key_actor_id,
                          "num_actors": spec.num_actors})
            index += 1
    for item, split in zip(items, split_indices([it["label"] for it in items], seed)):
        item["split"] = split
    (out / "reference_poses.json").write_text(
        json.dumps(poses_to_dict(reference_poses(reference_count, derive_seed(seed, "reference"), width, height, noise_std))))
    manifest = {"format": MANIFEST_FORMAT, "version": 1, "seed": seed,
                "classes": [CLASS_NAMES[c] for c in classes], "reference": "reference_poses.json",
                "sequences": items}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path
