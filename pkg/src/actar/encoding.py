"""Hip-centred polar pose encoding.

Every joint is expressed relative to the mid-hip point, converted to polar
form with the y axis pointing up, and the radii are divided by the largest
radius of the pose. The flat feature vector interleaves ``(r, theta / 2pi)``
per joint in COCO order, so every entry lies in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .pose_data import LEFT_HIP, NUM_JOINTS, RIGHT_HIP, BBox, PoseFrame

TWO_PI = 2.0 * np.pi
VECTOR_SIZE = 2 * NUM_JOINTS
MIN_CONFIDENCE = 0.05


@dataclass(frozen=True, eq=False)
class PolarPose:
    radius: np.ndarray  # (17,) in [0, 1]
    angle: np.ndarray  # (17,) radians in [0, 2pi)
    frame_index: Optional[int] = None
    bbox: Optional[BBox] = None


def center_on_reference(pose, min_confidence: float = MIN_CONFIDENCE) -> np.ndarray:
    """Joint positions relative to the hip midpoint, shape (17, 2).

    Accepts a :class:`PoseFrame` or a (17, 2) / (17, 3) array. Joints whose
    confidence is below ``min_confidence`` collapse onto the pole.
    """
    joints = pose.joints if isinstance(pose, PoseFrame) else np.asarray(pose, dtype=np.float64)
    xy = joints[:, :2]
    ref = 0.5 * (xy[LEFT_HIP] + xy[RIGHT_HIP])
    rel = xy - ref
    if joints.shape[1] > 2:
        rel[joints[:, 2] < min_confidence] = 0.0
    return rel


def to_polar(relative: np.ndarray, frame_index: Optional[int] = None,
             bbox: Optional[BBox] = None) -> PolarPose:
    rel = np.asarray(relative, dtype=np.float64)
    norms = np.hypot(rel[:, 0], rel[:, 1])
    peak = norms.max()
    radius = norms / peak if peak > 0 else np.zeros_like(norms)
    # image y grows downwards; flip it so angles are counter-clockwise
    angle = np.mod(np.arctan2(-rel[:, 1], rel[:, 0]), TWO_PI)
    angle[angle >= TWO_PI] = 0.0
    angle[norms == 0] = 0.0
    return PolarPose(radius, angle, frame_index, bbox)


def pose_vector(p: PolarPose) -> np.ndarray:
    out = np.empty(VECTOR_SIZE)
    out[0::2] = p.radius
    out[1::2] = p.angle / TWO_PI
    return out


def encode_pose(pose: PoseFrame) -> np.ndarray:
    """PoseFrame -> 34-dim polar feature vector."""
    return pose_vector(to_polar(center_on_reference(pose), pose.frame_index, pose.bbox))


def cartesian_vector(pose: PoseFrame, width: int, height: int) -> np.ndarray:
    """Ablation encoding: raw image coordinates scaled by frame size, clipped to [0, 1]."""
    out = np.empty(VECTOR_SIZE)
    out[0::2] = pose.xy[:, 0] / width
    out[1::2] = pose.xy[:, 1] / height
    return np.clip(out, 0.0, 1.0)


def encode_poses(poses: Iterable[PoseFrame], polar: bool = True, width: int = 1, height: int = 1) -> np.ndarray:
    poses = list(poses)
    if not poses:
        return np.empty((0, VECTOR_SIZE))
    if polar:
        return np.stack([encode_pose(p) for p in poses])
    return np.stack([cartesian_vector(p, width, height) for p in poses])
