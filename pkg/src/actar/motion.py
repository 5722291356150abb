"""Motion aggregation and key-actor selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from .errors import DimensionMismatch, EmptyAfterFilter, EmptyInput
from .nn import softmax
from .pose_data import SequenceRecord, Track, TrackId, track_sort_key

DEFAULT_SCORE_THRESHOLD = 0.5


@dataclass
class MotionFeatures:
    """Context ``x`` (N, dx) and motion ``y`` (N, dy) with query/key/value maps.

    ``None`` projections mean identity.
    """

    context: np.ndarray
    motion: np.ndarray
    alpha: float = 1.0
    theta: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None


def attention_weights(feats: MotionFeatures) -> np.ndarray:
    """Row-stochastic similarity f(theta(x_i), phi(x_j)): softmax of scaled dot products."""
    x = np.atleast_2d(np.asarray(feats.context, dtype=np.float64))
    q = x if feats.theta is None else x @ feats.theta
    k = x if feats.phi is None else x @ feats.phi
    if q.shape[1] != k.shape[1]:
        raise DimensionMismatch(f"query width {q.shape[1]} != key width {k.shape[1]}")
    return softmax(q @ k.T / np.sqrt(q.shape[1]))


def aggregate_motion(feats: MotionFeatures, value_of_j: bool = False) -> np.ndarray:
    """y_hat_i = y_i + alpha * sum_j f_ij * sigma(y_i).

    With ``value_of_j`` the value term uses sigma(y_j) instead, the usual
    attention reading.
    """
    x = np.atleast_2d(np.asarray(feats.context, dtype=np.float64))
    y = np.atleast_2d(np.asarray(feats.motion, dtype=np.float64))
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise DimensionMismatch(f"{x.shape[0]} context rows vs {y.shape[0]} motion rows")
    if not np.isfinite(feats.alpha):
        raise ValueError("alpha must be finite")
    v = y if feats.sigma is None else y @ feats.sigma
    if v.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"value width {v.shape[1]} != motion width {y.shape[1]}")
    f = attention_weights(feats)
    if value_of_j:
        agg = f @ v
    else:
        agg = f.sum(axis=1, keepdims=True) * v
    return y + feats.alpha * agg


@dataclass(frozen=True)
class TrackScore:
    track_id: TrackId
    score: float


def track_motion_score(track: Track, score_threshold: float = DEFAULT_SCORE_THRESHOLD) -> TrackScore:
    """Mean flow magnitude over detections whose tracker score passes the threshold."""
    if not track.detections:
        raise EmptyInput(f"track {track.track_id!r} has no detections")
    kept = [d.flow_magnitude for d in track.detections if d.score >= score_threshold]
    if not kept:
        raise EmptyAfterFilter(f"track {track.track_id!r}: no detection scores >= {score_threshold}")
    return TrackScore(track.track_id, float(np.mean(kept)))


def select_key_actor(scores: Iterable[TrackScore]) -> TrackId:
    """Track with the largest score; ties go to the smallest track id."""
    scores = list(scores)
    if not scores:
        raise EmptyInput("no track scores")
    best = max(s.score for s in scores)
    return min((s.track_id for s in scores if s.score == best), key=track_sort_key)


def score_tracks(rec: SequenceRecord, score_threshold: float = DEFAULT_SCORE_THRESHOLD) -> List[TrackScore]:
    """Scores for every track that keeps at least one detection."""
    out = []
    for tr in rec.tracks:
        try:
            out.append(track_motion_score(tr, score_threshold))
        except (EmptyAfterFilter, EmptyInput):
            continue
    return out


def identify_key_actor(rec: SequenceRecord, score_threshold: float = DEFAULT_SCORE_THRESHOLD):
    """Returns ``(key_actor_id, scores)`` for a sequence."""
    scores = score_tracks(rec, score_threshold)
    return select_key_actor(scores), scores
