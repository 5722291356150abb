"""Deep embedded clustering of pose vectors and key-pose selection.

The encoder of a pretrained autoencoder maps poses to a latent space, k-means
gives initial centroids, and then encoder and centroids are refined together
by minimising KL(P || Q) where Q is a Student's t soft assignment (one
degree of freedom) and P its sharpened, frequency-normalised target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import nn
from .errors import Corrupt, DimensionMismatch, DomainError, TooFewPoints, VersionMismatch
from .pose_filter import FilterModel, encoder_of, train_autoencoder

FORMAT = "actar-cluster"
VERSION = 1
DEFAULT_K = 8


# --------------------------------------------------------------------------- k-means

def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid per point (lowest index on ties)."""
    return np.argmin(squared_distances(points, centroids), axis=1)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = squared_distances(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest)) if len(rest) else int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(points, points[[idx]])[:, 0])
    return points[chosen].copy()


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations: int


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> KMeansResult:
    labels = assign(points, centroids)
    it = 0
    for it in range(1, max_iter + 1):
        new = centroids.copy()
        for j in range(len(centroids)):
            members = points[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-fitted point
                d = squared_distances(points, new)[np.arange(len(points)), labels]
                new[j] = points[int(np.argmax(d))]
        centroids = new
        new_labels = assign(points, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(squared_distances(points, centroids)[np.arange(len(points)), labels].sum())
    return KMeansResult(centroids, labels, inertia, it)


def kmeans_fit(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10,
               max_iter: int = 300) -> KMeansResult:
    """k-means++ seeding plus Lloyd iterations; best inertia over ``restarts``."""
    points = np.asarray(points, dtype=np.float64)
    if k < 1 or len(points) < k:
        raise TooFewPoints(f"need at least k={k} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = _lloyd(points, kmeans_plusplus(points, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def kmeans(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    return kmeans_fit(points, k, seed, restarts).centroids


# --------------------------------------------------------------------------- DEC objective

def soft_assign(z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    if z.shape[1] != mu.shape[1]:
        raise DimensionMismatch(f"latent width {z.shape[1]} != centroid width {mu.shape[1]}")
    w = 1.0 / (1.0 + squared_distances(z, mu))
    return w / w.sum(axis=1, keepdims=True)


def target_distribution(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w = q * q / q.sum(axis=0)
    return w / w.sum(axis=1, keepdims=True)


def kl_loss(p: np.ndarray, q: np.ndarray) -> float:
    """sum_ij p log(p / q), with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatch(f"P {p.shape} vs Q {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise DomainError("q is zero where p is positive")
    # non-negative in exact arithmetic; clamp summation round-off near P == Q
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def dec_objective(z: np.ndarray, centroids: np.ndarray, p: np.ndarray):
    """KL(P || Q(z, mu)) with P held fixed; returns ``(loss, dL/dz, dL/dmu)``."""
    diff = z[:, None, :] - centroids[None, :, :]
    w = 1.0 / (1.0 + np.einsum("ijk,ijk->ij", diff, diff))
    q = w / w.sum(axis=1, keepdims=True)
    loss = kl_loss(p, q)
    coef = 2.0 * w * (p - q)  # (N, K)
    gz = np.einsum("ij,ijk->ik", coef, diff)
    gmu = -np.einsum("ij,ijk->jk", coef, diff)
    return loss, gz, gmu


# --------------------------------------------------------------------------- model

@dataclass(frozen=True, eq=False)
class ClusterModel:
    encoder_spec: nn.MLPSpec
    encoder_params: nn.MLPParams
    centroids: np.ndarray
    history: Tuple[float, ...] = ()  # KL at each target update
    method: str = "dec"

    @property
    def k(self) -> int:
        return len(self.centroids)

    def encode(self, vectors: np.ndarray) -> np.ndarray:
        return nn.predict(self.encoder_spec, self.encoder_params, np.atleast_2d(vectors))

    def soft_assign(self, vectors: np.ndarray) -> np.ndarray:
        return soft_assign(self.encode(vectors), self.centroids)


Encoder = Tuple[nn.MLPSpec, nn.MLPParams]


def _resolve_encoder(vectors, encoder, seed, pretrain_epochs) -> Encoder:
    if encoder is None:
        encoder = train_autoencoder(vectors, epochs=pretrain_epochs, seed=seed)
    if isinstance(encoder, FilterModel):
        return encoder_of(encoder.spec, encoder.params)
    spec, params = encoder
    return spec, params.copy()


def dec_fit(vectors: np.ndarray, k: int = DEFAULT_K, seed: int = 0, epochs: int = 150,
            update_interval: int = 1, batch_size: int = 32, lr: float = 1e-3, tol: float = 0.001,
            encoder=None, pretrain_epochs: int = 150, kmeans_restarts: int = 10,
            eps: float = 1e-3) -> Tuple[ClusterModel, np.ndarray]:
    """Self-training clustering; returns the fitted model and final soft assignments.

    ``encoder`` may be a trained :class:`FilterModel`, an ``(spec, params)``
    pair, or ``None`` to pretrain an autoencoder on ``vectors`` first. The
    encoder is copied, never modified.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) < k or k < 1:
        raise TooFewPoints(f"need at least k={k} vectors, got {len(x)}")
    spec, params = _resolve_encoder(x, encoder, seed, pretrain_epochs)
    mu = kmeans(nn.predict(spec, params, x), k, seed, kmeans_restarts)

    arrays = params.arrays() + [mu]
    state = nn.AdamState.create(arrays, lr=lr, eps=eps)
    rng = np.random.default_rng(seed)
    history: List[float] = []
    p = None
    prev_labels = None
    for epoch in range(epochs):
        if epoch % max(1, update_interval) == 0:
            q = soft_assign(nn.predict(spec, params, x), mu)
            p = target_distribution(q)
            history.append(kl_loss(p, q))
            labels = q.argmax(axis=1)
            if prev_labels is not None and np.mean(labels != prev_labels) < tol:
                break
            prev_labels = labels
        for idx in nn.minibatches(len(x), batch_size, rng):
            cache = nn.forward(spec, params, x[idx])
            _, gz, gmu = dec_objective(cache.output, mu, p[idx])
            grads, _ = nn.backward(spec, params, cache, gz)
            nn.adam_step(arrays, grads.arrays() + [gmu], state)
    q = soft_assign(nn.predict(spec, params, x), mu)
    return ClusterModel(spec, params, mu, tuple(history), "dec"), q


def kmeans_baseline(vectors: np.ndarray, k: int = DEFAULT_K, seed: int = 0, encoder=None,
                    pretrain_epochs: int = 150, kmeans_restarts: int = 10) -> Tuple[ClusterModel, np.ndarray]:
    """Plain k-means on the encoder latents, no self-training."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) < k or k < 1:
        raise TooFewPoints(f"need at least k={k} vectors, got {len(x)}")
    spec, params = _resolve_encoder(x, encoder, seed, pretrain_epochs)
    mu = kmeans(nn.predict(spec, params, x), k, seed, kmeans_restarts)
    model = ClusterModel(spec, params, mu, (), "kmeans")
    return model, model.soft_assign(x)


# --------------------------------------------------------------------------- key poses

@dataclass(frozen=True, eq=False)
class KeyPose:
    cluster: int
    frame_index: int
    vector: np.ndarray
    index: int  # row in the clustered vector array


def select_key_poses(model: ClusterModel, q: np.ndarray, vectors: np.ndarray,
                     frame_indices: Sequence[int]) -> List[KeyPose]:
    """Per cluster, the member whose latent lies nearest the centroid.

    Clusters left empty by the hard assignment take the globally nearest
    sample not already chosen. Result is ordered by frame index.
    """
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    frames = np.asarray(frame_indices)
    if len(frames) != len(x) or len(np.atleast_2d(q)) != len(x):
        raise DimensionMismatch("vectors, assignments and frame indices differ in length")
    d2 = squared_distances(model.encode(x), model.centroids)
    hard = np.asarray(q).argmax(axis=1)
    chosen = {}
    used = set()
    empty = []
    for j in range(model.k):
        members = np.flatnonzero(hard == j)
        if len(members) == 0:
            empty.append(j)
            continue
        best = min(members, key=lambda i: (d2[i, j], frames[i]))
        chosen[j] = int(best)
        used.add(int(best))
    for j in empty:
        free = [i for i in range(len(x)) if i not in used]
        if not free:
            continue
        best = min(free, key=lambda i: (d2[i, j], frames[i]))
        chosen[j] = int(best)
        used.add(int(best))
    out = [KeyPose(j, int(frames[i]), x[i].copy(), i) for j, i in chosen.items()]
    return sorted(out, key=lambda kp: (kp.frame_index, kp.cluster))


# --------------------------------------------------------------------------- persistence

def cluster_to_dict(model: ClusterModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "method": model.method,
        "k": model.k,
        "encoder": nn.mlp_to_dict(model.encoder_spec, model.encoder_params),
        "centroids": nn.encode_array(model.centroids),
        "history": list(model.history),
    }


def cluster_from_dict(doc: dict) -> ClusterModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise Corrupt("not a cluster model document")
    if doc.get("version") != VERSION:
        raise VersionMismatch(f"cluster model version {doc.get('version')!r}, expected {VERSION}")
    try:
        spec, params, _ = nn.mlp_from_dict(doc["encoder"])
        mu = nn.decode_array(doc["centroids"])
        if mu.shape != (int(doc["k"]), spec.widths[-1]):
            raise Corrupt(f"centroid shape {mu.shape} does not match k and encoder width")
        return ClusterModel(spec, params, mu, tuple(doc.get("history", ())), doc.get("method", "dec"))
    except (KeyError, TypeError, ValueError) as exc:
        raise Corrupt(f"bad cluster model document: {exc}") from exc
