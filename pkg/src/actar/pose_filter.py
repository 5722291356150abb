"""Autoencoder-based pose filtering.

A stacked autoencoder is trained to reconstruct reference pose vectors; an
incoming pose is kept when its reconstruction error stays under
``mean + k * std`` of the training errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .errors import Corrupt, InsufficientData, VersionMismatch

FORMAT = "actar-filter"
VERSION = 1
MIN_SAMPLES = 32
HIDDEN = (64, 32)
LATENT = 10


@dataclass(frozen=True, eq=False)
class FilterModel:
    spec: nn.MLPSpec
    params: nn.MLPParams
    err_mean: float
    err_std: float
    threshold: float
    k: float = 2.0
    optimizer: dict = field(default_factory=dict)
    history: Tuple[float, ...] = ()  # mean training error, index 0 = before training

    @property
    def latent_width(self) -> int:
        return min(self.spec.widths)


def autoencoder_spec(input_width: int, hidden: Sequence[int] = HIDDEN, latent: int = LATENT,
                     seed: int = 0) -> nn.MLPSpec:
    """Mirrored tanh autoencoder with a linear bottleneck."""
    enc = [input_width, *hidden, latent]
    widths = enc + enc[-2::-1]
    acts = ["tanh"] * len(hidden) + ["identity"] + ["tanh"] * len(hidden)
    return nn.MLPSpec(tuple(widths), tuple(acts), "identity", seed)


def encoder_of(spec: nn.MLPSpec, params: nn.MLPParams) -> Tuple[nn.MLPSpec, nn.MLPParams]:
    """Drop the decoder half; the encoder output is the linear bottleneck."""
    depth = spec.num_layers // 2
    enc_spec = nn.MLPSpec(spec.widths[:depth + 1], spec.activations[:depth - 1], "identity", spec.seed)
    return enc_spec, nn.MLPParams([w.copy() for w in params.weights[:depth]],
                                  [b.copy() for b in params.biases[:depth]])


def _errors(spec, params, x: np.ndarray) -> np.ndarray:
    recon = nn.predict(spec, params, x)
    return np.mean((recon - x) ** 2, axis=1)


def threshold_from_errors(errors: Sequence[float], k: float = 2.0) -> Tuple[float, float, float]:
    """``(mean, std, mean + k * std)`` using the population standard deviation."""
    e = np.asarray(errors, dtype=np.float64)
    mu, sd = float(e.mean()), float(e.std())
    return mu, sd, mu + k * sd


def train_autoencoder(vectors: np.ndarray, epochs: int = 150, lr: float = 1e-3, batch_size: int = 32,
                      seed: int = 0, k: float = 2.0, hidden: Sequence[int] = HIDDEN,
                      latent: int = LATENT, eps: float = 1e-3) -> FilterModel:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < MIN_SAMPLES:
        raise InsufficientData(f"need at least {MIN_SAMPLES} reference vectors, got {len(x)}")
    spec = autoencoder_spec(x.shape[1], hidden, latent, seed)
    params = nn.init_params(spec)
    arrays = params.arrays()
    state = nn.AdamState.create(arrays, lr=lr, eps=eps)
    rng = np.random.default_rng(seed)
    history = [float(_errors(spec, params, x).mean())]
    for _ in range(epochs):
        for idx in nn.minibatches(len(x), batch_size, rng):
            xb = x[idx]
            cache = nn.forward(spec, params, xb)
            _, g = nn.mse_loss(xb, cache.output)
            grads, _ = nn.backward(spec, params, cache, g)
            nn.adam_step(arrays, grads.arrays(), state)
        history.append(float(_errors(spec, params, x).mean()))
    mu, sd, tau = threshold_from_errors(_errors(spec, params, x), k)
    return FilterModel(spec, params, mu, sd, max(tau, np.finfo(float).tiny), k,
                       state.hyperparameters(), tuple(history))


def reconstruction_error(model: FilterModel, v: np.ndarray):
    """Mean squared reconstruction error; a scalar for one vector, an array for a batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        return float(_errors(model.spec, model.params, v[None, :])[0])
    if len(v) == 0:
        return np.empty(0)
    return _errors(model.spec, model.params, v)


def fit_threshold(model: FilterModel, k: float = 2.0, reference: Optional[np.ndarray] = None) -> float:
    """Threshold ``mean + k * std`` from stored training statistics (or from ``reference``)."""
    if reference is not None:
        return threshold_from_errors(reconstruction_error(model, np.atleast_2d(reference)), k)[2]
    return model.err_mean + k * model.err_std


def with_threshold(model: FilterModel, k: float) -> FilterModel:
    return replace(model, k=k, threshold=max(fit_threshold(model, k), np.finfo(float).tiny))


def filter_poses(model: FilterModel, vectors: np.ndarray,
                 threshold: Optional[float] = None) -> Tuple[List[int], List[int]]:
    """Split indices into (kept, discarded); a pose is kept iff error <= threshold."""
    tau = model.threshold if threshold is None else threshold
    v = np.asarray(vectors, dtype=np.float64)
    if v.size == 0:
        return [], []
    errs = reconstruction_error(model, np.atleast_2d(v))
    kept = [i for i, e in enumerate(errs) if e <= tau]
    discarded = [i for i, e in enumerate(errs) if not e <= tau]
    return kept, discarded


def filter_to_dict(model: FilterModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "autoencoder": nn.mlp_to_dict(model.spec, model.params, model.optimizer),
        "err_mean": model.err_mean,
        "err_std": model.err_std,
        "threshold": model.threshold,
        "k": model.k,
        "history": list(model.history),
    }


def filter_from_dict(doc: dict) -> FilterModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise Corrupt("not a filter model document")
    if doc.get("version") != VERSION:
        raise VersionMismatch(f"filter model version {doc.get('version')!r}, expected {VERSION}")
    try:
        spec, params, opt = nn.mlp_from_dict(doc["autoencoder"])
        return FilterModel(spec, params, float(doc["err_mean"]), float(doc["err_std"]),
                           float(doc["threshold"]), float(doc["k"]), opt, tuple(doc.get("history", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise Corrupt(f"bad filter model document: {exc}") from exc
