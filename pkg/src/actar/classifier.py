"""Action classifier over grid images and the per-class precision metric.

The backbone is a one-hidden-layer MLP on globally standardised pixels,
trained with softmax cross-entropy and Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .errors import Corrupt, DimensionMismatch, EmptyClass, VersionMismatch
from .grid import ActionGrid

FORMAT = "actar-classifier"
VERSION = 1
HIDDEN = 128


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    spec: nn.MLPSpec
    params: nn.MLPParams
    mean: float
    std: float
    input_shape: Tuple[int, int]  # (height, width) of the grids
    class_names: Tuple[str, ...]
    optimizer: dict = field(default_factory=dict)
    history: Tuple[float, ...] = ()  # mean training loss per epoch

    @property
    def n_classes(self) -> int:
        return self.spec.widths[-1]


def _image(g) -> np.ndarray:
    return g.image if isinstance(g, ActionGrid) else np.asarray(g)


def _design_matrix(grids: Sequence, shape: Tuple[int, int]) -> np.ndarray:
    x = np.empty((len(grids), shape[0] * shape[1]))
    for i, g in enumerate(grids):
        img = _image(g)
        if img.shape != tuple(shape):
            raise DimensionMismatch(f"grid {i} is {img.shape}, expected {tuple(shape)}")
        x[i] = img.reshape(-1)
    return x


def train_classifier(grids: Sequence, labels: Sequence[int], epochs: int = 150, lr: float = 1e-3,
                     batch_size: int = 32, seed: int = 0, hidden: int = HIDDEN,
                     class_names: Optional[Sequence[str]] = None, keys: Optional[Sequence] = None,
                     eps: float = 1e-3) -> ClassifierModel:
    """Fit the classifier.

    ``keys`` (e.g. sequence ids) fix a canonical example order before the
    seeded batching, so the result does not depend on input order.
    """
    labels = [int(y) for y in labels]
    if len(grids) != len(labels) or not grids:
        raise DimensionMismatch(f"{len(grids)} grids for {len(labels)} labels")
    if keys is not None:
        order = sorted(range(len(grids)), key=lambda i: (str(keys[i]), i))
        grids = [grids[i] for i in order]
        labels = [labels[i] for i in order]
    n_classes = len(class_names) if class_names else max(labels) + 1
    names = tuple(class_names) if class_names else tuple(str(c) for c in range(n_classes))
    counts = np.bincount(labels, minlength=n_classes)
    if len(counts) > n_classes or np.any(counts == 0):
        missing = [c for c in range(n_classes) if c >= len(counts) or counts[c] == 0]
        raise EmptyClass(f"no training examples for classes {missing}")

    shape = _image(grids[0]).shape
    x = _design_matrix(grids, shape)
    mean = float(x.mean())
    std = float(x.std()) or 1.0
    x -= mean
    x /= std
    y = np.asarray(labels)

    spec = nn.MLPSpec((x.shape[1], hidden, n_classes), ("relu",), "softmax", seed)
    params = nn.init_params(spec)
    arrays = params.arrays()
    state = nn.AdamState.create(arrays, lr=lr, eps=eps)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in nn.minibatches(len(x), batch_size, rng):
            cache = nn.forward(spec, params, x[idx])
            loss, g = nn.cross_entropy_loss(cache.logits, y[idx])
            grads, _ = nn.backward(spec, params, cache, g)
            nn.adam_step(arrays, grads.arrays(), state)
            total += loss * len(idx)
        history.append(total / len(x))
    return ClassifierModel(spec, params, mean, std, tuple(shape), names, state.hyperparameters(), tuple(history))


def predict_batch(model: ClassifierModel, grids: Sequence) -> np.ndarray:
    """Class probabilities, one row per grid."""
    if len(grids) == 0:
        return np.empty((0, model.n_classes))
    x = _design_matrix(grids, model.input_shape)
    x -= model.mean
    x /= model.std
    return nn.predict(model.spec, model.params, x)


def predict(model: ClassifierModel, grid) -> np.ndarray:
    return predict_batch(model, [grid])[0]


def training_loss(model: ClassifierModel, grids: Sequence, labels: Sequence[int]) -> float:
    x = _design_matrix(grids, model.input_shape)
    x -= model.mean
    x /= model.std
    return nn.cross_entropy_loss(nn.forward(model.spec, model.params, x).logits, labels)[0]


def average_precision(predictions: Sequence[int], labels: Sequence[int],
                      n_classes: Optional[int] = None) -> Tuple[Dict[int, float], float]:
    """Per-class precision (correct / predicted, 0 when never predicted) and its mean.

    Classes range over ``range(n_classes)`` when given, else over every class
    that occurs in either labels or predictions.
    """
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    if pred.shape != true.shape or pred.size == 0:
        raise DimensionMismatch("need equally many (>= 1) predictions and labels")
    classes = range(n_classes) if n_classes is not None else sorted(set(pred.tolist()) | set(true.tolist()))
    per_class = {}
    for c in classes:
        predicted = pred == c
        n = int(predicted.sum())
        per_class[int(c)] = float((true[predicted] == c).sum() / n) if n else 0.0
    return per_class, float(np.mean(list(per_class.values())))


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))


def classifier_to_dict(model: ClassifierModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "network": nn.mlp_to_dict(model.spec, model.params, model.optimizer),
        "mean": model.mean,
        "std": model.std,
        "input_shape": list(model.input_shape),
        "class_names": list(model.class_names),
        "history": list(model.history),
    }


def classifier_from_dict(doc: dict) -> ClassifierModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise Corrupt("not a classifier document")
    if doc.get("version") != VERSION:
        raise VersionMismatch(f"classifier version {doc.get('version')!r}, expected {VERSION}")
    try:
        spec, params, opt = nn.mlp_from_dict(doc["network"])
        return ClassifierModel(spec, params, float(doc["mean"]), float(doc["std"]),
                               tuple(doc["input_shape"]), tuple(doc["class_names"]), opt,
                               tuple(doc.get("history", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise Corrupt(f"bad classifier document: {exc}") from exc
