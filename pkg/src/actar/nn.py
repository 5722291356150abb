"""Small dense network engine in float64 numpy.

Layers are affine maps ``a @ W + b`` followed by an activation. ``backward``
always takes the gradient with respect to the *last pre-activation* (the
logits for a softmax head), which is what both losses below return.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .errors import Corrupt, DimensionMismatch, LabelOutOfRange, VersionMismatch

HIDDEN_ACTIVATIONS = ("tanh", "relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "softmax")
MODEL_FORMAT = "actar-mlp"
MODEL_VERSION = 1


@dataclass(frozen=True)
class MLPSpec:
    widths: Tuple[int, ...]
    activations: Tuple[str, ...] = ()  # one per hidden layer
    output: str = "identity"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        acts = tuple(self.activations)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        if len(acts) != len(widths) - 2:
            raise ValueError(f"{len(widths) - 2} hidden activations expected, got {len(acts)}")
        if any(a not in HIDDEN_ACTIVATIONS for a in acts):
            raise ValueError(f"unknown activation in {acts}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output!r}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    def layer_activation(self, i: int) -> str:
        return self.activations[i] if i < self.num_layers - 1 else self.output


@dataclass
class MLPParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(spec: MLPSpec) -> MLPParams:
    """Glorot-uniform weights, zero biases, seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def check_params(spec: MLPSpec, params: MLPParams) -> None:
    if len(params.weights) != spec.num_layers or len(params.biases) != spec.num_layers:
        raise DimensionMismatch("parameter count does not match spec")
    for i, (fi, fo) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        if params.weights[i].shape != (fi, fo) or params.biases[i].shape != (fo,):
            raise DimensionMismatch(f"layer {i}: expected W {(fi, fo)}, b {(fo,)}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softmax":
        return softmax(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return g * (1.0 - a * a)
    if name == "relu":
        return g * (z > 0)
    return g


@dataclass
class Cache:
    """Per-layer values from a forward pass: ``post[0]`` is the input."""

    pre: List[np.ndarray] = field(default_factory=list)
    post: List[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def forward(spec: MLPSpec, params: MLPParams, batch: np.ndarray) -> Cache:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.widths[0]:
        raise DimensionMismatch(f"input width {x.shape[1]} != {spec.widths[0]}")
    cache = Cache(post=[x])
    a = x
    for i in range(spec.num_layers):
        z = a @ params.weights[i] + params.biases[i]
        a = _activate(spec.layer_activation(i), z)
        cache.pre.append(z)
        cache.post.append(a)
    return cache


def predict(spec: MLPSpec, params: MLPParams, batch: np.ndarray) -> np.ndarray:
    return forward(spec, params, batch).output


def backward(spec: MLPSpec, params: MLPParams, cache: Cache, grad_logits: np.ndarray,
             input_grad: bool = False) -> Tuple[MLPParams, Optional[np.ndarray]]:
    """Backpropagate ``grad_logits`` (d loss / d last pre-activation)."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise DimensionMismatch(f"gradient shape {g.shape} != output shape {cache.pre[-1].shape}")
    gw: List[np.ndarray] = [None] * spec.num_layers  # type: ignore[list-item]
    gb: List[np.ndarray] = [None] * spec.num_layers  # type: ignore[list-item]
    grad_in = None
    for i in reversed(range(spec.num_layers)):
        if i < spec.num_layers - 1:
            g = _activation_grad(spec.layer_activation(i), cache.pre[i], cache.post[i + 1], g)
        gw[i] = cache.post[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
        elif input_grad:
            grad_in = g @ params.weights[0].T
    return MLPParams(gw, gb), grad_in


# --------------------------------------------------------------------------- losses

def mse_loss(target: np.ndarray, pred: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over the first axis of squared L2 error; gradient is w.r.t. ``pred``."""
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionMismatch(f"target {target.shape} vs prediction {pred.shape}")
    if target.ndim == 0 or target.shape[0] < 1:
        raise DimensionMismatch("need at least one map")
    m = target.shape[0]
    diff = pred - target
    return float(np.sum(diff * diff) / m), (2.0 / m) * diff


def cross_entropy_loss(logits: np.ndarray, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Categorical cross-entropy of softmax(logits); gradient is w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n or n < 1:
        raise DimensionMismatch(f"{labels.shape[0]} labels for {n} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(logp[rows, labels].sum() / n)
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / n


# --------------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-3

    @classmethod
    def create(cls, arrays: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-3) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, lr, beta1, beta2, eps)

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@numba.njit(cache=True, error_model="numpy")
def _adam_kernel(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):  # pragma: no cover - compiled
    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections hoisted out of the loop
    step = lr / bc1
    inv = 1.0 / np.sqrt(bc2)
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (np.sqrt(vi) * inv + eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> Tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatch("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionMismatch(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        assert p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous
        _adam_kernel(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                     m.reshape(-1), v.reshape(-1),
                     state.lr, state.beta1, state.beta2, state.eps, bc1, bc2)
    return params, state


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays covering a seeded permutation of ``range(n)``."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# --------------------------------------------------------------------------- gradient check

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def grad_check(spec: MLPSpec, params: MLPParams, loss_fn: LossFn, batch: np.ndarray,
               h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences over all parameters.

    ``loss_fn`` maps the last pre-activation to ``(loss, gradient)``.
    Denominators are floored at ``floor`` so exact zeros do not blow up.
    """
    cache = forward(spec, params, batch)
    _, g = loss_fn(cache.logits)
    grads, _ = backward(spec, params, cache, g)
    worst = 0.0
    for p, ga in zip(params.arrays(), grads.arrays()):
        flat = p.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn(forward(spec, params, batch).logits)[0]
            flat[i] = old - h
            lm = loss_fn(forward(spec, params, batch).logits)[0]
            flat[i] = old
            num = (lp - lm) / (2 * h)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), floor)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------- persistence

LARGE_ARRAY = 1 << 20


def encode_array(a: np.ndarray, large: int = LARGE_ARRAY) -> dict:
    """JSON form of a float64 array; big arrays go to base64 to keep files sane."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.size > large:
        return {"shape": list(a.shape), "b64": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")}
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def decode_array(doc: dict) -> np.ndarray:
    try:
        shape = tuple(doc["shape"])
        if "b64" in doc:
            flat = np.frombuffer(base64.b64decode(doc["b64"], validate=True), dtype="<f8").astype(np.float64)
        else:
            flat = np.array(doc["data"], dtype=np.float64)
        return flat.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise Corrupt(f"bad array document: {exc}") from exc


def mlp_to_dict(spec: MLPSpec, params: MLPParams, optimizer: Optional[dict] = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": {"widths": list(spec.widths), "activations": list(spec.activations),
                 "output": spec.output, "seed": spec.seed},
        "weights": [encode_array(w) for w in params.weights],
        "biases": [encode_array(b) for b in params.biases],
        "optimizer": optimizer or {},
    }


def mlp_from_dict(doc: dict) -> Tuple[MLPSpec, MLPParams, dict]:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise Corrupt("not an MLP model document")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    try:
        s = doc["spec"]
        spec = MLPSpec(tuple(s["widths"]), tuple(s["activations"]), s["output"], int(s["seed"]))
        params = MLPParams([decode_array(w) for w in doc["weights"]], [decode_array(b) for b in doc["biases"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise Corrupt(f"bad model document: {exc}") from exc
    check_params(spec, params)
    return spec, params, doc.get("optimizer", {})
