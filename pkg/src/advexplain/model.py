"""Small differentiable classifiers with analytic input and weight gradients.

Two architectures are supported: ``linear-softmax`` (logits = W x + b) and
``mlp-relu`` (ReLU hidden layers followed by a linear head). The loss is
cross-entropy on a softmax over the logits. All math runs in float64 on
flattened inputs; callers may pass images of any shape with ``input_dim``
elements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_batch, check_label
from .numerics import Rng, gaussian, read_tensor, write_tensor

KINDS = ("linear-softmax", "mlp-relu")
MDL_MAGIC = "MDL1"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind == "linear-softmax" and self.hidden_dims:
            raise ValueError("linear-softmax takes no hidden layers")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer sizes must be positive")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]


@dataclass
class Weights:
    """Per-layer matrices of shape (out, in) and bias vectors of shape (out,)."""

    matrices: list[np.ndarray]
    biases: list[np.ndarray]

    def check(self, spec: ModelSpec) -> "Weights":
        sizes = spec.layer_sizes
        if len(self.matrices) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("number of layers does not match the model spec")
        for i, (W, b) in enumerate(zip(self.matrices, self.biases)):
            if W.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has shapes {W.shape}, {b.shape}; expected "
                                 f"{(sizes[i + 1], sizes[i])}, {(sizes[i + 1],)}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} contains non-finite values")
        return self

    def copy(self) -> "Weights":
        return Weights([W.copy() for W in self.matrices], [b.copy() for b in self.biases])

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "Weights":
        sizes = spec.layer_sizes
        return cls(
            [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    label: int


# --- core math --------------------------------------------------------------


def _flatten(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.size % spec.input_dim or X.size == 0:
        raise ValueError(f"input with {X.size} elements does not match input_dim={spec.input_dim}")
    return X.reshape(-1, spec.input_dim)


def _forward(spec: ModelSpec, w: Weights, X: np.ndarray):
    """Return (logits, cache) for a 2-D batch; cache holds each layer's input and pre-activation."""
    cache = []
    h = X
    last = len(w.matrices) - 1
    for i, (W, b) in enumerate(zip(w.matrices, w.biases)):
        z = h @ W.T + b
        cache.append((h, z))
        h = z if i == last else np.maximum(z, 0.0)
    return h, cache


def _backward(w: Weights, cache, dZ: np.ndarray, need_weights: bool = True):
    """Backpropagate ``dZ`` (gradient w.r.t. logits) to the input and the weights."""
    grads_W, grads_b = [], []
    g = dZ
    for i in range(len(w.matrices) - 1, -1, -1):
        h, z = cache[i]
        if i != len(w.matrices) - 1:
            g = g * (z > 0.0)  # ReLU subgradient at 0 is 0
        if need_weights:
            grads_W.append(g.T @ h)
            grads_b.append(g.sum(axis=0))
        g = g @ w.matrices[i]
    return g, Weights(grads_W[::-1], grads_b[::-1]) if need_weights else None


def _softmax(Z: np.ndarray) -> np.ndarray:
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    rows = np.arange(len(Y))
    d = Z - Z[rows, Y][:, None]
    d[rows, Y] = -np.inf
    top = d.max(axis=1)
    # log(1 + sum exp(d)) without cancellation when the label already dominates
    shift = np.maximum(top, 0.0)
    return shift + np.log(np.exp(-shift) + np.exp(d - shift[:, None]).sum(axis=1))


def _dloss_dlogits(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    rows = np.arange(len(Y))
    G = P.copy()
    G[rows, Y] = 0.0
    G[rows, Y] = -G.sum(axis=1)  # p_y - 1 computed as -(sum of the other probabilities)
    return G


def _labels(spec: ModelSpec, Y, n: int) -> np.ndarray:
    Y = np.broadcast_to(np.asarray(Y, dtype=np.int64), (n,))
    if np.any(Y < 0) or np.any(Y >= spec.num_classes):
        raise ValueError(f"label out of range for {spec.num_classes} classes")
    return Y


def forward(spec: ModelSpec, w: Weights, x) -> Prediction:
    Z, _ = _forward(spec, w, _flatten(spec, x))
    if Z.shape[0] != 1:
        raise ValueError("forward expects a single sample; use predict_proba for batches")
    probs = _softmax(Z)[0]
    return Prediction(Z[0], probs, int(np.argmax(Z[0])))


def predict_proba(spec: ModelSpec, w: Weights, X) -> np.ndarray:
    Z, _ = _forward(spec, w, _flatten(spec, X))
    return _softmax(Z)


def loss(spec: ModelSpec, w: Weights, x, y: int) -> float:
    y = check_label(y, spec.num_classes)
    Z, _ = _forward(spec, w, _flatten(spec, x))
    return float(_cross_entropy(Z, _labels(spec, y, len(Z)))[0])


def input_gradient(spec: ModelSpec, w: Weights, x, y: int) -> np.ndarray:
    """Gradient of the cross-entropy loss with respect to ``x``, same shape as ``x``."""
    x = np.asarray(x, dtype=np.float64)
    X = _flatten(spec, x)
    Y = _labels(spec, y, len(X))
    Z, cache = _forward(spec, w, X)
    dX, _ = _backward(w, cache, _dloss_dlogits(_softmax(Z), Y), need_weights=False)
    return dX.reshape(x.shape)


def logit_gradient(spec: ModelSpec, w: Weights, x, y: int) -> np.ndarray:
    """Gradient of the raw logit ``z_y`` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    X = _flatten(spec, x)
    Y = _labels(spec, y, len(X))
    Z, cache = _forward(spec, w, X)
    dZ = np.zeros_like(Z)
    dZ[np.arange(len(Y)), Y] = 1.0
    dX, _ = _backward(w, cache, dZ, need_weights=False)
    return dX.reshape(x.shape)


def weight_gradient(spec: ModelSpec, w: Weights, x, y) -> Weights:
    """Gradient of the mean loss over the given sample(s) with respect to every parameter."""
    X = _flatten(spec, x)
    Y = _labels(spec, y, len(X))
    Z, cache = _forward(spec, w, X)
    _, grads = _backward(w, cache, _dloss_dlogits(_softmax(Z), Y) / len(X))
    return grads


def init_weights(spec: ModelSpec, seed: int) -> Weights:
    rng = Rng(seed).fork("init")
    sizes = spec.layer_sizes
    mats = [gaussian(rng, (o, i), 0.0, 1.0 / np.sqrt(i)) for i, o in zip(sizes[:-1], sizes[1:])]
    return Weights(mats, [np.zeros(o) for o in sizes[1:]])


def train(spec: ModelSpec, X, Y, lr: float = 0.05, epochs: int = 500, seed: int = 0,
          history: list[float] | None = None) -> Weights:
    """Full-batch gradient descent from a seeded N(0, 1/fan_in) initialisation.

    If ``history`` is given, the mean training loss before each update is appended to it.
    """
    X = _flatten(spec, X)
    Y = np.asarray(Y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(Y) != len(X):
        raise ValueError("X and Y have different lengths")
    if lr <= 0:
        raise ValueError("lr must be positive")
    Y = _labels(spec, Y, len(X))
    w = init_weights(spec, seed)
    for _ in range(epochs):
        Z, cache = _forward(spec, w, X)
        if history is not None:
            history.append(float(_cross_entropy(Z, Y).mean()))
        _, grads = _backward(w, cache, _dloss_dlogits(_softmax(Z), Y) / len(X))
        for W, b, gW, gb in zip(w.matrices, w.biases, grads.matrices, grads.biases):
            W -= lr * gW
            b -= lr * gb
    return w


@dataclass(frozen=True)
class Network:
    """A model bound to its weights and the input shape it explains."""

    spec: ModelSpec
    weights: Weights
    input_shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        shape = tuple(self.input_shape) or (self.spec.input_dim,)
        if int(np.prod(shape)) != self.spec.input_dim:
            raise ValueError(f"input_shape {shape} does not have {self.spec.input_dim} elements")
        object.__setattr__(self, "input_shape", shape)
        self.weights.check(self.spec)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def predict(self, x) -> Prediction:
        return forward(self.spec, self.weights, x)

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.spec, self.weights, X)

    def loss(self, x, y: int) -> float:
        return loss(self.spec, self.weights, x, y)

    def input_gradient(self, x, y: int) -> np.ndarray:
        return input_gradient(self.spec, self.weights, x, y)

    def logit_gradient(self, x, y: int) -> np.ndarray:
        return logit_gradient(self.spec, self.weights, x, y)

    def weight_gradient(self, x, y) -> Weights:
        return weight_gradient(self.spec, self.weights, x, y)


QUADRATURE_RULES = ("midpoint", "right")


def path_gradient_sum(net: Network, x, y: int, baseline, m: int, target: str = "loss",
                      rule: str = "midpoint") -> np.ndarray:
    """Riemann sum of gradients along the straight line from ``baseline`` to ``x``.

    Returns ``(x - baseline) * mean_k grad(baseline + a_k * (x - baseline))`` where
    grad is of the loss (``target="loss"``) or of the label logit. ``rule="right"``
    uses a_k = k/m for k = 1..m; ``rule="midpoint"`` uses a_k = (k - 1/2)/m, which
    costs the same m gradients and converges as O(1/m^2) instead of O(1/m).
    """
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise ValueError(f"shape mismatch: x{x.shape} vs baseline{baseline.shape}")
    if m < 1:
        raise ValueError("m must be >= 1")
    grad_fn = {"loss": input_gradient, "logit": logit_gradient}.get(target)
    if grad_fn is None:
        raise ValueError(f"unknown integrand target {target!r}")
    if rule not in QUADRATURE_RULES:
        raise ValueError(f"unknown quadrature rule {rule!r}; expected one of {QUADRATURE_RULES}")
    diff = x - baseline
    k = np.arange(1, m + 1, dtype=np.float64)
    alphas = (k - 0.5) / m if rule == "midpoint" else k / m
    points = baseline.ravel()[None, :] + alphas[:, None] * diff.ravel()[None, :]
    grads = grad_fn(net.spec, net.weights, points, y)
    return diff * grads.mean(axis=0).reshape(x.shape)


# --- MDL1 files -------------------------------------------------------------


def save_network(net: Network, path) -> None:
    """Write a line-oriented MDL1 header plus one TSR1 file per weight array."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    lines = [
        MDL_MAGIC,
        f"kind {net.spec.kind}",
        f"input_shape {' '.join(map(str, net.input_shape))}",
        f"hidden {' '.join(map(str, net.spec.hidden_dims))}".rstrip(),
        f"classes {net.spec.num_classes}",
    ]
    for i, (W, b) in enumerate(zip(net.weights.matrices, net.weights.biases)):
        wname, bname = f"{stem}.W{i}.tsr", f"{stem}.b{i}.tsr"
        write_tensor(path.parent / wname, W)
        write_tensor(path.parent / bname, b)
        lines.append(f"layer {i} {W.shape[0]} {W.shape[1]} {wname} {bname}")
    path.write_text("\n".join(lines) + "\n")


def load_network(path) -> Network:
    path = Path(path)
    lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != [MDL_MAGIC]:
        raise ValueError(f"{path}: not an MDL1 model header")
    fields: dict[str, list[str]] = {}
    layers = []
    for parts in lines[1:]:
        if parts[0] == "layer":
            layers.append(parts[1:])
        else:
            fields[parts[0]] = parts[1:]
    try:
        input_shape = tuple(int(v) for v in fields["input_shape"])
        spec = ModelSpec(
            kind=fields["kind"][0],
            input_dim=int(np.prod(input_shape)),
            hidden_dims=tuple(int(v) for v in fields.get("hidden", [])),
            num_classes=int(fields["classes"][0]),
        )
    except (KeyError, IndexError) as exc:
        raise ValueError(f"{path}: missing header field {exc}") from None
    mats, biases = [], []
    for parts in sorted(layers, key=lambda p: int(p[0])):
        mats.append(read_tensor(path.parent / parts[3]))
        biases.append(read_tensor(path.parent / parts[4]))
    return Network(spec, Weights(mats, biases), input_shape)


# --- estimator --------------------------------------------------------------


class SoftmaxClassifier(ClassifierMixin, BaseEstimator):
    """Linear-softmax or ReLU-MLP classifier trained by full-batch gradient descent.

    Parameters
    ----------
    kind : {"mlp-relu", "linear-softmax"}
    hidden_dims : tuple of int
        Hidden layer widths; ignored for ``linear-softmax``.
    lr : float
        Gradient-descent step size.
    epochs : int
    seed : int
        Seeds the weight initialisation.

    Attributes
    ----------
    network_ : Network
    classes_ : ndarray
    loss_curve_ : list of float
        Mean training loss before each epoch's update.
    """

    def __init__(self, kind="mlp-relu", hidden_dims=(64, 32), lr=0.05, epochs=500, seed=0):
        self.kind = kind
        self.hidden_dims = hidden_dims
        self.lr = lr
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = check_batch(X)
        y = np.asarray(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        hidden = () if self.kind == "linear-softmax" else tuple(self.hidden_dims)
        spec = ModelSpec(self.kind, int(np.prod(X.shape[1:])), hidden, len(self.classes_))
        self.loss_curve_ = []
        w = train(spec, X, y_idx, lr=self.lr, epochs=self.epochs, seed=self.seed,
                  history=self.loss_curve_)
        self.network_ = Network(spec, w, X.shape[1:])
        self.n_features_in_ = spec.input_dim
        return self

    @classmethod
    def from_network(cls, net: Network) -> "SoftmaxClassifier":
        est = cls(kind=net.spec.kind, hidden_dims=net.spec.hidden_dims)
        est.network_ = net
        est.classes_ = np.arange(net.spec.num_classes)
        est.n_features_in_ = net.spec.input_dim
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(check_batch(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def as_network(model) -> Network:
    """Accept a :class:`Network` or a fitted :class:`SoftmaxClassifier`."""
    if isinstance(model, Network):
        return model
    if isinstance(model, SoftmaxClassifier):
        check_is_fitted(model, "network_")
        return model.network_
    raise TypeError(f"expected a Network or fitted SoftmaxClassifier, got {type(model).__name__}")


__all__ = [
    "KINDS", "ModelSpec", "Weights", "Prediction", "Network", "SoftmaxClassifier",
    "forward", "predict_proba", "loss", "input_gradient", "logit_gradient",
    "weight_gradient", "init_weights", "train", "path_gradient_sum",
    "save_network", "load_network", "as_network",
]
