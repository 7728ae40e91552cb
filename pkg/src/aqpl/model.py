"""Small dense classifiers with hand-written gradients and momentum SGD.

Two architectures cover the desk-scale tasks: a linear softmax classifier
and a one-hidden-layer ReLU network. Parameters live in one flat float64
array so the optimizer, gradient checks, and checkpointing stay trivial.
``LinearBinary`` is the separate two-class sign classifier used by the
closed-form analyses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DomainError, Rng


class TrainingError(RuntimeError):
    """Raised when an update cannot proceed (non-finite loss or gradient)."""


class ShapeError(ValueError):
    """Input dimensions do not match the classifier."""


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != d:
        raise ShapeError(f"expected inputs of dimension {d}, got shape {np.asarray(x).shape}")
    return a, single


@dataclass
class Classifier:
    """Flat-parameter classifier: ``linear`` or ``mlp`` (one ReLU hidden layer)."""

    arch: str
    d: int
    n_classes: int
    hidden: int
    theta: np.ndarray

    def __post_init__(self):
        if self.arch not in ("linear", "mlp"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (n_params(self.arch, self.d, self.n_classes, self.hidden),):
            raise ShapeError("parameter count does not match architecture")

    # --- parameter views -------------------------------------------------
    def _linear_views(self):
        d, k = self.d, self.n_classes
        w = self.theta[: d * k].reshape(d, k)
        b = self.theta[d * k :]
        return w, b

    def _mlp_views(self):
        d, k, h = self.d, self.n_classes, self.hidden
        o = 0
        w1 = self.theta[o : o + d * h].reshape(d, h); o += d * h
        b1 = self.theta[o : o + h]; o += h
        w2 = self.theta[o : o + h * k].reshape(h, k); o += h * k
        b2 = self.theta[o : o + k]
        return w1, b1, w2, b2

    def logits(self, x) -> np.ndarray:
        a, single = _as_batch(x, self.d)
        if self.arch == "linear":
            w, b = self._linear_views()
            z = a @ w + b
        else:
            w1, b1, w2, b2 = self._mlp_views()
            hid = np.maximum(a @ w1 + b1, 0.0)
            z = hid @ w2 + b2
        return z[0] if single else z

    def forward(self, x) -> np.ndarray:
        """Softmax class probabilities; rows sum to 1."""
        z = np.atleast_2d(self.logits(x))
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p[0] if np.asarray(x).ndim == 1 else p

    def predict(self, x) -> np.ndarray | int:
        """Argmax class; ties resolve to the lowest class index."""
        z = np.atleast_2d(self.logits(x))
        pred = np.argmax(z, axis=1)
        return int(pred[0]) if np.asarray(x).ndim == 1 else pred

    def copy(self) -> "Classifier":
        return Classifier(self.arch, self.d, self.n_classes, self.hidden, self.theta.copy())

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "d": self.d,
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "theta": self.theta.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "Classifier":
        return Classifier(
            doc["arch"], int(doc["d"]), int(doc["n_classes"]), int(doc["hidden"]),
            np.asarray(doc["theta"], dtype=np.float64),
        )


def n_params(arch: str, d: int, n_classes: int, hidden: int) -> int:
    if arch == "linear":
        return d * n_classes + n_classes
    return d * hidden + hidden + hidden * n_classes + n_classes


def init_classifier(arch: str, d: int, n_classes: int, rng: Rng, hidden: int = 16) -> Classifier:
    """Fan-in-scaled uniform init for weights, zeros for biases."""
    if n_classes < 2 or d < 1:
        raise DomainError("need n_classes >= 2 and d >= 1")
    hidden = hidden if arch == "mlp" else 0
    theta = np.zeros(n_params(arch, d, n_classes, hidden))
    clf = Classifier(arch, d, n_classes, hidden, theta)
    g = rng.substream("init")
    if arch == "linear":
        w, _ = clf._linear_views()
        bound = 1.0 / math.sqrt(d)
        w[...] = (2.0 * g.uniform(w.shape) - 1.0) * bound
    else:
        w1, _, w2, _ = clf._mlp_views()
        w1[...] = (2.0 * g.substream(0).uniform(w1.shape) - 1.0) / math.sqrt(d)
        w2[...] = (2.0 * g.substream(1).uniform(w2.shape) - 1.0) / math.sqrt(hidden)
    return clf


def loss_and_grad(clf: Classifier, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. theta."""
    a = np.asarray(x, dtype=np.float64)
    labels = np.asarray(y, dtype=np.int64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise DomainError("batch must be a non-empty (n, d) array")
    if a.shape[1] != clf.d:
        raise ShapeError(f"expected inputs of dimension {clf.d}, got {a.shape[1]}")
    n = a.shape[0]

    if clf.arch == "linear":
        w, b = clf._linear_views()
        z = a @ w + b
    else:
        w1, b1, w2, b2 = clf._mlp_views()
        pre = a @ w1 + b1
        hid = np.maximum(pre, 0.0)
        z = hid @ w2 + b2

    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))

    p = np.exp(z - zmax)
    p /= p.sum(axis=1, keepdims=True)
    dz = p
    dz[np.arange(n), labels] -= 1.0
    dz /= n

    grad = np.zeros_like(clf.theta)
    gview = Classifier(clf.arch, clf.d, clf.n_classes, clf.hidden, grad)
    if clf.arch == "linear":
        gw, gb = gview._linear_views()
        gw[...] = a.T @ dz
        gb[...] = dz.sum(axis=0)
    else:
        gw1, gb1, gw2, gb2 = gview._mlp_views()
        gw2[...] = hid.T @ dz
        gb2[...] = dz.sum(axis=0)
        dhid = dz @ w2.T
        dhid[pre <= 0.0] = 0.0
        gw1[...] = a.T @ dhid
        gb1[...] = dhid.sum(axis=0)
    return loss, grad


def sgd_step(
    clf: Classifier,
    grad: np.ndarray,
    lr: float,
    momentum: float = 0.0,
    velocity: np.ndarray | None = None,
) -> np.ndarray:
    """One momentum-SGD update in place; returns the new velocity.

    velocity <- momentum * velocity + grad; theta <- theta - lr * velocity.
    """
    if not lr > 0.0:
        raise DomainError(f"lr must be positive, got {lr}")
    if not (0.0 <= momentum < 1.0):
        raise DomainError(f"momentum must be in [0, 1), got {momentum}")
    g = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient; step refused")
    v = g.copy() if velocity is None else momentum * velocity + g
    clf.theta -= lr * v
    return v


@dataclass
class LinearBinary:
    """Two-class sign classifier f(x) = w.x + b; f > 0 means class 1."""

    w: np.ndarray
    b: float = 0.0
    n_classes: int = field(default=2, init=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or not np.all(np.isfinite(self.w)):
            raise DomainError("w must be a finite 1-D vector")
        if float(np.linalg.norm(self.w)) == 0.0:
            raise DomainError("w must be nonzero")

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @property
    def w_norm(self) -> float:
        return float(np.linalg.norm(self.w))

    def decision(self, x) -> np.ndarray | float:
        a, single = _as_batch(x, self.d)
        f = a @ self.w + self.b
        return float(f[0]) if single else f

    def predict(self, x) -> np.ndarray | int:
        f = self.decision(x)
        if np.isscalar(f):
            return int(f > 0.0)
        return (np.asarray(f) > 0.0).astype(np.int64)

    def margin(self, x) -> float:
        """Distance of x from the decision hyperplane."""
        return abs(self.decision(x)) / self.w_norm
