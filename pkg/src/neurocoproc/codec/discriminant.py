"""Linear event and intent classifiers plus the operant rate-threshold map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE = 1e-6


@dataclass(frozen=True)
class LdaModel:
    weight: np.ndarray
    threshold: float
    class_labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "weight", np.array(self.weight, dtype=np.float64))
        if not np.all(np.isfinite(self.weight)) or not np.isfinite(self.threshold):
            raise ValueError("LDA weight and threshold must be finite")
        if len(self.class_labels) != 2:
            raise ValueError("LDA needs exactly two class labels")

    def to_arrays(self, prefix: str = "lda/") -> dict:
        return {
            prefix + "weight": self.weight,
            prefix + "threshold": np.float64(self.threshold),
            prefix + "class_labels": np.asarray(self.class_labels, dtype=np.float64),
        }


def lda_fit(features, labels, ridge: float = RIDGE) -> LdaModel:
    """Two-class Fisher discriminant with a pooled covariance.

    The class ordering is the sorted unique labels; predictions above the
    threshold map to the second label.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be (N, d) with one label per row")
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"LDA needs exactly two classes present, found {classes.size}")
    x0, x1 = x[y == classes[0]], x[y == classes[1]]
    mu0, mu1 = x0.mean(axis=0), x1.mean(axis=0)
    scatter = (x0 - mu0).T @ (x0 - mu0) + (x1 - mu1).T @ (x1 - mu1)
    dof = max(x.shape[0] - 2, 1)
    pooled = scatter / dof + ridge * np.eye(x.shape[1])
    w = np.linalg.solve(pooled, mu1 - mu0)
    threshold = float(w @ (0.5 * (mu0 + mu1)))
    return LdaModel(w, threshold, (classes[0].item(), classes[1].item()))


def lda_predict(model: LdaModel, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    above = x @ model.weight > model.threshold
    return np.where(above, model.class_labels[1], model.class_labels[0])


@dataclass(frozen=True)
class MulticlassModel:
    """One-vs-rest linear scorers; row k of ``weights`` scores class ``classes[k]``."""

    weights: np.ndarray
    biases: np.ndarray
    classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", np.array(self.weights, dtype=np.float64))
        object.__setattr__(self, "biases", np.array(self.biases, dtype=np.float64))
        k = len(self.classes)
        if k < 2:
            raise ValueError("need at least two classes")
        if self.weights.ndim != 2 or self.weights.shape[0] != k or self.biases.shape != (k,):
            raise ValueError("weights must be (k, d) and biases (k,)")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def to_arrays(self, prefix: str = "multiclass/") -> dict:
        return {
            prefix + "weights": self.weights,
            prefix + "biases": self.biases,
            prefix + "classes": np.asarray(self.classes, dtype=np.float64),
        }


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def multiclass_fit(
    features,
    labels,
    n_classes: int | None = None,
    n_iter: int = 500,
    step_size: float = 0.5,
    l2: float = 1e-4,
) -> MulticlassModel:
    """One-vs-rest logistic regression by full-batch gradient descent.

    Features are standardized internally and the scaling is folded back into
    the returned weights, so the model acts on raw features.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be (N, d) with one label per row")
    classes = np.unique(y)
    if n_classes is not None:
        expected = np.arange(n_classes)
        missing = np.setdiff1d(expected, classes)
        if missing.size:
            raise ValueError(f"classes missing from training data: {missing.tolist()}")
        classes = expected
    if classes.size < 2:
        raise ValueError("need at least two classes")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    targets = (y[:, None] == classes[None, :]).astype(np.float64)
    n, d = z.shape
    w = np.zeros((classes.size, d))
    b = np.zeros(classes.size)
    for _ in range(n_iter):
        p = _sigmoid(z @ w.T + b)
        err = (p - targets) / n
        w -= step_size * (err.T @ z + l2 * w)
        b -= step_size * err.sum(axis=0)
    w_raw = w / sd
    b_raw = b - w_raw @ mu
    return MulticlassModel(w_raw, b_raw, tuple(c.item() for c in classes))


def argmax_class(scores) -> int:
    """Index of the highest score (first one on ties)."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def multiclass_predict(model: MulticlassModel, feature):
    """Return (class label, per-class scores in [0, 1]) for one feature vector."""
    x = np.asarray(feature, dtype=np.float64)
    if x.shape != (model.weights.shape[1],):
        raise ValueError(f"feature has shape {x.shape}, expected ({model.weights.shape[1]},)")
    scores = _sigmoid(model.weights @ x + model.biases)
    return model.classes[argmax_class(scores)], scores


def multiclass_predict_batch(model: MulticlassModel, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    idx = np.argmax(x @ model.weights.T + model.biases, axis=1)
    return np.asarray(model.classes)[idx]


def rate_threshold_decode(rate_trace, threshold: float, gain: float) -> np.ndarray:
    """``gain * max(0, rate - threshold)`` per bin."""
    if gain < 0:
        raise ValueError("gain must be >= 0")
    r = np.asarray(rate_trace, dtype=np.float64)
    return gain * np.maximum(0.0, r - threshold)
