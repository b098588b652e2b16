"""Differentiable objectives with analytic gradients.

Three substrates: a quadratic (closed-form everything, batch ignored), a
softmax-linear classifier, and a tanh MLP classifier with hand-written
backprop.  Parameter packing orders are frozen below; golden files and
finite-difference checks depend on them.

Packing:

* softmax-linear over ``feature_dim`` inputs and ``classes`` outputs:
  weight matrix W of shape (classes, feature_dim) flattened row-major,
  then the bias vector of length ``classes``.
* MLP with ``layer_dims = (d0, d1, ..., dL)``: for each layer l in order,
  W_l of shape (d_l, d_{l-1}) row-major, then b_l of length d_l.  Hidden
  activations are tanh, the final layer is linear logits.

Objectives are immutable after construction and safe to evaluate from
multiple threads; losses are mean-reduced over the batch with numpy's
deterministic pairwise reduction.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class Batch:
    """A minibatch: inputs (n, feature_dim) and integer class labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("batch inputs must be a non-empty (n, d) matrix")
        if labels.shape != (inputs.shape[0],):
            raise ValueError("labels must be one integer per input row")
        if np.any(labels < 0):
            raise ValueError("labels must be non-negative class indices")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


class Objective(ABC):
    """Deterministic loss/gradient pair over a flat parameter vector."""

    param_dim: int

    @abstractmethod
    def loss(self, theta: np.ndarray, batch: Batch) -> float: ...

    @abstractmethod
    def gradient(self, theta: np.ndarray, batch: Batch) -> np.ndarray: ...

    def _check_theta(self, theta: np.ndarray) -> None:
        if theta.shape != (self.param_dim,):
            raise ValueError(
                f"theta has dimension {theta.shape}, expected ({self.param_dim},)"
            )


class QuadraticObjective(Objective):
    """loss = 0.5 theta'A theta - b'theta; the batch argument is ignored."""

    def __init__(self, mat: np.ndarray, lin: np.ndarray):
        mat = np.asarray(mat, dtype=np.float64)
        lin = np.asarray(lin, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("quadratic matrix must be square")
        if lin.shape != (mat.shape[0],):
            raise ValueError("linear term must match the matrix dimension")
        if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12):
            raise ValueError("quadratic matrix must be symmetric")
        self.mat = mat
        self.lin = lin
        self.param_dim = mat.shape[0]

    def loss(self, theta, batch=None) -> float:
        self._check_theta(theta)
        return float(0.5 * theta @ self.mat @ theta - self.lin @ theta)

    def gradient(self, theta, batch=None) -> np.ndarray:
        self._check_theta(theta)
        return self.mat @ theta - self.lin


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxLinearObjective(Objective):
    """Mean cross-entropy of a linear softmax classifier."""

    def __init__(self, feature_dim: int, classes: int):
        if feature_dim < 1 or classes < 2:
            raise ValueError("need feature_dim >= 1 and classes >= 2")
        self.feature_dim = feature_dim
        self.classes = classes
        self.param_dim = classes * feature_dim + classes

    def _unpack(self, theta):
        w = theta[: self.classes * self.feature_dim].reshape(
            self.classes, self.feature_dim
        )
        b = theta[self.classes * self.feature_dim :]
        return w, b

    def _check_labels(self, batch: Batch) -> None:
        if np.any(batch.labels >= self.classes):
            raise ValueError(
                f"label {int(batch.labels.max())} out of range [0, {self.classes})"
            )

    def predict_logits(self, theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        self._check_theta(theta)
        w, b = self._unpack(theta)
        return inputs @ w.T + b

    def loss(self, theta, batch: Batch) -> float:
        self._check_labels(batch)
        logp = _log_softmax(self.predict_logits(theta, batch.inputs))
        n = batch.size
        return float(-np.add.reduce(logp[np.arange(n), batch.labels]) / n)

    def gradient(self, theta, batch: Batch) -> np.ndarray:
        self._check_theta(theta)
        self._check_labels(batch)
        w, _ = self._unpack(theta)
        n = batch.size
        probs = _softmax(batch.inputs @ w.T + theta[self.classes * self.feature_dim :])
        probs[np.arange(n), batch.labels] -= 1.0
        dlogits = probs / n
        dw = dlogits.T @ batch.inputs
        db = dlogits.sum(axis=0)
        return np.concatenate([dw.ravel(), db])


class MlpObjective(Objective):
    """Tanh MLP with linear logits and mean cross-entropy, manual backprop."""

    def __init__(self, layer_dims):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(d < 1 for d in dims):
            raise ValueError("all layer widths must be >= 1")
        self.layer_dims = dims
        self.classes = dims[-1]
        self._shapes = [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
        self.param_dim = sum(o * i + o for o, i in self._shapes)

    def _unpack(self, theta):
        weights, biases = [], []
        offset = 0
        for out_d, in_d in self._shapes:
            weights.append(theta[offset : offset + out_d * in_d].reshape(out_d, in_d))
            offset += out_d * in_d
            biases.append(theta[offset : offset + out_d])
            offset += out_d
        return weights, biases

    def _check_labels(self, batch: Batch) -> None:
        if np.any(batch.labels >= self.classes):
            raise ValueError(
                f"label {int(batch.labels.max())} out of range [0, {self.classes})"
            )

    def _forward(self, theta, inputs):
        weights, biases = self._unpack(theta)
        acts = [inputs]
        a = inputs
        for l, (w, b) in enumerate(zip(weights, biases)):
            z = a @ w.T + b
            a = z if l == len(weights) - 1 else np.tanh(z)
            acts.append(a)
        return weights, acts

    def predict_logits(self, theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        self._check_theta(theta)
        _, acts = self._forward(theta, inputs)
        return acts[-1]

    def loss(self, theta, batch: Batch) -> float:
        self._check_labels(batch)
        logp = _log_softmax(self.predict_logits(theta, batch.inputs))
        n = batch.size
        return float(-np.add.reduce(logp[np.arange(n), batch.labels]) / n)

    def gradient(self, theta, batch: Batch) -> np.ndarray:
        self._check_theta(theta)
        self._check_labels(batch)
        n = batch.size
        weights, acts = self._forward(theta, batch.inputs)
        delta = _softmax(acts[-1])
        delta[np.arange(n), batch.labels] -= 1.0
        delta /= n
        grads_w = [None] * len(weights)
        grads_b = [None] * len(weights)
        for l in range(len(weights) - 1, -1, -1):
            grads_w[l] = delta.T @ acts[l]
            grads_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ weights[l]) * (1.0 - acts[l] ** 2)
        flat = []
        for gw, gb in zip(grads_w, grads_b):
            flat.append(gw.ravel())
            flat.append(gb)
        return np.concatenate(flat)


def quadratic_objective(mat, lin) -> QuadraticObjective:
    return QuadraticObjective(mat, lin)


def softmax_linear_objective(feature_dim: int, classes: int) -> SoftmaxLinearObjective:
    return SoftmaxLinearObjective(feature_dim, classes)


def mlp_objective(layer_dims) -> MlpObjective:
    return MlpObjective(layer_dims)


def init_params(obj: Objective, rng: Rng, scale: float = 0.1) -> np.ndarray:
    """Gaussian parameter init through the deterministic generator."""
    return scale * rng.normals(obj.param_dim)


def finite_diff_gradient(
    obj: Objective, theta: np.ndarray, batch: Batch, h: float
) -> np.ndarray:
    """Central-difference gradient, the testing ground truth.

    O(2 * param_dim) loss evaluations; independent of every analytic
    gradient path above.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    grad = np.empty(obj.param_dim, dtype=np.float64)
    probe = np.array(theta, dtype=np.float64, copy=True)
    for i in range(obj.param_dim):
        orig = probe[i]
        probe[i] = orig + h
        hi = obj.loss(probe, batch)
        probe[i] = orig - h
        lo = obj.loss(probe, batch)
        probe[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError("non-finite loss in finite differences")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
