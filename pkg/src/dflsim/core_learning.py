"""Softmax-regression model: prediction, cross-entropy loss, analytic gradients, SGD.

All operations are pure functions of their inputs. Parameters live in a flat
float64 vector interpreted as a C x d weight matrix followed by a length-C
bias, so model exchange and aggregation reduce to vector arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probabilities are clamped here before any log, so a confident misprediction
# yields a large finite loss instead of inf/NaN.
PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operands disagree on parameter or feature dimensions."""


@dataclass(frozen=True)
class ParamVector:
    """Flat model parameters with (num_classes, feature_dim) shape metadata.

    Layout: row-major C x d weight matrix, then C biases. Value semantics:
    operations return new vectors and never mutate their inputs.
    """

    values: np.ndarray
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1).copy()
        expected = self.num_classes * self.feature_dim + self.num_classes
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ValueError("num_classes and feature_dim must be positive")
        if vals.shape[0] != expected:
            raise ShapeError(
                f"parameter vector has length {vals.shape[0]}, "
                f"expected C*d+C = {expected} for C={self.num_classes}, d={self.feature_dim}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, num_classes: int, feature_dim: int) -> "ParamVector":
        return cls(np.zeros(num_classes * feature_dim + num_classes), num_classes, feature_dim)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_classes, self.feature_dim)

    @property
    def weights(self) -> np.ndarray:
        return self.values[: self.num_classes * self.feature_dim].reshape(
            self.num_classes, self.feature_dim
        )

    @property
    def bias(self) -> np.ndarray:
        return self.values[self.num_classes * self.feature_dim:]

    def replace_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.num_classes, self.feature_dim)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def _require_same_shape(a: ParamVector, b: ParamVector) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d), integer labels (n,), and the class count C."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.ndim != 2:
            raise ShapeError("features must be a 2-D (n, d) array")
        if feats.shape[0] == 0:
            raise ValueError("dataset must be nonempty")
        if feats.shape[0] != labs.shape[0]:
            raise ShapeError(
                f"feature/label count mismatch: {feats.shape[0]} vs {labs.shape[0]}"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labs.min() < 0 or labs.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.features[i], int(self.labels[i]))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class Minibatch:
    """Indices into a Dataset; size B with 1 <= B <= len(dataset)."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def validate_for(self, data: Dataset) -> None:
        if len(self) == 0:
            raise ValueError("minibatch must be nonempty")
        if len(self) > len(data):
            raise ValueError("minibatch larger than dataset")
        if self.indices.min() < 0 or self.indices.max() >= len(data):
            raise ValueError("minibatch index out of range")


def _logits(model: ParamVector, features_matrix: np.ndarray) -> np.ndarray:
    return features_matrix @ model.weights.T + model.bias


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_probs(model: ParamVector, features: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(W x + b), max-subtracted for stability."""
    x = np.asarray(features, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.feature_dim:
        raise ShapeError(
            f"feature vector has length {x.shape[0]}, model expects d={model.feature_dim}"
        )
    return _softmax_rows(_logits(model, x[None, :]))[0]


def _batch_mean_loss(model: ParamVector, features: np.ndarray, labels: np.ndarray) -> float:
    probs = _softmax_rows(_logits(model, features))
    p_true = probs[np.arange(labels.shape[0]), labels]
    return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))


def batch_loss(model: ParamVector, data: Dataset, batch: Minibatch) -> float:
    """Mean cross-entropy -log p(label) over the minibatch."""
    batch.validate_for(data)
    if data.num_classes != model.num_classes or data.feature_dim != model.feature_dim:
        raise ShapeError("model and dataset dimensions disagree")
    return _batch_mean_loss(model, data.features[batch.indices], data.labels[batch.indices])


def batch_gradient(model: ParamVector, data: Dataset, batch: Minibatch) -> ParamVector:
    """Analytic gradient of batch_loss w.r.t. all C*d + C parameters."""
    batch.validate_for(data)
    if data.num_classes != model.num_classes or data.feature_dim != model.feature_dim:
        raise ShapeError("model and dataset dimensions disagree")
    X = data.features[batch.indices]
    y = data.labels[batch.indices]
    probs = _softmax_rows(_logits(model, X))
    delta = probs
    delta[np.arange(y.shape[0]), y] -= 1.0
    delta /= y.shape[0]
    grad_w = delta.T @ X
    grad_b = delta.sum(axis=0)
    return ParamVector(
        np.concatenate([grad_w.reshape(-1), grad_b]), model.num_classes, model.feature_dim
    )


def sgd_step(model: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    """One gradient step model - lr * grad; the input model is unchanged."""
    _require_same_shape(model, grad)
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return model.replace_values(model.values - lr * grad.values)


def evaluate_accuracy(model: ParamVector, data: Dataset) -> float:
    """Fraction of argmax-correct examples; argmax ties go to the lowest class."""
    if data.num_classes != model.num_classes or data.feature_dim != model.feature_dim:
        raise ShapeError("model and dataset dimensions disagree")
    preds = np.argmax(_logits(model, data.features), axis=1)
    return float(np.mean(preds == data.labels))


def evaluate_mean_loss(model: ParamVector, data: Dataset) -> float:
    """batch_loss with the whole dataset as one batch."""
    return batch_loss(model, data, Minibatch(np.arange(len(data))))
