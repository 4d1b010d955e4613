"""Objective-oriented reweighting aggregation.

Each client scores every model in its closed neighborhood on its own
auxiliary data (the target performance metric), turns the scores into
normalized aggregation weights via a customized reweighting strategy, and
averages the received parameter vectors with those weights.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core_learning import (
    Dataset,
    ParamVector,
    ShapeError,
    evaluate_accuracy,
    evaluate_mean_loss,
)

#: Sentinel for a non-finite metric evaluation (e.g. a diverged model's loss).
SENTINEL = math.inf

WEIGHT_SUM_TOL = 1e-9


class TargetMetricKind(enum.Enum):
    ACCURACY_ON_AUX = "accuracy"
    LOSS_ON_AUX = "loss"


@dataclass(frozen=True)
class TempSoftmax:
    """Temperature-scaled softmax: smaller temperature sharpens the weights."""

    temperature: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class LossClip:
    """Zero-weight any metric above the neighborhood mean, then normalize."""


@dataclass(frozen=True)
class AccClip:
    """Zero-weight any metric below the neighborhood mean, then normalize."""


CRSKind = Union[TempSoftmax, LossClip, AccClip]


@dataclass(frozen=True)
class MetricVector:
    """Per-node metric values over a client's closed neighborhood."""

    ids: tuple
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1).copy()
        if len(ids) != vals.shape[0]:
            raise ValueError("ids and values must have equal length")
        if len(ids) == 0:
            raise ValueError("metric vector must be nonempty")
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be distinct")
        if np.any(np.isnan(vals)) or np.any(vals == -math.inf):
            raise ValueError("metric values must be finite or the +inf sentinel")
        vals.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative aggregation weights summing to one over the same id set."""

    ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1).copy()
        if len(ids) != w.shape[0]:
            raise ValueError("ids and weights must have equal length")
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be distinct")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "weights", w)

    def weight_of(self, node_id: int) -> float:
        """Weight for node_id; implicitly 0 outside the neighborhood."""
        try:
            return float(self.weights[self.ids.index(node_id)])
        except ValueError:
            return 0.0


def compute_tpm(kind: TargetMetricKind, model: ParamVector, aux: Dataset) -> float:
    """Score a model on the auxiliary set; non-finite values become +inf."""
    if kind is TargetMetricKind.ACCURACY_ON_AUX:
        value = evaluate_accuracy(model, aux)
    elif kind is TargetMetricKind.LOSS_ON_AUX:
        value = evaluate_mean_loss(model, aux)
    else:
        raise TypeError(f"unknown metric kind {kind!r}")
    return value if math.isfinite(value) else SENTINEL


def crs_temp_softmax(metrics: MetricVector, temperature: float) -> WeightVector:
    """softmax(m_i / T) with max-subtraction."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if np.any(np.isinf(metrics.values)):
        raise ValueError("temp-softmax reweighting requires finite metrics")
    z = metrics.values / temperature
    exp = np.exp(z - z.max())
    return WeightVector(metrics.ids, exp / exp.sum())


def crs_loss_clip(metrics: MetricVector) -> WeightVector:
    """Clip losses above the mean to zero, then normalize the raw survivors.

    The mean excludes sentinel entries, which are always clipped. Survivors
    keep their raw loss value, so among survivors a higher loss receives a
    larger weight; all-zero survivors fall back to uniform weights.
    """
    values = metrics.values
    finite = np.isfinite(values)
    if not finite.any():
        raise ValueError("loss-clip requires at least one finite metric")
    if np.any(values[finite] < 0):
        raise ValueError("loss metrics must be nonnegative")
    mu = float(values[finite].mean())
    survivors = finite & (values <= mu)
    raw = np.where(survivors, values, 0.0)
    total = float(raw.sum())
    if total > 0:
        weights = raw / total
    else:
        weights = survivors / survivors.sum()
    return WeightVector(metrics.ids, weights)


def crs_acc_clip(metrics: MetricVector) -> WeightVector:
    """Clip accuracies below the mean to zero, then normalize the survivors."""
    values = metrics.values
    if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
        raise ValueError("accuracy metrics must be finite and lie in [0, 1]")
    mu = float(values.mean())
    survivors = values >= mu
    raw = np.where(survivors, values, 0.0)
    total = float(raw.sum())
    if total > 0:
        weights = raw / total
    else:
        weights = survivors / survivors.sum()
    return WeightVector(metrics.ids, weights)


def apply_crs(crs: CRSKind, metrics: MetricVector) -> WeightVector:
    if isinstance(crs, TempSoftmax):
        return crs_temp_softmax(metrics, crs.temperature)
    if isinstance(crs, LossClip):
        return crs_loss_clip(metrics)
    if isinstance(crs, AccClip):
        return crs_acc_clip(metrics)
    raise TypeError(f"unknown reweighting strategy {crs!r}")


def reweight_aggregate(models: list, weights: WeightVector) -> ParamVector:
    """Weighted sum of parameter vectors; zero-weight entries are skipped.

    Skipping happens before any arithmetic, so a zero-weight model may be
    non-finite without contaminating the result.
    """
    ids = [int(i) for i, _ in models]
    if set(ids) != set(weights.ids):
        raise ValueError("model ids and weight ids must match")
    if len(set(ids)) != len(ids):
        raise ValueError("model ids must be distinct")
    shape = models[0][1].shape
    acc = None
    for node_id, model in models:
        if model.shape != shape:
            raise ShapeError(f"model shape {model.shape} differs from {shape}")
        w = weights.weight_of(node_id)
        if w == 0.0:
            continue
        acc = w * model.values if acc is None else acc + w * model.values
    return models[0][1].replace_values(acc)


def dfedreweighting_round_weights(
    kind: TargetMetricKind,
    crs: CRSKind,
    received: list,
    own: tuple,
    aux: Dataset,
) -> WeightVector:
    """Score the closed neighborhood on aux and apply the reweighting strategy.

    This is the composition each client runs every round: received models plus
    its own, evaluated with compute_tpm, reweighted by the CRS.
    """
    members = sorted([own] + list(received), key=lambda pair: pair[0])
    ids = tuple(node_id for node_id, _ in members)
    values = np.array([compute_tpm(kind, model, aux) for _, model in members])
    return apply_crs(crs, MetricVector(ids, values))
