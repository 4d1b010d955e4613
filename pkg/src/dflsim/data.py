"""Dataset ingestion, synthesis, and heterogeneous partitioning across clients.

Data goes only to benign clients. The auxiliary split is a stratified holdout
of each client's allocation; it doubles as the client's local test set for
the fairness metrics.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import rng
from .core_learning import Dataset

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed IDX payload; the message carries the failing byte offset."""


class PartitionError(ValueError):
    """Requested partition cannot be satisfied by the dataset."""


@dataclass(frozen=True)
class IID:
    pass


@dataclass(frozen=True)
class Dirichlet:
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("dirichlet alpha must be positive")


@dataclass(frozen=True)
class LabelSkew:
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("label skew h must be at least 1")


HeterogeneityScheme = Union[IID, Dirichlet, LabelSkew]


def scheme_to_json(scheme: HeterogeneityScheme):
    if isinstance(scheme, IID):
        return "iid"
    if isinstance(scheme, Dirichlet):
        return {"dirichlet": {"alpha": scheme.alpha}}
    if isinstance(scheme, LabelSkew):
        return {"label_skew": {"h": scheme.h}}
    raise TypeError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class PartitionPlan:
    """Per-benign-client example indices into the global training dataset."""

    client_indices: tuple
    scheme: HeterogeneityScheme
    seed: int

    def __post_init__(self):
        clients = tuple(tuple(int(i) for i in idx) for idx in self.client_indices)
        seen = set()
        for k, idx in enumerate(clients):
            if not idx:
                raise PartitionError(f"client {k} received no examples")
            dup = seen.intersection(idx)
            if dup:
                raise PartitionError(f"index {min(dup)} assigned to multiple clients")
            seen.update(idx)
        object.__setattr__(self, "client_indices", clients)

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def to_json_dict(self) -> dict:
        return {
            "scheme": scheme_to_json(self.scheme),
            "seed": self.seed,
            "clients": [list(idx) for idx in self.client_indices],
        }


@dataclass(frozen=True)
class AuxiliarySplit:
    """Disjoint train/aux index lists per client, covering each allocation."""

    train_indices: tuple
    aux_indices: tuple
    aux_fraction: float

    def __post_init__(self):
        object.__setattr__(
            self, "train_indices", tuple(tuple(int(i) for i in t) for t in self.train_indices)
        )
        object.__setattr__(
            self, "aux_indices", tuple(tuple(int(i) for i in a) for a in self.aux_indices)
        )


def _read_be_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header at byte {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str, num_classes: int | None = None) -> Dataset:
    """Parse a big-endian IDX image/label file pair into a Dataset.

    Pixels are scaled into [0, 1]. Image and label counts must match.
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lab_buf = f.read()

    magic = _read_be_u32(img_buf, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: unexpected magic 0x{magic:08x} at byte 0, "
            f"want 0x{IDX_IMAGES_MAGIC:08x}"
        )
    count = _read_be_u32(img_buf, 4, images_path)
    rows = _read_be_u32(img_buf, 8, images_path)
    cols = _read_be_u32(img_buf, 12, images_path)
    expected = 16 + count * rows * cols
    if len(img_buf) < expected:
        raise FormatError(
            f"{images_path}: truncated pixel payload at byte {len(img_buf)}, want {expected}"
        )

    lab_magic = _read_be_u32(lab_buf, 0, labels_path)
    if lab_magic != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: unexpected magic 0x{lab_magic:08x} at byte 0, "
            f"want 0x{IDX_LABELS_MAGIC:08x}"
        )
    lab_count = _read_be_u32(lab_buf, 4, labels_path)
    if len(lab_buf) < 8 + lab_count:
        raise FormatError(
            f"{labels_path}: truncated label payload at byte {len(lab_buf)}, "
            f"want {8 + lab_count}"
        )
    if lab_count != count:
        raise FormatError(
            f"image/label count mismatch: {count} images vs {lab_count} labels"
        )

    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(features, labels, num_classes)


def gen_synthetic_blobs(
    num_classes: int,
    feature_dim: int,
    n_per_class: int,
    spread: float,
    seed: int,
    anchor_axes: int = 8,
) -> Dataset:
    """Isotropic Gaussian blobs around fixed per-class means.

    Class c's mean sits on axis c mod A at magnitude (1 + c//A) * 4*spread,
    where A = min(feature_dim, anchor_axes). Every pair of means is separated
    by at least 4*spread; classes beyond the A-th share an axis with an
    earlier class and differ only in magnitude, which keeps many-class
    instances from being trivially separable per axis. A unit magnitude step
    keeps the means distinct in the zero-spread degenerate case.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if feature_dim < 1:
        raise ValueError("feature_dim must be positive")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    if anchor_axes < 1:
        raise ValueError("anchor_axes must be positive")
    step = 4.0 * spread if spread > 0 else 1.0
    axes = min(feature_dim, anchor_axes)
    gen = rng.stream(seed, purpose="synthetic-blobs")
    features = np.empty((num_classes * n_per_class, feature_dim))
    labels = np.empty(num_classes * n_per_class, dtype=np.int64)
    for c in range(num_classes):
        mean = np.zeros(feature_dim)
        mean[c % axes] = (1 + c // axes) * step
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        features[block] = mean + spread * gen.standard_normal((n_per_class, feature_dim))
        labels[block] = c
    return Dataset(features, labels, num_classes)


def _class_index_lists(data: Dataset) -> list:
    return [np.flatnonzero(data.labels == c) for c in range(data.num_classes)]


def partition_iid(data: Dataset, num_clients: int, seed: int) -> PartitionPlan:
    """Equal per-class shards for every client; per-class remainders are dropped."""
    if num_clients < 1:
        raise ValueError("num_clients must be positive")
    gen = rng.stream(seed, purpose="partition-iid")
    assigned = [[] for _ in range(num_clients)]
    for c, idx in enumerate(_class_index_lists(data)):
        if len(idx) < num_clients:
            raise PartitionError(
                f"class {c} has {len(idx)} examples, fewer than {num_clients} clients"
            )
        perm = gen.permutation(idx)
        per = len(idx) // num_clients
        for k in range(num_clients):
            assigned[k].extend(int(i) for i in perm[k * per:(k + 1) * per])
    return PartitionPlan(tuple(tuple(sorted(a)) for a in assigned), IID(), seed)


def partition_label_skew(data: Dataset, num_clients: int, h: int, seed: int) -> PartitionPlan:
    """Give each client exactly h distinct classes with equal samples per class.

    Class-to-client matching is a seeded round-robin over a shuffled class
    multiset in which each class appears ceil(num_clients*h/C) or floor(...)
    times; a class's examples are then split equally among its holders.
    """
    C = data.num_classes
    if h > C:
        raise ValueError(f"h={h} exceeds the number of classes {C}")
    if num_clients < 1:
        raise ValueError("num_clients must be positive")
    total = num_clients * h
    if total < C:
        raise PartitionError(
            f"{num_clients} clients x h={h} slots cannot cover all {C} classes"
        )
    gen = rng.stream(seed, purpose="partition-label-skew")
    base, extra = divmod(total, C)
    class_order = gen.permutation(C)
    copies = {int(c): base + (1 if pos < extra else 0) for pos, c in enumerate(class_order)}
    # Contiguous blocks of identical classes dealt round-robin: a block never
    # exceeds num_clients copies, so no client sees the same class twice.
    slots = [int(c) for c in class_order for _ in range(copies[int(c)])]
    holders = [[] for _ in range(C)]
    client_classes = [set() for _ in range(num_clients)]
    for pos, c in enumerate(slots):
        k = pos % num_clients
        holders[c].append(k)
        client_classes[k].add(c)
    for k, classes in enumerate(client_classes):
        if len(classes) != h:
            raise PartitionError(f"client {k} was assigned {len(classes)} classes, want {h}")

    assigned = [[] for _ in range(num_clients)]
    for c, idx in enumerate(_class_index_lists(data)):
        if not holders[c]:
            continue
        per = len(idx) // len(holders[c])
        if per < 1:
            raise PartitionError(
                f"class {c} has {len(idx)} examples for {len(holders[c])} holders"
            )
        perm = gen.permutation(idx)
        for slot, k in enumerate(holders[c]):
            assigned[k].extend(int(i) for i in perm[slot * per:(slot + 1) * per])
    return PartitionPlan(tuple(tuple(sorted(a)) for a in assigned), LabelSkew(h), seed)


def partition_dirichlet(data: Dataset, num_clients: int, alpha: float, seed: int) -> PartitionPlan:
    """Allocate each class by a symmetric Dirichlet(alpha) draw over clients.

    Counts use largest-remainder rounding so per-class totals are conserved
    exactly; clients left empty are topped up with one example stolen from
    the largest holder.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if num_clients < 1:
        raise ValueError("num_clients must be positive")
    gen = rng.stream(seed, purpose="partition-dirichlet")
    assigned = [[] for _ in range(num_clients)]
    for c, idx in enumerate(_class_index_lists(data)):
        if len(idx) == 0:
            continue
        props = gen.dirichlet(np.full(num_clients, alpha))
        targets = props * len(idx)
        counts = np.floor(targets).astype(np.int64)
        deficit = len(idx) - int(counts.sum())
        order = np.argsort(-(targets - counts), kind="stable")
        counts[order[:deficit]] += 1
        perm = gen.permutation(idx)
        start = 0
        for k in range(num_clients):
            assigned[k].extend(int(i) for i in perm[start:start + counts[k]])
            start += counts[k]

    empties = [k for k in range(num_clients) if not assigned[k]]
    for k in empties:
        donor = max(range(num_clients), key=lambda j: (len(assigned[j]), -j))
        if len(assigned[donor]) < 2:
            raise PartitionError("not enough examples to populate every client")
        assigned[k].append(assigned[donor].pop())
    return PartitionPlan(tuple(tuple(sorted(a)) for a in assigned), Dirichlet(alpha), seed)


def split_auxiliary(
    data: Dataset, plan: PartitionPlan, aux_fraction: float, seed: int
) -> AuxiliarySplit:
    """Class-stratified aux/train holdout of each client's allocation.

    The aux side receives ceil(aux_fraction * n_k) examples (capped so train
    stays nonempty), apportioned across classes by largest remainder. A
    single-example client degenerates to aux == train == that example.
    """
    if not 0 < aux_fraction < 1:
        raise ValueError("aux_fraction must lie strictly between 0 and 1")
    gen = rng.stream(seed, purpose="aux-split")
    train_out, aux_out = [], []
    for k, client_idx in enumerate(plan.client_indices):
        idx = np.asarray(client_idx, dtype=np.int64)
        n_k = len(idx)
        if n_k == 1:
            log.warning(
                "client %d holds a single example; aux and train both reuse it", k
            )
            train_out.append(tuple(idx))
            aux_out.append(tuple(idx))
            continue
        want = min(int(np.ceil(aux_fraction * n_k)), n_k - 1)
        labels = data.labels[idx]
        classes = np.unique(labels)
        targets = np.array([aux_fraction * np.sum(labels == c) for c in classes])
        counts = np.floor(targets).astype(np.int64)
        deficit = want - int(counts.sum())
        order = np.argsort(-(targets - counts), kind="stable")
        pos = 0
        while deficit > 0 and pos < len(order):
            j = order[pos]
            cap = int(np.sum(labels == classes[j]))
            if counts[j] < cap:
                counts[j] += 1
                deficit -= 1
            pos += 1
        aux_k = []
        for j, c in enumerate(classes):
            members = idx[labels == c]
            perm = gen.permutation(members)
            aux_k.extend(int(i) for i in perm[: counts[j]])
        aux_set = set(aux_k)
        train_k = [int(i) for i in idx if int(i) not in aux_set]
        train_out.append(tuple(sorted(train_k)))
        aux_out.append(tuple(sorted(aux_k)))
    return AuxiliarySplit(tuple(train_out), tuple(aux_out), aux_fraction)
