"""Dataset ingestion and client partitioning.

Two sources: MNIST-style IDX files (parsed bit-exactly, pixels scaled to
[0, 1] by /255) and a synthetic Gaussian-blob generator used for
desk-scale runs.  Partitioning supports an equal IID split, a
class-balanced split, and Dirichlet label skew for heterogeneous
populations (smaller alpha = more skew).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

PARTITION_SCHEMES = ("iid-equal", "dirichlet", "class-balanced")
_MAX_DIRICHLET_REDRAWS = 100


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix (num_samples x input_dim) with integer labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"label count {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's shard: unique row indices into a parent dataset."""

    client_id: int
    parent: LabeledDataset
    indices: np.ndarray

    def __post_init__(self) -> None:
        if self.indices.size == 0:
            raise ValueError(f"client {self.client_id} has an empty shard")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError(f"client {self.client_id} has duplicate sample indices")

    def __len__(self) -> int:
        return self.indices.size

    @property
    def features(self) -> np.ndarray:
        return self.parent.features[self.indices]

    @property
    def labels(self) -> np.ndarray:
        return self.parent.labels[self.indices]

    @property
    def class_count(self) -> int:
        return self.parent.class_count


@dataclass(frozen=True)
class PartitionPlan:
    """How to split a dataset across clients."""

    scheme: str
    client_count: int
    seed: int | None = None
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.scheme not in PARTITION_SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r} (known: {PARTITION_SCHEMES})")
        if self.client_count < 1:
            raise ValueError(f"client_count must be >= 1, got {self.client_count}")
        if self.scheme == "dirichlet":
            if self.alpha is None or not (self.alpha > 0):
                raise ValueError(f"dirichlet scheme needs alpha > 0, got {self.alpha}")


def _read_be32(blob: bytes, offset: int, path: str) -> int:
    if len(blob) < offset + 4:
        raise IdxFormatError(f"{path}: truncated header", len(blob))
    return int.from_bytes(blob[offset : offset + 4], "big")


def load_idx(images_path: str, labels_path: str) -> LabeledDataset:
    """Parse an IDX image/label file pair into a flat float dataset.

    Big-endian layout: images are magic 0x00000803, count, rows, cols,
    then unsigned bytes; labels are magic 0x00000801, count, then
    unsigned bytes.  Pixels are scaled to [0, 1] by /255 and sample
    order is preserved from the file.
    """
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lbl_blob = fh.read()

    magic = _read_be32(img_blob, 0, images_path)
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}", 0
        )
    count = _read_be32(img_blob, 4, images_path)
    rows = _read_be32(img_blob, 8, images_path)
    cols = _read_be32(img_blob, 12, images_path)
    expected = 16 + count * rows * cols
    if len(img_blob) != expected:
        raise IdxFormatError(
            f"{images_path}: expected {expected} bytes for {count} images "
            f"of {rows}x{cols}, file has {len(img_blob)}",
            min(len(img_blob), expected),
        )

    magic = _read_be32(lbl_blob, 0, labels_path)
    if magic != LABELS_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}", 0
        )
    label_count = _read_be32(lbl_blob, 4, labels_path)
    if len(lbl_blob) != 8 + label_count:
        raise IdxFormatError(
            f"{labels_path}: expected {8 + label_count} bytes for {label_count} labels, "
            f"file has {len(lbl_blob)}",
            min(len(lbl_blob), 8 + label_count),
        )
    if label_count != count:
        raise IdxFormatError(
            f"{labels_path}: {label_count} labels for {count} images in {images_path}", 4
        )

    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(np.int64)
    return LabeledDataset(features, labels, class_count=int(labels.max()) + 1)


def synth_blobs(
    class_count: int, per_class: int, input_dim: int, separation: float, seed: int
) -> LabeledDataset:
    """Gaussian blobs: class c is N(separation * e_{c mod input_dim}, I).

    Samples are emitted in class order (all of class 0, then class 1,
    ...), deterministically in ``seed``.
    """
    if class_count < 1 or per_class < 1 or input_dim < 1:
        raise ValueError("class_count, per_class and input_dim must all be positive")
    if not (np.isfinite(separation) and separation >= 0):
        raise ValueError(f"separation must be finite and >= 0, got {separation}")
    rng = make_rng(seed, "synth-blobs")
    blocks = []
    for c in range(class_count):
        center = np.zeros(input_dim)
        center[c % input_dim] = separation
        blocks.append(center + rng.standard_normal((per_class, input_dim)))
    features = np.concatenate(blocks)
    labels = np.repeat(np.arange(class_count, dtype=np.int64), per_class)
    return LabeledDataset(features, labels, class_count=class_count)


def _iid_equal(data: LabeledDataset, plan: PartitionPlan) -> list[np.ndarray]:
    per_client = len(data) // plan.client_count
    if per_client == 0:
        raise ValueError(
            f"{len(data)} samples cannot cover {plan.client_count} clients"
        )
    perm = make_rng(plan.seed, "iid-shuffle").permutation(len(data))
    # Leftover samples (N mod K) are dropped so every client holds exactly
    # floor(N/K).
    return [
        np.sort(perm[k * per_client : (k + 1) * per_client])
        for k in range(plan.client_count)
    ]


def _class_balanced(data: LabeledDataset, plan: PartitionPlan) -> list[np.ndarray]:
    per_class = len(data) // (plan.client_count * data.class_count)
    if per_class == 0:
        raise ValueError(
            f"{len(data)} samples cannot give every one of {plan.client_count} clients "
            f"a sample of each of {data.class_count} classes"
        )
    rng = make_rng(plan.seed, "class-balanced")
    shards: list[list[np.ndarray]] = [[] for _ in range(plan.client_count)]
    for c in range(data.class_count):
        class_idx = np.flatnonzero(data.labels == c)
        needed = per_class * plan.client_count
        if class_idx.size < needed:
            raise ValueError(
                f"class-balanced split infeasible: class {c} has {class_idx.size} "
                f"samples, need {needed} ({per_class} per client)"
            )
        shuffled = rng.permutation(class_idx)
        for k in range(plan.client_count):
            shards[k].append(shuffled[k * per_class : (k + 1) * per_class])
    return [np.sort(np.concatenate(parts)) for parts in shards]


def _dirichlet(data: LabeledDataset, plan: PartitionPlan) -> list[np.ndarray]:
    """Label-skewed split.  For each class in ascending order: shuffle its
    indices, draw client proportions from Dirichlet(alpha), and cut the
    shuffled run at floor(cumsum(p) * n).  If any client ends up empty the
    whole draw is redone with the next attempt sub-seed, at most 100 times.
    """
    k = plan.client_count
    for attempt in range(_MAX_DIRICHLET_REDRAWS):
        rng = make_rng(plan.seed, "dirichlet", attempt)
        shards: list[list[np.ndarray]] = [[] for _ in range(k)]
        for c in range(data.class_count):
            class_idx = np.flatnonzero(data.labels == c)
            if class_idx.size == 0:
                continue
            shuffled = rng.permutation(class_idx)
            proportions = rng.dirichlet(np.full(k, plan.alpha))
            cuts = (np.cumsum(proportions)[:-1] * class_idx.size).astype(int)
            for client, part in enumerate(np.split(shuffled, cuts)):
                shards[client].append(part)
        sizes = [sum(p.size for p in parts) for parts in shards]
        if all(s > 0 for s in sizes):
            return [np.sort(np.concatenate(parts)) for parts in shards]
    raise ValueError(
        f"dirichlet split left a client empty in {_MAX_DIRICHLET_REDRAWS} consecutive draws"
    )


def partition(data: LabeledDataset, plan: PartitionPlan) -> list[ClientDataset]:
    """Split ``data`` across ``plan.client_count`` clients.

    Shards are disjoint, every client is nonempty, and the result is a
    deterministic function of (data, plan).
    """
    if len(data) == 0:
        raise ValueError("cannot partition an empty dataset")
    if plan.seed is None:
        raise ValueError("partition seed is unset; resolve it first")
    if plan.scheme == "iid-equal":
        shards = _iid_equal(data, plan)
    elif plan.scheme == "class-balanced":
        shards = _class_balanced(data, plan)
    else:
        shards = _dirichlet(data, plan)
    return [
        ClientDataset(client_id=k, parent=data, indices=idx)
        for k, idx in enumerate(shards)
    ]
