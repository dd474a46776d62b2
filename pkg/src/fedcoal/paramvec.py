"""Order-deterministic algebra on flat model-parameter vectors.

A parameter vector is a 1-D float64 numpy array holding a model's full
weight set.  All reductions here run in a fixed left-to-right order (no
pairwise or parallel re-association), because distances and means drive
discrete grouping decisions downstream and must be bit-stable across
runs and thread schedules.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

# 1-D float64 array; use as_paramvec() to validate external input.
ParamVector = np.ndarray


def as_paramvec(values: Sequence[float] | np.ndarray) -> ParamVector:
    """Coerce to a validated 1-D float64 vector (copying if needed)."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {vec.shape}")
    if vec.size == 0:
        raise ValueError("parameter vector must be nonempty")
    if not np.isfinite(vec).all():
        raise ValueError("parameter vector contains non-finite entries")
    return vec


def euclidean_distance(a: ParamVector, b: ParamVector) -> float:
    """Straight-line distance sqrt(sum_i (a_i - b_i)^2) between two vectors.

    The squared differences are accumulated strictly left to right.
    Symmetric, and exactly 0.0 iff the vectors are elementwise equal.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(
            f"dimension mismatch: left has dim {a.size} (shape {a.shape}), "
            f"right has dim {b.size} (shape {b.shape})"
        )
    squared = np.square(a - b)
    # cumsum is a sequential prefix scan: its last entry is the exact
    # left-to-right running total.
    total = float(np.cumsum(squared)[-1])
    result = math.sqrt(total)
    if not math.isfinite(result):
        raise ValueError("euclidean_distance produced a non-finite value")
    return result


def barycenter(vectors: Sequence[ParamVector]) -> ParamVector:
    """Elementwise arithmetic mean of the given vectors, in list order.

    Computed as ``v0 + mean(v_i - v0)`` with a left-to-right accumulation
    of the offsets.  Anchoring on the first vector makes the mean of m
    identical vectors return that vector bit-exactly, so an all-equal
    client population is a true fixed point of every aggregation path.
    """
    if len(vectors) == 0:
        raise ValueError("barycenter of empty coalition")
    first = np.asarray(vectors[0], dtype=np.float64)
    if first.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {first.shape}")
    acc = np.zeros_like(first)
    for i, vec in enumerate(vectors):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != first.shape:
            raise ValueError(
                f"dimension mismatch: vector 0 has dim {first.size}, "
                f"vector {i} has dim {vec.size}"
            )
        acc += vec - first
    result = first + acc / len(vectors)
    if not np.isfinite(result).all():
        raise ValueError("barycenter produced non-finite entries")
    return result


@dataclass(frozen=True)
class ShapeDescriptor:
    """Ordered list of (tensor name, extents) bridging structured weights
    and flat parameter vectors.  The order is fixed and identical for
    flatten and unflatten."""

    tensors: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        if not self.tensors:
            raise ValueError("shape descriptor must list at least one tensor")
        names = [name for name, _ in self.tensors]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate tensor names in descriptor: {names}")
        for name, extents in self.tensors:
            if not extents or any(int(e) < 1 for e in extents):
                raise ValueError(f"tensor {name!r} has non-positive extents {extents}")

    @property
    def dim(self) -> int:
        """Total element count of a vector flattened against this descriptor."""
        total = 0
        for _, extents in self.tensors:
            total += math.prod(extents)
        return total


def flatten(weights: Mapping[str, np.ndarray], shape: ShapeDescriptor) -> ParamVector:
    """Concatenate the named tensors into one flat vector, in descriptor order."""
    missing = [name for name, _ in shape.tensors if name not in weights]
    if missing:
        raise ValueError(f"missing tensors for flatten: {missing}")
    chunks = []
    for name, extents in shape.tensors:
        arr = np.asarray(weights[name], dtype=np.float64)
        if arr.shape != tuple(extents):
            raise ValueError(
                f"tensor {name!r} has shape {arr.shape}, descriptor says {tuple(extents)}"
            )
        chunks.append(arr.reshape(-1))
    return np.concatenate(chunks)


def unflatten(vec: ParamVector, shape: ShapeDescriptor) -> dict[str, np.ndarray]:
    """Split a flat vector back into named tensors.  Inverse of flatten."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.size != shape.dim:
        raise ValueError(
            f"element count mismatch: vector has {vec.size}, descriptor needs {shape.dim}"
        )
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name, extents in shape.tensors:
        count = math.prod(extents)
        out[name] = vec[offset : offset + count].reshape(extents).copy()
        offset += count
    return out
