"""FedAvg baseline: the global model is the (optionally size-weighted)
mean of all client weight vectors."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .paramvec import ParamVector

WEIGHTINGS = ("uniform", "by-size")


def fedavg_aggregate(
    weights: Mapping[int, ParamVector],
    sizes: Mapping[int, int] | None = None,
    weighting: str = "uniform",
) -> ParamVector:
    """Average client weights in ascending client-id order.

    ``uniform`` is the simple mean; ``by-size`` weights client i by
    n_i / N.  Computed anchored on the lowest-id client
    (w_0 + sum_i coef_i * (w_i - w_0)) so a population of identical
    vectors aggregates to that vector bit-exactly.
    """
    if not weights:
        raise ValueError("empty client weight map")
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r} (known: {WEIGHTINGS})")
    ids = sorted(weights)
    first = np.asarray(weights[ids[0]], dtype=np.float64)
    for uid in ids:
        if weights[uid].shape != first.shape:
            raise ValueError(
                f"dimension mismatch: client {ids[0]} has dim {first.size}, "
                f"client {uid} has dim {weights[uid].size}"
            )

    if weighting == "by-size":
        if sizes is None:
            raise ValueError("by-size weighting requires client sizes")
        missing = [uid for uid in ids if uid not in sizes]
        if missing:
            raise ValueError(f"missing sizes for clients {missing}")
        if any(sizes[uid] <= 0 for uid in ids):
            raise ValueError("client sizes must be positive")
        total = sum(sizes[uid] for uid in ids)
        coefs = [sizes[uid] / total for uid in ids]
    else:
        coefs = [1.0 / len(ids)] * len(ids)

    acc = np.zeros_like(first)
    for uid, coef in zip(ids, coefs):
        acc += coef * (np.asarray(weights[uid], dtype=np.float64) - first)
    result = first + acc
    if not np.isfinite(result).all():
        raise ValueError("fedavg_aggregate produced non-finite entries")
    return result
