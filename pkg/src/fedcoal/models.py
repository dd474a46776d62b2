"""Differentiable classifiers behind a flat-weight interface.

Every model is a pure function of a flat parameter vector: callers get
weights out, push weights in, and ask for losses or gradients.  The
local trainer runs plain mini-batch SGD on softmax cross-entropy, with
batch order drawn from a seeded per-(round, client) stream so that a
whole federated run is a deterministic function of its seeds.

Supported kinds:

* ``logistic`` - linear softmax classifier.
* ``mlp`` - fully connected ReLU net with configurable hidden widths.
* ``cnn-reference`` - a documented reference configuration (two 5x5
  conv layers with 32/64 channels, each followed by 2x2 max-pooling,
  then dense layers of 512 and class-count units).  It is accepted by
  ``ModelSpec`` for config round-tripping but ``init_model`` rejects it:
  convolution is out of scope for the desk-scale simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .paramvec import ParamVector, ShapeDescriptor, flatten
from .rng import make_rng

MODEL_KINDS = ("logistic", "mlp", "cnn-reference")
TRAINABLE_KINDS = ("logistic", "mlp")


class SampleSet(Protocol):
    """Anything exposing a feature matrix and integer label vector."""

    @property
    def features(self) -> np.ndarray: ...

    @property
    def labels(self) -> np.ndarray: ...


class TrainingDiverged(RuntimeError):
    """Raised when a local update produces a non-finite gradient or loss."""

    def __init__(self, client_id: int, epoch: int, batch_index: int):
        super().__init__(
            f"training diverged (non-finite gradient) at client {client_id}, "
            f"epoch {epoch}, batch {batch_index}"
        )
        self.client_id = client_id
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass(frozen=True)
class ModelSpec:
    """Architecture plus init seed; equal specs build bit-identical models."""

    kind: str
    input_dim: int
    class_count: int
    hidden_dims: tuple[int, ...] = ()
    init_seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unsupported kind: {self.kind!r} (known: {MODEL_KINDS})")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.kind == "mlp" and not self.hidden_dims:
            raise ValueError("mlp kind requires at least one hidden dim")

    @property
    def dim(self) -> int:
        return shape_descriptor(self).dim


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD settings for one client update.

    ``shared_shuffle`` is a test-harness override: when set, every client
    draws from the same shuffle stream, forcing identical trajectories on
    identical data (used by the degenerate-collapse checks).
    """

    local_epochs: int = 5
    batch_size: int = 10
    learning_rate: float = 0.01
    shuffle_seed: int | None = None
    shared_shuffle: bool = False

    def __post_init__(self) -> None:
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate >= 0.0 and np.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")


def _layer_dims(spec: ModelSpec) -> list[tuple[int, int]]:
    """(fan_in, fan_out) per dense layer, input to output."""
    widths = [spec.input_dim, *spec.hidden_dims, spec.class_count]
    return list(zip(widths[:-1], widths[1:]))


def shape_descriptor(spec: ModelSpec) -> ShapeDescriptor:
    """Tensor layout of the flat vector for this architecture."""
    if spec.kind not in TRAINABLE_KINDS:
        raise ValueError(f"unsupported kind: {spec.kind!r} (no dense layout)")
    tensors: list[tuple[str, tuple[int, ...]]] = []
    for i, (fan_in, fan_out) in enumerate(_layer_dims(spec)):
        tensors.append((f"w{i}", (fan_in, fan_out)))
        tensors.append((f"b{i}", (fan_out,)))
    return ShapeDescriptor(tuple(tensors))


def init_model(spec: ModelSpec) -> ParamVector:
    """Initial flat weights: uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) per
    weight tensor from a per-tensor named stream, biases zero."""
    if spec.kind not in TRAINABLE_KINDS:
        raise ValueError(f"unsupported kind: {spec.kind!r}")
    if spec.init_seed is None:
        raise ValueError("init_seed is unset; resolve it before building the model")
    shape = shape_descriptor(spec)
    weights: dict[str, np.ndarray] = {}
    for name, extents in shape.tensors:
        if name.startswith("b"):
            weights[name] = np.zeros(extents, dtype=np.float64)
        else:
            fan_in = extents[0]
            bound = np.sqrt(1.0 / fan_in)
            rng = make_rng(spec.init_seed, f"init:{name}")
            weights[name] = rng.uniform(-bound, bound, size=extents)
    return flatten(weights, shape)


def _split_layers(w: ParamVector, spec: ModelSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (W, b) pairs."""
    dims = _layer_dims(spec)
    expected = sum(fi * fo + fo for fi, fo in dims)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size != expected:
        raise ValueError(f"dimension mismatch: weights have dim {w.size}, spec needs {expected}")
    layers = []
    offset = 0
    for fan_in, fan_out in dims:
        mat = w[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = w[offset : offset + fan_out]
        offset += fan_out
        layers.append((mat, bias))
    return layers


def _forward(
    layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Return (logits, pre-activations, post-activations) for backprop."""
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = [x]
    act = x
    for i, (mat, bias) in enumerate(layers):
        z = act @ mat + bias
        pre.append(z)
        if i < len(layers) - 1:
            act = np.maximum(z, 0.0)
            post.append(act)
    return pre[-1], pre, post


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_accuracy(w: ParamVector, spec: ModelSpec, data: SampleSet) -> tuple[float, float]:
    """Mean softmax cross-entropy and argmax accuracy over ``data``.

    Prediction ties resolve to the lowest class index.
    """
    x = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    layers = _split_layers(w, spec)
    logits, _, _ = _forward(layers, x)
    logp = _log_softmax(logits)
    loss = float(-np.mean(logp[np.arange(y.size), y]))
    predictions = np.argmax(logits, axis=1)  # first max -> lowest class on ties
    accuracy = float(np.mean(predictions == y))
    return loss, accuracy


def gradient(
    w: ParamVector, spec: ModelSpec, features: np.ndarray, labels: np.ndarray
) -> ParamVector:
    """Analytic gradient of mean cross-entropy over the batch, same dim as w."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"batch features must be (n, {spec.input_dim}), got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("gradient over an empty batch")
    layers = _split_layers(w, spec)
    logits, pre, post = _forward(layers, x)

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(y.size), y] -= 1.0
    delta /= x.shape[0]

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        grad_w = post[i].T @ delta
        grad_b = delta.sum(axis=0)
        grads.append(grad_b)
        grads.append(grad_w.reshape(-1))
        if i > 0:
            delta = delta @ layers[i][0].T
            delta *= pre[i - 1] > 0.0
    grads.reverse()
    return np.concatenate(grads)


def client_update(
    w_global: ParamVector,
    spec: ModelSpec,
    data: SampleSet,
    cfg: TrainConfig,
    round_index: int = 0,
) -> ParamVector:
    """Local training: copy the global weights, run ``cfg.local_epochs`` of
    mini-batch SGD over the client's shard, return the updated vector.

    Batch order is a fresh seeded shuffle per epoch, with the stream keyed
    on (shuffle_seed, round_index, client id); the final short batch is
    kept.  The input vector is never modified.
    """
    if cfg.shuffle_seed is None:
        raise ValueError("shuffle_seed is unset; resolve it before training")
    x = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    client_id = int(getattr(data, "client_id", 0))
    seed_scope = 0 if cfg.shared_shuffle else client_id
    rng = make_rng(cfg.shuffle_seed, "client-shuffle", round_index, seed_scope)

    w = np.array(w_global, dtype=np.float64, copy=True)
    for epoch in range(cfg.local_epochs):
        order = rng.permutation(x.shape[0])
        for batch_index, start in enumerate(range(0, x.shape[0], cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            grad = gradient(w, spec, x[batch], y[batch])
            if not np.isfinite(grad).all():
                raise TrainingDiverged(client_id, epoch, batch_index)
            w = w - cfg.learning_rate * grad
    if not np.isfinite(w).all():
        raise TrainingDiverged(client_id, cfg.local_epochs - 1, -1)
    return w
