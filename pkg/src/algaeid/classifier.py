"""Fully-connected feedforward classifier trained from scratch.

Architecture: input, three hidden layers of 12, 8, and 6 units with ReLU,
then a softmax output over the classes. Training is mini-batch SGD on
categorical cross-entropy; everything is driven by a single seed so a
(data, config) pair always reproduces the same network bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .features import ModelVariant, Normalizer
from .stack_io import atomic_write_json

HIDDEN_SIZES = (12, 8, 6)

PROB_FLOOR = 1e-12

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    init_scheme: str = "he-uniform"
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.init_scheme != "he-uniform":
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass
class Network:
    """Layer weights (out x in) and biases; ReLU hidden, softmax output."""

    layer_sizes: tuple
    weights: list
    biases: list

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("network needs at least input and output layers")
        if sizes[-1] < 2:
            raise ValueError("output layer must have >= 2 classes")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ValueError(
                    f"layer {i}: weight shape {w.shape} != {(sizes[i + 1], sizes[i])}"
                )
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
        self.layer_sizes = sizes

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def num_classes(self):
        return self.layer_sizes[-1]

    def copy(self):
        return Network(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def relu(v):
    return np.maximum(0.0, v)


def softmax(z):
    """Normalized exponential along the last axis, computed with max-logit
    subtraction so arbitrarily large logits cannot overflow."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def init_network(input_dim, num_classes, rng, hidden_sizes=HIDDEN_SIZES):
    """He-uniform weights (limit sqrt(6/fan_in)), zero biases."""
    sizes = (int(input_dim),) + tuple(hidden_sizes) + (int(num_classes),)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(layer_sizes=sizes, weights=weights, biases=biases)


def _forward_trace(net, x):
    """Pre-activations and activations for every layer; x is (n, d_in)."""
    zs = []
    activations = [x]
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        zs.append(z)
        a = softmax(z) if i == last else relu(z)
        activations.append(a)
    return zs, activations


def forward_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with d_in={net.input_dim}")
    _, activations = _forward_trace(net, x)
    return activations[-1]

def forward(net, x):
    """Class probabilities for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with d_in={net.input_dim}")
    return forward_batch(net, x[None, :])[0]


def loss(probs, label):
    """Cross-entropy -log p[label], with p floored at 1e-12 before the log."""
    probs = np.asarray(probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def _backward_batch(net, x, labels):
    """Mean gradients over a batch. Softmax and cross-entropy fuse to
    (probs - onehot) at the output pre-activation; the ReLU subgradient at
    exactly 0 is taken as 0."""
    n = x.shape[0]
    zs, activations = _forward_trace(net, x)
    probs = activations[-1]
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ activations[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * (zs[i - 1] > 0)
    return grads_w, grads_b


def backward(net, x, label):
    """Analytic gradients of the cross-entropy loss for one sample with
    respect to every weight matrix and bias vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with d_in={net.input_dim}")
    label = int(label)
    if not 0 <= label < net.num_classes:
        raise ValueError(f"label {label} out of range")
    return _backward_batch(net, x[None, :], np.array([label]))


def train(x, y, variant=None, cfg=None, num_classes=None):
    """Mini-batch SGD for cfg.epochs; returns (network, final mean loss).

    Initialization and per-epoch shuffling derive solely from cfg.seed, so
    identical (data, cfg) produce bitwise-identical weights. When a variant
    is given, the input dimension must match it.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, d) and y (n,) with matching n")
    n, d = x.shape
    if variant is not None and d != variant.input_dim:
        raise ValueError(
            f"{variant.value} variant expects {variant.input_dim} inputs, got {d}"
        )
    present = np.unique(y)
    if len(present) < 2:
        raise ValueError("training data must contain at least 2 classes")
    if y.min() < 0:
        raise ValueError("labels must be non-negative class ids")
    k = int(num_classes) if num_classes is not None else int(y.max()) + 1
    if k <= int(y.max()):
        raise ValueError(f"num_classes={k} too small for labels up to {y.max()}")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training size {n}")

    rng = np.random.default_rng(cfg.seed)
    net = init_network(d, k, rng)
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads_w, grads_b = _backward_batch(net, x[idx], y[idx])
            for i in range(len(net.weights)):
                step = grads_w[i]
                if cfg.l2:
                    step = step + cfg.l2 * net.weights[i]
                net.weights[i] -= lr * step
                net.biases[i] -= lr * grads_b[i]
    probs = forward_batch(net, x)
    p_true = np.maximum(probs[np.arange(n), y], PROB_FLOOR)
    final_loss = float(-np.log(p_true).mean())
    return net, final_loss


def predict(net, x):
    """Most probable class id; exact ties resolve to the smallest id."""
    return int(np.argmax(forward(net, x)))


def predict_batch(net, x):
    return np.argmax(forward_batch(net, x), axis=1)


@dataclass
class TrainedModel:
    """A network bundled with everything inference needs: the variant, the
    feature order it was trained on, the normalizer, and class names."""

    network: Network
    variant: ModelVariant
    normalizer: Normalizer | None = None
    feature_names: tuple = ()
    class_names: tuple = ()

    def predict_features(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.normalizer is not None:
            x = (x - self.normalizer.mean) / self.normalizer.std
        if x.ndim == 1:
            return int(np.argmax(forward(self.network, x)))
        return predict_batch(self.network, x)


def save_model(model, path, extra_fields=None):
    """JSON model file; floats round-trip exactly via repr."""
    net = model.network
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "variant": model.variant.value,
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "feature_names": list(model.feature_names),
        "class_names": list(model.class_names),
        "normalizer": None if model.normalizer is None else {
            "mean": model.normalizer.mean.tolist(),
            "std": model.normalizer.std.tolist(),
            "constant": model.normalizer.constant.tolist(),
        },
    }
    if extra_fields:
        doc.update(extra_fields)
    atomic_write_json(path, doc)


def load_model(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"model file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(
            f"{path}: model schema version {version!r} unsupported "
            f"(expected {MODEL_SCHEMA_VERSION})"
        )
    net = Network(
        layer_sizes=tuple(doc["layer_sizes"]),
        weights=[np.array(w, dtype=np.float64) for w in doc["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in doc["biases"]],
    )
    nrm = None
    if doc.get("normalizer") is not None:
        nd = doc["normalizer"]
        nrm = Normalizer(
            mean=np.array(nd["mean"]), std=np.array(nd["std"]),
            constant=np.array(nd["constant"], dtype=bool),
        )
    return TrainedModel(
        network=net,
        variant=ModelVariant(doc["variant"]),
        normalizer=nrm,
        feature_names=tuple(doc.get("feature_names", ())),
        class_names=tuple(doc.get("class_names", ())),
    )


def with_seed(cfg, seed):
    """Copy of a TrainConfig with a different seed."""
    return replace(cfg, seed=int(seed))
