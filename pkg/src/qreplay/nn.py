"""Minimal dense network engine: a fixed MLP + softmax cross-entropy.

Everything is float64 and deterministic. There is no autograd; the
backward pass is written out for this one architecture and checked
against finite differences in the test suite. Heavy array work goes
through :mod:`qreplay.backend`.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import backend

CHECKPOINT_MAGIC = b"QRMLPCK1"


class DimensionMismatch(ValueError):
    """Array shapes disagree with the model's layer dimensions."""


class NonFiniteValue(FloatingPointError):
    """A NaN or Inf showed up where training math requires finite values."""


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


class MlpModel:
    """Parameters of a fully-connected ReLU classifier.

    weights[k] has shape (layer_dims[k+1], layer_dims[k]) — one row per
    output unit — and biases[k] has length layer_dims[k+1]. The last
    layer produces logits (no activation).
    """

    def __init__(self, layer_dims, weights, biases):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ValueError(f"bad layer_dims {layer_dims}")
        if len(weights) != len(biases) or len(weights) != len(self.layer_dims) - 1:
            raise DimensionMismatch("parameter count does not match layer_dims")
        self.weights = [_as_f64(w) for w in weights]
        self.biases = [_as_f64(b) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[k + 1], self.layer_dims[k])
            if w.shape != want:
                raise DimensionMismatch(
                    f"layer {k}: weight shape {w.shape}, expected {want}"
                )
            if b.shape != (self.layer_dims[k + 1],):
                raise DimensionMismatch(
                    f"layer {k}: bias shape {b.shape}, expected "
                    f"({self.layer_dims[k + 1]},)"
                )

    @classmethod
    def init(cls, layer_dims, rng):
        """He-uniform weights (bound sqrt(6/fan_in)), zero biases."""
        weights, biases = [], []
        dims = list(layer_dims)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases)

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return MlpModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def check_finite(self):
        for k in range(self.n_layers):
            if not np.isfinite(self.weights[k]).all() or not np.isfinite(
                self.biases[k]
            ).all():
                raise NonFiniteValue(f"non-finite parameters in layer {k}")

    def allclose(self, other, rtol=0.0, atol=0.0):
        return self.layer_dims == other.layer_dims and all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(
                self.weights + self.biases, other.weights + other.biases
            )
        )


@dataclass
class ForwardTrace:
    """Per-layer tensors cached by forward() so backward() can reuse them.

    activations[k] is the input to layer k (activations[0] is the batch),
    preacts[k] is layer k's pre-activation output; preacts[-1] are the
    logits.
    """

    model: MlpModel
    activations: list
    preacts: list

    @property
    def batch_size(self):
        return self.activations[0].shape[0]

    @property
    def logits(self):
        return self.preacts[-1]


@dataclass
class Gradients:
    """d(loss)/d(parameter), shape-congruent with an MlpModel."""

    weights: list
    biases: list

    def check_finite(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not np.isfinite(w).all() or not np.isfinite(b).all():
                raise NonFiniteValue(f"non-finite gradient in layer {k}")

    @classmethod
    def zeros_like(cls, model):
        return cls(
            [np.zeros_like(w) for w in model.weights],
            [np.zeros_like(b) for b in model.biases],
        )

    def add_scaled(self, other, factor):
        for k in range(len(self.weights)):
            self.weights[k] += factor * other.weights[k]
            self.biases[k] += factor * other.biases[k]


def forward(model, inputs):
    """Run the network on a batch; returns (logits, trace).

    inputs: (n, layer_dims[0]) finite reals.
    """
    x = _as_f64(inputs)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise DimensionMismatch(
            f"layer 0 expects inputs of width {model.layer_dims[0]}, "
            f"got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise NonFiniteValue("non-finite values in the input batch")
    activations = [x]
    preacts = []
    a = x
    last = model.n_layers - 1
    for k in range(model.n_layers):
        z = backend.linear_forward(a, model.weights[k], model.biases[k])
        preacts.append(z)
        if k < last:
            a = backend.relu_forward(z)
            activations.append(a)
    logits = preacts[-1]
    if not np.isfinite(logits).all():
        raise NonFiniteValue("non-finite logits; model has diverged")
    return logits, ForwardTrace(model, activations, preacts)


def _check_labels(logits, labels):
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape != (logits.shape[0],):
        raise DimensionMismatch(
            f"{labels.shape[0]} labels for {logits.shape[0]} logits"
        )
    n_classes = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    return labels


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-shifted."""
    logits = _as_f64(logits)
    labels = _check_labels(logits, labels)
    loss, _ = backend.softmax_xent(logits, labels)
    return float(loss)


def backward(model, trace, labels):
    """Exact gradient of the mean cross-entropy for one traced batch."""
    if trace.model is not model:
        raise ValueError("trace was produced by a different model")
    labels = _check_labels(trace.logits, labels)
    _, delta = backend.softmax_xent(trace.logits, labels)
    grad_w = [None] * model.n_layers
    grad_b = [None] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        dw, db, dx = backend.linear_backward(
            delta, trace.activations[k], model.weights[k], want_dx=(k > 0)
        )
        grad_w[k], grad_b[k] = dw, db
        if k > 0:
            delta = backend.relu_backward(dx, trace.preacts[k - 1])
    return Gradients(grad_w, grad_b)


def backward_weighted_sum(model, traced_batches, weights):
    """Gradient of sum_i weights[i] * cross_entropy(batch_i).

    traced_batches is a list of (trace, labels) pairs; exactly linear in
    the weight vector.
    """
    if len(traced_batches) != len(weights):
        raise ValueError(
            f"{len(traced_batches)} batches but {len(weights)} weights"
        )
    if not traced_batches:
        raise ValueError("no batches to differentiate")
    total = Gradients.zeros_like(model)
    for (trace, labels), w in zip(traced_batches, weights):
        total.add_scaled(backward(model, trace, labels), float(w))
    return total


def sgd_step(model, grads, lr):
    """In-place plain SGD: p <- p - lr * g. Returns the model."""
    if lr < 0:
        raise ValueError(f"negative learning rate {lr}")
    if len(grads.weights) != model.n_layers:
        raise DimensionMismatch("gradient/model layer count mismatch")
    grads.check_finite()
    for k in range(model.n_layers):
        if grads.weights[k].shape != model.weights[k].shape:
            raise DimensionMismatch(f"gradient shape mismatch in layer {k}")
        model.weights[k] -= lr * grads.weights[k]
        model.biases[k] -= lr * grads.biases[k]
    return model


def predict(model, inputs):
    """Argmax class per sample; ties break toward the lowest class index."""
    logits, _ = forward(model, inputs)
    return np.argmax(logits, axis=1)


def accuracy(model, inputs, labels):
    """Fraction of samples whose argmax logit matches the label."""
    inputs = _as_f64(inputs)
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return float(np.mean(predict(model, inputs) == labels))


def numerical_gradient(loss_fn, model, coords, h=1e-4):
    """Central finite differences of loss_fn(model) at selected parameters.

    coords is a list of (layer, kind, flat_index) with kind 'w' or 'b'.
    Restores the model exactly; independent of the analytic backward path.
    """
    out = []
    for layer, kind, idx in coords:
        arr = model.weights[layer] if kind == "w" else model.biases[layer]
        flat = arr.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        hi = loss_fn(model)
        flat[idx] = orig - h
        lo = loss_fn(model)
        flat[idx] = orig
        out.append((hi - lo) / (2.0 * h))
    return np.array(out)


def save_model(path, model):
    """Write a checkpoint: magic, u32 dim count, u32 dims, then per layer
    the weight matrix (row-major float64) followed by the bias vector.
    All integers and floats are little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(model.layer_dims)))
        fh.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        for w, b in zip(model.weights, model.biases):
            fh.write(w.astype("<f8").tobytes(order="C"))
            fh.write(b.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint (magic {magic!r})")
        (ndims,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{ndims}I", fh.read(4 * ndims))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            nbytes = fan_out * fan_in * 8
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise ValueError("truncated checkpoint")
            weights.append(
                np.frombuffer(buf, dtype="<f8").reshape(fan_out, fan_in).copy()
            )
            buf = fh.read(fan_out * 8)
            if len(buf) != fan_out * 8:
                raise ValueError("truncated checkpoint")
            biases.append(np.frombuffer(buf, dtype="<f8").copy())
    return MlpModel(dims, weights, biases)
