"""Pure-NumPy kernels.

Reference implementations of the hot kernels; the compiled module
``qreplay._core`` mirrors these signatures. All arrays are float64 and
C-contiguous. See :mod:`qreplay.backend` for how the active set is chosen.
"""

import numpy as np


def linear_forward(x, w, b):
    """z = x @ w.T + b for a dense layer with weight rows per output unit."""
    return x @ w.T + b


def relu_forward(z):
    return np.maximum(z, 0.0)


def relu_backward(grad_a, z):
    """Mask the incoming gradient where the pre-activation was <= 0."""
    return np.where(z > 0.0, grad_a, 0.0)


def linear_backward(delta, x, w, want_dx=True):
    """Gradients of a dense layer given upstream delta of shape (n, out).

    Returns (dw, db, dx); dx is None when want_dx is False (first layer).
    """
    dw = delta.T @ x
    db = delta.sum(axis=0)
    dx = delta @ w if want_dx else None
    return dw, db, dx


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits, fused.

    Uses max-shifted softmax so arbitrarily large logits do not overflow.
    Returns (loss, dlogits) where dlogits is the gradient of the *mean*
    loss, i.e. (softmax - onehot) / n.
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    sums = expz.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    losses = np.log(sums[:, 0]) - shifted[rows, labels]
    loss = losses.sum() / n
    dlogits = expz / sums
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def apply_rotation_plan(images, indices, weights):
    """Resample flat images through a precomputed 4-tap bilinear plan.

    images: (n, p); indices/weights: (p, 4). Output pixel o of each image
    is sum_k weights[o, k] * image[indices[o, k]], clipped to [0, 1].
    """
    out = weights[:, 0] * images[:, indices[:, 0]]
    out += weights[:, 1] * images[:, indices[:, 1]]
    out += weights[:, 2] * images[:, indices[:, 2]]
    out += weights[:, 3] * images[:, indices[:, 3]]
    np.clip(out, 0.0, 1.0, out=out)
    return out
