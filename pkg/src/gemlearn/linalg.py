"""Dense kernels and hand-written backward passes for the MLP.

All arrays are float64 numpy arrays. Functions never mutate their inputs.
"""

import numpy as np

from .exceptions import DomainError, ShapeError


def as_matrix(a):
    """Return ``a`` as a 2-D float64 array, raising ShapeError otherwise."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
    return a


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (n, fan_in)."""
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"affine shapes {x.shape}, {w.shape}, {b.shape} do not match")
    return x @ w + b


def affine_backward(x, w, upstream):
    """Gradients of an affine layer.

    Returns ``(dx, dw, db)`` given the layer input ``x``, its weights and the
    gradient flowing into its output.
    """
    if upstream.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(f"upstream shape {upstream.shape} does not match layer output")
    return upstream @ w.T, x.T @ upstream, upstream.sum(axis=0)


def relu(a):
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def relu_backward(a, upstream):
    """Mask ``upstream`` wherever the pre-activation ``a`` is not positive."""
    a = np.asarray(a, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if a.shape != upstream.shape:
        raise ShapeError(f"relu_backward shapes differ: {a.shape} vs {upstream.shape}")
    return np.where(a > 0, upstream, 0.0)


def softmax(logits):
    logits = as_matrix(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns
    -------
    loss : float
    dlogits : ndarray
        Gradient of the mean loss with respect to ``logits``,
        ``(softmax - onehot) / n``.
    """
    logits = as_matrix(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"need one label per row: {labels.shape} labels for {n} rows")
    if n == 0:
        raise DomainError("softmax_xent on an empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise DomainError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.intp)
    rows = np.arange(n)
    top = logits.argmax(axis=1)
    z = logits - logits[rows, top][:, None]
    rest = np.exp(z)
    rest[rows, top] = 0.0
    # log1p over the non-max terms keeps tiny losses (saturated logits) accurate
    log_norm = np.log1p(rest.sum(axis=1))
    loss = float(np.mean(log_norm - z[rows, labels]))
    probs = np.exp(z - log_norm[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / n
