"""Small shared numerics helpers."""

import numpy as np


class NumericalError(ArithmeticError):
    """Non-finite value encountered where the algorithm guarantees finiteness."""


def softmax(z):
    # rows of z -> row-stochastic; stable under large logits
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def as_targets(labels, n_classes):
    """Accept an n-vector of class indices or an n x C row-stochastic matrix."""
    arr = np.asarray(labels)
    if arr.ndim == 1:
        return one_hot(arr, n_classes)
    return np.asarray(arr, dtype=np.float64)
