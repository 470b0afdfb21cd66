"""Shared generators and comparison helpers for the test suite."""

import numpy as np

from probefuse import FeatureBank


def make_random_bank(rng, n=None, with_labels=None):
    """Small random-but-valid bank; optional fields toggled at random."""
    n = int(rng.integers(1, 9)) if n is None else n
    n_taps = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 7)) for _ in range(n_taps)]
    c = int(rng.integers(2, 6))
    feats = [rng.standard_normal((n, d)).astype(np.float32) for d in dims]
    if with_labels is None:
        with_labels = rng.random() < 0.7
    labels = rng.integers(0, c, size=n).astype(np.uint16) if with_labels else None
    preds = None
    if rng.random() < 0.5:
        raw = rng.random((n, c)) + 1e-3
        preds = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
    doms = rng.integers(0, 3, size=n).astype(np.uint16) if rng.random() < 0.5 else None
    return FeatureBank(feats, labels=labels, original_preds=preds,
                       domain_ids=doms, n_classes=c)


def banks_equal(a, b):
    """Field-for-field equality, bit-exact on every array."""
    if a.tap_names != b.tap_names or a.n_classes != b.n_classes:
        return False
    if len(a.features) != len(b.features):
        return False
    for fa, fb in zip(a.features, b.features):
        if fa.dtype != fb.dtype or not np.array_equal(fa, fb):
            return False
    for x, y in ((a.labels, b.labels), (a.original_preds, b.original_preds),
                 (a.domain_ids, b.domain_ids)):
        if (x is None) != (y is None):
            return False
        if x is not None and not np.array_equal(x, y):
            return False
    return True


def random_annotations(rng, n, k, c, sharpness=1.0):
    """Valid N x K x C soft annotation tensor."""
    raw = rng.random((n, k, c)) ** sharpness + 1e-3
    return raw / raw.sum(axis=2, keepdims=True)


def blob_bank(rng, n_per=100, sep=6.0, n_classes=2, dim=2):
    """Well-separated Gaussian blobs, one tap point."""
    centers = np.zeros((n_classes, dim))
    for c in range(n_classes):
        centers[c, c % dim] = sep * c
    labels = np.repeat(np.arange(n_classes), n_per)
    X = centers[labels] + rng.standard_normal((labels.size, dim))
    return FeatureBank([X.astype(np.float32)], labels=labels.astype(np.uint16),
                       n_classes=n_classes)
