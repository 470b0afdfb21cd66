"""Linear probing classifiers over tap-point features.

Each probe is an affine map plus softmax trained with plain minibatch
gradient descent on (possibly soft) targets.  Feature standardization,
when enabled, is applied during training only and folded back into the
returned weights, so a ProbeModel is always a plain affine map over raw
bank features.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .util import NumericalError, softmax, as_targets

EPS_LOG = 1e-12
ENSEMBLE_MAGIC = b"PRBE1"


class ProbeModel:
    """weights: dim x C, bias: C-vector, tap_index: which tap point this probe reads."""

    def __init__(self, weights, bias, tap_index=0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.tap_index = int(tap_index)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericalError("non-finite probe parameters")

    @property
    def dim(self):
        return self.weights.shape[0]

    @property
    def n_classes(self):
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, dim, n_classes, tap_index=0):
        return cls(np.zeros((dim, n_classes)), np.zeros(n_classes), tap_index)


class ProbeEnsemble:
    """Ordered probes (one per used tap point); K counts the optional original head."""

    def __init__(self, probes, include_original=False):
        self.probes = list(probes)
        self.include_original = bool(include_original)

    @property
    def k(self):
        return len(self.probes) + (1 if self.include_original else 0)


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 40
    batch_size: int = 128
    weight_decay: float = 1e-4
    seed: int = 0
    standardize: bool = True


def probe_forward(model, features):
    """Row-stochastic class probabilities softmax(x W + b)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValueError(f"features shape {X.shape} does not match probe dim {model.dim}")
    return softmax(X @ model.weights + model.bias)


def ce_loss_and_grad(model, features, targets, weight_decay=0.0):
    """Mean soft-target cross-entropy with log-clamp, plus L2 on weights.

    loss = -(1/n) sum_i sum_c T[i,c] log(P[i,c] + eps) + (wd/2)||W||^2.
    Returned gradients are the exact analytic gradients of that loss,
    clamp term included, so they match finite differences to machine
    precision.
    """
    X = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    P = probe_forward(model, X)
    loss = -np.mean(np.sum(T * np.log(P + EPS_LOG), axis=1))
    loss += 0.5 * weight_decay * np.sum(model.weights * model.weights)
    # d loss / d logits, with alpha = P/(P+eps) from the clamp
    alpha = P / (P + EPS_LOG)
    s = np.sum(T * alpha, axis=1, keepdims=True)
    g = (P * s - T * alpha) / n
    grad_w = X.T @ g + weight_decay * model.weights
    grad_b = g.sum(axis=0)
    return loss, grad_w, grad_b


def train_probe(bank, tap_index, labels, cfg):
    """Minibatch gradient descent from a zero-initialized probe.

    labels may be class indices or an n x C row-stochastic target matrix.
    Deterministic given cfg.seed.
    """
    X = np.asarray(bank.features[tap_index], dtype=np.float64)
    T = as_targets(labels, bank.n_classes)
    n, dim = X.shape
    if cfg.standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd < 1e-8, 1.0, sd)
        X = (X - mu) / sd
    model = ProbeModel.zeros(dim, bank.n_classes, tap_index)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, gw, gb = ce_loss_and_grad(model, X[idx], T[idx], cfg.weight_decay)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
            model.weights -= cfg.learning_rate * gw
            model.bias -= cfg.learning_rate * gb
    if cfg.standardize:
        # fold (x - mu)/sd into the affine map so the model reads raw features
        model = ProbeModel(model.weights / sd[:, None],
                           model.bias - (mu / sd) @ model.weights,
                           tap_index)
    return model


def predict_all(ensemble, bank):
    """N x K x C annotation tensor; annotator 0 is the original head when included."""
    slices = []
    if ensemble.include_original:
        if bank.original_preds is None:
            raise ValueError("ensemble includes the original head but the bank"
                             " has no original_preds")
        slices.append(np.asarray(bank.original_preds, dtype=np.float64))
    for probe in ensemble.probes:
        slices.append(probe_forward(probe, bank.features[probe.tap_index]))
    return np.stack(slices, axis=1)


def ensemble_to_json(ensemble):
    """Inspection form: weights as nested arrays (shortest round-trip decimals)."""
    return json.dumps({
        "include_original": ensemble.include_original,
        "probes": [{"tap_index": p.tap_index,
                    "weights": p.weights.tolist(),
                    "bias": p.bias.tolist()} for p in ensemble.probes],
    }, sort_keys=True)


def ensemble_from_json(text):
    doc = json.loads(text)
    probes = [ProbeModel(p["weights"], p["bias"], p["tap_index"])
              for p in doc["probes"]]
    return ProbeEnsemble(probes, doc["include_original"])


def save_ensemble(ensemble, path):
    """Exact-reload binary: magic, length-prefixed JSON header, f64le parameters."""
    header = json.dumps({
        "include_original": ensemble.include_original,
        "probes": [{"tap_index": p.tap_index, "dim": p.dim, "n_classes": p.n_classes}
                   for p in ensemble.probes],
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in ensemble.probes:
            fh.write(np.ascontiguousarray(p.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.bias, dtype="<f8").tobytes())


def load_ensemble(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(ENSEMBLE_MAGIC)] != ENSEMBLE_MAGIC:
        raise ValueError(f"bad magic: expected {ENSEMBLE_MAGIC!r}")
    off = len(ENSEMBLE_MAGIC)
    (hlen,) = struct.unpack("<I", buf[off:off + 4])
    off += 4
    header = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    probes = []
    for spec in header["probes"]:
        dim, c = spec["dim"], spec["n_classes"]
        w = np.frombuffer(buf[off:off + 8 * dim * c], dtype="<f8").reshape(dim, c)
        off += 8 * dim * c
        b = np.frombuffer(buf[off:off + 8 * c], dtype="<f8")
        off += 8 * c
        probes.append(ProbeModel(w, b, spec["tap_index"]))
    if off != len(buf):
        raise ValueError("size mismatch: trailing bytes after probe parameters")
    return ProbeEnsemble(probes, header["include_original"])
