"""Feature-bank data model and FBNK1 binary serialization.

A feature bank holds, for each of T tap points, an N x dim matrix of
per-sample features, plus optional labels, original-model predictions,
and domain ids.  The on-disk container (FBNK1) is a single file: magic
bytes, a length-prefixed JSON manifest, then the raw matrices as
row-major little-endian f32, labels/domain ids as u16le.  Floats are
stored in 32 bits and round-trip bit-exactly; downstream arithmetic is
done in double precision.
"""

import json
import struct

import numpy as np

MAGIC = b"FBNK1"
ROW_SUM_TOL = 1e-5


class BankError(ValueError):
    """Raised on any bank invariant or format violation."""


class FeatureBank:
    def __init__(self, features, tap_names=None, labels=None, original_preds=None,
                 domain_ids=None, n_classes=None):
        # features: list of N x dim float32 arrays, one per tap point
        self.features = [np.asarray(f, dtype=np.float32) for f in features]
        if tap_names is None:
            tap_names = [f"tap{t}" for t in range(len(self.features))]
        self.tap_names = list(tap_names)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.uint16)
        self.original_preds = (None if original_preds is None
                               else np.asarray(original_preds, dtype=np.float32))
        self.domain_ids = (None if domain_ids is None
                           else np.asarray(domain_ids, dtype=np.uint16))
        if n_classes is None:
            if self.original_preds is not None:
                n_classes = self.original_preds.shape[1]
            elif self.labels is not None and self.labels.size:
                n_classes = int(self.labels.max()) + 1
            else:
                raise BankError("n_classes not derivable; pass it explicitly")
        self.n_classes = int(n_classes)

    @property
    def n_samples(self):
        return self.features[0].shape[0] if self.features else 0

    @property
    def n_taps(self):
        return len(self.features)

    @property
    def tap_dims(self):
        return [f.shape[1] for f in self.features]

    def manifest(self):
        return {
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "tap_points": [{"name": n, "dim": f.shape[1]}
                           for n, f in zip(self.tap_names, self.features)],
            "has_labels": self.labels is not None,
            "has_original_preds": self.original_preds is not None,
            "domain_ids_present": self.domain_ids is not None,
            "dtype": "f32le",
        }

    def validate(self):
        if not self.features:
            raise BankError("bank has no tap points")
        n = self.n_samples
        if n < 1:
            raise BankError("n_samples must be >= 1")
        if self.n_classes < 2:
            raise BankError("n_classes must be >= 2")
        if len(set(self.tap_names)) != len(self.tap_names):
            raise BankError("tap names must be unique")
        for name, f in zip(self.tap_names, self.features):
            if f.ndim != 2 or f.shape[0] != n:
                raise BankError(f"tap point {name!r}: expected {n} rows, got shape {f.shape}")
            if f.shape[1] < 1:
                raise BankError(f"tap point {name!r}: dim must be >= 1")
            if not np.isfinite(f).all():
                raise BankError(f"tap point {name!r}: NaN/Inf in features")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise BankError(f"labels: expected {n} rows, got shape {self.labels.shape}")
            if self.labels.size and int(self.labels.max()) >= self.n_classes:
                raise BankError("labels out of range")
        if self.original_preds is not None:
            op = self.original_preds
            if op.shape != (n, self.n_classes):
                raise BankError(f"original_preds: expected shape ({n}, {self.n_classes}),"
                                f" got {op.shape}")
            if np.abs(op.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
                raise BankError("original_preds rows must sum to 1")
        if self.domain_ids is not None and self.domain_ids.shape != (n,):
            raise BankError(f"domain_ids: expected {n} rows, got shape {self.domain_ids.shape}")
        return self


def write_bank(bank, path):
    """Serialize a validated bank to the FBNK1 container at path.

    Rejects invalid banks before any bytes are written.
    """
    bank.validate()
    manifest = json.dumps(bank.manifest(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for f in bank.features:
            fh.write(np.ascontiguousarray(f, dtype="<f4").tobytes())
        if bank.labels is not None:
            fh.write(np.ascontiguousarray(bank.labels, dtype="<u2").tobytes())
        if bank.original_preds is not None:
            fh.write(np.ascontiguousarray(bank.original_preds, dtype="<f4").tobytes())
        if bank.domain_ids is not None:
            fh.write(np.ascontiguousarray(bank.domain_ids, dtype="<u2").tobytes())


def _take(buf, offset, nbytes, what):
    if offset + nbytes > len(buf):
        raise BankError(f"size mismatch reading {what}: need {nbytes} bytes at offset "
                        f"{offset}, file has {len(buf)}")
    return buf[offset:offset + nbytes], offset + nbytes


def read_bank(path):
    """Load and re-validate an FBNK1 file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(MAGIC)] != MAGIC:
        raise BankError(f"bad magic: expected {MAGIC!r}, got {buf[:len(MAGIC)]!r}")
    off = len(MAGIC)
    raw, off = _take(buf, off, 4, "manifest length")
    (mlen,) = struct.unpack("<I", raw)
    raw, off = _take(buf, off, mlen, "manifest")
    manifest = json.loads(raw.decode("utf-8"))
    n = manifest["n_samples"]
    c = manifest["n_classes"]
    feats, names = [], []
    for tp in manifest["tap_points"]:
        raw, off = _take(buf, off, 4 * n * tp["dim"], f"tap point {tp['name']!r}")
        feats.append(np.frombuffer(raw, dtype="<f4").reshape(n, tp["dim"]))
        names.append(tp["name"])
    labels = None
    if manifest["has_labels"]:
        raw, off = _take(buf, off, 2 * n, "labels")
        labels = np.frombuffer(raw, dtype="<u2")
    original_preds = None
    if manifest["has_original_preds"]:
        raw, off = _take(buf, off, 4 * n * c, "original_preds")
        original_preds = np.frombuffer(raw, dtype="<f4").reshape(n, c)
    domain_ids = None
    if manifest["domain_ids_present"]:
        raw, off = _take(buf, off, 2 * n, "domain_ids")
        domain_ids = np.frombuffer(raw, dtype="<u2")
    if off != len(buf):
        raise BankError(f"size mismatch: {len(buf) - off} trailing bytes after payload")
    bank = FeatureBank(feats, names, labels=labels, original_preds=original_preds,
                       domain_ids=domain_ids, n_classes=c)
    return bank.validate()


def slice_rows(bank, indices):
    """New bank with rows selected in the given order across all per-sample fields."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise BankError("empty selection")
    n = bank.n_samples
    if indices.min() < 0 or indices.max() >= n:
        raise BankError(f"index out of range [0,{n})")
    return FeatureBank(
        [f[indices] for f in bank.features],
        bank.tap_names,
        labels=None if bank.labels is None else bank.labels[indices],
        original_preds=(None if bank.original_preds is None
                        else bank.original_preds[indices]),
        domain_ids=None if bank.domain_ids is None else bank.domain_ids[indices],
        n_classes=bank.n_classes,
    )
