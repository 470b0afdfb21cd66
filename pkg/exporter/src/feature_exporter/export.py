"""Image folders -> FBNK1 feature banks via a frozen backbone.

The image root must contain one subdirectory per class.  Rows follow a
deterministic lexicographic traversal of the image paths, recorded in an
``index.json`` sidecar next to the output file.  The bank payload is
written in the FBNK1 container: magic bytes, a length-prefixed sorted-key
JSON manifest, then per-tap row-major float32-LE matrices, u16-LE labels,
optional row-stochastic float32 head predictions, and optional u16-LE
domain ids (never emitted here).
"""

import json
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .backbone import TAP_NAMES, load_backbone, tap_features

MAGIC = b"FBNK1"
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ExportError(ValueError):
    """Raised on invalid export specs or unusable image roots."""


@dataclass
class ExportSpec:
    image_root: str
    output_path: str
    tap_names: list = field(default_factory=lambda: list(TAP_NAMES))
    pool: str = "global-average"
    batch_size: int = 16
    image_size: int = 64
    head_classes: int = None  # None -> the standard 1000-way head
    weights_cache: str = None
    seed: int = 0


def list_images(image_root):
    """(classes, [(relative path, label), ...]) in lexicographic path order."""
    classes = sorted(d for d in os.listdir(image_root)
                     if os.path.isdir(os.path.join(image_root, d)))
    if len(classes) < 2:
        raise ExportError(f"need at least two class folders under {image_root}, "
                          f"found {len(classes)}")
    entries = []
    for label, cls in enumerate(classes):
        cls_dir = os.path.join(image_root, cls)
        for name in sorted(os.listdir(cls_dir)):
            if os.path.isfile(os.path.join(cls_dir, name)):
                entries.append((os.path.join(cls, name), label))
    if not entries:
        raise ExportError(f"no images under {image_root}")
    entries.sort(key=lambda e: e[0])
    return classes, entries


def load_image(path, size):
    """CHW float32 in the backbone's expected normalization."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return arr.transpose(2, 0, 1)


def write_fbnk(path, features, tap_names, labels, n_classes, original_preds=None):
    manifest = json.dumps({
        "n_samples": int(features[0].shape[0]),
        "n_classes": int(n_classes),
        "tap_points": [{"name": nm, "dim": int(f.shape[1])}
                       for nm, f in zip(tap_names, features)],
        "has_labels": True,
        "has_original_preds": original_preds is not None,
        "domain_ids_present": False,
        "dtype": "f32le",
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for f in features:
            fh.write(np.ascontiguousarray(f, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())
        if original_preds is not None:
            fh.write(np.ascontiguousarray(original_preds, dtype="<f4").tobytes())


def export_bank(spec):
    """Run the frozen backbone over an image folder and write an FBNK1 bank.

    Unreadable images are skipped with a warning and counted in the report.
    Returns a summary dict with counts, dims, and the weights' origin.
    """
    if spec.pool != "global-average":
        raise ExportError(f"unsupported pool {spec.pool!r}: only "
                          f"'global-average' is implemented")
    if len(spec.tap_names) != 6:
        raise ExportError(f"tap_names must have exactly 6 slots, "
                          f"got {len(spec.tap_names)}")
    classes, entries = list_images(spec.image_root)
    n_classes = len(classes)

    arrays, kept, skipped = [], [], []
    for rel, label in entries:
        try:
            arrays.append(load_image(os.path.join(spec.image_root, rel),
                                     spec.image_size))
        except OSError as exc:
            warnings.warn(f"skipping unreadable image {rel}: {exc}")
            skipped.append(rel)
            continue
        kept.append((rel, label))
    if not kept:
        raise ExportError(f"no readable images under {spec.image_root}")

    model, origin = load_backbone(spec.weights_cache,
                                  num_classes=spec.head_classes or 1000,
                                  seed=spec.seed)
    per_tap = [[] for _ in range(6)]
    logit_chunks = []
    for start in range(0, len(arrays), spec.batch_size):
        batch = torch.from_numpy(np.stack(arrays[start:start + spec.batch_size]))
        feats, logits = tap_features(model, batch)
        for t, f in enumerate(feats):
            per_tap[t].append(f.numpy())
        logit_chunks.append(logits.numpy())
    dims = [chunks[0].shape[1] for chunks in per_tap]
    for t, chunks in enumerate(per_tap):
        if any(c.shape[1] != dims[t] for c in chunks):
            raise ExportError(f"dim mismatch at tap {spec.tap_names[t]!r}: "
                              f"batches disagree on the feature width")
    features = [np.concatenate(chunks) for chunks in per_tap]
    labels = np.array([label for _, label in kept], dtype=np.uint16)

    original_preds = None
    if model.fc.out_features == n_classes:
        logits = np.concatenate(logit_chunks).astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        original_preds = (e / e.sum(axis=1, keepdims=True)).astype(np.float32)

    out_dir = os.path.dirname(os.path.abspath(spec.output_path))
    os.makedirs(out_dir, exist_ok=True)
    write_fbnk(spec.output_path, features, spec.tap_names, labels, n_classes,
               original_preds)
    index_path = os.path.join(out_dir, "index.json")
    with open(index_path, "w", encoding="utf-8") as fh:
        json.dump({"classes": classes,
                   "images": [{"path": rel, "label": label}
                              for rel, label in kept],
                   "skipped": skipped},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")

    return {"n_images": len(entries),
            "n_exported": len(kept),
            "n_skipped": len(skipped),
            "n_classes": n_classes,
            "tap_dims": dims,
            "has_original_preds": original_preds is not None,
            "weights": origin,
            "output_path": spec.output_path,
            "index_path": index_path}
