"""Orchestration: warm-up, aggregate, split, retrain rounds, and inference.

run_pipeline trains one probe per selected tap point on the bank's labels
(warm-up), then iterates: predict with every probe, fuse the predictions,
split the training set by posterior entropy, and retrain each probe
semi-supervised on that split (warm-started).  Rounds stop when the
labeled/unlabeled assignment churn drops below stop_delta or max_rounds
is reached.  Inference fuses the trained probes' predictions on a test
bank with the configured aggregation strategy.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .aggregate import DSConfig, avg_aggregate, ds_aggregate
from .mixmatch import MixMatchConfig, semisup_train_probe
from .probes import ProbeEnsemble, TrainConfig, predict_all, train_probe
from .split import SplitConfig, split_by_entropy

POSTERIORS_MAGIC = b"FPST1"


@dataclass
class PipelineConfig:
    agg_train: str = "softds"
    agg_infer: str = "softds"
    max_rounds: int = 3
    stop_delta: float = 0.02
    split_cfg: SplitConfig = field(default_factory=SplitConfig)
    mixmatch_cfg: MixMatchConfig = field(default_factory=MixMatchConfig)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    ds_cfg: DSConfig = field(default_factory=DSConfig)
    tap_selection: list = None  # None -> all tap points
    include_original: bool = False


class PipelineState:
    def __init__(self, round_, ensemble, split, train_posteriors, history):
        self.round = round_
        self.ensemble = ensemble
        self.split = split
        self.train_posteriors = train_posteriors
        self.history = history


@dataclass
class MetricsReport:
    accuracy: float
    noise_fit: float = None
    per_domain: dict = None

    def to_json_dict(self):
        return {"accuracy": self.accuracy, "noise_fit": self.noise_fit,
                "per_domain": self.per_domain}


def _aggregate(ann, mode, ds_cfg):
    """Returns (posteriors, AggregateResult or None)."""
    if mode == "avg":
        return avg_aggregate(ann), None
    if mode == "softds":
        res = ds_aggregate(ann, ds_cfg)
        return res.posteriors, res
    if mode == "hardds":
        res = ds_aggregate(ann, dataclasses.replace(ds_cfg, hard_inputs=True))
        return res.posteriors, res
    raise ValueError(f"unknown aggregation mode {mode!r}")


def run_pipeline(train_bank, cfg, curve_sink=None):
    """Warm-up plus iterative semi-supervised refinement on one training bank.

    Pass a list as curve_sink to collect per-round, per-probe training curves.
    """
    if train_bank.labels is None:
        raise ValueError("training bank has no labels")
    taps = cfg.tap_selection if cfg.tap_selection is not None else list(range(train_bank.n_taps))
    if not taps:
        raise ValueError("tap_selection is empty")
    labels = train_bank.labels
    probes = [train_probe(train_bank, t, labels,
                          dataclasses.replace(cfg.train_cfg, seed=cfg.train_cfg.seed + 1000 * t))
              for t in taps]
    ensemble = ProbeEnsemble(probes, cfg.include_original)

    history = []
    split = None
    post = None
    prev_mask = None
    rounds_done = 0
    for r in range(cfg.max_rounds):
        ann = predict_all(ensemble, train_bank)
        post, agg_res = _aggregate(ann, cfg.agg_train, cfg.ds_cfg)
        split = split_by_entropy(post, dataclasses.replace(cfg.split_cfg,
                                                           seed=cfg.split_cfg.seed + r))
        entry = {"round": r,
                 "loglik": None if agg_res is None else agg_res.final_loglik,
                 "n_unlabeled": int(split.unlabeled_indices.size)}
        mask = split.unlabeled_mask()
        if prev_mask is not None:
            churn = float(np.mean(mask != prev_mask))
            entry["split_change"] = churn
            if churn < cfg.stop_delta:
                history.append(entry)
                break
        else:
            entry["split_change"] = None
        prev_mask = mask
        if split.labeled_indices.size == 0:
            entry["warning"] = "empty labeled split; round aborted"
            history.append(entry)
            break
        retrained = []
        for p in probes:
            curve = None if curve_sink is None else []
            q = semisup_train_probe(
                p, train_bank, split,
                dataclasses.replace(cfg.mixmatch_cfg,
                                    seed=cfg.mixmatch_cfg.seed + 1000 * p.tap_index + r),
                curve=curve)
            if curve_sink is not None:
                for rec in curve:
                    curve_sink.append(dict(rec, round=r, tap_index=p.tap_index))
            retrained.append(q)
        probes = retrained
        ensemble = ProbeEnsemble(probes, cfg.include_original)
        rounds_done = r + 1
        history.append(entry)
    return PipelineState(rounds_done, ensemble, split, post, history)


def infer(state, test_bank, cfg):
    """(posteriors, hard_labels) on a test bank; ties resolve to the lowest class."""
    for probe in state.ensemble.probes:
        if probe.tap_index >= test_bank.n_taps:
            raise ValueError(f"tap mismatch: probe reads tap {probe.tap_index}, bank has "
                             f"{test_bank.n_taps}")
        if test_bank.features[probe.tap_index].shape[1] != probe.dim:
            raise ValueError(f"tap mismatch: tap {probe.tap_index} dim "
                             f"{test_bank.features[probe.tap_index].shape[1]} != probe dim "
                             f"{probe.dim}")
    ann = predict_all(state.ensemble, test_bank)
    post, _ = _aggregate(ann, cfg.agg_infer, cfg.ds_cfg)
    return post, post.argmax(axis=1)


def evaluate(posteriors, true_labels, noisy_labels=None, flip_mask=None, domain_ids=None):
    """Accuracy, noise-fitting accuracy on flipped samples, per-domain accuracy."""
    pred = np.asarray(posteriors).argmax(axis=1)
    true_labels = np.asarray(true_labels)
    correct = pred == true_labels
    noise_fit = None
    if flip_mask is not None:
        flip_mask = np.asarray(flip_mask, dtype=bool)
        if flip_mask.any():
            noise_fit = float(np.mean(pred[flip_mask] == np.asarray(noisy_labels)[flip_mask]))
        else:
            noise_fit = 0.0
    per_domain = None
    if domain_ids is not None:
        domain_ids = np.asarray(domain_ids)
        per_domain = {str(d): float(correct[domain_ids == d].mean())
                      for d in np.unique(domain_ids)}
    return MetricsReport(float(correct.mean()), noise_fit, per_domain)


def write_posteriors(posteriors, path):
    """f32le matrix with a length-prefixed JSON header."""
    post = np.asarray(posteriors, dtype="<f4")
    header = json.dumps({"n_samples": post.shape[0], "n_classes": post.shape[1],
                         "dtype": "f32le"}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(POSTERIORS_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(post).tobytes())


def read_posteriors(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(POSTERIORS_MAGIC)] != POSTERIORS_MAGIC:
        raise ValueError(f"bad magic: expected {POSTERIORS_MAGIC!r}")
    off = len(POSTERIORS_MAGIC)
    (hlen,) = struct.unpack("<I", buf[off:off + 4])
    off += 4
    header = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    n, c = header["n_samples"], header["n_classes"]
    if len(buf) - off != 4 * n * c:
        raise ValueError("size mismatch in posteriors payload")
    return np.frombuffer(buf[off:], dtype="<f4").reshape(n, c)
