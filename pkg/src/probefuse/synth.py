"""Desk-scale synthetic benchmarks.

gen_domains builds a multi-domain feature bank with controllable
class-separability per tap point and a per-domain mean shift, so shallow
taps are weakly discriminative and deep taps strongly so; the last domain
is held out as the test bank.  inject_noise applies symmetric label noise
with a sample-exact flip count.  gen_crowd_instance generates classic
conditionally-independent crowdsourcing instances for validating the
aggregator.
"""

from dataclasses import dataclass, field

import numpy as np

from .bank import FeatureBank
from .split import round_half_up


@dataclass
class SynthConfig:
    n_domains: int = 4
    n_per_domain: int = 1500
    n_classes: int = 7
    n_taps: int = 4
    tap_dims: list = field(default_factory=lambda: [16, 32, 64, 64])
    tap_signal: list = field(default_factory=lambda: [0.55, 0.6, 0.65, 0.7])
    domain_shift_scale: float = 6.0
    seed: int = 0


@dataclass
class NoiseConfig:
    rate: float = 0.25
    seed: int = 0


def gen_domains(cfg):
    """(train_bank, test_bank, (train_true, test_true)) with the last domain held out.

    Per class and tap a unit-Gaussian prototype is drawn once; each domain
    gets a random mean offset of magnitude domain_shift_scale per tap.
    Features are prototype * tap_signal[t] + offset + unit Gaussian noise.
    Class counts are balanced within every domain (round-robin +-1).
    """
    if len(cfg.tap_dims) != cfg.n_taps or len(cfg.tap_signal) != cfg.n_taps:
        raise ValueError("tap_dims and tap_signal must have length n_taps")
    rng = np.random.default_rng(cfg.seed)
    protos = [rng.standard_normal((cfg.n_classes, d)) for d in cfg.tap_dims]
    offsets = []
    for _ in range(cfg.n_domains):
        per_tap = []
        for d in cfg.tap_dims:
            g = rng.standard_normal(d)
            per_tap.append(cfg.domain_shift_scale * g / np.linalg.norm(g))
        offsets.append(per_tap)
    base = np.arange(cfg.n_per_domain) % cfg.n_classes
    domains = []
    for dom in range(cfg.n_domains):
        labels = rng.permutation(base)
        feats = []
        for t, d in enumerate(cfg.tap_dims):
            x = (protos[t][labels] * cfg.tap_signal[t] + offsets[dom][t][None, :]
                 + rng.standard_normal((cfg.n_per_domain, d)))
            feats.append(x.astype(np.float32))
        domains.append((feats, labels))

    n_src = cfg.n_domains - 1
    train_feats = [np.concatenate([domains[d][0][t] for d in range(n_src)])
                   for t in range(cfg.n_taps)]
    train_labels = np.concatenate([domains[d][1] for d in range(n_src)])
    train_dom = np.concatenate([np.full(cfg.n_per_domain, d, dtype=np.uint16)
                                for d in range(n_src)])
    test_feats, test_labels = domains[-1]
    train_bank = FeatureBank(train_feats, labels=train_labels, domain_ids=train_dom,
                             n_classes=cfg.n_classes).validate()
    test_bank = FeatureBank(test_feats, labels=test_labels,
                            domain_ids=np.full(cfg.n_per_domain, n_src, dtype=np.uint16),
                            n_classes=cfg.n_classes).validate()
    return train_bank, test_bank, (train_labels.copy(), test_labels.copy())


def inject_noise(labels, n_classes, cfg):
    """Flip exactly round(rate*N) labels to a uniformly drawn different class."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_flip = round_half_up(cfg.rate * n)
    if n_classes < 2 and n_flip > 0:
        raise ValueError("cannot flip labels with a single class")
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(n, size=n_flip, replace=False)
    noisy = labels.copy()
    noisy[idx] = (labels[idx] + rng.integers(1, n_classes, size=n_flip)) % n_classes
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return noisy, mask


def gen_crowd_instance(n, c, k, diag_range, seed):
    """Conditionally independent one-hot annotators with known confusions.

    Each annotator's confusion matrix has per-class diagonal drawn from
    diag_range (which must lie inside (1/c, 1]) and the remaining mass
    spread uniformly off-diagonal.
    """
    lo, hi = diag_range
    if not (1.0 / c < lo <= hi <= 1.0):
        raise ValueError(f"diag_range must lie in (1/{c}, 1], got {diag_range}")
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, c, size=n)
    ann = np.zeros((n, k, c))
    true_confusions = []
    for j in range(k):
        diag = rng.uniform(lo, hi, size=c)
        pi = np.empty((c, c))
        for cc in range(c):
            pi[cc] = (1.0 - diag[cc]) / (c - 1)
            pi[cc, cc] = diag[cc]
        true_confusions.append(pi)
        cum = pi[truth].cumsum(axis=1)
        emitted = (rng.random(n)[:, None] < cum).argmax(axis=1)
        ann[np.arange(n), j, emitted] = 1.0
    return ann, truth, true_confusions
