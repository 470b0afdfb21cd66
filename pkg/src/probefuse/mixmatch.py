"""Semi-supervised probe retraining on a labeled/unlabeled split.

Feature-space adaptation of MixMatch: unlabeled targets are guessed by
averaging predictions over Gaussian feature augmentations and sharpening;
labeled and unlabeled batches are jointly mixed with a shuffled copy of
themselves; the loss is soft-target cross-entropy on the mixed labeled
portion plus a ramped squared-error consistency term on the mixed
unlabeled portion.

Two independent RNG streams keep the labeled batch schedule identical to
plain supervised training: the labeled stream only ever draws epoch
permutations, while augmentation noise, unlabeled shuffling, and mixup
coefficients all come from the second stream.
"""

from dataclasses import dataclass

import numpy as np

from .probes import ProbeModel, probe_forward, ce_loss_and_grad
from .util import NumericalError, one_hot


@dataclass
class MixMatchConfig:
    sharpen_temp: float = 0.5
    n_augment: int = 2
    aug_sigma_scale: float = 0.1
    mixup_alpha: float = 0.75
    lambda_u: float = 10.0
    rampup_fraction: float = 0.3
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.1
    seed: int = 0
    use_mixup: bool = True


def feature_augment(features, sigma, seed, scale=1.0):
    """features + noise, noise[i,d] ~ Normal(0, (scale*sigma[d])^2), seeded.

    scale=0 (or all-zero sigma) returns the input exactly and draws nothing.
    """
    X = np.asarray(features, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.min() < 0:
        raise ValueError("sigma must be non-negative")
    std = scale * sigma
    if not std.any():
        return X.copy()
    rng = np.random.default_rng(seed)
    return X + rng.standard_normal(X.shape) * std


def sharpen(p, temp):
    """Temperature sharpening q_c = p_c^(1/temp) / sum_c' p_c'^(1/temp), row-wise."""
    if temp <= 0:
        raise ValueError("sharpen temperature must be positive")
    p = np.asarray(p, dtype=np.float64)
    q = p ** (1.0 / temp)
    return q / q.sum(axis=-1, keepdims=True)


def guess_labels(model, unlabeled_features, cfg):
    """Average probe predictions over n_augment augmentations, then sharpen.

    Per-dimension sigma is estimated from the given feature rows; the a-th
    augmentation uses seed cfg.seed + a.
    """
    X = np.asarray(unlabeled_features, dtype=np.float64)
    sigma = X.std(axis=0)
    preds = np.zeros((X.shape[0], model.n_classes))
    for a in range(cfg.n_augment):
        xa = feature_augment(X, sigma, cfg.seed + a, scale=cfg.aug_sigma_scale)
        preds += probe_forward(model, xa)
    preds /= cfg.n_augment
    return sharpen(preds, cfg.sharpen_temp)


def mixup_pair(xa, ya, xb, yb, alpha, seed, lam=None):
    """Convex combination with lambda' = max(lam, 1-lam), lam ~ Beta(alpha, alpha).

    Pass lam to force the coefficient (lam=1 returns (xa, ya) unchanged).
    """
    if lam is None:
        lam = np.random.default_rng(seed).beta(alpha, alpha)
    lam = max(lam, 1.0 - lam)
    return (lam * np.asarray(xa, dtype=np.float64) + (1.0 - lam) * np.asarray(xb, dtype=np.float64),
            lam * np.asarray(ya, dtype=np.float64) + (1.0 - lam) * np.asarray(yb, dtype=np.float64))


def mse_loss_and_grad(model, features, targets):
    """Mean squared error between predicted probabilities and target rows.

    loss = (1/m) sum_i ||P_i - Q_i||^2 / C, with the exact gradient through
    the softmax.
    """
    X = np.asarray(features, dtype=np.float64)
    Q = np.asarray(targets, dtype=np.float64)
    m, c = Q.shape
    P = probe_forward(model, X)
    R = P - Q
    loss = float(np.mean(np.sum(R * R, axis=1)) / c)
    inner = np.sum(R * P, axis=1, keepdims=True)
    g = (2.0 / (m * c)) * P * (R - inner)
    grad_w = X.T @ g
    grad_b = g.sum(axis=0)
    return loss, grad_w, grad_b


def semisup_train_probe(model, bank, split, cfg, curve=None):
    """MixMatch-style retraining of one probe, warm-started from model.

    Labeled samples keep the bank's (original, possibly noisy) labels;
    unlabeled samples get guessed-and-sharpened soft targets.  With an
    empty unlabeled set every step degenerates to plain supervised
    cross-entropy on the labeled subset.  Deterministic given cfg.seed.
    Pass a list as curve to collect per-epoch mean losses.
    """
    if split.labeled_indices.size == 0:
        raise ValueError("labeled set is empty")
    tap = model.tap_index
    X = np.asarray(bank.features[tap], dtype=np.float64)
    c = bank.n_classes
    sigma = cfg.aug_sigma_scale * X.std(axis=0)
    xl = X[split.labeled_indices]
    tl = one_hot(bank.labels[split.labeled_indices], c)
    xu = X[split.unlabeled_indices]
    nl, nu = xl.shape[0], xu.shape[0]

    out = ProbeModel(model.weights.copy(), model.bias.copy(), tap)
    rng_l = np.random.Generator(np.random.PCG64(cfg.seed))
    rng_u = np.random.Generator(np.random.PCG64([cfg.seed, 1]))
    steps_per_epoch = -(-nl // cfg.batch_size)
    ramp_end = max(1, round(cfg.rampup_fraction * cfg.epochs * steps_per_epoch))
    step = 0
    for epoch in range(cfg.epochs):
        perm_l = rng_l.permutation(nl)
        perm_u = rng_u.permutation(nu) if nu else None
        upos = 0
        ep_l, ep_u = [], []
        for start in range(0, nl, cfg.batch_size):
            bl = perm_l[start:start + cfg.batch_size]
            xb, tb = xl[bl], tl[bl]
            if nu == 0:
                loss, gw, gb = ce_loss_and_grad(out, xb, tb)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
                out.weights -= cfg.learning_rate * gw
                out.bias -= cfg.learning_rate * gb
                ep_l.append(loss)
                step += 1
                continue
            bu = perm_u[(upos + np.arange(bl.size)) % nu]
            upos += bl.size
            xub = xu[bu]
            if sigma.any():
                xb = xb + rng_u.standard_normal(xb.shape) * sigma
            # guess soft targets for the unlabeled batch
            preds = np.zeros((bu.size, c))
            for _ in range(cfg.n_augment):
                xa = xub + rng_u.standard_normal(xub.shape) * sigma if sigma.any() else xub
                preds += probe_forward(out, xa)
            qu = sharpen(preds / cfg.n_augment, cfg.sharpen_temp)
            # jointly mix the concatenated batch with a shuffled copy
            x_all = np.concatenate([xb, xub])
            t_all = np.concatenate([tb, qu])
            if cfg.use_mixup:
                m = x_all.shape[0]
                lam = rng_u.beta(cfg.mixup_alpha, cfg.mixup_alpha, size=m)
                lam = np.maximum(lam, 1.0 - lam)[:, None]
                pidx = rng_u.permutation(m)
                x_all = lam * x_all + (1.0 - lam) * x_all[pidx]
                t_all = lam * t_all + (1.0 - lam) * t_all[pidx]
            w = min(1.0, (step + 1) / ramp_end)
            loss_l, gw_l, gb_l = ce_loss_and_grad(out, x_all[:bl.size], t_all[:bl.size])
            loss_u, gw_u, gb_u = mse_loss_and_grad(out, x_all[bl.size:], t_all[bl.size:])
            if not (np.isfinite(loss_l) and np.isfinite(loss_u)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
            out.weights -= cfg.learning_rate * (gw_l + w * cfg.lambda_u * gw_u)
            out.bias -= cfg.learning_rate * (gb_l + w * cfg.lambda_u * gb_u)
            ep_l.append(loss_l)
            ep_u.append(loss_u)
            step += 1
        if curve is not None:
            curve.append({"epoch": epoch,
                          "loss_labeled": float(np.mean(ep_l)) if ep_l else None,
                          "loss_unlabeled": float(np.mean(ep_u)) if ep_u else None})
    return out
