"""Fusing K annotators' soft predictions: averaging or soft-label Dawid-Skene EM.

The EM jointly estimates per-sample true-label posteriors and per-annotator
C x C confusion (capability) matrices.  Initialization is the annotator
mean; each iteration updates every confusion matrix from the current
posteriors (with additive smoothing), then recomputes posteriors in log
space under a fixed uniform class prior.  Convergence is declared when the
max-abs change across all confusion entries drops below pi_tol.

Two log-likelihood diagnostics are provided.  ds_loglikelihood is the
posterior-weighted complete-data objective; ds_marginal_loglikelihood is
the observed-data likelihood with the latent truth summed out, which is
the quantity EM provably never decreases and is what ds_aggregate records
per iteration.
"""

from dataclasses import dataclass

import numpy as np

from .util import NumericalError

EPS_PI = 1e-12
ROW_SUM_TOL = 1e-5
DEBUG_CHECKS = False


@dataclass
class DSConfig:
    maxiter: int = 100
    pi_tol: float = 1e-6
    hard_inputs: bool = False
    epsilon_smooth: float = 1e-6


class ConfusionMatrix:
    """Row-stochastic C x C capability matrix of one annotator."""

    def __init__(self, values, annotator_index):
        self.values = np.asarray(values, dtype=np.float64)
        self.annotator_index = int(annotator_index)
        c = self.values.shape[0]
        if self.values.shape != (c, c):
            raise ValueError(f"confusion matrix must be square, got {self.values.shape}")
        if np.abs(self.values.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("confusion matrix rows must sum to 1")
        if self.values.min() < EPS_PI:
            raise ValueError(f"confusion entries must be >= {EPS_PI}")


class AggregateResult:
    def __init__(self, posteriors, confusions, n_iters, final_loglik, converged,
                 loglik_history=None):
        self.posteriors = posteriors
        self.confusions = confusions
        self.n_iters = n_iters
        self.final_loglik = final_loglik
        self.converged = converged
        self.loglik_history = [] if loglik_history is None else loglik_history

    def to_json_dict(self, include_posteriors=True):
        doc = {
            "n_iters": self.n_iters,
            "final_loglik": self.final_loglik,
            "converged": self.converged,
            "loglik_history": list(self.loglik_history),
            "confusions": [cm.values.tolist() for cm in self.confusions],
        }
        if include_posteriors:
            doc["posteriors"] = self.posteriors.tolist()
        return doc


def validate_annotations(ann):
    ann = np.asarray(ann, dtype=np.float64)
    if ann.ndim != 3:
        raise ValueError(f"annotation tensor must be N x K x C, got shape {ann.shape}")
    if not np.isfinite(ann).all():
        raise ValueError("NaN/Inf in annotation tensor")
    if ann.min() < 0.0 or ann.max() > 1.0 + ROW_SUM_TOL:
        raise ValueError("annotation entries must lie in [0, 1]")
    if np.abs(ann.sum(axis=2) - 1.0).max() > ROW_SUM_TOL:
        raise ValueError("every annotation slice [i,j,:] must sum to 1")
    return ann


def harden(ann):
    """Replace each annotation row with the one-hot of its argmax (ties: lowest index)."""
    ann = np.asarray(ann, dtype=np.float64)
    n, k, c = ann.shape
    hard = np.zeros_like(ann)
    idx = ann.argmax(axis=2)
    ii, jj = np.meshgrid(np.arange(n), np.arange(k), indexing="ij")
    hard[ii, jj, idx] = 1.0
    return hard


def avg_aggregate(ann):
    """posterior[i] = mean over annotators of ann[i, j, :]."""
    ann = validate_annotations(ann)
    return ann.mean(axis=1)


def _pi_array(confusions):
    if isinstance(confusions, np.ndarray):
        return confusions
    return np.stack([cm.values for cm in confusions], axis=0)


def ds_loglikelihood(ann, posteriors, confusions, prior=None):
    """Posterior-weighted complete-data log objective.

    sum_i sum_c post[i,c] * (log prior_c + sum_j sum_c' ann[i,j,c'] log pi_j(c,c')),
    computed in log space with entries clamped at EPS_PI.
    """
    ann = np.asarray(ann, dtype=np.float64)
    post = np.asarray(posteriors, dtype=np.float64)
    pi = np.maximum(_pi_array(confusions), EPS_PI)
    c = ann.shape[2]
    if prior is None:
        prior = np.full(c, 1.0 / c)
    score = np.log(prior)[None, :] + np.einsum("ijd,jcd->ic", ann, np.log(pi))
    return float(np.sum(post * score))


def ds_marginal_loglikelihood(ann, confusions, prior=None):
    """Observed-data log-likelihood: latent truth summed out per sample.

    sum_i log sum_c prior_c * prod_j prod_c' pi_j(c,c')^ann[i,j,c'], via logsumexp.
    This is the quantity the EM iteration is guaranteed not to decrease.
    """
    ann = np.asarray(ann, dtype=np.float64)
    pi = np.maximum(_pi_array(confusions), EPS_PI)
    c = ann.shape[2]
    if prior is None:
        prior = np.full(c, 1.0 / c)
    score = np.log(prior)[None, :] + np.einsum("ijd,jcd->ic", ann, np.log(pi))
    m = score.max(axis=1, keepdims=True)
    return float(np.sum(m[:, 0] + np.log(np.exp(score - m).sum(axis=1))))


def ds_aggregate(ann, cfg=None):
    """Soft-label Dawid-Skene EM.  HardDS when cfg.hard_inputs (argmax one-hots)."""
    cfg = cfg or DSConfig()
    ann = validate_annotations(ann)
    if cfg.hard_inputs:
        ann = harden(ann)
    n, k, c = ann.shape
    prior = np.full(c, 1.0 / c)
    log_prior = np.log(prior)

    post = ann.mean(axis=1)
    pi = np.full((k, c, c), 1.0 / c)
    converged = False
    n_iters = 0
    history = []
    for it in range(1, cfg.maxiter + 1):
        # M-step: pi_j(c,:) from posterior-weighted annotation mass, smoothed
        counts = np.einsum("ic,ijd->jcd", post, ann)
        denom = post.sum(axis=0)
        new_pi = (counts + cfg.epsilon_smooth) / (denom[None, :, None] + c * cfg.epsilon_smooth)
        new_pi /= new_pi.sum(axis=2, keepdims=True)
        new_pi = np.maximum(new_pi, EPS_PI)
        delta = float(np.max(np.abs(new_pi - pi)))
        pi = new_pi
        # E-step in log space under the fixed uniform prior
        score = log_prior[None, :] + np.einsum("ijd,jcd->ic", ann, np.log(pi))
        score -= score.max(axis=1, keepdims=True)
        post = np.exp(score)
        post /= post.sum(axis=1, keepdims=True)
        if not (np.isfinite(pi).all() and np.isfinite(post).all()):
            raise NumericalError(f"non-finite values at EM iteration {it}")
        if DEBUG_CHECKS:
            assert np.abs(post.sum(axis=1) - 1.0).max() < 1e-9
        history.append(ds_marginal_loglikelihood(ann, pi, prior))
        n_iters = it
        if delta < cfg.pi_tol:
            converged = True
            break
    final = history[-1] if history else ds_marginal_loglikelihood(ann, pi, prior)
    confusions = [ConfusionMatrix(pi[j], j) for j in range(k)]
    return AggregateResult(post, confusions, n_iters, final, converged, history)


def entropy_of(posteriors):
    """Per-row Shannon entropy (natural log), with 0 log 0 = 0."""
    p = np.asarray(posteriors, dtype=np.float64)
    safe = np.where(p > 0.0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1)
