"""Entropy-based partition of training samples into trusted/suspect subsets.

Samples whose ensemble posterior has the highest entropy are treated as
unlabeled (suspect); the rest keep their original dataset labels.  The
unlabeled fraction is gamma, rounded half-up.  Ties in entropy are broken
by a seeded shuffle so no systematic bias toward early indices creeps in.
"""

from dataclasses import dataclass

import numpy as np

from .aggregate import entropy_of


@dataclass
class SplitConfig:
    gamma: float = 0.25
    seed: int = 0


class SplitAssignment:
    def __init__(self, labeled_indices, unlabeled_indices, entropies):
        self.labeled_indices = np.asarray(labeled_indices, dtype=np.int64)
        self.unlabeled_indices = np.asarray(unlabeled_indices, dtype=np.int64)
        self.entropies = np.asarray(entropies, dtype=np.float64)

    @property
    def n(self):
        return self.labeled_indices.size + self.unlabeled_indices.size

    def unlabeled_mask(self):
        mask = np.zeros(self.n, dtype=bool)
        mask[self.unlabeled_indices] = True
        return mask

    def to_json_dict(self):
        return {
            "labeled_indices": self.labeled_indices.tolist(),
            "unlabeled_indices": self.unlabeled_indices.tolist(),
            "entropies": self.entropies.tolist(),
        }


def round_half_up(x):
    return int(np.floor(x + 0.5))


def split_by_entropy(posteriors, cfg):
    """Top round(gamma*N) samples by posterior entropy -> unlabeled, rest -> labeled."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if not 0.0 <= cfg.gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0,1], got {cfg.gamma}")
    n = posteriors.shape[0]
    ent = entropy_of(posteriors)
    n_unlabeled = round_half_up(cfg.gamma * n)
    rng = np.random.default_rng(cfg.seed)
    # descending entropy; equal-entropy runs ordered by the seeded shuffle
    order = np.lexsort((rng.permutation(n), -ent))
    unlabeled = np.sort(order[:n_unlabeled])
    labeled = np.sort(order[n_unlabeled:])
    return SplitAssignment(labeled, unlabeled, ent)
