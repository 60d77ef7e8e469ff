"""Final transform estimation: randomized weighted Procrustes over the merged set."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CorrespondenceSet, RigidTransform, procrustes_batch, weighted_procrustes
from .errors import DegenerateInput, InvalidArgument


@dataclass(frozen=True)
class FittingConfig:
    num_subsets: int = 100
    subset_fraction: float = 0.1
    min_subset_size: int = 5
    score_threshold: float = 0.05  # m
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_subsets < 1:
            raise InvalidArgument(f"num_subsets must be >= 1, got {self.num_subsets}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise InvalidArgument(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")
        if self.min_subset_size < 3:
            raise InvalidArgument(f"min_subset_size must be >= 3, got {self.min_subset_size}")
        if not self.score_threshold > 0:
            raise InvalidArgument(f"score_threshold must be positive, got {self.score_threshold}")


@dataclass(frozen=True, eq=False)
class RegistrationStats:
    subset_size: int
    degenerate_subsets: int
    best_subset: int
    candidate_inliers: int  # inliers of the best subset fit, over the full set
    refit_inliers: int  # inliers of the returned transform
    inlier_mask: np.ndarray  # the best candidate's inliers, which the refit used
    candidate: RigidTransform


def subset_size(n: int, cfg: FittingConfig) -> int:
    return min(n, max(cfg.min_subset_size, math.ceil(cfg.subset_fraction * n)))


def fit_transform(c: CorrespondenceSet, cfg: FittingConfig = FittingConfig()) -> tuple[RigidTransform, RegistrationStats]:
    """Randomized weighted Procrustes.

    Draws ``num_subsets`` uniform subsets (without replacement) of size
    ``max(min_subset_size, ceil(subset_fraction · n))``, solves the weighted
    problem on each, keeps the candidate with the most pairs within
    ``score_threshold`` over the full set (earliest on ties), and refits on
    that candidate's inliers with their weights.

    Raises:
        DegenerateInput: fewer than 3 pairs, or every subset was degenerate.
    """
    n = len(c)
    if n < 3:
        raise DegenerateInput(f"fitting needs at least 3 correspondences, got {n}")
    m = subset_size(n, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    idx = np.argsort(rng.random((cfg.num_subsets, n)), axis=1, kind="stable")[:, :m]

    R, t, bad = procrustes_batch(c.source[idx], c.target[idx], c.weight[idx])
    pred = np.einsum("bij,nj->bni", R, c.source) + t[:, None, :]
    inl = np.sum((pred - c.target[None]) ** 2, axis=2) <= cfg.score_threshold ** 2
    scores = np.where(bad, -1, inl.sum(axis=1))
    best = int(np.argmax(scores))
    if scores[best] < 0:
        raise DegenerateInput("every sampled subset was degenerate")

    candidate = RigidTransform(R[best], t[best])
    mask = c.residuals(candidate) <= cfg.score_threshold
    try:
        final = weighted_procrustes(c.subset(mask))
    except DegenerateInput:
        final = candidate
    refit_inliers = int(np.sum(c.residuals(final) <= cfg.score_threshold))
    stats = RegistrationStats(m, int(bad.sum()), best, int(mask.sum()), refit_inliers, mask, candidate)
    return final, stats
