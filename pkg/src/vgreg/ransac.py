"""Hypothesize-and-verify rigid estimation over a correspondence set."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CorrespondenceSet, RigidTransform, procrustes_batch, weighted_procrustes
from .errors import DegenerateInput, InsufficientCorrespondences, InvalidArgument, NoConsensus

DEFAULT_INLIER_THRESHOLD = 0.05  # m
BLOCK = 256  # hypotheses per vectorised batch; early exit is checked per block
MIN_SAMPLE_HEIGHT = 1e-6  # m; smaller minimal-sample triangles count as collinear


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD
    max_iterations: int = 10_000
    sample_size: int = 3
    confidence: float = 0.999
    rng_seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise InvalidArgument(f"inlier_threshold must be positive, got {self.inlier_threshold}")
        if self.max_iterations < 1:
            raise InvalidArgument(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.sample_size < 3:
            raise InvalidArgument(f"sample_size must be >= 3, got {self.sample_size}")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidArgument(f"confidence must lie in (0, 1), got {self.confidence}")


@dataclass(frozen=True, eq=False)
class RansacResult:
    transform: RigidTransform
    inlier_mask: np.ndarray
    iterations: int
    best_hypothesis_inliers: int

    def __iter__(self):
        # lets callers write ``t, mask = ransac_transform(...)``
        yield self.transform
        yield self.inlier_mask


def required_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    if inlier_ratio <= 0.0:
        return math.inf
    if inlier_ratio >= 1.0:
        return 1.0
    p_good = inlier_ratio ** sample_size
    return math.log(1.0 - confidence) / math.log1p(-p_good)


def _draw_samples(rng: np.random.Generator, n: int, size: int, count: int) -> np.ndarray:
    """``count`` index tuples of ``size`` distinct elements from ``range(n)``."""
    out = rng.integers(0, n, size=(count, size))
    while True:
        s = np.sort(out, axis=1)
        dup = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not dup.any():
            return out
        out[dup] = rng.integers(0, n, size=(int(dup.sum()), size))


def _sample_degenerate(pts: np.ndarray) -> np.ndarray:
    """Flags minimal samples whose source points are (nearly) collinear."""
    if pts.shape[1] == 3:
        a, b, c = pts[:, 0], pts[:, 1], pts[:, 2]
        area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
        longest = np.max(np.stack([np.linalg.norm(b - a, axis=1), np.linalg.norm(c - a, axis=1),
                                   np.linalg.norm(c - b, axis=1)]), axis=0)
        height = np.where(longest > 0, area2 / np.where(longest > 0, longest, 1.0), 0.0)
        return height < MIN_SAMPLE_HEIGHT
    centered = pts - pts.mean(axis=1, keepdims=True)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[:, 1] < MIN_SAMPLE_HEIGHT


def ransac_transform(c: CorrespondenceSet, cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """Robust rigid transform from correspondences with gross outliers.

    Minimal samples are fitted with the Procrustes solver (unit weights) and
    scored by the number of pairs with residual ≤ ``inlier_threshold``; the
    best hypothesis (earliest on ties) is refitted on its inliers. Hypotheses
    are drawn in fixed blocks from one seeded generator, and the adaptive
    stopping rule is evaluated only between blocks, so the result depends on
    the seed alone.

    Raises:
        InsufficientCorrespondences: fewer pairs than ``sample_size``.
        NoConsensus: best hypothesis has fewer than ``sample_size`` inliers.
    """
    n = len(c)
    s = cfg.sample_size
    if n < s:
        raise InsufficientCorrespondences(f"RANSAC needs at least {s} correspondences, got {n}")
    rng = np.random.default_rng(cfg.rng_seed)
    src, dst = c.source, c.target
    thr2 = cfg.inlier_threshold ** 2

    # block size depends on n only, keeping the per-block residual tensor bounded
    block = int(max(16, min(BLOCK, 2_000_000 // max(n, 1))))
    best_count = -1
    best_R = best_t = None
    done = 0
    needed = float(cfg.max_iterations)
    while done < min(needed, cfg.max_iterations):
        count = min(block, cfg.max_iterations - done)
        idx = _draw_samples(rng, n, s, count)
        R, t, bad = procrustes_batch(src[idx], dst[idx])
        bad |= _sample_degenerate(src[idx])
        pred = np.einsum("bij,nj->bni", R, src) + t[:, None, :]
        inl = np.sum((pred - dst[None]) ** 2, axis=2) <= thr2
        scores = np.where(bad, -1, inl.sum(axis=1))
        j = int(np.argmax(scores))
        if scores[j] > best_count:
            best_count = int(scores[j])
            best_R, best_t = R[j], t[j]
        done += count
        if best_count > 0:
            needed = required_iterations(best_count / n, s, cfg.confidence)

    if best_count < s:
        raise NoConsensus(f"best hypothesis has {max(best_count, 0)} inliers, need at least {s}")

    hyp = RigidTransform(best_R, best_t)
    hyp_mask = c.residuals(hyp) <= cfg.inlier_threshold
    try:
        final = weighted_procrustes(c.subset(hyp_mask).with_weights(1.0))
    except DegenerateInput:
        final = hyp
    mask = c.residuals(final) <= cfg.inlier_threshold
    return RansacResult(final, mask, done, best_count)
