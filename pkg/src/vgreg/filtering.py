"""Transformation-consistency filtering of geometric correspondences.

A rough transform is estimated from the visual correspondences with RANSAC.
Visual pairs within ``K · t_in`` of it are taken as assumed inliers; their
residuals give a moment estimate of the per-axis error variance σ². Under
i.i.d. Gaussian axis errors ‖T(p) − q‖² / σ² follows χ²(3), so geometric
pairs with residual ≤ ε = sqrt(σ² · χ²_conf(3)) are kept. The final set is the
assumed visual inliers followed by the surviving geometric pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike

from .chi2 import chi2_quantile
from .core import CorrespondenceSet, RigidTransform
from .errors import EmptyInlierSet, InsufficientCorrespondences, InvalidArgument, NoConsensus
from .ransac import RansacConfig, ransac_transform

log = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.95
K_LEARNED = 3.0
K_HANDCRAFTED = 5.0


class SkipReason(str, Enum):
    NONE = "none"
    TOO_FEW_VISUAL = "too_few_visual"
    TOO_FEW_SURVIVORS = "too_few_survivors"
    RANSAC_FAILED = "ransac_failed"


@dataclass(frozen=True)
class ErrorModel:
    sigma_sq: float  # m²
    t_in: float  # m
    K: float
    epsilon: float  # m, sqrt(sigma_sq · χ²_conf(3)) before any floor is applied
    assumed_inlier_count: int
    confidence: float = DEFAULT_CONFIDENCE

    def to_dict(self) -> dict:
        return {
            "sigma_sq_m2": self.sigma_sq,
            "t_in_m": self.t_in,
            "K": self.K,
            "epsilon_m": self.epsilon,
            "assumed_inlier_count": self.assumed_inlier_count,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class FilterConfig:
    K: float = K_LEARNED
    confidence: float = DEFAULT_CONFIDENCE
    min_visual_matches: int = 10
    min_survivor_count: int = 10
    min_survivor_fraction: float = 0.02
    epsilon_floor: float = 1e-4  # m; keeps noise-free data from collapsing to ε = 0

    def __post_init__(self):
        if not self.K >= 1.0:
            raise InvalidArgument(f"K must be >= 1, got {self.K}")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidArgument(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.min_visual_matches < 0 or self.min_survivor_count < 0:
            raise InvalidArgument("minimum counts must be non-negative")
        if not 0.0 <= self.min_survivor_fraction <= 1.0:
            raise InvalidArgument(f"min_survivor_fraction must lie in [0, 1], got {self.min_survivor_fraction}")
        if self.epsilon_floor < 0:
            raise InvalidArgument("epsilon_floor must be non-negative")

    @classmethod
    def for_visual_kind(cls, kind: str, **overrides) -> FilterConfig:
        """Default K by visual matcher family: 3 for learned, 5 for hand-crafted."""
        try:
            k = {"learned": K_LEARNED, "handcrafted": K_HANDCRAFTED}[kind]
        except KeyError:
            raise InvalidArgument(f"visual kind must be 'learned' or 'handcrafted', got {kind!r}") from None
        overrides.setdefault("K", k)
        return cls(**overrides)


@dataclass(frozen=True, eq=False)
class FilterOutcome:
    merged: CorrespondenceSet
    error_model: ErrorModel | None
    filter_applied: bool
    skip_reason: SkipReason
    prior: RigidTransform | None = None  # the RANSAC transform, when RANSAC succeeded
    visual_inliers: CorrespondenceSet | None = None
    geometric_inliers: CorrespondenceSet | None = None
    geometric_mask: np.ndarray | None = None  # survivors of the threshold test, over the input c_geo


def distance_error(t: RigidTransform, p: ArrayLike, q: ArrayLike):
    """‖T(p) − q‖ for single points or row-wise for ``(N, 3)`` batches."""
    d = t.apply(p) - np.asarray(q, dtype=np.float64)
    if d.ndim == 1:
        return float(np.sqrt(np.dot(d, d)))
    return np.sqrt(np.sum(d * d, axis=1))


def assumed_inliers(c_vis: CorrespondenceSet, t: RigidTransform, t_in: float, K: float) -> CorrespondenceSet:
    """Visual pairs with residual ≤ K · t_in."""
    if not K >= 1.0:
        raise InvalidArgument(f"K must be >= 1, got {K}")
    if not t_in > 0:
        raise InvalidArgument(f"t_in must be positive, got {t_in}")
    return c_vis.subset(c_vis.residuals(t) <= K * t_in)


def estimate_variance(c_in: CorrespondenceSet, t: RigidTransform) -> float:
    """Per-axis error variance: Σ‖T(p) − q‖² / (3 · n)."""
    n = len(c_in)
    if n == 0:
        raise EmptyInlierSet("variance estimate needs at least one assumed inlier")
    r = t.apply(c_in.source) - c_in.target
    return float(np.sum(r * r) / (3.0 * n))


def adaptive_threshold(sigma_sq: float, confidence: float = DEFAULT_CONFIDENCE) -> float:
    """Residual bound sqrt(σ² · χ²_conf(3)) in meters."""
    if sigma_sq < 0:
        raise InvalidArgument(f"variance must be non-negative, got {sigma_sq}")
    return math.sqrt(sigma_sq * chi2_quantile(confidence, 3))


def filter_geometric(c_geo: CorrespondenceSet, t: RigidTransform, epsilon: float) -> CorrespondenceSet:
    """Geometric pairs with residual ≤ epsilon (weights and provenance untouched)."""
    if not epsilon >= 0:
        raise InvalidArgument(f"epsilon must be non-negative, got {epsilon}")
    return c_geo.subset(c_geo.residuals(t) <= epsilon)


def build_error_model(
    c_vis: CorrespondenceSet, t: RigidTransform, t_in: float, K: float, confidence: float = DEFAULT_CONFIDENCE
) -> tuple[ErrorModel, CorrespondenceSet]:
    c_in = assumed_inliers(c_vis, t, t_in, K)
    sigma_sq = estimate_variance(c_in, t)
    eps = adaptive_threshold(sigma_sq, confidence)
    return ErrorModel(sigma_sq, t_in, K, eps, len(c_in), confidence), c_in


def run_filter(
    c_vis: CorrespondenceSet,
    c_geo: CorrespondenceSet,
    ransac_cfg: RansacConfig = RansacConfig(),
    filter_cfg: FilterConfig = FilterConfig(),
) -> FilterOutcome:
    """Filter ``c_geo`` by consistency with the transform implied by ``c_vis``.

    Never raises on bad data: whenever the visual prior cannot be trusted the
    filter is skipped and the unfiltered union ``c_vis + c_geo`` is returned.
    """
    union = CorrespondenceSet.concat(c_vis, c_geo)

    def skip(reason: SkipReason, prior=None) -> FilterOutcome:
        log.info("consistency filter skipped: %s", reason.value)
        return FilterOutcome(union, None, False, reason, prior)

    if len(c_vis) < filter_cfg.min_visual_matches:
        return skip(SkipReason.TOO_FEW_VISUAL)
    try:
        prior = ransac_transform(c_vis, ransac_cfg).transform
    except (NoConsensus, InsufficientCorrespondences) as exc:
        log.info("RANSAC on visual correspondences failed: %s", exc)
        return skip(SkipReason.RANSAC_FAILED)

    model, vis_in = build_error_model(
        c_vis, prior, ransac_cfg.inlier_threshold, filter_cfg.K, filter_cfg.confidence
    )
    eps = max(model.epsilon, filter_cfg.epsilon_floor)
    geo_mask = c_geo.residuals(prior) <= eps
    geo_in = c_geo.subset(geo_mask)
    if len(c_geo):
        needed = max(filter_cfg.min_survivor_count, filter_cfg.min_survivor_fraction * len(c_geo))
        if len(geo_in) < needed:
            return skip(SkipReason.TOO_FEW_SURVIVORS, prior)
    merged = CorrespondenceSet.concat(vis_in, geo_in)
    return FilterOutcome(merged, model, True, SkipReason.NONE, prior, vis_in, geo_in, geo_mask)
