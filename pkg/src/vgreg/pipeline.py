"""End-to-end registration: frames or correspondences in, transform and report out."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .core import CorrespondenceSet, PointCloud, RigidTransform, voxel_downsample
from .errors import InvalidArgument, RegistrationError
from .features import (
    DEFAULT_FPFH_RADIUS_FACTOR,
    DEFAULT_NORMAL_K,
    NeighborIndex,
    compute_fpfh,
    estimate_normals,
    lowe_ratio_filter,
    match_features,
)
from .filtering import K_HANDCRAFTED, K_LEARNED, FilterConfig, FilterOutcome, SkipReason, run_filter
from .fileio import transform_to_json
from .fitting import FittingConfig, RegistrationStats, fit_transform
from .ransac import RansacConfig
from .rgbd import CameraIntrinsics, DepthImage, PixelMatch, backproject, lift_pixel_matches

log = logging.getLogger(__name__)

DEFAULT_VOXEL_SIZE = 0.025


class StageError(RegistrationError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = DEFAULT_VOXEL_SIZE
    normal_k: int = DEFAULT_NORMAL_K
    fpfh_radius: float | None = None  # None: DEFAULT_FPFH_RADIUS_FACTOR × voxel_size
    ratio_threshold: float | None = None  # Lowe test on geometric matches; None disables it
    max_depth: float | None = None  # m
    skip_filter: bool = False
    visual_kind: str = "learned"
    threads: int = 1
    seed: int = 0
    ransac: RansacConfig = field(default_factory=RansacConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    fitting: FittingConfig = field(default_factory=FittingConfig)

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise InvalidArgument(f"voxel_size must be positive, got {self.voxel_size}")
        if self.visual_kind not in ("learned", "handcrafted"):
            raise InvalidArgument(f"visual_kind must be 'learned' or 'handcrafted', got {self.visual_kind!r}")
        if self.threads < 0:
            raise InvalidArgument(f"threads must be >= 0, got {self.threads}")

    @property
    def radius(self) -> float:
        return self.fpfh_radius if self.fpfh_radius is not None else DEFAULT_FPFH_RADIUS_FACTOR * self.voxel_size

    def seeded(self) -> tuple[RansacConfig, FittingConfig]:
        """RANSAC and fitting configs with their seeds derived from ``seed``."""
        return (dataclasses.replace(self.ransac, rng_seed=self.seed),
                dataclasses.replace(self.fitting, rng_seed=self.seed + 1))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base: PipelineConfig | None = None) -> PipelineConfig:
        """Overlay ``d`` on ``base`` (defaults when absent). Nested sections
        ``ransac``, ``filter`` and ``fitting`` are merged field by field.

        When ``visual_kind`` is set but ``filter.K`` is not, K follows the kind.
        """
        base = base or cls()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        top = {k: v for k, v in d.items() if k not in ("ransac", "filter", "fitting")}
        nested = {}
        for name, sub_cls in (("ransac", RansacConfig), ("filter", FilterConfig), ("fitting", FittingConfig)):
            sub = dict(d.get(name) or {})
            allowed = {f.name for f in dataclasses.fields(sub_cls)}
            bad = set(sub) - allowed
            if bad:
                raise InvalidArgument(f"unknown keys in '{name}': {sorted(bad)}")
            nested[name] = dataclasses.replace(getattr(base, name), **sub)
        if "visual_kind" in top and "K" not in (d.get("filter") or {}):
            k = K_LEARNED if top["visual_kind"] == "learned" else K_HANDCRAFTED
            nested["filter"] = dataclasses.replace(nested["filter"], K=k)
        return dataclasses.replace(base, **top, **nested)


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    outcome: FilterOutcome
    fit_stats: RegistrationStats
    counts: dict
    timings: dict
    config: PipelineConfig

    def report(self) -> dict:
        """JSON-ready report."""
        out = transform_to_json(self.transform)
        out.update({
            "counts": dict(self.counts),
            "error_model": None if self.outcome.error_model is None else self.outcome.error_model.to_dict(),
            "filter_applied": self.outcome.filter_applied,
            "skip_reason": self.outcome.skip_reason.value,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "timings_s": dict(self.timings),
        })
        return out


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, stage: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except RegistrationError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(stage, exc) from exc
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0


def register_correspondences(
    c_vis: CorrespondenceSet,
    c_geo: CorrespondenceSet,
    cfg: PipelineConfig = PipelineConfig(),
    _timer: _Timer | None = None,
    _counts: dict | None = None,
) -> RegistrationResult:
    """Filter (unless ``skip_filter``) and fit on ready-made 3D correspondence sets."""
    timer = _timer or _Timer()
    counts = dict(_counts or {})
    ransac_cfg, fit_cfg = cfg.seeded()
    counts.setdefault("visual", len(c_vis))
    counts.setdefault("geometric", len(c_geo))
    if cfg.skip_filter:
        outcome = FilterOutcome(CorrespondenceSet.concat(c_vis, c_geo), None, False, SkipReason.NONE)
    else:
        outcome = timer.run("filter", run_filter, c_vis, c_geo, ransac_cfg, cfg.filter)
    if outcome.filter_applied:
        counts["visual_inliers"] = len(outcome.visual_inliers)
        counts["geometric_survivors"] = len(outcome.geometric_inliers)
    counts["merged"] = len(outcome.merged)
    t, stats = timer.run("fit", fit_transform, outcome.merged, fit_cfg)
    counts["fit_inliers"] = stats.refit_inliers
    return RegistrationResult(t, outcome, stats, counts, timer.timings, cfg)


def prepare_cloud(cloud: PointCloud, cfg: PipelineConfig, timer: _Timer | None = None) -> PointCloud:
    """Voxel downsample, normals and FPFH descriptors."""
    timer = timer or _Timer()
    down = timer.run("voxel_downsample", voxel_downsample, cloud, cfg.voxel_size)
    index = NeighborIndex(down.points)
    with_n = timer.run("normals", estimate_normals, down, cfg.normal_k, index=index)
    desc, _ = timer.run("fpfh", compute_fpfh, with_n, cfg.radius, threads=cfg.threads, index=index)
    return with_n.with_descriptors(desc)


def geometric_matches(src: PointCloud, dst: PointCloud, cfg: PipelineConfig, timer: _Timer | None = None):
    timer = timer or _Timer()
    m = timer.run("match_features", match_features, src, dst)
    if cfg.ratio_threshold is not None:
        m = timer.run("ratio_test", lowe_ratio_filter, m, src.descriptors, dst.descriptors, cfg.ratio_threshold)
    return m


def register_frames(
    depth0: DepthImage,
    depth1: DepthImage,
    k0: CameraIntrinsics,
    k1: CameraIntrinsics,
    matches: Sequence[PixelMatch],
    cfg: PipelineConfig = PipelineConfig(),
    cloud0: PointCloud | None = None,
    cloud1: PointCloud | None = None,
) -> RegistrationResult:
    """Full pipeline on an RGB-D frame pair.

    Clouds come from back-projecting the depth images unless given explicitly.
    The returned transform maps frame-0 camera coordinates into frame 1.
    """
    timer = _Timer()
    counts: dict[str, int] = {}
    if cloud0 is None:
        cloud0 = timer.run("backproject", backproject, depth0, k0, cfg.max_depth)
    if cloud1 is None:
        cloud1 = timer.run("backproject", backproject, depth1, k1, cfg.max_depth)
    counts["points0"], counts["points1"] = len(cloud0), len(cloud1)
    src = prepare_cloud(cloud0, cfg, timer)
    dst = prepare_cloud(cloud1, cfg, timer)
    counts["downsampled0"], counts["downsampled1"] = len(src), len(dst)
    c_geo = geometric_matches(src, dst, cfg, timer)
    c_vis, dropped = timer.run("lift_pixel_matches", lift_pixel_matches, matches, depth0, depth1, k0, k1, cfg.max_depth)
    counts["pixel_matches"] = len(matches)
    counts["pixel_matches_dropped"] = int(dropped)
    return register_correspondences(c_vis, c_geo, cfg, timer, counts)

