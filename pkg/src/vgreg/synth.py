"""Synthetic instances with planted ground truth.

Two generators:

* ``generate_instance`` builds a structured scene, a random ground-truth
  transform and labelled visual / geometric correspondence sets whose inliers
  follow ``q = T_gt(p) + N(0, σ² I₃)`` and whose outliers are uniform in a box.
* ``render_frame_pair`` ray-casts the same kind of scene from two cameras and
  emits depth images plus pixel matches, for end-to-end runs of the depth path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import CorrespondenceSet, PointCloud, Provenance, RigidTransform
from .errors import InvalidArgument
from .rgbd import CameraIntrinsics, DepthImage, PixelMatch

NOISE_CLIP = 6.0  # per-axis noise is truncated at this many σ


# ---------------------------------------------------------------------------
# Scene primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rect:
    """Planar rectangle ``center + a·e1 + b·e2`` with |a| ≤ half[0], |b| ≤ half[1]."""

    center: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    half: tuple[float, float]

    @property
    def area(self) -> float:
        return 4.0 * self.half[0] * self.half[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a = rng.uniform(-self.half[0], self.half[0], n)
        b = rng.uniform(-self.half[1], self.half[1], n)
        return self.center + a[:, None] * self.e1 + b[:, None] * self.e2

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        n = np.cross(self.e1, self.e2)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((self.center - o) @ n) / denom
        hit = o + s[:, None] * d - self.center
        inside = (np.abs(hit @ self.e1) <= self.half[0]) & (np.abs(hit @ self.e2) <= self.half[1])
        return np.where((np.abs(denom) > 1e-12) & inside & (s > 1e-9), s, np.inf)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    @property
    def area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        oc = o - self.center
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * (d @ oc)
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4.0 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        s1 = (-b - root) / (2.0 * a)
        s2 = (-b + root) / (2.0 * a)
        s = np.where(s1 > 1e-9, s1, s2)
        return np.where((disc >= 0) & (s > 1e-9), s, np.inf)


def box_faces(center: np.ndarray, rotation: np.ndarray, half: np.ndarray) -> list[Rect]:
    faces = []
    for axis in range(3):
        u, v = [k for k in range(3) if k != axis]
        for sign in (-1.0, 1.0):
            c = center + sign * half[axis] * rotation[:, axis]
            faces.append(Rect(c, rotation[:, u], rotation[:, v], (half[u], half[v])))
    return faces


def random_rotation(rng: np.random.Generator, max_angle_deg: float = 180.0) -> RigidTransform:
    axis = rng.normal(size=3)
    angle = math.radians(rng.uniform(0.0, max_angle_deg))
    return RigidTransform.from_axis_angle(axis, angle)


def random_scene(rng: np.random.Generator, extent: float, center=(0.0, 0.0, 0.0)) -> list:
    """A few planes, boxes and spheres inside a cube of side ``extent``."""
    center = np.asarray(center, dtype=np.float64)
    h = extent / 2.0
    prims: list = []
    for _ in range(3):
        R = random_rotation(rng).rotation
        half = tuple(rng.uniform(0.2, 0.45) * h for _ in range(2))
        c = center + rng.uniform(-0.4 * h, 0.4 * h, 3)
        prims.append(Rect(c, R[:, 0], R[:, 1], half))
    for _ in range(2):
        R = random_rotation(rng).rotation
        half = rng.uniform(0.08, 0.25, 3) * h
        c = center + rng.uniform(-0.5 * h, 0.5 * h, 3)
        prims.extend(box_faces(c, R, half))
    for _ in range(2):
        r = rng.uniform(0.08, 0.2) * h
        c = center + rng.uniform(-(h - r), h - r, 3) * 0.8
        prims.append(Sphere(c, r))
    return prims


def sample_scene(rng: np.random.Generator, prims: list, n: int) -> np.ndarray:
    areas = np.array([p.area for p in prims])
    counts = rng.multinomial(n, areas / areas.sum())
    pts = [p.sample(rng, k) for p, k in zip(prims, counts) if k]
    out = np.vstack(pts) if pts else np.empty((0, 3))
    return out[rng.permutation(len(out))]


# ---------------------------------------------------------------------------
# Planted correspondence instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    num_points: int = 5000
    scene_extent: float = 3.0  # m
    gt_rotation_range: float = 30.0  # deg, angle about a random axis
    gt_translation_range: float = 0.5  # m, per axis
    noise_sigma: float = 0.01  # m, per axis, geometric inliers (and visual unless overridden)
    visual_count: int = 30
    visual_inlier_ratio: float = 0.9
    geo_count: int = 1000
    geo_inlier_ratio: float = 0.15
    outlier_extent: float = 3.0  # m, side of the outlier box centred on the transformed scene
    rng_seed: int = 0
    visual_noise_sigma: float | None = None

    def __post_init__(self):
        if self.num_points < 1:
            raise InvalidArgument("num_points must be >= 1")
        if min(self.visual_count, self.geo_count) < 0:
            raise InvalidArgument("correspondence counts must be non-negative")
        for name in ("visual_inlier_ratio", "geo_inlier_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0 or (self.visual_noise_sigma is not None and self.visual_noise_sigma < 0):
            raise InvalidArgument("noise sigma must be non-negative")
        if not (self.scene_extent > 0 and self.outlier_extent > 0):
            raise InvalidArgument("scene and outlier extents must be positive")
        if self.gt_rotation_range < 0 or self.gt_translation_range < 0:
            raise InvalidArgument("ground-truth ranges must be non-negative")

    def with_seed(self, seed: int) -> SynthConfig:
        return replace(self, rng_seed=seed)


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    cloud0: PointCloud
    cloud1: PointCloud
    gt: RigidTransform
    c_vis: CorrespondenceSet
    c_geo: CorrespondenceSet
    vis_labels: np.ndarray  # True = planted inlier
    geo_labels: np.ndarray
    config: SynthConfig


def truncated_noise(rng: np.random.Generator, sigma: float, shape) -> np.ndarray:
    """N(0, σ²) samples redrawn until every component lies within ±6σ."""
    out = rng.normal(0.0, 1.0, size=shape)
    while True:
        bad = np.abs(out) > NOISE_CLIP
        if not bad.any():
            return sigma * out
        out[bad] = rng.normal(0.0, 1.0, size=int(bad.sum()))


def _planted_set(rng, cloud0, gt, count, ratio, sigma, box_center, box_side, provenance):
    n_in = int(round(ratio * count))
    src_idx = rng.choice(len(cloud0), size=count, replace=count > len(cloud0))
    src = cloud0[src_idx]
    labels = np.zeros(count, dtype=bool)
    labels[rng.permutation(count)[:n_in]] = True
    dst = np.empty_like(src)
    dst[labels] = gt.apply(src[labels]) + truncated_noise(rng, sigma, (n_in, 3))
    dst[~labels] = box_center + rng.uniform(-box_side / 2.0, box_side / 2.0, size=(count - n_in, 3))
    c = CorrespondenceSet.build(src, dst, 1.0, provenance, src_idx, np.full(count, -1))
    return c, labels


def random_ground_truth(rng: np.random.Generator, rotation_range_deg: float, translation_range: float) -> RigidTransform:
    rot = random_rotation(rng, rotation_range_deg)
    t = rng.uniform(-translation_range, translation_range, 3)
    return RigidTransform(rot.rotation, t)


def generate_instance(cfg: SynthConfig = SynthConfig()) -> PlantedInstance:
    rng = np.random.default_rng(cfg.rng_seed)
    prims = random_scene(rng, cfg.scene_extent)
    pts0 = sample_scene(rng, prims, cfg.num_points)
    gt = random_ground_truth(rng, cfg.gt_rotation_range, cfg.gt_translation_range)
    box_center = gt.apply(np.zeros(3))
    vis_sigma = cfg.noise_sigma if cfg.visual_noise_sigma is None else cfg.visual_noise_sigma
    c_vis, vis_labels = _planted_set(rng, pts0, gt, cfg.visual_count, cfg.visual_inlier_ratio, vis_sigma,
                                     box_center, cfg.outlier_extent, Provenance.VISUAL)
    c_geo, geo_labels = _planted_set(rng, pts0, gt, cfg.geo_count, cfg.geo_inlier_ratio, cfg.noise_sigma,
                                     box_center, cfg.outlier_extent, Provenance.GEOMETRIC)
    return PlantedInstance(PointCloud(pts0), PointCloud(gt.apply(pts0)), gt, c_vis, c_geo,
                           vis_labels, geo_labels, cfg)


# ---------------------------------------------------------------------------
# Ray-cast RGB-D frame pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RenderConfig:
    width: int = 160
    height: int = 120
    fx: float = 140.0
    fy: float = 140.0
    depth_scale: float = 1000.0
    gt_rotation_range: float = 10.0  # deg
    gt_translation_range: float = 0.15  # m
    match_count: int = 150
    match_inlier_ratio: float = 0.8
    pixel_noise: float = 1.0  # px, added to image-1 match coordinates
    rng_seed: int = 0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.depth_scale)


@dataclass(frozen=True, eq=False)
class RenderedPair:
    depth0: DepthImage
    depth1: DepthImage
    intrinsics: CameraIntrinsics
    matches: list[PixelMatch]
    match_labels: np.ndarray
    gt: RigidTransform


def room_scene(rng: np.random.Generator) -> list:
    """Floor, back and side walls with random clutter, in front of a camera at the origin looking along +z."""
    ex, ey, ez = np.eye(3)
    prims = [
        Rect(np.array([0.0, 1.0, 3.0]), ex, ez, (3.0, 3.0)),  # floor (image y points down)
        Rect(np.array([0.0, -0.5, 5.0]), ex, ey, (3.0, 1.5)),  # back wall
        Rect(np.array([-2.0, -0.5, 3.0]), ey, ez, (1.5, 3.0)),  # left wall
    ]
    prims += random_scene(rng, 2.0, center=(0.0, 0.2, 3.2))
    return prims


def raycast(prims: list, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive ray parameter per direction (``inf`` on a miss)."""
    s = np.full(len(dirs), np.inf)
    for p in prims:
        s = np.minimum(s, p.intersect(origin, dirs))
    return s


def _pixel_rays(k: CameraIntrinsics, width: int, height: int) -> np.ndarray:
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(u.size)], axis=1)


def render_depth(prims: list, k: CameraIntrinsics, width: int, height: int, pose: RigidTransform) -> np.ndarray:
    """Metric depth map (``inf`` where nothing is hit) for a camera whose
    frame is reached from the scene frame by ``pose``."""
    rays = _pixel_rays(k, width, height)
    inv = pose.inverse()
    # rays have unit z in the camera frame, so the ray parameter equals camera depth
    s = raycast(prims, inv.translation, rays @ inv.rotation.T)
    return s.reshape(height, width)


def render_frame_pair(cfg: RenderConfig = RenderConfig()) -> RenderedPair:
    rng = np.random.default_rng(cfg.rng_seed)
    prims = room_scene(rng)
    gt = random_ground_truth(rng, cfg.gt_rotation_range, cfg.gt_translation_range)
    k = cfg.intrinsics
    z0 = render_depth(prims, k, cfg.width, cfg.height, RigidTransform.identity())
    z1 = render_depth(prims, k, cfg.width, cfg.height, gt)

    def quantize(z):
        raw = np.where(np.isfinite(z), np.rint(z * cfg.depth_scale), 0)
        return DepthImage.from_array(np.clip(raw, 0, np.iinfo(np.uint16).max).astype(np.uint16), cfg.depth_scale)

    n_in = int(round(cfg.match_inlier_ratio * cfg.match_count))
    matches: list[PixelMatch] = []
    labels: list[bool] = []
    valid0 = np.flatnonzero(np.isfinite(z0).ravel())
    order = rng.permutation(valid0)
    for flat in order:
        if len(matches) >= n_in:
            break
        v0, u0 = divmod(int(flat), cfg.width)
        x0 = k.unproject(u0, v0, z0[v0, u0])
        x1 = gt.apply(x0)
        if x1[2] <= 0:
            continue
        u1, v1 = k.project(x1)[0] + rng.normal(0.0, cfg.pixel_noise, 2) * (cfg.pixel_noise > 0)
        ui, vi = int(math.floor(u1 + 0.5)), int(math.floor(v1 + 0.5))
        if not (0 <= ui < cfg.width and 0 <= vi < cfg.height):
            continue
        if abs(z1[vi, ui] - x1[2]) > 0.02:  # occluded in view 1
            continue
        matches.append(PixelMatch(float(u0), float(v0), float(u1), float(v1), 1.0))
        labels.append(True)
    for _ in range(cfg.match_count - n_in):
        matches.append(PixelMatch(float(rng.integers(cfg.width)), float(rng.integers(cfg.height)),
                                  float(rng.uniform(0, cfg.width - 1)), float(rng.uniform(0, cfg.height - 1)), 1.0))
        labels.append(False)
    perm = rng.permutation(len(matches))
    return RenderedPair(quantize(z0), quantize(z1), k, [matches[i] for i in perm],
                        np.array(labels, dtype=bool)[perm], gt)
