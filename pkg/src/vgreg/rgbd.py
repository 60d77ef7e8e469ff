"""Pinhole RGB-D geometry: depth backprojection and lifting of 2D pixel
matches to 3D visual correspondences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import CorrespondenceSet, PointCloud, Provenance
from .errors import InvalidArgument


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 1000.0  # raw depth units per meter

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not self.depth_scale > 0:
            raise InvalidArgument(f"depth_scale must be positive, got {self.depth_scale}")

    def project(self, points: ArrayLike) -> np.ndarray:
        """Camera-frame points ``(N, 3)`` to pixel coordinates ``(N, 2)``."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.stack([self.fx * p[:, 0] / p[:, 2] + self.cx, self.fy * p[:, 1] / p[:, 2] + self.cy], axis=1)

    def unproject(self, u: ArrayLike, v: ArrayLike, z: ArrayLike) -> np.ndarray:
        u, v, z = (np.asarray(a, dtype=np.float64) for a in (u, v, z))
        return np.stack([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z], axis=-1)


@dataclass(frozen=True, eq=False)
class DepthImage:
    width: int
    height: int
    values: NDArray[np.uint16]  # row-major, raw units; 0 marks missing depth
    depth_scale: float | None = None  # carried by formats that store it

    def __post_init__(self):
        vals = np.array(self.values, copy=True).reshape(-1)
        if self.width < 0 or self.height < 0:
            raise InvalidArgument("image dimensions must be non-negative")
        if vals.size != self.width * self.height:
            raise InvalidArgument(f"expected {self.width * self.height} depth values, got {vals.size}")
        if vals.size and (np.any(vals < 0) or not np.all(vals == np.floor(vals))):
            raise InvalidArgument("depth values must be non-negative integers")
        vals = vals.astype(np.uint16) if vals.size == 0 or vals.max() <= np.iinfo(np.uint16).max else vals.astype(np.uint32)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, array: ArrayLike, depth_scale: float | None = None) -> DepthImage:
        a = np.asarray(array)
        if a.ndim != 2:
            raise InvalidArgument(f"depth array must be 2-D (H, W), got shape {a.shape}")
        return cls(a.shape[1], a.shape[0], a.reshape(-1), depth_scale)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)


@dataclass(frozen=True)
class PixelMatch:
    u0: float
    v0: float
    u1: float
    v1: float
    score: float = 1.0


def backproject(
    depth: DepthImage,
    k: CameraIntrinsics,
    max_depth: float | None = None,
    return_pixels: bool = False,
):
    """Pinhole backprojection of every pixel with non-zero depth.

    ``z = d / depth_scale``, ``x = (u - cx) z / fx``, ``y = (v - cy) z / fy``.
    Points are emitted in row-major pixel order. With ``return_pixels`` the
    integer ``(u, v)`` of each point is returned alongside the cloud.
    """
    d = depth.as_array()
    v, u = np.nonzero(d)
    z = d[v, u].astype(np.float64) / k.depth_scale
    if max_depth is not None:
        keep = z <= max_depth
        u, v, z = u[keep], v[keep], z[keep]
    cloud = PointCloud(k.unproject(u, v, z).reshape(-1, 3))
    if return_pixels:
        return cloud, np.stack([u, v], axis=1)
    return cloud


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def _lookup(depth: DepthImage, u: np.ndarray, v: np.ndarray):
    ui, vi = _round_half_up(u), _round_half_up(v)
    inside = (ui >= 0) & (ui < depth.width) & (vi >= 0) & (vi < depth.height)
    raw = np.zeros(len(u), dtype=np.float64)
    raw[inside] = depth.as_array()[vi[inside], ui[inside]]
    return ui, vi, raw


def lift_pixel_matches(
    matches: Sequence[PixelMatch],
    depth0: DepthImage,
    depth1: DepthImage,
    k0: CameraIntrinsics,
    k1: CameraIntrinsics,
    max_depth: float | None = None,
) -> tuple[CorrespondenceSet, int]:
    """Turn pixel matches into 3D visual correspondences (weight 1).

    Sub-pixel coordinates are rounded to the nearest pixel for the depth
    lookup and the point is backprojected from that pixel centre. Matches
    with missing depth (or falling outside either image) are dropped.

    Returns the correspondence set and the number of dropped matches.
    """
    if len(matches) == 0:
        return CorrespondenceSet.empty(), 0
    arr = np.array([(m.u0, m.v0, m.u1, m.v1) for m in matches], dtype=np.float64)
    u0, v0, raw0 = _lookup(depth0, arr[:, 0], arr[:, 1])
    u1, v1, raw1 = _lookup(depth1, arr[:, 2], arr[:, 3])
    z0 = raw0 / k0.depth_scale
    z1 = raw1 / k1.depth_scale
    ok = (raw0 > 0) & (raw1 > 0)
    if max_depth is not None:
        ok &= (z0 <= max_depth) & (z1 <= max_depth)
    p = k0.unproject(u0[ok], v0[ok], z0[ok]).reshape(-1, 3)
    q = k1.unproject(u1[ok], v1[ok], z1[ok]).reshape(-1, 3)
    c = CorrespondenceSet.build(p, q, 1.0, Provenance.VISUAL)
    return c, int(len(matches) - ok.sum())
