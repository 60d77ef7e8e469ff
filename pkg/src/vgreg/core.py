"""Geometric primitives: rigid transforms, point clouds, correspondence sets,
the weighted Procrustes solver and voxel-grid downsampling.

Points are plain ``numpy`` arrays of shape ``(3,)`` or ``(N, 3)`` in meters.
All container types are immutable: their arrays are flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateInput, InvalidArgument

FloatArray = NDArray[np.float64]

# orthonormality / det checks on construction; solver outputs are far tighter
_ROTATION_TOL = 1e-6
# relative rank threshold on the weighted scatter matrices
_RANK_RTOL = 1e-10


def _frozen(a: ArrayLike, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class Provenance(IntEnum):
    VISUAL = 0
    GEOMETRIC = 1


# ---------------------------------------------------------------------------
# SE(3)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation mapping source-frame points into the target frame."""

    rotation: FloatArray
    translation: FloatArray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise InvalidArgument(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidArgument("transform contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > _ROTATION_TOL:
            raise InvalidArgument("rotation is not a proper orthonormal matrix")
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidArgument(f"homogeneous matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidArgument("last row of a rigid homogeneous matrix must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis: ArrayLike, angle: float, translation: ArrayLike = (0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation of ``angle`` radians about ``axis`` (Rodrigues)."""
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise InvalidArgument("rotation axis must be non-zero")
        k = axis / n
        K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        R = np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
        return cls(R, translation)

    def as_matrix(self) -> FloatArray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: ArrayLike) -> FloatArray:
        """Transform a single point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def axis_angle(self) -> tuple[FloatArray, float]:
        """(unit axis, angle in radians) of the rotation part."""
        R = self.rotation
        cos_a = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
        angle = float(np.arccos(cos_a))
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        n = np.linalg.norm(w)
        if n > 1e-12:
            return w / n, angle
        if angle < 1e-6:
            return np.array([0.0, 0.0, 1.0]), angle
        # angle ≈ π: axis from the dominant column of (R + I)
        B = R + np.eye(3)
        col = B[:, int(np.argmax(np.linalg.norm(B, axis=0)))]
        return col / np.linalg.norm(col), angle

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def apply_transform(t: RigidTransform, p: ArrayLike) -> FloatArray:
    return t.apply(p)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: FloatArray
    normals: FloatArray | None = None
    descriptors: FloatArray | None = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.size == 0:
            pts = _frozen(np.empty((0, 3)))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgument(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("points contain non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _frozen(self.normals)
            if nrm.shape != pts.shape:
                raise InvalidArgument(f"normals shape {nrm.shape} does not match points {pts.shape}")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise InvalidArgument("normals must have unit length")
            object.__setattr__(self, "normals", nrm)
        if self.descriptors is not None:
            desc = _frozen(self.descriptors)
            if desc.ndim != 2 or desc.shape[0] != len(pts):
                raise InvalidArgument(f"descriptors must have shape ({len(pts)}, D), got {desc.shape}")
            object.__setattr__(self, "descriptors", desc)

    def __len__(self) -> int:
        return len(self.points)

    def with_normals(self, normals: ArrayLike) -> PointCloud:
        return PointCloud(self.points, normals, self.descriptors)

    def with_descriptors(self, descriptors: ArrayLike) -> PointCloud:
        return PointCloud(self.points, self.normals, descriptors)

    def transformed(self, t: RigidTransform) -> PointCloud:
        normals = None if self.normals is None else self.normals @ t.rotation.T
        return PointCloud(t.apply(self.points), normals, self.descriptors)


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Putative point pairs, stored column-wise.

    ``source_index`` / ``target_index`` are ``-1`` when a pair does not refer
    back to a cloud (for example visual matches lifted from pixels).
    """

    source: FloatArray
    target: FloatArray
    weight: FloatArray
    provenance: NDArray[np.int8]
    source_index: NDArray[np.int64]
    target_index: NDArray[np.int64]

    def __post_init__(self):
        src = _frozen(self.source).reshape(-1, 3)
        dst = _frozen(self.target).reshape(-1, 3)
        n = len(src)
        w = _frozen(self.weight).reshape(-1)
        prov = _frozen(self.provenance, np.int8).reshape(-1)
        si = _frozen(self.source_index, np.int64).reshape(-1)
        ti = _frozen(self.target_index, np.int64).reshape(-1)
        if not (len(dst) == len(w) == len(prov) == len(si) == len(ti) == n):
            raise InvalidArgument("correspondence columns have mismatched lengths")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
            raise InvalidArgument("correspondence points must be finite")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgument("correspondence weights must be finite and non-negative")
        if n and not np.all(np.isin(prov, (Provenance.VISUAL, Provenance.GEOMETRIC))):
            raise InvalidArgument("unknown provenance tag")
        for name, val in (("source", src), ("target", dst), ("weight", w), ("provenance", prov),
                          ("source_index", si), ("target_index", ti)):
            object.__setattr__(self, name, val)

    @classmethod
    def build(
        cls,
        source: ArrayLike,
        target: ArrayLike,
        weight: ArrayLike | float = 1.0,
        provenance: Provenance | ArrayLike = Provenance.GEOMETRIC,
        source_index: ArrayLike | None = None,
        target_index: ArrayLike | None = None,
    ) -> CorrespondenceSet:
        src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
        n = len(src)
        return cls(
            src,
            np.asarray(target, dtype=np.float64).reshape(-1, 3),
            np.broadcast_to(np.asarray(weight, dtype=np.float64), (n,)),
            np.broadcast_to(np.asarray(provenance, dtype=np.int8), (n,)),
            np.full(n, -1) if source_index is None else source_index,
            np.full(n, -1) if target_index is None else target_index,
        )

    @classmethod
    def empty(cls) -> CorrespondenceSet:
        return cls.build(np.empty((0, 3)), np.empty((0, 3)))

    @classmethod
    def concat(cls, *sets: CorrespondenceSet) -> CorrespondenceSet:
        """Multiset union, preserving order (first set's items first)."""
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.source for s in sets]),
            np.concatenate([s.target for s in sets]),
            np.concatenate([s.weight for s in sets]),
            np.concatenate([s.provenance for s in sets]),
            np.concatenate([s.source_index for s in sets]),
            np.concatenate([s.target_index for s in sets]),
        )

    def __len__(self) -> int:
        return len(self.source)

    def subset(self, selector: ArrayLike) -> CorrespondenceSet:
        """Items picked by a boolean mask or an index array, in input order for masks."""
        sel = np.asarray(selector)
        return CorrespondenceSet(
            self.source[sel], self.target[sel], self.weight[sel],
            self.provenance[sel], self.source_index[sel], self.target_index[sel],
        )

    def with_weights(self, weight: ArrayLike | float) -> CorrespondenceSet:
        w = np.broadcast_to(np.asarray(weight, dtype=np.float64), (len(self),))
        return CorrespondenceSet(self.source, self.target, w, self.provenance, self.source_index, self.target_index)

    def residuals(self, t: RigidTransform) -> FloatArray:
        """Per-item ‖t(p) − q‖."""
        if len(self) == 0:
            return np.empty(0)
        return np.linalg.norm(t.apply(self.source) - self.target, axis=1)


# ---------------------------------------------------------------------------
# Weighted Procrustes
# ---------------------------------------------------------------------------


def procrustes_batch(src: np.ndarray, dst: np.ndarray, w: np.ndarray | None = None):
    """Solve many weighted Procrustes problems at once.

    ``src``/``dst`` have shape ``(B, n, 3)`` and ``w`` shape ``(B, n)``.
    Returns ``(R, t, degenerate)`` with shapes ``(B, 3, 3)``, ``(B, 3)``,
    ``(B,)``. Degenerate problems (zero total weight or rank < 2 source /
    cross-covariance) get an identity rotation and are flagged.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    B = src.shape[0]
    if w is None:
        w = np.ones(src.shape[:2])
    w = np.asarray(w, dtype=np.float64)
    total = w.sum(axis=1)
    ok = total > 0
    wn = np.where(ok[:, None], w / np.where(ok, total, 1.0)[:, None], 0.0)

    mu_p = np.einsum("bn,bnk->bk", wn, src)
    mu_q = np.einsum("bn,bnk->bk", wn, dst)
    pc = src - mu_p[:, None, :]
    qc = dst - mu_q[:, None, :]
    H = np.einsum("bn,bni,bnj->bij", wn, pc, qc)
    S_p = np.einsum("bn,bni,bnj->bij", wn, pc, pc)

    sp = np.linalg.eigvalsh(S_p)  # ascending
    U, s, Vt = np.linalg.svd(H)
    rank_src = sp[:, 1] > _RANK_RTOL * np.maximum(sp[:, 2], np.finfo(float).tiny)
    rank_h = s[:, 1] > _RANK_RTOL * np.maximum(s[:, 0], np.finfo(float).tiny)
    degenerate = ~(ok & rank_src & rank_h & (sp[:, 2] > 0))

    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    D = np.zeros((B, 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    # reflection fix: flip the axis of the smallest singular value
    D[:, 2, 2] = d
    R = V @ D @ Ut
    R[degenerate] = np.eye(3)
    t = mu_q - np.einsum("bij,bj->bi", R, mu_p)
    return R, t, degenerate


def weighted_procrustes(c: CorrespondenceSet) -> RigidTransform:
    """Closed-form minimiser of Σ wᵢ‖R pᵢ + t − qᵢ‖² over SE(3).

    Raises:
        DegenerateInput: fewer than 3 pairs, zero total weight, or the
            weighted covariance has rank < 2 (collinear / coincident points).
    """
    if len(c) < 3:
        raise DegenerateInput(f"weighted Procrustes needs at least 3 correspondences, got {len(c)}")
    if not c.weight.sum() > 0:
        raise DegenerateInput("total correspondence weight is zero")
    R, t, bad = procrustes_batch(c.source[None], c.target[None], c.weight[None])
    if bad[0]:
        raise DegenerateInput("weighted covariance is rank-deficient (collinear or coincident points)")
    return RigidTransform(R[0], t[0])


def procrustes_cost(t: RigidTransform, c: CorrespondenceSet) -> float:
    """Weighted mean squared residual (the Procrustes objective)."""
    if len(c) == 0:
        return 0.0
    r2 = np.sum((t.apply(c.source) - c.target) ** 2, axis=1)
    return float(np.dot(c.weight, r2) / len(c))


# ---------------------------------------------------------------------------
# Voxel grid
# ---------------------------------------------------------------------------


def voxel_keys(points: ArrayLike, voxel_size: float) -> NDArray[np.int64]:
    """Integer voxel coordinates ``floor(p / voxel_size)``, grid anchored at the origin."""
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Output is ordered by voxel key. Normals and descriptors are not carried
    over; recompute them on the downsampled cloud.
    """
    if not voxel_size > 0:
        raise InvalidArgument(f"voxel_size must be positive, got {voxel_size}")
    pts = cloud.points
    if len(pts) == 0:
        return PointCloud(np.empty((0, 3)))
    keys = voxel_keys(pts, voxel_size)
    _, inverse_idx, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse_idx = inverse_idx.reshape(-1)
    out = np.empty((len(counts), 3))
    for k in range(3):
        out[:, k] = np.bincount(inverse_idx, weights=pts[:, k], minlength=len(counts)) / counts
    return PointCloud(out)


def as_points(seq: Sequence[Sequence[float]] | ArrayLike) -> FloatArray:
    return np.asarray(seq, dtype=np.float64).reshape(-1, 3)


__all__ = [
    "Provenance",
    "RigidTransform",
    "PointCloud",
    "CorrespondenceSet",
    "apply_transform",
    "compose",
    "inverse",
    "weighted_procrustes",
    "procrustes_batch",
    "procrustes_cost",
    "voxel_downsample",
    "voxel_keys",
    "as_points",
]
