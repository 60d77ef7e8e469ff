"""Geometric descriptor pipeline: neighbour search, normal estimation, FPFH,
feature-space matching and the nearest/second-nearest ratio test."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse
from scipy.spatial import cKDTree

from ._parallel import ordered_map, row_chunks
from .core import CorrespondenceSet, PointCloud, Provenance
from .errors import DegenerateInput, EmptyNeighborhood, InvalidArgument

log = logging.getLogger(__name__)

FPFH_BINS = 11
FPFH_DIM = 3 * FPFH_BINS

DEFAULT_NORMAL_K = 30
DEFAULT_FPFH_RADIUS_FACTOR = 5.0  # × voxel size
DEFAULT_RATIO_THRESHOLD = 0.9

# relative slack when deciding whether two kd-tree distances might be tied
_TIE_RTOL = 1e-12
# |cos| difference below which a point pair is not reordered
_SWAP_TOL = 1e-9


def _euclid(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((points - q) ** 2, axis=-1))


class NeighborIndex:
    """Euclidean k-NN / radius index over an ``(N, D)`` array.

    Results match a linear scan exactly: distances are recomputed with plain
    numpy and equal distances are ordered by point index.
    """

    def __init__(self, points: ArrayLike):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2:
            raise InvalidArgument(f"index expects an (N, D) array, got shape {pts.shape}")
        self.points = pts
        self._tree = cKDTree(pts) if len(pts) else None

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, queries: ArrayLike, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the ``k`` nearest points, shape ``(M, k)``."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, self.points.shape[1])
        n = len(self.points)
        if k < 1 or k > n:
            raise InvalidArgument(f"k must lie in [1, {n}], got {k}")
        m = len(q)
        if m == 0:
            return np.empty((0, k)), np.empty((0, k), dtype=np.int64)
        kk = min(k + 1, n)
        _, idx = self._tree.query(q, k=kk)
        idx = np.asarray(idx, dtype=np.int64).reshape(m, kk)
        dist = _euclid(self.points[idx], q[:, None, :])

        order = np.lexsort((idx, dist), axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        out_d, out_i = dist[:, :k].copy(), idx[:, :k].copy()
        if kk > k:
            # a tie may straddle the cut; gather every point up to the k-th distance
            rows = np.flatnonzero(dist[:, k] <= dist[:, k - 1] * (1.0 + _TIE_RTOL))
            if len(rows):
                radii = dist[rows, k - 1] * (1.0 + _TIE_RTOL) + 1e-300
                balls = self._tree.query_ball_point(q[rows], radii)
                for row, cand in zip(rows, balls):
                    cand = np.asarray(cand, dtype=np.int64)
                    d_c = _euclid(self.points[cand], q[row])
                    best = np.lexsort((cand, d_c))[:k]
                    out_d[row], out_i[row] = d_c[best], cand[best]
        return out_d, out_i

    def radius(self, query: ArrayLike, r: float) -> np.ndarray:
        """Sorted indices of points with distance ≤ r."""
        q = np.asarray(query, dtype=np.float64).reshape(self.points.shape[1])
        if self._tree is None:
            return np.empty(0, dtype=np.int64)
        cand = np.asarray(self._tree.query_ball_point(q, r * (1.0 + _TIE_RTOL)), dtype=np.int64)
        if len(cand) == 0:
            return cand
        keep = _euclid(self.points[cand], q) <= r
        return np.sort(cand[keep])

    def pairs_within(self, r: float) -> np.ndarray:
        """All ordered pairs ``(i, j)``, ``i != j``, with distance ≤ r; shape ``(P, 2)``, sorted."""
        if self._tree is None:
            return np.empty((0, 2), dtype=np.int64)
        und = self._tree.query_pairs(r * (1.0 + _TIE_RTOL), output_type="ndarray")
        if len(und) == 0:
            return np.empty((0, 2), dtype=np.int64)
        d = _euclid(self.points[und[:, 0]], self.points[und[:, 1]])
        und = und[d <= r]
        both = np.concatenate([und, und[:, ::-1]]).astype(np.int64)
        order = np.lexsort((both[:, 1], both[:, 0]))
        return both[order]


# ---------------------------------------------------------------------------
# Normals
# ---------------------------------------------------------------------------


def estimate_normals(
    cloud: PointCloud,
    k: int = DEFAULT_NORMAL_K,
    origin: ArrayLike = (0.0, 0.0, 0.0),
    index: NeighborIndex | None = None,
) -> PointCloud:
    """PCA normals from the ``k`` nearest neighbours (the point itself included),
    flipped so that ``normal · (origin − point) ≥ 0``.

    Raises:
        InvalidArgument: ``k < 3`` or fewer than ``k`` points.
        DegenerateInput: some neighbourhood is collinear or coincident.
    """
    if k < 3:
        raise InvalidArgument(f"normal estimation needs k >= 3, got {k}")
    pts = cloud.points
    if len(pts) < k:
        raise InvalidArgument(f"cloud has {len(pts)} points, fewer than k={k}")
    index = index or NeighborIndex(pts)
    _, nbr = index.knn(pts, k)
    nb = pts[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    flat = evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], np.finfo(float).tiny)
    if np.any(flat | (evals[:, 2] <= 0)):
        bad = int(np.flatnonzero(flat | (evals[:, 2] <= 0))[0])
        raise DegenerateInput(f"neighbourhood of point {bad} is collinear or coincident; normal undefined")
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    to_origin = np.asarray(origin, dtype=np.float64) - pts
    flip = np.einsum("ij,ij->i", normals, to_origin) < 0
    normals[flip] *= -1.0
    return cloud.with_normals(normals)


# ---------------------------------------------------------------------------
# FPFH
# ---------------------------------------------------------------------------


def pair_features(p1, n1, p2, n2):
    """Darboux-frame angular features (f1, f2, f3) for point pairs, plus a
    validity mask. f1 ∈ [-π, π], f2 and f3 ∈ [-1, 1]."""
    dp = p2 - p1
    dist = np.linalg.norm(dp, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    a1 = np.einsum("ij,ij->i", n1, dp) / safe
    a2 = np.einsum("ij,ij->i", n2, dp) / safe
    # use as source the point whose normal makes the smaller angle with the connecting line;
    # near-ties (e.g. identical normals) keep the original order so rounding cannot flip f3
    swap = np.abs(a1) < np.abs(a2) - _SWAP_TOL
    u = np.where(swap[:, None], n2, n1)
    other = np.where(swap[:, None], n1, n2)
    dp = np.where(swap[:, None], -dp, dp)
    f3 = np.where(swap, -a2, a1)
    v = np.cross(dp, u)
    vn = np.linalg.norm(v, axis=1)
    valid = (dist > 0) & (vn > 0)
    v = v / np.where(vn > 0, vn, 1.0)[:, None]
    w = np.cross(u, v)
    f2 = np.einsum("ij,ij->i", v, other)
    f1 = np.arctan2(np.einsum("ij,ij->i", w, other), np.einsum("ij,ij->i", u, other))
    return f1, f2, f3, valid


def _bin(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    b = np.floor(FPFH_BINS * (values - lo) / (hi - lo)).astype(np.int64)
    return np.clip(b, 0, FPFH_BINS - 1)


def compute_fpfh(
    cloud: PointCloud,
    radius: float,
    threads: int | None = 1,
    index: NeighborIndex | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Fast Point Feature Histograms, 33 bins per point.

    SPFH(p) histograms (f1, f2, f3) of every pair (p, neighbour) inside
    ``radius``, each sub-histogram scaled to sum to 100; then
    ``FPFH(p) = SPFH(p) + 1/k · Σ SPFH(p_k) / ‖p − p_k‖`` over the k neighbours.

    Returns ``(descriptors, empty)`` where ``empty`` flags points without any
    neighbour; their descriptor is all zero and an ``EmptyNeighborhood``
    warning is emitted.
    """
    if cloud.normals is None:
        raise InvalidArgument("FPFH requires normals; run estimate_normals first")
    if not radius > 0:
        raise InvalidArgument(f"radius must be positive, got {radius}")
    pts, nrm = cloud.points, cloud.normals
    n = len(pts)
    index = index or NeighborIndex(pts)
    pairs = index.pairs_within(radius)
    src, dst = pairs[:, 0], pairs[:, 1]
    nbr_count = np.bincount(src, minlength=n)
    # pairs are sorted by source, so each row's neighbours are contiguous
    starts = np.concatenate([[0], np.cumsum(nbr_count)])

    def spfh_rows(rows: slice) -> np.ndarray:
        lo, hi = starts[rows.start], starts[rows.stop]
        s, d = src[lo:hi], dst[lo:hi]
        f1, f2, f3, valid = pair_features(pts[s], nrm[s], pts[d], nrm[d])
        local = s[valid] - rows.start
        width = rows.stop - rows.start
        out = np.zeros((width, FPFH_DIM))
        for j, (f, a, b) in enumerate(((f1, -np.pi, np.pi), (f2, -1.0, 1.0), (f3, -1.0, 1.0))):
            keys = local * FPFH_BINS + _bin(f[valid], a, b)
            counts = np.bincount(keys, minlength=width * FPFH_BINS).reshape(width, FPFH_BINS)
            out[:, j * FPFH_BINS:(j + 1) * FPFH_BINS] = counts
        k = nbr_count[rows]
        out *= np.where(k > 0, 100.0 / np.maximum(k, 1), 0.0)[:, None]
        return out

    chunks = row_chunks(n)
    spfh = np.vstack(ordered_map(spfh_rows, chunks, threads)) if n else np.empty((0, FPFH_DIM))

    dist = np.linalg.norm(pts[src] - pts[dst], axis=1)
    k_src = nbr_count[src].astype(np.float64)
    weights = sparse.csr_matrix((1.0 / (k_src * dist), (src, dst)), shape=(n, n))

    def fpfh_rows(rows: slice) -> np.ndarray:
        return spfh[rows] + weights[rows] @ spfh

    fpfh = np.vstack(ordered_map(fpfh_rows, chunks, threads)) if n else np.empty((0, FPFH_DIM))
    empty = nbr_count == 0
    if np.any(empty):
        warnings.warn(
            f"{int(empty.sum())} point(s) have no neighbours within {radius} m; descriptors set to zero",
            EmptyNeighborhood,
            stacklevel=2,
        )
    return fpfh, empty


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def descriptor_weight(distance: ArrayLike) -> np.ndarray:
    """Correspondence weight 1 / (1 + feature distance), in (0, 1]."""
    return 1.0 / (1.0 + np.asarray(distance, dtype=np.float64))


def match_features(source: PointCloud, target: PointCloud) -> CorrespondenceSet:
    """One geometric correspondence per source point: its nearest target
    point in descriptor space (ties go to the smaller target index)."""
    if source.descriptors is None or target.descriptors is None:
        raise InvalidArgument("both clouds need descriptors")
    if source.descriptors.shape[1] != target.descriptors.shape[1]:
        raise InvalidArgument(
            f"descriptor dimensions differ: {source.descriptors.shape[1]} vs {target.descriptors.shape[1]}"
        )
    if len(target) == 0:
        raise InvalidArgument("target cloud is empty")
    if len(source) == 0:
        return CorrespondenceSet.empty()
    dist, idx = NeighborIndex(target.descriptors).knn(source.descriptors, 1)
    j = idx[:, 0]
    return CorrespondenceSet.build(
        source.points,
        target.points[j],
        descriptor_weight(dist[:, 0]),
        Provenance.GEOMETRIC,
        np.arange(len(source)),
        j,
    )


def ratio_values(
    matches: CorrespondenceSet,
    source_descriptors: ArrayLike,
    target_descriptors: ArrayLike,
) -> np.ndarray:
    """D(f_p, f_q) / D(f_p, second-nearest target feature) for each match.
    0/0 counts as a tie (ratio 1)."""
    sd = np.asarray(source_descriptors, dtype=np.float64)
    td = np.asarray(target_descriptors, dtype=np.float64)
    if len(td) < 2:
        raise InvalidArgument("ratio test needs at least 2 target descriptors")
    if len(matches) == 0:
        return np.empty(0)
    si, ti = matches.source_index, matches.target_index
    if np.any(si < 0) or np.any(ti < 0):
        raise InvalidArgument("ratio test needs correspondences that carry source/target indices")
    fp = sd[si]
    d1 = _euclid(td[ti], fp)
    nn_d, _ = NeighborIndex(td).knn(fp, 2)
    d2 = nn_d[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = d1 / d2
    ratio[(d2 == 0) & (d1 == 0)] = 1.0
    return ratio


def lowe_ratio_filter(
    matches: CorrespondenceSet,
    source_descriptors: ArrayLike,
    target_descriptors: ArrayLike,
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
) -> CorrespondenceSet:
    """Keep matches whose nearest / second-nearest distance ratio is ≤ threshold."""
    if not 0.0 < ratio_threshold <= 1.0:
        raise InvalidArgument(f"ratio threshold must lie in (0, 1], got {ratio_threshold}")
    r = ratio_values(matches, source_descriptors, target_descriptors)
    return matches.subset(r <= ratio_threshold)
