"""Registration metrics and benchmark summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import CorrespondenceSet, PointCloud, RigidTransform
from .errors import EmptyInput, InvalidArgument

ROTATION_THRESHOLDS_DEG = (5.0, 10.0, 45.0)
TRANSLATION_THRESHOLDS_CM = (5.0, 10.0, 25.0)
CHAMFER_THRESHOLDS_MM = (1.0, 5.0, 10.0)
INLIER_THRESHOLDS_M = (0.10, 0.05, 0.025)


def rotation_error(est: RigidTransform, gt: RigidTransform) -> float:
    """Geodesic angle between the two rotations, degrees."""
    c = (np.trace(gt.rotation.T @ est.rotation) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_error(est: RigidTransform, gt: RigidTransform) -> float:
    """Translation difference in centimeters."""
    return float(np.linalg.norm(est.translation - gt.translation)) * 100.0


def chamfer_distance(a: PointCloud, b: PointCloud, t_est: RigidTransform) -> float:
    """Symmetric mean nearest-neighbour distance between ``t_est(a)`` and ``b``, mm."""
    if len(a) == 0 or len(b) == 0:
        raise InvalidArgument("chamfer distance needs two non-empty clouds")
    ta = t_est.apply(a.points)
    d_ab, _ = cKDTree(b.points).query(ta, k=1)
    d_ba, _ = cKDTree(ta).query(b.points, k=1)
    return (float(np.mean(d_ab)) + float(np.mean(d_ba))) / 2.0 * 1000.0


def correspondence_inlier_stats(
    c: CorrespondenceSet, gt: RigidTransform, thresholds: Iterable[float] = INLIER_THRESHOLDS_M
) -> tuple[dict[float, float], dict[float, int]]:
    """Per threshold τ (meters): fraction and count of pairs with ‖T_gt(p) − q‖ ≤ τ."""
    r = c.residuals(gt)
    ratio, amount = {}, {}
    for tau in thresholds:
        k = int(np.sum(r <= tau))
        amount[float(tau)] = k
        ratio[float(tau)] = k / len(c) if len(c) else 0.0
    return ratio, amount


@dataclass
class PairEvaluation:
    rotation_error: float  # deg
    translation_error: float  # cm
    chamfer: float | None = None  # mm
    inlier_ratio_by_threshold: dict[float, float] = field(default_factory=dict)
    inlier_amount_by_threshold: dict[float, int] = field(default_factory=dict)
    filter_applied: bool = False
    name: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "re_deg": self.rotation_error,
            "te_cm": self.translation_error,
            "chamfer_mm": self.chamfer,
            "inlier_ratio_by_threshold_m": {repr(k): v for k, v in self.inlier_ratio_by_threshold.items()},
            "inlier_amount_by_threshold_m": {repr(k): v for k, v in self.inlier_amount_by_threshold.items()},
            "filter_applied": self.filter_applied,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> PairEvaluation:
        return cls(
            rotation_error=float(d["re_deg"]),
            translation_error=float(d["te_cm"]),
            chamfer=None if d.get("chamfer_mm") is None else float(d["chamfer_mm"]),
            inlier_ratio_by_threshold={float(k): float(v) for k, v in d.get("inlier_ratio_by_threshold_m", {}).items()},
            inlier_amount_by_threshold={float(k): int(v) for k, v in d.get("inlier_amount_by_threshold_m", {}).items()},
            filter_applied=bool(d.get("filter_applied", False)),
            name=d.get("name"),
        )


def evaluate_pair(
    est: RigidTransform,
    gt: RigidTransform,
    cloud0: PointCloud | None = None,
    cloud1: PointCloud | None = None,
    correspondences: CorrespondenceSet | None = None,
    filter_applied: bool = False,
    thresholds: Sequence[float] = INLIER_THRESHOLDS_M,
    name: str | None = None,
) -> PairEvaluation:
    chamfer = None
    if cloud0 is not None and cloud1 is not None:
        chamfer = chamfer_distance(cloud0, cloud1, est)
    ratio, amount = ({}, {}) if correspondences is None else correspondence_inlier_stats(correspondences, gt, thresholds)
    return PairEvaluation(rotation_error(est, gt), translation_error(est, gt), chamfer, ratio, amount,
                          filter_applied, name)


def lower_median(values: Sequence[float]) -> float:
    """Median; for even lengths the lower of the two middle elements."""
    s = sorted(values)
    return s[(len(s) - 1) // 2]


@dataclass
class MetricSummary:
    mean: float
    median: float
    accuracy: dict[float, float]


@dataclass
class BenchmarkSummary:
    count: int
    rotation: MetricSummary
    translation: MetricSummary
    chamfer: MetricSummary | None
    filter_recall: float
    mean_inlier_ratio: dict[float, float]
    mean_inlier_amount: dict[float, float]

    def to_dict(self) -> dict:
        def metric(m: MetricSummary | None):
            if m is None:
                return None
            return {"mean": m.mean, "median": m.median, "accuracy": {repr(k): v for k, v in m.accuracy.items()}}

        return {
            "count": self.count,
            "rotation_deg": metric(self.rotation),
            "translation_cm": metric(self.translation),
            "chamfer_mm": metric(self.chamfer),
            "filter_recall": self.filter_recall,
            "mean_inlier_ratio_by_threshold_m": {repr(k): v for k, v in self.mean_inlier_ratio.items()},
            "mean_inlier_amount_by_threshold_m": {repr(k): v for k, v in self.mean_inlier_amount.items()},
        }


def _metric(values: Sequence[float], thresholds: Sequence[float]) -> MetricSummary:
    n = len(values)
    acc = {float(t): sum(1 for v in values if v <= t) / n for t in thresholds}
    return MetricSummary(sum(values) / n, lower_median(values), acc)


def summarize(
    evals: Sequence[PairEvaluation],
    rotation_thresholds: Sequence[float] = ROTATION_THRESHOLDS_DEG,
    translation_thresholds: Sequence[float] = TRANSLATION_THRESHOLDS_CM,
    chamfer_thresholds: Sequence[float] = CHAMFER_THRESHOLDS_MM,
) -> BenchmarkSummary:
    """Means, lower medians and threshold accuracies; chamfer over the pairs that have one."""
    if not evals:
        raise EmptyInput("cannot summarize an empty list of evaluations")
    ch = [e.chamfer for e in evals if e.chamfer is not None]
    keys = sorted({k for e in evals for k in e.inlier_ratio_by_threshold}, reverse=True)
    with_stats = [e for e in evals if e.inlier_ratio_by_threshold]
    ratio = {k: sum(e.inlier_ratio_by_threshold.get(k, 0.0) for e in with_stats) / len(with_stats) for k in keys}
    amount = {k: sum(e.inlier_amount_by_threshold.get(k, 0) for e in with_stats) / len(with_stats) for k in keys}
    return BenchmarkSummary(
        count=len(evals),
        rotation=_metric([e.rotation_error for e in evals], rotation_thresholds),
        translation=_metric([e.translation_error for e in evals], translation_thresholds),
        chamfer=_metric(ch, chamfer_thresholds) if ch else None,
        filter_recall=sum(1 for e in evals if e.filter_applied) / len(evals),
        mean_inlier_ratio=ratio,
        mean_inlier_amount=amount,
    )


def format_table(rows: Mapping[str, BenchmarkSummary]) -> str:
    """Plain-text table: accuracies and mean/median for rotation (deg),
    translation (cm) and chamfer (mm), one row per method."""
    head1 = ["", "Rotation(deg)", "", "", "", "", "Translation(cm)", "", "", "", "", "Chamfer(mm)", "", "", "", ""]
    head2 = [""]
    for th in (ROTATION_THRESHOLDS_DEG, TRANSLATION_THRESHOLDS_CM, CHAMFER_THRESHOLDS_MM):
        head2 += [f"{t:g}" for t in th] + ["Mean", "Med."]
    body = []
    for name, s in rows.items():
        row = [name]
        for m in (s.rotation, s.translation, s.chamfer):
            if m is None:
                row += ["-"] * 5
            else:
                row += [f"{100.0 * v:.1f}" for v in m.accuracy.values()] + [f"{m.mean:.1f}", f"{m.median:.1f}"]
        body.append(row)
    table = [head1, head2] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(head2))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() for r in table)

