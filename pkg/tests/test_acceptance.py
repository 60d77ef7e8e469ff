"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line."""

import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.special import gammainc

from conftest import exact_set, random_transform, rotation_angle
from vgreg.chi2 import chi2_cdf, chi2_quantile
from vgreg.cli import main
from vgreg.core import CorrespondenceSet, PointCloud, RigidTransform, weighted_procrustes
from vgreg.features import lowe_ratio_filter, match_features
from vgreg.filtering import (
    FilterConfig,
    SkipReason,
    adaptive_threshold,
    assumed_inliers,
    estimate_variance,
    filter_geometric,
    run_filter,
)
from vgreg.metrics import (
    PairEvaluation,
    chamfer_distance,
    correspondence_inlier_stats,
    rotation_error,
    summarize,
    translation_error,
)
from vgreg.pipeline import PipelineConfig, register_correspondences, register_frames
from vgreg.ransac import RansacConfig, ransac_transform
from vgreg.rgbd import CameraIntrinsics, DepthImage, backproject
from vgreg.synth import RenderConfig, SynthConfig, generate_instance, render_frame_pair

TRIALS = 100


@pytest.fixture
def verdict(capsys):
    def report(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return report


def success(t: RigidTransform, gt: RigidTransform) -> bool:
    return rotation_error(t, gt) <= 1.0 and translation_error(t, gt) <= 2.0


def pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full Euclidean distance matrix by broadcasting (the O(n²) oracle)."""
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


# 1 -----------------------------------------------------------------------------


def gammainc_bisection_quantile(p, dof):
    lo, hi = 0.0, 1.0
    while gammainc(dof / 2, hi / 2) < p:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if gammainc(dof / 2, mid / 2) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_criterion_01_chi_square(verdict):
    q = chi2_quantile(0.95, 3)
    oracle = gammainc_bisection_quantile(0.95, 3)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        p, dof = rng.uniform(0.001, 0.999), int(rng.integers(1, 60))
        worst = max(worst, abs(chi2_cdf(chi2_quantile(p, dof), dof) - p))
    ok = abs(q - 7.814727903) < 1e-6 and abs(q - oracle) < 1e-6 and worst < 1e-9
    verdict(1, ok, f"q95(3)={q:.10f} oracle={oracle:.10f} max round-trip err={worst:.2e}")


# 2 -----------------------------------------------------------------------------


def test_criterion_02_variance_estimator(verdict):
    worst = 0.0
    for seed in range(20):
        inst = generate_instance(SynthConfig(rng_seed=seed, num_points=200, visual_count=0,
                                             geo_count=100_000, geo_inlier_ratio=1.0))
        worst = max(worst, abs(estimate_variance(inst.c_geo, inst.gt) / 1e-4 - 1.0))
    verdict(2, worst <= 0.03, f"max relative deviation of sigma^2 over 20 seeds = {worst:.4f}")


# 3 -----------------------------------------------------------------------------


def test_criterion_03_design_point(verdict):
    rng = np.random.default_rng(3)
    sigma = 0.01
    t = random_transform(rng)
    p = rng.uniform(-2, 2, (100_000, 3))
    c = CorrespondenceSet.build(p, t.apply(p) + rng.normal(0, sigma, p.shape))
    frac = len(filter_geometric(c, t, adaptive_threshold(sigma**2))) / len(c)
    verdict(3, 0.93 <= frac <= 0.97, f"retained fraction = {frac:.4f}")


# 4 -----------------------------------------------------------------------------


def test_criterion_04_filter_purity_and_retention(verdict):
    good = 0
    for seed in range(TRIALS):
        inst = generate_instance(SynthConfig(rng_seed=seed))
        out = run_filter(inst.c_vis, inst.c_geo)
        if not out.filter_applied:
            continue
        g = out.geometric_inliers
        ratio = float(np.mean(g.residuals(inst.gt) <= 0.10)) if len(g) else 0.0
        true = inst.geo_labels & (inst.c_geo.residuals(inst.gt) <= 0.025)
        kept = float(out.geometric_mask[true].mean())
        good += ratio >= 0.90 and kept >= 0.90
    verdict(4, good >= 95, f"{good}/{TRIALS} trials with ratio@10cm >= 0.90 and retention@2.5cm >= 0.90")


# 5 -----------------------------------------------------------------------------


def test_criterion_05_end_to_end_vs_union(verdict):
    filtered = union = 0
    for seed in range(TRIALS):
        inst = generate_instance(SynthConfig(rng_seed=seed))
        cfg = PipelineConfig(seed=seed)
        filtered += success(register_correspondences(inst.c_vis, inst.c_geo, cfg).transform, inst.gt)
        skip = dataclasses.replace(cfg, skip_filter=True)
        union += success(register_correspondences(inst.c_vis, inst.c_geo, skip).transform, inst.gt)
    verdict(5, filtered >= 95 and union < filtered,
            f"success filtered {filtered}/{TRIALS}, skip-filter {union}/{TRIALS}")


# 6 -----------------------------------------------------------------------------


def test_criterion_06_k_sweep(verdict):
    insts = [generate_instance(SynthConfig(rng_seed=s, visual_inlier_ratio=0.5)) for s in range(TRIALS)]
    rate, ratio = {}, {}
    for K in (1.0, 5.0, 7.0):
        ok, evals = 0, []
        for seed, inst in enumerate(insts):
            cfg = PipelineConfig(seed=seed, filter=FilterConfig(K=K))
            res = register_correspondences(inst.c_vis, inst.c_geo, cfg)
            ok += success(res.transform, inst.gt)
            r, a = correspondence_inlier_stats(res.outcome.merged, inst.gt)
            evals.append(PairEvaluation(0.0, 0.0, None, r, a, res.outcome.filter_applied))
        rate[K] = ok
        ratio[K] = summarize(evals).mean_inlier_ratio
    purer = all(ratio[1.0][tau] >= ratio[7.0][tau] for tau in ratio[1.0])
    detail = (f"success K=1 {rate[1.0]}, K=5 {rate[5.0]}; inlier ratio@2.5cm "
              f"K=1 {ratio[1.0][0.025]:.4f} vs K=7 {ratio[7.0][0.025]:.4f}")
    verdict(6, rate[5.0] >= rate[1.0] and purer, detail)


# 7 -----------------------------------------------------------------------------


def test_criterion_07_epsilon_tracks_noise(verdict):
    def mean_eps(sigma):
        eps = []
        for seed in range(TRIALS):
            inst = generate_instance(SynthConfig(rng_seed=seed, num_points=1000, visual_noise_sigma=sigma))
            out = run_filter(inst.c_vis, inst.c_geo)
            if out.error_model is not None:
                eps.append(out.error_model.epsilon)
        return float(np.mean(eps))

    hi, lo = mean_eps(0.02), mean_eps(0.005)
    verdict(7, hi > lo, f"mean epsilon: sigma 2 cm -> {hi * 100:.2f} cm, sigma 0.5 cm -> {lo * 100:.2f} cm")


# 8 -----------------------------------------------------------------------------


def test_criterion_08_skip_path(verdict):
    identical, reasons, evals = True, set(), []
    for seed in range(20):
        inst = generate_instance(SynthConfig(rng_seed=seed, visual_count=5))
        cfg = PipelineConfig(seed=seed)
        a = register_correspondences(inst.c_vis, inst.c_geo, cfg)
        b = register_correspondences(inst.c_vis, inst.c_geo, dataclasses.replace(cfg, skip_filter=True))
        identical &= np.array_equal(a.transform.as_matrix(), b.transform.as_matrix())
        identical &= np.array_equal(a.outcome.merged.source, b.outcome.merged.source)
        reasons.add(a.outcome.skip_reason)
        evals.append(PairEvaluation(rotation_error(a.transform, inst.gt), translation_error(a.transform, inst.gt),
                                    filter_applied=a.outcome.filter_applied))
    recall = summarize(evals).filter_recall
    ok = identical and reasons == {SkipReason.TOO_FEW_VISUAL} and recall == 0.0
    verdict(8, ok, f"bit-identical to union: {identical}; skip reasons {sorted(r.value for r in reasons)}; "
                   f"filter recall {recall}")


# 9 -----------------------------------------------------------------------------


def test_criterion_09_exactness(verdict):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        gt = random_transform(rng)
        c = exact_set(rng, gt, int(rng.integers(3, 200)))
        for t in (weighted_procrustes(c), ransac_transform(c, RansacConfig(rng_seed=int(rng.integers(1000)))).transform):
            worst = max(worst, rotation_angle(t.rotation.T @ gt.rotation),
                        float(np.linalg.norm(t.translation - gt.translation)))
    a = PointCloud(rng.normal(size=(500, 3)))
    ch = chamfer_distance(a, a, RigidTransform.identity())
    k = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 1000.0)
    depth = DepthImage.from_array(rng.integers(0, 6000, (48, 64)) * (rng.random((48, 64)) > 0.2))
    cloud, pix = backproject(depth, k, return_pixels=True)
    px_err = float(np.max(np.abs(k.project(cloud.points) - pix)))
    ok = worst <= 1e-9 and ch == 0.0 and px_err <= 1e-6
    verdict(9, ok, f"max pose err {worst:.2e}, chamfer(a,a)={ch}, reprojection err {px_err:.2e} px")


# 10 ----------------------------------------------------------------------------


def test_criterion_10_oracle_equivalence(verdict):
    rng = np.random.default_rng(10)
    failures = []
    for trial in range(50):
        n, m = int(rng.integers(2, 1001)), int(rng.integers(2, 1001))
        src = PointCloud(rng.normal(size=(n, 3)), descriptors=rng.normal(size=(n, 8)))
        dst = PointCloud(rng.normal(size=(m, 3)), descriptors=rng.normal(size=(m, 8)))
        d = pairwise(src.descriptors, dst.descriptors)

        matches = match_features(src, dst)
        nn = np.argmin(d, axis=1)
        if not np.array_equal(matches.target_index, nn):
            failures.append(f"match_features #{trial}")

        thr = float(rng.uniform(0.3, 1.0))
        part = np.sort(d, axis=1)
        expected = np.flatnonzero(part[:, 0] / part[:, 1] <= thr)
        if not np.array_equal(lowe_ratio_filter(matches, src.descriptors, dst.descriptors, thr).source_index,
                              expected):
            failures.append(f"lowe_ratio_filter #{trial}")

        t = random_transform(rng)
        c = CorrespondenceSet.build(src.points[:min(n, m)], t.apply(src.points[:min(n, m)])
                                    + rng.normal(0, 0.1, (min(n, m), 3)))
        r = np.array([math.sqrt(sum((a - b) ** 2 for a, b in zip(t.rotation @ p + t.translation, q)))
                      for p, q in zip(c.source, c.target)])
        eps, t_in, K = float(rng.uniform(0, 0.3)), float(rng.uniform(0.01, 0.1)), float(rng.uniform(1, 6))
        if not np.array_equal(filter_geometric(c, t, eps).source, c.source[r <= eps]):
            failures.append(f"filter_geometric #{trial}")
        if not np.array_equal(assumed_inliers(c, t, t_in, K).source, c.source[r <= K * t_in]):
            failures.append(f"assumed_inliers #{trial}")
        taus = [0.025, 0.05, 0.10, float(rng.uniform(0, 0.3))]
        ratio, amount = correspondence_inlier_stats(c, t, taus)
        if any(amount[tau] != int(np.sum(r <= tau)) or abs(ratio[tau] - np.mean(r <= tau)) > 1e-12
               for tau in taus):
            failures.append(f"correspondence_inlier_stats #{trial}")

        tp = t.apply(src.points)
        dd = pairwise(tp, dst.points)
        oracle = (dd.min(axis=1).mean() + dd.min(axis=0).mean()) / 2 * 1000
        if abs(chamfer_distance(src, dst, t) - oracle) > 1e-12 * max(1.0, oracle):
            failures.append(f"chamfer_distance #{trial}")
    verdict(10, not failures, f"{6 * 50 - len(failures)}/300 oracle comparisons equal"
                              + (f"; first mismatch {failures[0]}" if failures else ""))


# 11 ----------------------------------------------------------------------------


def test_criterion_11_determinism(verdict, tmp_path):
    outs = []
    for i, threads in enumerate((1, 8, 1, 8)):
        out = tmp_path / f"bench{i}.json"
        assert main(["bench", "--synth", "8", "--num-points", "1500", "--seed", "17", "--threads", str(threads),
                     "--out", str(out), "--compare-union"]) == 0
        outs.append(out.read_bytes())
    bench_same = all(o == outs[0] for o in outs)

    pair = render_frame_pair(RenderConfig(rng_seed=4))
    keys = []
    for threads in (1, 8, 1):
        res = register_frames(pair.depth0, pair.depth1, pair.intrinsics, pair.intrinsics, pair.matches,
                              PipelineConfig(seed=4, threads=threads))
        rep = res.report()
        keys.append(json.dumps({k: rep[k] for k in ("transform", "counts", "error_model", "skip_reason")}))
    frames_same = all(k == keys[0] for k in keys)
    verdict(11, bench_same and frames_same,
            f"bench JSON identical over threads 1/8 x2: {bench_same}; frame pipeline identical: {frames_same}")
