import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_transform, rodrigues, seeds
from vgreg.core import CorrespondenceSet, PointCloud, RigidTransform
from vgreg.errors import EmptyInput, InvalidArgument
from vgreg.metrics import (
    PairEvaluation,
    chamfer_distance,
    correspondence_inlier_stats,
    evaluate_pair,
    format_table,
    lower_median,
    rotation_error,
    summarize,
    translation_error,
)


def quaternion_angle_deg(r: np.ndarray) -> float:
    """Angle via the largest-component quaternion extraction."""
    tr = np.trace(r)
    cands = [tr, r[0, 0], r[1, 1], r[2, 2]]
    k = int(np.argmax(cands))
    if k == 0:
        w = math.sqrt(1 + tr) / 2
        v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / (4 * w)
    else:
        i, j, l = k - 1, k % 3, (k + 1) % 3
        v = np.zeros(3)
        v[i] = math.sqrt(1 + 2 * r[i, i] - tr) / 2
        w = (r[l, j] - r[j, l]) / (4 * v[i])
        v[j] = (r[j, i] + r[i, j]) / (4 * v[i])
        v[l] = (r[l, i] + r[i, l]) / (4 * v[i])
    return math.degrees(2 * math.atan2(np.linalg.norm(v), abs(w)))


def ev(re, te=0.0, ch=None, applied=False, ratio=None, amount=None):
    return PairEvaluation(re, te, ch, ratio or {}, amount or {}, applied)


# --- rotation / translation -------------------------------------------------


def test_rotation_error_identity_and_quarter_turn(rng):
    t = random_transform(rng)
    assert rotation_error(t, t) == pytest.approx(0.0, abs=1e-6)
    q = RigidTransform(rodrigues(rng.normal(size=3), math.pi / 2) @ t.rotation, t.translation)
    assert rotation_error(q, t) == pytest.approx(90.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_rotation_error_matches_quaternion_oracle_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_transform(rng), random_transform(rng)
    # arccos loses precision near 0 and 180, so keep the oracle comparison away from those
    expected = quaternion_angle_deg(b.rotation.T @ a.rotation)
    if 1e-3 < expected < 179.999:
        assert rotation_error(a, b) == pytest.approx(expected, abs=1e-9)
    assert rotation_error(a, b) == pytest.approx(rotation_error(b, a), abs=1e-9)
    assert 0.0 <= rotation_error(a, b) <= 180.0


def test_translation_three_four_five():
    a = RigidTransform(np.eye(3), [0.03, 0.04, 0.0])
    assert translation_error(a, RigidTransform.identity()) == pytest.approx(5.0, abs=1e-12)
    assert translation_error(a, a) == 0.0


def test_translation_matches_direct_norm(rng):
    for _ in range(20):
        a, b = random_transform(rng), random_transform(rng)
        d = [a.translation[i] - b.translation[i] for i in range(3)]
        assert translation_error(a, b) == pytest.approx(100 * math.sqrt(sum(x * x for x in d)), abs=1e-12)


# --- chamfer ----------------------------------------------------------------


def brute_chamfer(a, b):
    def directed(x, y):
        return sum(min(math.dist(p, q) for q in y) for p in x) / len(x)

    return (directed(a, b) + directed(b, a)) / 2 * 1000


def test_chamfer_single_pair_one_mm():
    a, b = PointCloud([[0.0, 0, 0]]), PointCloud([[0.0, 0, 0.001]])
    assert chamfer_distance(a, b, RigidTransform.identity()) == pytest.approx(1.0, abs=1e-12)


def test_chamfer_perfect_alignment(rng):
    t = random_transform(rng)
    a = rng.normal(size=(300, 3))
    assert chamfer_distance(PointCloud(a), PointCloud(t.apply(a)), t) < 1e-9
    assert chamfer_distance(PointCloud(a), PointCloud(a), RigidTransform.identity()) == 0.0


def test_chamfer_against_double_loop(rng):
    a, b = rng.uniform(size=(500, 3)), rng.uniform(size=(500, 3))
    t = random_transform(rng, max_shift=0.1)
    got = chamfer_distance(PointCloud(a), PointCloud(b), t)
    assert got == pytest.approx(brute_chamfer(t.apply(a).tolist(), b.tolist()), abs=1e-9)


def test_chamfer_joint_rigid_invariance(rng):
    a, b = rng.normal(size=(200, 3)), rng.normal(size=(150, 3))
    t, extra = random_transform(rng), random_transform(rng)
    before = chamfer_distance(PointCloud(a), PointCloud(b), t)
    after = chamfer_distance(PointCloud(a), PointCloud(extra.apply(b)), extra.compose(t))
    assert after == pytest.approx(before, abs=1e-9)


def test_chamfer_empty_cloud():
    with pytest.raises(InvalidArgument):
        chamfer_distance(PointCloud(np.zeros((0, 3))), PointCloud([[0.0, 0, 0]]), RigidTransform.identity())


# --- summaries --------------------------------------------------------------


def test_summary_singleton():
    s = summarize([ev(3.0)])
    assert s.rotation.accuracy[5.0] == 1.0 and s.rotation.median == 3.0 and s.count == 1


def test_summary_hand_count():
    s = summarize([ev(1.0), ev(6.0), ev(50.0)])
    assert s.rotation.accuracy == {5.0: 1 / 3, 10.0: 2 / 3, 45.0: 2 / 3}
    assert s.rotation.mean == 19.0 and s.rotation.median == 6.0


def test_lower_median_even():
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0


def test_summary_empty():
    with pytest.raises(EmptyInput):
        summarize([])


def test_summary_against_streaming_recount(rng):
    evals = []
    for _ in range(1000):
        ratio = {0.1: rng.random(), 0.05: rng.random(), 0.025: rng.random()}
        amount = {k: int(rng.integers(0, 500)) for k in ratio}
        evals.append(ev(rng.uniform(0, 180), rng.uniform(0, 60), rng.uniform(0, 30) if rng.random() < 0.8 else None,
                        bool(rng.random() < 0.7), ratio, amount))
    s = summarize(evals)

    re_sum = te_sum = ch_sum = 0.0
    ch_n = applied = 0
    re_acc = dict.fromkeys((5.0, 10.0, 45.0), 0)
    te_acc = dict.fromkeys((5.0, 10.0, 25.0), 0)
    ch_acc = dict.fromkeys((1.0, 5.0, 10.0), 0)
    ratio_sum = dict.fromkeys((0.1, 0.05, 0.025), 0.0)
    for e in evals:
        re_sum += e.rotation_error
        te_sum += e.translation_error
        applied += e.filter_applied
        for k in re_acc:
            re_acc[k] += e.rotation_error <= k
        for k in te_acc:
            te_acc[k] += e.translation_error <= k
        if e.chamfer is not None:
            ch_n += 1
            ch_sum += e.chamfer
            for k in ch_acc:
                ch_acc[k] += e.chamfer <= k
        for k in ratio_sum:
            ratio_sum[k] += e.inlier_ratio_by_threshold[k]

    assert s.rotation.mean == pytest.approx(re_sum / 1000, rel=1e-12)
    assert s.translation.mean == pytest.approx(te_sum / 1000, rel=1e-12)
    assert s.chamfer.mean == pytest.approx(ch_sum / ch_n, rel=1e-12)
    assert s.rotation.accuracy == {k: v / 1000 for k, v in re_acc.items()}
    assert s.translation.accuracy == {k: v / 1000 for k, v in te_acc.items()}
    assert s.chamfer.accuracy == {k: v / ch_n for k, v in ch_acc.items()}
    assert s.filter_recall == applied / 1000
    for k, v in ratio_sum.items():
        assert s.mean_inlier_ratio[k] == pytest.approx(v / 1000, rel=1e-12)
    res = sorted(e.rotation_error for e in evals)
    assert s.rotation.median == res[499]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=180), min_size=1, max_size=50))
def test_accuracy_non_decreasing(values):
    s = summarize([ev(v, v, v) for v in values])
    for m in (s.rotation, s.translation, s.chamfer):
        acc = list(m.accuracy.values())
        assert acc == sorted(acc)
    assert 0.0 <= s.filter_recall <= 1.0


# --- inlier stats -----------------------------------------------------------


def residual_set(rng, errors):
    p = rng.normal(size=(len(errors), 3))
    d = rng.normal(size=(len(errors), 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return CorrespondenceSet.build(p, p + d * np.asarray(errors)[:, None])


def test_inlier_stats_hand_count(rng):
    ratio, amount = correspondence_inlier_stats(residual_set(rng, [0.01, 0.04, 0.20]), RigidTransform.identity(),
                                                [0.025, 0.05, 0.10])
    assert amount == {0.025: 1, 0.05: 2, 0.10: 2}
    assert ratio[0.05] == pytest.approx(2 / 3)


def test_inlier_stats_exact_and_empty(rng):
    t = random_transform(rng)
    p = rng.normal(size=(10, 3))
    ratio, _ = correspondence_inlier_stats(CorrespondenceSet.build(p, t.apply(p)), t)
    assert all(v == 1.0 for v in ratio.values())
    ratio, amount = correspondence_inlier_stats(CorrespondenceSet.empty(), t)
    assert all(v == 0.0 for v in ratio.values()) and all(v == 0 for v in amount.values())


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_inlier_stats_brute_force_and_monotone(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng)
    c = CorrespondenceSet.build(rng.normal(size=(80, 3)), rng.normal(size=(80, 3)))
    taus = sorted(rng.uniform(0, 3, 4))
    _, amount = correspondence_inlier_stats(c, t, taus)
    for tau in taus:
        assert amount[tau] == sum(math.dist(t.apply(p), q) <= tau for p, q in zip(c.source, c.target))
    assert [amount[tau] for tau in taus] == sorted(amount.values())


# --- serialization / table --------------------------------------------------


def test_pair_evaluation_round_trip(rng):
    t, gt = random_transform(rng), random_transform(rng)
    e = evaluate_pair(t, gt, PointCloud(rng.normal(size=(20, 3))), PointCloud(rng.normal(size=(20, 3))),
                      residual_set(rng, rng.uniform(0, 0.2, 30)), True, name="pair")
    back = PairEvaluation.from_dict(e.to_dict())
    assert back == e


def test_format_table_layout():
    s = summarize([ev(1.0, 2.0, 0.5), ev(20.0, 30.0, None)])
    lines = format_table({"ours": s, "base": s}).splitlines()
    assert len(lines) == 4
    assert lines[2].split()[0] == "ours"
    assert lines[2].split()[1:4] == ["50.0", "50.0", "100.0"]
    assert "Rotation(deg)" in lines[0] and "Med." in lines[1]
