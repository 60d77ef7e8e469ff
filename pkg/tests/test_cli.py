import json

import numpy as np
import pytest

from vgreg import fileio
from vgreg.cli import main
from vgreg.core import CorrespondenceSet
from vgreg.fitting import FittingConfig, fit_transform
from vgreg.metrics import PairEvaluation, rotation_error, summarize, translation_error


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run("synth", "--out-dir", out, "--seed", 3, "--noise-sigma", 0, "--num-points", 2000,
               "--visual-inlier-ratio", 1.0, "--render") == 0
    return out


def load(path):
    return json.loads(path.read_text())


def test_synth_writes_all_files(exported):
    for name in ("cloud0.ply", "cloud1.ply", "vis_corr.csv", "geo_corr.csv", "gt.json",
                 "depth0.pgm", "depth1.pgm", "intrinsics.json", "matches.csv", "gt_frames.json"):
        assert (exported / name).is_file(), name
    _, labels = fileio.read_correspondences(exported / "geo_corr.csv")
    assert labels.sum() == 150


def test_register_exact_export_matches_gt(exported, tmp_path):
    out = tmp_path / "r.json"
    assert run("register", "--vis-corr", exported / "vis_corr.csv", "--geo-corr", exported / "geo_corr.csv",
               "--out", out) == 0
    rep = load(out)
    est, gt = fileio.transform_from_json(rep), fileio.read_transform(exported / "gt.json")
    assert rotation_error(est, gt) < 0.1
    assert translation_error(est, gt) < 0.1
    assert rep["filter_applied"] is True and rep["skip_reason"] == "none"
    assert set(rep["error_model"]) >= {"sigma_sq_m2", "epsilon_m", "t_in_m", "K"}
    assert rep["counts"]["visual"] == 30 and rep["counts"]["geometric"] == 1000


def test_register_frames(exported, tmp_path):
    out = tmp_path / "r.json"
    assert run("register", "--depth0", exported / "depth0.pgm", "--depth1", exported / "depth1.pgm",
               "--intrinsics", exported / "intrinsics.json", "--matches", exported / "matches.csv",
               "--out", out) == 0
    rep = load(out)
    est, gt = fileio.transform_from_json(rep), fileio.read_transform(exported / "gt_frames.json")
    assert rotation_error(est, gt) < 1.0 and translation_error(est, gt) < 2.0
    assert {"backproject", "fpfh", "filter", "fit"} <= set(rep["timings_s"])


def test_missing_intrinsics_names_path(exported, tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = run("register", "--depth0", exported / "depth0.pgm", "--depth1", exported / "depth1.pgm",
               "--intrinsics", missing, "--matches", exported / "matches.csv")
    assert code != 0
    assert str(missing) in capsys.readouterr().err


def test_malformed_matches_reports_line(exported, tmp_path, capsys):
    bad = tmp_path / "m.csv"
    bad.write_text("u0,v0,u1,v1\n1,2,3,4\n1,2,3\n")
    code = run("register", "--depth0", exported / "depth0.pgm", "--depth1", exported / "depth1.pgm",
               "--intrinsics", exported / "intrinsics.json", "--matches", bad)
    err = capsys.readouterr().err
    assert code == 1 and "line 3" in err and err.startswith("vgreg register: error:")


def test_skip_filter_equals_union_fit(exported, tmp_path):
    out = tmp_path / "r.json"
    assert run("register", "--vis-corr", exported / "vis_corr.csv", "--geo-corr", exported / "geo_corr.csv",
               "--skip-filter", "--seed", 5, "--out", out) == 0
    rep = load(out)
    assert rep["filter_applied"] is False and rep["error_model"] is None
    c_vis, _ = fileio.read_correspondences(exported / "vis_corr.csv")
    c_geo, _ = fileio.read_correspondences(exported / "geo_corr.csv")
    t, _ = fit_transform(CorrespondenceSet.concat(c_vis, c_geo), FittingConfig(rng_seed=6))
    assert np.array_equal(fileio.transform_from_json(rep).as_matrix(), t.as_matrix())


def test_eval_consumes_register_output(exported, tmp_path):
    rep, merged, ev = tmp_path / "r.json", tmp_path / "m.csv", tmp_path / "e.json"
    assert run("register", "--vis-corr", exported / "vis_corr.csv", "--geo-corr", exported / "geo_corr.csv",
               "--out", rep, "--merged-out", merged) == 0
    assert run("eval", "--report", rep, "--gt", exported / "gt.json", "--cloud0", exported / "cloud0.ply",
               "--cloud1", exported / "cloud1.ply", "--corr", merged, "--out", ev) == 0
    e = PairEvaluation.from_dict(load(ev))
    assert e.rotation_error < 0.1 and e.chamfer is not None and e.filter_applied
    # noise-free inliers survive, so every merged pair is within 2.5 cm
    assert e.inlier_ratio_by_threshold[0.025] == 1.0


def test_bench_summary_matches_per_pair_evals(tmp_path):
    out, evals = tmp_path / "s.json", tmp_path / "e.json"
    assert run("bench", "--synth", 4, "--num-points", 800, "--out", out, "--evals-out", evals,
               "--compare-union", "--table", tmp_path / "t.txt") == 0
    summary, per_pair = load(out), load(evals)
    assert set(summary) == {"filtered", "union"}
    for label in summary:
        recomputed = summarize([PairEvaluation.from_dict(d) for d in per_pair[label]]).to_dict()
        assert recomputed == summary[label]
    assert "filtered" in (tmp_path / "t.txt").read_text()


def test_bench_manifest_relative_paths(exported, tmp_path):
    man = exported / "manifest.json"
    man.write_text(json.dumps({"pairs": [
        {"name": "csv", "vis_corr": "vis_corr.csv", "geo_corr": "geo_corr.csv", "gt": "gt.json"},
        {"name": "gen", "synth": {"rng_seed": 1, "num_points": 500}},
    ]}))
    evals = tmp_path / "e.json"
    assert run("bench", "--manifest", man, "--out", tmp_path / "s.json", "--evals-out", evals) == 0
    names = [d["name"] for d in load(evals)["filtered"]]
    assert names == ["csv", "gen"]


def test_config_precedence(exported, tmp_path, monkeypatch):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 11, "filter": {"K": 4.0}, "voxel_size": 0.05}))
    args = ["register", "--vis-corr", exported / "vis_corr.csv", "--geo-corr", exported / "geo_corr.csv"]

    out = tmp_path / "a.json"
    assert run(*args, "--config", cfg_file, "--K", 6, "--out", out) == 0
    cfg = load(out)["config"]
    assert (cfg["seed"], cfg["filter"]["K"], cfg["voxel_size"]) == (11, 6.0, 0.05)

    monkeypatch.setenv("VGREG_CONFIG", str(cfg_file))
    assert run(*args, "--out", out) == 0
    cfg = load(out)["config"]
    assert (cfg["seed"], cfg["filter"]["K"]) == (11, 4.0)

    monkeypatch.delenv("VGREG_CONFIG")
    assert run(*args, "--visual-kind", "handcrafted", "--out", out) == 0
    assert load(out)["config"]["filter"]["K"] == 5.0


def test_bad_config_key(tmp_path, exported, capsys):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text('{"voxel": 1}')
    assert run("register", "--vis-corr", exported / "vis_corr.csv", "--geo-corr", exported / "geo_corr.csv",
               "--config", cfg_file) == 1
    assert "[config]" in capsys.readouterr().err


def test_seeded_runs_identical_across_threads(tmp_path):
    outs = []
    for threads in (1, 8, 1):
        out = tmp_path / f"s{threads}_{len(outs)}.json"
        assert run("bench", "--synth", 6, "--num-points", 500, "--seed", 7, "--threads", threads,
                   "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_ablate_k(tmp_path, capsys):
    out = tmp_path / "k.json"
    assert run("ablate-k", "--synth", 3, "--num-points", 500, "--k-values", "1,5", "--out", out) == 0
    rows = load(out)["rows"]
    assert [r["K"] for r in rows] == [1.0, 5.0]
    assert capsys.readouterr().out.splitlines()[0].split()[0] == "K"


def test_ablate_k_rejects_bad_values(capsys):
    assert run("ablate-k", "--synth", 1, "--k-values", "0.5") == 1
    assert run("ablate-k", "--synth", 1, "--k-values", "a,b") == 1
