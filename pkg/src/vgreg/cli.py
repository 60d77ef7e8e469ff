"""Command-line interface: ``vgreg {register,synth,eval,bench,ablate-k}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import fileio
from ._parallel import ordered_map
from .core import CorrespondenceSet, Provenance, RigidTransform
from .errors import RegistrationError
from .filtering import FilterConfig
from .metrics import (
    INLIER_THRESHOLDS_M,
    PairEvaluation,
    evaluate_pair,
    format_table,
    summarize,
)
from .pipeline import PipelineConfig, RegistrationResult, StageError, register_correspondences, register_frames
from .rgbd import backproject
from .synth import RenderConfig, SynthConfig, generate_instance, render_frame_pair

log = logging.getLogger("vgreg")

CONFIG_ENV = "VGREG_CONFIG"


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _guard(stage: str, fn, *args, **kwargs):
    """Run ``fn`` and re-raise any failure as a CliError naming ``stage``."""
    try:
        return fn(*args, **kwargs)
    except CliError:
        raise
    except FileNotFoundError as exc:
        raise CliError(stage, f"no such file: {exc.filename}") from exc
    except (OSError, RegistrationError, ValueError, KeyError) as exc:
        raise CliError(stage, str(exc)) from exc


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help=f"JSON pipeline config (default: ${CONFIG_ENV} if set)")
    g.add_argument("--seed", type=int, help="RNG seed for RANSAC and fitting")
    g.add_argument("--threads", type=int, help="worker threads, 0 = all cores")
    g.add_argument("--skip-filter", action="store_true", default=None, help="fit on the unfiltered union")
    g.add_argument("--visual-kind", choices=("learned", "handcrafted"), help="selects the default K (3 or 5)")
    g.add_argument("--K", type=float, dest="K", help="multiplier for the assumed-inlier bound")
    g.add_argument("--voxel-size", type=float, help="meters")
    g.add_argument("--ratio-threshold", type=float, help="Lowe ratio test on geometric matches")
    g.add_argument("--inlier-threshold", type=float, help="RANSAC inlier threshold t_in, meters")


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults < JSON config file < command-line flags."""
    cfg = PipelineConfig()
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        cfg = _guard("config", lambda: PipelineConfig.from_dict(fileio.read_json(path)))
    over: dict = {}
    for flag, key in (("seed", "seed"), ("threads", "threads"), ("skip_filter", "skip_filter"),
                      ("visual_kind", "visual_kind"), ("voxel_size", "voxel_size"),
                      ("ratio_threshold", "ratio_threshold")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "K", None) is not None:
        over["filter"] = {"K": args.K}
    if getattr(args, "inlier_threshold", None) is not None:
        over["ransac"] = {"inlier_threshold": args.inlier_threshold}
    return _guard("config", PipelineConfig.from_dict, over, cfg)


def _emit(obj, out: str | None) -> None:
    if out:
        _guard("write", fileio.write_json, obj, out)
    else:
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------


def _read_corr(stage: str, path: str, prov: Provenance) -> CorrespondenceSet:
    c, _ = _guard(stage, fileio.read_correspondences, path, prov)
    return c


def _register(args, cfg: PipelineConfig) -> RegistrationResult:
    if args.vis_corr or args.geo_corr:
        if not (args.vis_corr and args.geo_corr):
            raise CliError("arguments", "--vis-corr and --geo-corr must be given together")
        c_vis = _read_corr("read vis-corr", args.vis_corr, Provenance.VISUAL)
        c_geo = _read_corr("read geo-corr", args.geo_corr, Provenance.GEOMETRIC)
        return _guard("register", register_correspondences, c_vis, c_geo, cfg)
    missing = [f for f in ("depth0", "depth1", "matches") if not getattr(args, f)]
    if missing or not (args.intrinsics or (args.intrinsics0 and args.intrinsics1)):
        raise CliError("arguments", "need --depth0 --depth1 --matches and --intrinsics (or --intrinsics0/1), "
                                    "or --vis-corr with --geo-corr")
    k0 = _guard(f"read intrinsics {args.intrinsics0 or args.intrinsics}", fileio.read_intrinsics,
                args.intrinsics0 or args.intrinsics)
    k1 = _guard(f"read intrinsics {args.intrinsics1 or args.intrinsics}", fileio.read_intrinsics,
                args.intrinsics1 or args.intrinsics)
    d0 = _guard(f"read depth {args.depth0}", fileio.read_depth, args.depth0, k0)
    d1 = _guard(f"read depth {args.depth1}", fileio.read_depth, args.depth1, k1)
    matches = _guard(f"read matches {args.matches}", fileio.read_visual_matches, args.matches)
    cloud0 = _guard(f"read cloud {args.cloud0}", fileio.read_ply, args.cloud0) if args.cloud0 else None
    cloud1 = _guard(f"read cloud {args.cloud1}", fileio.read_ply, args.cloud1) if args.cloud1 else None
    try:
        return register_frames(d0, d1, k0, k1, matches, cfg, cloud0, cloud1)
    except StageError as exc:
        raise CliError(exc.stage, str(exc.cause)) from exc


def cmd_register(args) -> int:
    cfg = load_config(args)
    result = _register(args, cfg)
    _emit(result.report(), args.out)
    if args.merged_out:
        _guard("write merged", fileio.write_correspondences, result.outcome.merged, args.merged_out)
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SYNTH_FLAGS = ("num_points", "noise_sigma", "visual_count", "visual_inlier_ratio", "geo_count",
                "geo_inlier_ratio", "visual_noise_sigma", "gt_rotation_range", "gt_translation_range")


def _synth_config(args, seed: int) -> SynthConfig:
    over = {f: getattr(args, f) for f in _SYNTH_FLAGS if getattr(args, f, None) is not None}
    return _guard("synth config", SynthConfig, rng_seed=seed, **over)


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic instance")
    g.add_argument("--num-points", type=int)
    g.add_argument("--noise-sigma", type=float, help="inlier noise per axis, meters")
    g.add_argument("--visual-count", type=int)
    g.add_argument("--visual-inlier-ratio", type=float)
    g.add_argument("--visual-noise-sigma", type=float, help="visual inlier noise; defaults to --noise-sigma")
    g.add_argument("--geo-count", type=int)
    g.add_argument("--geo-inlier-ratio", type=float)
    g.add_argument("--gt-rotation-range", type=float, help="degrees")
    g.add_argument("--gt-translation-range", type=float, help="meters")


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    _guard(f"create {out}", out.mkdir, parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    inst = generate_instance(_synth_config(args, seed))
    _guard("write", fileio.write_ply, inst.cloud0, out / "cloud0.ply")
    _guard("write", fileio.write_ply, inst.cloud1, out / "cloud1.ply")
    _guard("write", fileio.write_correspondences, inst.c_vis, out / "vis_corr.csv", inst.vis_labels)
    _guard("write", fileio.write_correspondences, inst.c_geo, out / "geo_corr.csv", inst.geo_labels)
    _guard("write", fileio.write_transform, inst.gt, out / "gt.json")
    if args.render:
        rp = render_frame_pair(RenderConfig(rng_seed=seed))
        _guard("write", fileio.write_depth, rp.depth0, out / "depth0.pgm")
        _guard("write", fileio.write_depth, rp.depth1, out / "depth1.pgm")
        _guard("write", fileio.write_intrinsics, rp.intrinsics, out / "intrinsics.json")
        _guard("write", fileio.write_visual_matches, rp.matches, out / "matches.csv")
        _guard("write", fileio.write_transform, rp.gt, out / "gt_frames.json")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def evaluate_report(report: dict, gt: RigidTransform, cloud0=None, cloud1=None,
                    merged: CorrespondenceSet | None = None, name=None) -> PairEvaluation:
    est = fileio.transform_from_json(report)
    return evaluate_pair(est, gt, cloud0, cloud1, merged, bool(report.get("filter_applied", False)),
                         INLIER_THRESHOLDS_M, name)


def cmd_eval(args) -> int:
    report = _guard(f"read report {args.report}", fileio.read_json, args.report)
    gt = _guard(f"read gt {args.gt}", fileio.read_transform, args.gt)
    c0 = _guard(f"read cloud {args.cloud0}", fileio.read_ply, args.cloud0) if args.cloud0 else None
    c1 = _guard(f"read cloud {args.cloud1}", fileio.read_ply, args.cloud1) if args.cloud1 else None
    merged = _guard(f"read corr {args.corr}", fileio.read_correspondences, args.corr)[0] if args.corr else None
    ev = _guard("evaluate", evaluate_report, report, gt, c0, c1, merged)
    _emit(ev.to_dict(), args.out)
    return 0


# ---------------------------------------------------------------------------
# bench / ablate-k
# ---------------------------------------------------------------------------


def _resolve(base: Path, p):
    return None if p is None else str(base / p)


def _load_manifest(path: str) -> list[dict]:
    doc = _guard(f"read manifest {path}", fileio.read_json, path)
    pairs = doc.get("pairs") if isinstance(doc, dict) else None
    if not isinstance(pairs, list) or not pairs:
        raise CliError(f"read manifest {path}", "expected a non-empty 'pairs' list")
    base = Path(path).parent
    out = []
    for i, entry in enumerate(pairs):
        e = dict(entry)
        e.setdefault("name", f"pair{i:03d}")
        for key in ("vis_corr", "geo_corr", "gt", "cloud0", "cloud1", "depth0", "depth1",
                    "intrinsics", "intrinsics0", "intrinsics1", "matches"):
            if key in e:
                e[key] = _resolve(base, e[key])
        out.append(e)
    return out


def run_pair(entry: dict, cfg: PipelineConfig) -> PairEvaluation:
    """Register and evaluate one manifest entry.

    An entry is either ``{"synth": {...SynthConfig fields...}}``, a pair of
    correspondence CSVs with ``gt``, or an RGB-D frame pair with ``gt``.
    """
    name = entry["name"]
    stage = f"pair {name}"
    if "synth" in entry:
        inst = generate_instance(_guard(stage, SynthConfig, **entry["synth"]))
        res = _guard(stage, register_correspondences, inst.c_vis, inst.c_geo, cfg)
        gt, c0, c1 = inst.gt, inst.cloud0, inst.cloud1
    elif "vis_corr" in entry:
        c_vis = _read_corr(stage, entry["vis_corr"], Provenance.VISUAL)
        c_geo = _read_corr(stage, entry["geo_corr"], Provenance.GEOMETRIC)
        res = _guard(stage, register_correspondences, c_vis, c_geo, cfg)
        gt = _guard(stage, fileio.read_transform, entry["gt"])
        c0 = _guard(stage, fileio.read_ply, entry["cloud0"]) if entry.get("cloud0") else None
        c1 = _guard(stage, fileio.read_ply, entry["cloud1"]) if entry.get("cloud1") else None
    else:
        k0 = _guard(stage, fileio.read_intrinsics, entry.get("intrinsics0") or entry["intrinsics"])
        k1 = _guard(stage, fileio.read_intrinsics, entry.get("intrinsics1") or entry["intrinsics"])
        d0 = _guard(stage, fileio.read_depth, entry["depth0"], k0)
        d1 = _guard(stage, fileio.read_depth, entry["depth1"], k1)
        m = _guard(stage, fileio.read_visual_matches, entry["matches"])
        res = _guard(stage, register_frames, d0, d1, k0, k1, m, cfg)
        gt = _guard(stage, fileio.read_transform, entry["gt"])
        c0, c1 = backproject(d0, k0), backproject(d1, k1)
    merged = res.outcome.merged
    return evaluate_pair(res.transform, gt, c0, c1, merged, res.outcome.filter_applied, INLIER_THRESHOLDS_M, name)


def _synth_manifest(args) -> list[dict]:
    over = {f: getattr(args, f) for f in _SYNTH_FLAGS if getattr(args, f, None) is not None}
    first = 0 if args.seed is None else args.seed
    return [{"name": f"synth{s:04d}", "synth": {**over, "rng_seed": s}} for s in range(first, first + args.synth)]


def _entries(args) -> list[dict]:
    if args.manifest and args.synth:
        raise CliError("arguments", "give either --manifest or --synth, not both")
    if args.manifest:
        return _load_manifest(args.manifest)
    if args.synth:
        return _synth_manifest(args)
    raise CliError("arguments", "need --manifest or --synth N")


def bench(entries: list[dict], cfg: PipelineConfig) -> list[PairEvaluation]:
    """Evaluate all entries; pairs run in parallel over ``cfg.threads``, each single-threaded."""
    inner = dataclasses.replace(cfg, threads=1)
    return ordered_map(lambda e: run_pair(e, inner), entries, cfg.threads)


def cmd_bench(args) -> int:
    cfg = load_config(args)
    entries = _entries(args)
    rows, per_pair = {}, {}
    variants = [("filtered", cfg)]
    if args.compare_union:
        variants.append(("union", dataclasses.replace(cfg, skip_filter=True)))
    for label, vcfg in variants:
        evals = bench(entries, vcfg)
        rows[label] = summarize(evals)
        per_pair[label] = [e.to_dict() for e in evals]
    summary = {label: s.to_dict() for label, s in rows.items()}
    _emit(summary, args.out)
    if args.evals_out:
        _guard("write", fileio.write_json, per_pair, args.evals_out)
    table = format_table(rows)
    if args.table:
        _guard("write", Path(args.table).write_text, table + "\n")
    elif args.out:
        print(table)
    return 0


def ablate_k(entries: list[dict], cfg: PipelineConfig, k_values) -> list[dict]:
    rows = []
    for k in k_values:
        kcfg = dataclasses.replace(cfg, filter=dataclasses.replace(cfg.filter, K=float(k)))
        s = summarize(bench(entries, kcfg))
        rows.append({
            "K": float(k),
            "rotation_accuracy": {repr(t): v for t, v in s.rotation.accuracy.items()},
            "translation_accuracy": {repr(t): v for t, v in s.translation.accuracy.items()},
            "mean_inlier_ratio_by_threshold_m": {repr(t): v for t, v in s.mean_inlier_ratio.items()},
            "mean_inlier_amount_by_threshold_m": {repr(t): v for t, v in s.mean_inlier_amount.items()},
            "filter_recall": s.filter_recall,
        })
    return rows


def format_k_table(rows: list[dict]) -> str:
    thr = [repr(t) for t in INLIER_THRESHOLDS_M]
    head = ["K", "RE@5", "RE@10", "TE@5", "TE@10"] + [f"IR@{float(t) * 100:g}cm" for t in thr] + ["Recall"]
    body = []
    for r in rows:
        ra, ta = list(r["rotation_accuracy"].values()), list(r["translation_accuracy"].values())
        ir = [r["mean_inlier_ratio_by_threshold_m"].get(t, float("nan")) for t in thr]
        body.append([f"{r['K']:g}"] + [f"{100 * v:.1f}" for v in ra[:2] + ta[:2] + ir]
                    + [f"{100 * r['filter_recall']:.1f}"])
    table = [head] + body
    widths = [max(len(x[i]) for x in table) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in table)


def cmd_ablate_k(args) -> int:
    cfg = load_config(args)
    try:
        ks = [float(x) for x in args.k_values.split(",") if x.strip()]
    except ValueError:
        raise CliError("arguments", f"--k-values must be comma-separated numbers, got {args.k_values!r}") from None
    _guard("arguments", lambda: [FilterConfig(K=k) for k in ks])
    rows = ablate_k(_entries(args), cfg, ks)
    _emit({"rows": rows}, args.out)
    table = format_k_table(rows)
    if args.table:
        _guard("write", Path(args.table).write_text, table + "\n")
    elif args.out:
        print(table)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vgreg", description="Point cloud registration from visual and geometric matches.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register one pair and write a JSON report")
    g = p.add_argument_group("frame input")
    for name in ("depth0", "depth1", "intrinsics", "intrinsics0", "intrinsics1", "matches", "cloud0", "cloud1"):
        g.add_argument(f"--{name}")
    g = p.add_argument_group("correspondence input")
    g.add_argument("--vis-corr", help="visual correspondence CSV")
    g.add_argument("--geo-corr", help="geometric correspondence CSV")
    p.add_argument("--out", help="report path (stdout when omitted)")
    p.add_argument("--merged-out", help="write the fitted correspondence set as CSV")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("synth", help="write a planted instance to a directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--render", action="store_true", help="also write a rendered RGB-D frame pair")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="compare a register report with a ground-truth transform")
    p.add_argument("--report", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--cloud0")
    p.add_argument("--cloud1")
    p.add_argument("--corr", help="correspondence CSV for inlier ratio/amount (e.g. --merged-out)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (("bench", cmd_bench, "run a manifest and summarize"),
                                 ("ablate-k", cmd_ablate_k, "sweep the K multiplier")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", help="JSON with a 'pairs' list")
        p.add_argument("--synth", type=int, help="use N planted instances seeded from --seed")
        p.add_argument("--out", help="summary JSON (stdout when omitted)")
        p.add_argument("--table", help="plain-text table path")
        if name == "bench":
            p.add_argument("--evals-out", help="per-pair evaluations JSON")
            p.add_argument("--compare-union", action="store_true", help="add a row with the filter skipped")
        else:
            p.add_argument("--k-values", default="1,3,5,7")
        _add_pipeline_flags(p)
        _add_synth_flags(p)
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"vgreg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
