"""``relief`` command-line front end.

Logs go to stderr, machine-readable summaries to stdout as JSON lines.
On failure a command prints one JSON error line to stderr and exits 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .differential import SCHEMES, depth_to_normal
from .fusion import fuse_pipeline
from .grid import DepthMap, GridError, viz_depth, viz_normals
from .integration import integrate_normals, refine_depth_label
from .io import (
    FormatError,
    atomic_write_bytes,
    load_depth,
    load_normals,
    save_depth,
    save_png8,
    save_normals,
    sidecar_path,
)
from .metrics import (
    DEPTH_TABLE_METRICS,
    NORMAL_TABLE_METRICS,
    MetricError,
    MetricReport,
    evaluate_pair,
    rank_reports,
    write_comparison,
)

log = logging.getLogger("relief")

DEPTH_SUFFIXES = (".pfm", ".png")
MANIFEST_VERSION = 1


class CommandError(Exception):
    """Expected failure with a user-facing message."""


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _write_json(path: Path, data) -> None:
    atomic_write_bytes(path, (json.dumps(data, indent=2, sort_keys=True) + "\n").encode())


def _depth_outputs(path: Path) -> list:
    return [path, sidecar_path(path)] if path.suffix.lower() == ".png" else [path]


def _remove(paths) -> None:
    for p in paths:
        try:
            Path(p).unlink()
        except FileNotFoundError:
            pass


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    cfg = cfg.override("fusion", tau=getattr(args, "tau", None), k=getattr(args, "k", None),
                       scale_min=getattr(args, "scale_min", None),
                       scale_max=getattr(args, "scale_max", None))
    cfg = cfg.override("integration", mu=getattr(args, "mu", None),
                       cg_tolerance=getattr(args, "cg_tolerance", None),
                       max_cg_iters=getattr(args, "max_cg_iters", None),
                       outer_iters=getattr(args, "outer_iters", None),
                       edge_sigma=getattr(args, "edge_sigma", None))
    return cfg


# --------------------------------------------------------------------------
# commands

def cmd_pseudo_label(args) -> int:
    cfg = _resolve_config(args)
    rel = load_depth(args.rel_depth)
    detail = load_normals(args.detail_normal)
    if rel.shape != detail.shape:
        raise CommandError(f"size mismatch: depth {rel.shape} vs normals {detail.shape}")

    fused, found = fuse_pipeline(rel, detail, cfg.fusion)
    d_init = rel.with_values(found.scale * rel.values)
    depth, report = integrate_normals(fused, d_init, cfg.integration)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    normal_path = out_dir / ("fused_normals" + cfg.io.normal_suffix)
    depth_path = out_dir / ("pseudo_label" + cfg.io.depth_suffix)
    manifest_path = out_dir / "manifest.json"
    written = [normal_path, *_depth_outputs(depth_path), manifest_path]
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "inputs": {"rel_depth": str(args.rel_depth), "detail_normal": str(args.detail_normal)},
        "outputs": {"fused_normals": normal_path.name, "pseudo_label": depth_path.name},
        "scale": found.scale,
        "objective": found.objective,
        "scale_evaluations": found.evaluations,
        "scale_degenerate": found.degenerate,
        "solver_residual": report.final_relative_residual,
        "cg_iterations": report.cg_iterations_used,
        "converged": report.converged,
        "energy": report.energy,
        "thickness": depth.thickness,
        "config": cfg.to_dict(),
    }
    try:
        save_normals(fused, normal_path)
        save_depth(depth, depth_path, cfg.io.depth_format)
        _write_json(manifest_path, manifest)
    except BaseException:
        _remove(written)
        raise
    _emit({"command": "pseudo-label", "status": "ok", "out_dir": str(out_dir),
           "scale": found.scale, "thickness": depth.thickness,
           "solver_residual": report.final_relative_residual})
    return 0


def cmd_refine(args) -> int:
    cfg = _resolve_config(args)
    rough = load_depth(args.rough_depth)
    normals = load_normals(args.normal)
    if rough.shape != normals.shape:
        raise CommandError(f"size mismatch: depth {rough.shape} vs normals {normals.shape}")
    out = Path(args.out_path)
    refined = refine_depth_label(rough, normals, cfg.integration.mu, cfg.integration)
    try:
        save_depth(refined, out)
    except BaseException:
        _remove(_depth_outputs(out))
        raise
    rms = float(np.sqrt(np.mean((refined.values - rough.values)[rough.valid] ** 2)))
    _emit({"command": "refine", "status": "ok", "out": str(out), "mu": cfg.integration.mu,
           "rms_change": rms, "thickness": refined.thickness})
    return 0


def _depth_files(directory: Path) -> dict:
    if not directory.is_dir():
        raise CommandError(f"not a directory: {directory}")
    found = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in DEPTH_SUFFIXES and p.is_file():
            if p.stem in found:
                raise CommandError(f"duplicate stem {p.stem!r} in {directory}")
            found[p.stem] = p
    return found


def _pairs(pred_dir: Path, gt_dir: Path, allow_partial: bool) -> list:
    preds = _depth_files(pred_dir)
    gts = _depth_files(gt_dir)
    common = sorted(set(preds) & set(gts))
    unmatched = sorted(set(preds) ^ set(gts))
    if not common:
        raise CommandError(f"no matching files between {pred_dir} and {gt_dir}")
    if unmatched:
        msg = f"unmatched files: {', '.join(unmatched)}"
        if not allow_partial:
            raise CommandError(msg)
        log.warning(msg)
    return [(stem, preds[stem], gts[stem]) for stem in common]


def _manifest_pairs(path: Path) -> list:
    data = json.loads(Path(path).read_text())
    base = Path(path).parent
    if isinstance(data, dict):
        data = [{"id": k, **v} for k, v in data.items()]
    pairs = []
    for item in data:
        pairs.append((str(item["id"]), base / item["pred"], base / item["gt"]))
    if not pairs:
        raise CommandError(f"{path}: no pairs listed")
    return pairs


def _evaluate(pairs, jobs: int, method: str) -> MetricReport:
    def one(pair):
        stem, pred_path, gt_path = pair
        pred = load_depth(pred_path)
        gt = load_depth(gt_path)
        if pred.shape != gt.shape:
            raise CommandError(f"{stem}: size mismatch {pred.shape} vs {gt.shape}")
        return evaluate_pair(pred, gt, stem)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, pairs))
    else:
        rows = [one(p) for p in pairs]
    return MetricReport(rows, method=method)


def _report_paths(out: Path) -> tuple:
    if out.suffix.lower() in (".csv", ".json"):
        return out.with_suffix(".csv"), out.with_suffix(".json")
    return out.with_name(out.name + ".csv"), out.with_name(out.name + ".json")


def cmd_eval(args) -> int:
    gt_dir = Path(args.gt_dir)
    csv_path, json_path = _report_paths(Path(args.out_report))
    if args.manifest:
        method_pairs = [(Path(args.pred_dir).name, _manifest_pairs(Path(args.manifest)))]
    else:
        method_pairs = []
        for d in [args.pred_dir, *args.compare]:
            d = Path(d)
            method_pairs.append((d.name or str(d), _pairs(d, gt_dir, args.allow_partial)))
    names = [m for m, _ in method_pairs]
    if len(set(names)) != len(names):
        method_pairs = [(str(Path(d)), p) for d, (_, p) in
                        zip([args.pred_dir, *args.compare], method_pairs)]

    reports = [_evaluate(pairs, args.jobs, name) for name, pairs in method_pairs]
    metrics = NORMAL_TABLE_METRICS if args.rank_by == "normal" else DEPTH_TABLE_METRICS
    written = [csv_path, json_path]
    try:
        if len(reports) == 1:
            reports[0].write_csv(csv_path)
            _write_json(json_path, reports[0].to_json())
        else:
            rank_reports(reports, metrics)
            write_comparison(reports, csv_path, json_path)
    except BaseException:
        _remove(written)
        raise
    for r in reports:
        _emit({"command": "eval", "method": r.method, "images": len(r.per_image),
               "aggregate": r.aggregate, "rank": r.rank})
    return 0


def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    if args.to_normals:
        depth = load_depth(src)
        save_normals(depth_to_normal(depth, args.scheme), dst)
    else:
        depth = load_depth(src)
        save_depth(depth, dst)
    _emit({"command": "convert", "status": "ok", "input": str(src), "output": str(dst)})
    return 0


def cmd_viz(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    degenerate = False
    if args.normals:
        save_png8(dst, viz_normals(load_normals(src)))
    else:
        img, degenerate = viz_depth(load_depth(src))
        save_png8(dst, img)
    _emit({"command": "viz", "status": "ok", "output": str(dst), "warning": degenerate})
    return 0


def thickness_histogram(thicknesses, bin_width: float = 25.0) -> list:
    """Rows ``(bin_start, bin_end, count)`` covering every sample, from 0."""
    t = np.asarray(list(thicknesses), dtype=np.float64)
    if t.size == 0:
        return []
    n_bins = int(np.floor(t.max() / bin_width)) + 1
    idx = np.floor(t / bin_width).astype(int)
    counts = np.bincount(idx, minlength=n_bins)
    return [(i * bin_width, (i + 1) * bin_width, int(c)) for i, c in enumerate(counts)]


def cmd_stats(args) -> int:
    files = []
    for p in map(Path, args.paths):
        if p.is_dir():
            files.extend(sorted(f for f in p.iterdir() if f.suffix.lower() in DEPTH_SUFFIXES))
        else:
            files.append(p)
    if not files:
        raise CommandError("no depth files found")
    thick = [load_depth(f).thickness for f in files]
    rows = thickness_histogram(thick, args.bin_width)
    lines = ["bin_start,bin_end,count"] + [f"{a:g},{b:g},{c}" for a, b, c in rows]
    atomic_write_bytes(Path(args.out), ("\n".join(lines) + "\n").encode())
    _emit({"command": "stats", "files": len(files), "min_thickness": min(thick),
           "max_thickness": max(thick), "mean_thickness": float(np.mean(thick))})
    return 0


# --------------------------------------------------------------------------
# parser

def _add_fusion_flags(p) -> None:
    p.add_argument("--tau", type=float, help="slope knee of the normal transformation (px/px)")
    p.add_argument("--k", type=float, help="attenuation sharpness")
    p.add_argument("--scale-min", type=float)
    p.add_argument("--scale-max", type=float)


def _add_solver_flags(p, rounds=True) -> None:
    p.add_argument("--mu", type=float, help="depth-fidelity weight")
    p.add_argument("--cg-tolerance", type=float)
    p.add_argument("--max-cg-iters", type=int)
    if rounds:
        p.add_argument("--outer-iters", type=int)
        p.add_argument("--edge-sigma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relief", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pseudo-label", help="fuse relative depth and detail normals into a depth label")
    p.add_argument("rel_depth")
    p.add_argument("detail_normal")
    p.add_argument("out_dir")
    p.add_argument("--config")
    _add_fusion_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("refine", help="refine a rough depth label with a normal map")
    p.add_argument("rough_depth")
    p.add_argument("normal")
    p.add_argument("out_path")
    p.add_argument("--config")
    _add_solver_flags(p, rounds=False)  # refine is a single screened solve
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score predicted depth maps against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("out_report", help="report path; .csv and .json are written")
    p.add_argument("--compare", nargs="*", default=[], metavar="DIR",
                   help="further prediction directories to rank against pred_dir")
    p.add_argument("--rank-by", choices=("depth", "normal"), default="depth")
    p.add_argument("--allow-partial", action="store_true")
    p.add_argument("--manifest", help="JSON list of {id, pred, gt} pairs overriding stem matching")
    p.add_argument("--jobs", type=int, default=int(os.environ.get("RELIEF_JOBS", "1")))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert between depth formats or derive normals")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--to-normals", action="store_true")
    p.add_argument("--scheme", choices=SCHEMES, default="central")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("viz", help="8-bit PNG visualization")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--normals", action="store_true", help="input is a normal map")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("stats", help="thickness histogram of depth files as CSV")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--bin-width", type=float, default=25.0)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError, FormatError, GridError, MetricError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(json.dumps({"command": args.command, "status": "error",
                          "error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr, flush=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
