"""Command-line interface: dataset generation, reconstruction, comparison.

Subcommands:
  gen      render a procedural scene into a case directory
  run      reconstruct one case with one method and append a metrics row
  compare  run several methods over several cases and print a summary table
  bench    per-stage wall-clock timing of the joint method on one case

Exit codes: 0 success, 2 usage or input error, 1 internal failure. Verbosity
is controlled by the FGLR_LOG environment variable (error|warn|info|debug).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import baselines, metrics, pipeline, scenes
from .camera import (
    ConfigError,
    build_mapping_table,
    load_calibration,
    make_synthetic_calibration,
    parse_keyvalue_file,
    save_calibration,
)
from .graph import (
    BayerPairField,
    PatchGraph,
    collect_patch_observations,
    edge_weights_from_observations,
    rebuild_from_signal,
)
from .imgcore import (
    BayerImage,
    CFALayout,
    NoiseSpec,
    read_image,
    read_plane,
    write_image,
    write_plane,
)
from .interp import apply_H, build_H, gather_window
from .solver import GlrProblem, solve

log = logging.getLogger(__name__)

METHODS = ("joint", "bilinear", "hql")
CSV_FIELDS = ("scene", "method", "psnr_db", "ssim", "valid_pixels", "warnings")


@dataclass(frozen=True)
class Case:
    """One generated evaluation case loaded back from disk."""

    label: str
    bayer: BayerImage
    reference: "PlanarImage"
    cal: "Calibration"
    table: "MappingTable"


def _configure_logging():
    level = os.environ.get("FGLR_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"FGLR_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _add_pipeline_flags(parser):
    parser.add_argument("--config", help="pipeline config file (key = value lines)")
    parser.add_argument("--preset", choices=sorted(pipeline.PRESETS),
                        help="named parameter preset")
    parser.add_argument("--mu", type=float, help="fidelity/smoothness trade-off")
    parser.add_argument("--iters", type=int, help="outer iterations")
    parser.add_argument("--sigma-w", help="edge-weight kernel widths, e.g. 0.01,0.02")
    parser.add_argument("--sigma-v", type=float, help="observation distance kernel width")
    parser.add_argument("--patch", type=int, help="patch size in pixels")
    parser.add_argument("--stride", type=int, help="patch stride in pixels")
    parser.add_argument("--radius", type=float, help="observation neighborhood radius")
    parser.add_argument("--threads", type=int, help="worker threads (1 = serial)")


def _pipeline_config(args):
    cfg = pipeline.PRESETS[args.preset] if args.preset else pipeline.PipelineConfig()
    if args.config:
        cfg = pipeline.load_pipeline_config(args.config, base=cfg)
    updates = {}
    for flag, key in (("mu", "mu"), ("iters", "iterations"), ("sigma_v", "sigma_v"),
                      ("patch", "patch"), ("stride", "stride"), ("radius", "radius"),
                      ("threads", "threads")):
        value = getattr(args, flag)
        if value is not None:
            updates[key] = value
    if args.sigma_w is not None:
        parts = [float(p) for p in args.sigma_w.split(",")]
        updates["sigma_w"] = (parts[0], parts[-1] if len(parts) > 1 else parts[0])
    return replace(cfg, **updates)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fglr",
        description="Joint demosaicking / rectification of fisheye Bayer captures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic evaluation case")
    gen.add_argument("--scene", required=True, choices=scenes.SCENE_KINDS)
    gen.add_argument("--sigma-noise", "--sigma", dest="sigma_noise", type=float, default=15.0,
                     help="noise std deviation on the 0-255 scale")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--scale", type=float, default=4.0, help="scene feature scale")
    gen.add_argument("--size", type=int, default=128, help="rectified output size")
    gen.add_argument("--model", default="equidistant",
                     choices=("equidistant", "pinhole", "polynomial"))
    gen.add_argument("--cal", help="use an existing calibration file instead")
    gen.add_argument("-o", "--out", required=True, help="case directory to create")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="reconstruct one case with one method")
    run.add_argument("case", help="case directory produced by gen")
    run.add_argument("--method", default="joint", choices=METHODS)
    _add_pipeline_flags(run)
    run.set_defaults(func=cmd_run)

    comp = sub.add_parser("compare", help="run several methods over several cases")
    comp.add_argument("cases", nargs="+", help="case directories")
    comp.add_argument("--methods", default=",".join(METHODS),
                      help="comma-separated subset of joint,bilinear,hql")
    _add_pipeline_flags(comp)
    comp.set_defaults(func=cmd_compare)

    bench = sub.add_parser("bench", help="time the joint method stage by stage")
    bench.add_argument("case", help="case directory produced by gen")
    _add_pipeline_flags(bench)
    bench.set_defaults(func=cmd_bench)
    return parser


def cmd_gen(args):
    if args.cal:
        cal = load_calibration(args.cal)
    else:
        cal = make_synthetic_calibration(rect_size=args.size, model=args.model)
    spec = scenes.SceneSpec(kind=args.scene, scale=args.scale, seed=args.seed)
    noise = NoiseSpec(sigma=args.sigma_noise, seed=args.seed)
    layout = CFALayout()

    table = build_mapping_table(cal)
    bayer, reference, mask = scenes.make_case(spec, cal, noise, layout, table)

    os.makedirs(args.out, exist_ok=True)
    join = lambda name: os.path.join(args.out, name)
    write_plane(bayer.data, join("input.png"))
    write_image(reference, join("reference.png"))
    write_plane(mask.astype(np.float64), join("mask.pgm"), bitdepth=8)
    save_calibration(cal, join("calibration.txt"))
    with open(join("manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(
            f"scene = {spec.kind}\nscale = {spec.scale!r}\nseed = {spec.seed}\n"
            f"sigma_noise = {noise.sigma!r}\nlayout_ox = {layout.ox}\nlayout_oy = {layout.oy}\n"
        )
    print(f"wrote case {args.out} (scene={spec.kind}, sigma={noise.sigma}, seed={spec.seed})")
    return 0


def load_case(case_dir):
    manifest = parse_keyvalue_file(os.path.join(case_dir, "manifest.txt"))
    layout = CFALayout(int(manifest.get("layout_ox", 0)), int(manifest.get("layout_oy", 0)))
    cal = load_calibration(os.path.join(case_dir, "calibration.txt"))
    plane = read_plane(os.path.join(case_dir, "input.png"))
    bayer = BayerImage(plane, layout)
    reference = read_image(os.path.join(case_dir, "reference.png"))
    table = build_mapping_table(cal)
    return Case(manifest["scene"], bayer, reference, cal, table)


def _reconstruct(case, method, cfg):
    """Run one method; returns (image, warnings string)."""
    if method == "joint":
        result = pipeline.reconstruct(case.bayer, case.table, cfg)
        warn = "" if result.all_converged else "cg_nonconverged"
        return result.image, warn
    kind = baselines.BaselineKind(demosaicker=method)
    return baselines.run_baseline(case.bayer, case.table, kind), ""


def _append_csv(path, row):
    new = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CSV_FIELDS)
        writer.writerow(row)


def _evaluate_into(case_dir, case, method, cfg):
    image, warn = _reconstruct(case, method, cfg)
    write_image(image, os.path.join(case_dir, f"{method}.png"))
    psnr_db = metrics.psnr(image, case.reference, case.table.valid)
    ssim_val = metrics.ssim(image, case.reference, case.table.valid)
    row = (case.label, method, metrics.format_psnr(psnr_db), f"{ssim_val:.6f}",
           str(case.table.valid_count), warn)
    _append_csv(os.path.join(case_dir, "metrics.csv"), row)
    return psnr_db, ssim_val, warn


def cmd_run(args):
    cfg = _pipeline_config(args)
    case = load_case(args.case)
    psnr_db, ssim_val, warn = _evaluate_into(args.case, case, args.method, cfg)
    suffix = f" [{warn}]" if warn else ""
    print(f"{case.label} {args.method}: psnr={metrics.format_psnr(psnr_db)} dB "
          f"ssim={ssim_val:.4f}{suffix}")
    return 0


def cmd_compare(args):
    cfg = _pipeline_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    cases = [load_case(d) for d in args.cases]
    sizes = {(c.reference.width, c.reference.height) for c in cases}
    if len(sizes) > 1:
        raise ValueError(f"inconsistent image sizes across cases: {sorted(sizes)}")

    reports = {m: metrics.MetricReport(m) for m in methods}
    for case_dir, case in zip(args.cases, cases):
        for method in methods:
            psnr_db, ssim_val, _ = _evaluate_into(case_dir, case, method, cfg)
            reports[method].add(case.label, psnr_db, ssim_val, case.table.valid_count)

    header = f"{'scene':<12}" + "".join(f"{m + ' ssim':>16}{m + ' psnr':>16}" for m in methods)
    print(header)
    for idx, case in enumerate(cases):
        row = f"{case.label:<12}"
        for m in methods:
            rep = reports[m]
            row += f"{rep.ssim_values[idx]:>16.4f}{metrics.format_psnr(rep.psnr_values[idx]):>16}"
        print(row)
    summary = f"{'mean':<12}"
    for m in methods:
        summary += f"{reports[m].mean_ssim:>16.4f}{metrics.format_psnr(reports[m].mean_psnr):>16}"
    print(summary)
    return 0


def cmd_bench(args):
    cfg = _pipeline_config(args)
    manifest = parse_keyvalue_file(os.path.join(args.case, "manifest.txt"))
    layout = CFALayout(int(manifest.get("layout_ox", 0)), int(manifest.get("layout_oy", 0)))
    cal = load_calibration(os.path.join(args.case, "calibration.txt"))
    bayer = BayerImage(read_plane(os.path.join(args.case, "input.png")), layout)

    total_start = time.perf_counter()
    t0 = time.perf_counter()
    table = build_mapping_table(cal)
    t_mapping = time.perf_counter() - t0

    t0 = time.perf_counter()
    field = BayerPairField(bayer)
    patches = pipeline.tile(table.width, table.height, cfg.patch, cfg.stride)
    patches = [p for p in patches
               if table.valid[p[1]: p[1] + p[3], p[0]: p[0] + p[2]].any()]
    t_graph = time.perf_counter() - t0

    t_solve = 0.0
    results = []
    for idx, patch in enumerate(patches):
        t0 = time.perf_counter()
        chans = []
        rho = None
        observations = collect_patch_observations(
            field, table, patch, cfg.sigma_v, cfg.radius, cfg.kernel_mode,
            cfg.normalize_delta)
        for channel in ("R", "G", "B"):
            op = build_H(table, bayer, patch, channel)
            if rho is None:
                rho = pipeline._patch_correlation(bayer, op.window)
            b = apply_H(op, gather_window(bayer, op.window))
            ei, ej, ws, _ = edge_weights_from_observations(
                observations, channel, rho, cfg.sigma_w[0])
            chans.append((b, PatchGraph(patch[2] * patch[3], ei, ej, ws)))
        t_graph += time.perf_counter() - t0

        t0 = time.perf_counter()
        solved, iters = [], []
        for b, graph in chans:
            x = b
            count = 0
            for it in range(cfg.iterations):
                res = solve(GlrProblem(b, graph, cfg.mu, cfg.cg_tol, cfg.cg_max_iterations), x0=x)
                x = res.x
                count += 1
                if it < cfg.iterations - 1:
                    graph = rebuild_from_signal(x, graph, cfg.sigma_w[1])
            solved.append(x)
            iters.append(count)
        t_solve += time.perf_counter() - t0
        results.append(pipeline.PatchResult(
            origin=(patch[0], patch[1]), shape=(patch[2], patch[3]),
            channels=tuple(solved), converged=(True, True, True),
            iterations_used=tuple(iters)))

    t0 = time.perf_counter()
    image = pipeline.aggregate(results, table.width, table.height, table.valid)
    t_aggregate = time.perf_counter() - t0
    total = time.perf_counter() - total_start

    digest = hashlib.sha256(image.data.tobytes()).hexdigest()[:16]
    print(f"mapping   {t_mapping:9.4f} s")
    print(f"graph     {t_graph:9.4f} s")
    print(f"solve     {t_solve:9.4f} s")
    print(f"aggregate {t_aggregate:9.4f} s")
    print(f"total     {total:9.4f} s ({len(patches)} patches)")
    print(f"output sha256 {digest}")
    return 0


def main(argv=None):
    try:
        _configure_logging()
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors exit with code 2
        return exc.code if exc.code is not None else 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - internal failure path
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
