"""Command-line front end: simulate, preprocess, invert, pipeline, report.

Every command takes ``--config`` (missing keys fall back to the
reference defaults) and writes a resolved-config echo next to its
output, so any run can be reproduced bit-identically from the echo.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .forward import run_fdtd
from .harness import (
    ExperimentSpec,
    build_geometry,
    build_inversion_config,
    build_sgrid,
    metrics_table,
    run_pipeline,
)
from .inversion import initial_tail_test1, run_inversion
from .io import (
    RunConfig,
    format_config,
    parse_config,
    read_cube,
    write_cube,
    write_field,
)
from .laplace import complete_boundary_data, psi_from_boundary
from .model import SceneSpec, rasterize_scene
from .preprocess import (
    calibrate,
    classify_and_extract,
    estimate_calibration_factor,
    estimate_depth,
    offset_correct,
    propagate_fk,
    time_zero_correct,
)

STAGES = ("offset", "timezero", "calibrate", "propagate", "extract")


def _load_config(path: str | None) -> RunConfig:
    cfg = parse_config(path) if path else RunConfig()
    return cfg.resolved()


def _echo(cfg: RunConfig, out_path: Path) -> None:
    echo_path = out_path.with_suffix(out_path.suffix + ".resolved.cfg")
    echo_path.write_text(format_config(cfg))
    print(f"resolved config -> {echo_path}")


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    geom = build_geometry(cfg)
    medium = rasterize_scene(
        cfg.scene(), geom.grid, inversion_box=geom.omega_box,
        eps_upper=max(cfg.eps_upper, 101.0),
    )
    res = run_fdtd(medium, geom.waveform, geom.sim,
                   record_planes=(cfg.measurement_z,))
    out = Path(args.output)
    write_cube(out, res.plane_cubes[cfg.measurement_z])
    print(f"measurement cube ({cfg.measurement_z} plane) -> {out}")
    _echo(cfg, out)
    return 0


def _cmd_preprocess(args) -> int:
    cfg = _load_config(args.config)
    cube = read_cube(args.input)
    out = Path(args.output)
    dump = set(args.dump_stage or ())
    unknown = dump - set(STAGES)
    if unknown:
        print(f"unknown stages: {sorted(unknown)} (choose from {STAGES})",
              file=sys.stderr)
        return 2

    def maybe_dump(stage: str, c) -> None:
        if stage in dump:
            path = out.with_suffix(f".{stage}.gcmc")
            write_cube(path, c)
            print(f"stage {stage} -> {path}")

    cube = offset_correct(cube)
    maybe_dump("offset", cube)
    cube = time_zero_correct(cube, cfg.time_zero_offset)
    maybe_dump("timezero", cube)
    if args.calibration and args.calibration_ref:
        factor = estimate_calibration_factor(
            time_zero_correct(offset_correct(read_cube(args.calibration)),
                              cfg.time_zero_offset),
            read_cube(args.calibration_ref),
        )
        cube = calibrate(cube, factor)
        print(f"calibration factor: {factor:.6g}")
    maybe_dump("calibrate", cube)
    target_z = args.target_z if args.target_z is not None else cfg.omega_box[5]
    cube = propagate_fk(cube, target_z)
    maybe_dump("propagate", cube)
    est = estimate_depth(
        cube,
        n_sand=math.sqrt(cfg.eps_sand),
        depth_factor=cfg.depth_factor / (2.0 * cfg.eps_sand),
        n_exclude=cfg.n_exclude,
        noise_floor_frac=cfg.noise_floor,
    )
    cls, cube = classify_and_extract(cube, est, noise_floor_frac=cfg.noise_floor)
    print(f"classification: {cls.kind}  depth: {cls.depth:.4f}"
          if cls.kind != "missed" else "classification: missed")
    maybe_dump("extract", cube)
    write_cube(out, cube)
    print(f"preprocessed cube -> {out}")
    _echo(cfg, out)
    return 0


def _cmd_invert(args) -> int:
    cfg = _load_config(args.config)
    geom = build_geometry(cfg)
    sg = build_sgrid(cfg)
    icfg = build_inversion_config(cfg)
    measured = read_cube(args.measured)

    ref_medium = rasterize_scene(
        SceneSpec(background_eps=cfg.background_eps,
                  source_z0=cfg.source_z0, omega=cfg.omega), geom.grid)
    ref = run_fdtd(ref_medium, geom.waveform, geom.sim,
                   boundary_box=geom.omega_box)

    og = geom.omega_grid
    xi = [int(np.argmin(np.abs(measured.x - xv))) for xv in og.x]
    yj = [int(np.argmin(np.abs(measured.y - yv))) for yv in og.y]
    face = measured.values[np.ix_(xi, yj)]
    if args.add_reference_sweep:
        face = face + ref.boundary.faces["z_hi"]
    completed = complete_boundary_data(face, ref.boundary)
    bdata = psi_from_boundary(completed, geom.waveform, sg)
    result = run_inversion(bdata, geom, icfg, initial_tail=initial_tail_test1(bdata))

    out = Path(args.output)
    write_field(out, result.epsilon)
    print(f"permittivity field -> {out} "
          f"(stopped at layer {result.stopped_layer}, "
          f"max {result.epsilon.values.max():.4g})")
    if args.diagnostics:
        import csv

        with open(args.diagnostics, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["layer", "inner", "misfit", "eps_min", "eps_max"],
                lineterminator="\n")
            writer.writeheader()
            writer.writerows(result.diagnostics_rows())
        print(f"diagnostics -> {args.diagnostics}")
    _echo(cfg, out)
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = ExperimentSpec(
        name=cfg.target_name,
        inclusions=cfg.inclusions,
        kind=cfg.scene_kind,
        true_depth=None if math.isnan(cfg.true_depth) else cfg.true_depth,
        true_ratio=None if math.isnan(cfg.true_ratio) else cfg.true_ratio,
        noise_level=cfg.noise,
        calibration_distortion=cfg.calibration_distortion,
        time_zero_offset=cfg.time_zero_offset,
        seed=cfg.seed,
        sand_surface_z=cfg.sand_surface_z,
        eps_sand=cfg.eps_sand,
    )
    rows, artifacts = run_pipeline(spec, cfg)
    text, csv_text = metrics_table(rows)
    (outdir / "report.csv").write_text(csv_text)
    (outdir / "report.txt").write_text(text)
    print(text, end="")
    if "inversion" in artifacts:
        write_field(outdir / "epsilon.gcmf", artifacts["inversion"].epsilon)
        print(f"permittivity field -> {outdir / 'epsilon.gcmf'}")
    if "extracted" in artifacts and args.dump_stage:
        write_cube(outdir / "extracted.gcmc", artifacts["extracted"])
    (outdir / "resolved.cfg").write_text(format_config(cfg))
    print(f"report -> {outdir / 'report.csv'}")
    return 0


def _cmd_report(args) -> int:
    import csv

    with open(args.input, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        print("empty report")
        return 0
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    for i, row in enumerate(rows):
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            print("  ".join("-" * w for w in widths))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gcmi",
        description="Buried-target microwave imaging: forward modeling, "
                    "preprocessing, and globally convergent inversion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward-model a scene and record the detector plane")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--output", required=True, help="output cube (.gcmc)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("preprocess", help="run the data-preprocessing chain on a cube")
    p.add_argument("--config")
    p.add_argument("--input", required=True, help="raw cube (.gcmc)")
    p.add_argument("--output", required=True, help="preprocessed cube (.gcmc)")
    p.add_argument("--calibration", help="measured calibration-object cube")
    p.add_argument("--calibration-ref", help="simulated calibration-object cube")
    p.add_argument("--target-z", type=float, help="propagation plane (default: backscatter face)")
    p.add_argument("--dump-stage", action="append", metavar="STAGE",
                   help=f"write intermediate cube; one of {STAGES}")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("invert", help="invert a preprocessed backscatter cube")
    p.add_argument("--config")
    p.add_argument("--measured", required=True, help="preprocessed cube on the backscatter plane")
    p.add_argument("--output", required=True, help="output field (.gcmf)")
    p.add_argument("--diagnostics", help="per-iterate misfit CSV")
    p.add_argument("--add-reference-sweep", action="store_true",
                   help="add the simulated homogeneous sweep to the measured face "
                        "(use when the input is an extracted scattered signal)")
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("pipeline", help="full synthetic experiment: simulate, preprocess, invert, report")
    p.add_argument("--config")
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--dump-stage", action="store_true", help="also write the extracted cube")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("report", help="pretty-print a report CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
