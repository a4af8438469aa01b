"""Command line interface: ``rangethermal {simulate,calibrate,fuse,evaluate,track}``.

Settings resolve as command-line flag, then config file, then built-in
default. The config file uses the calibration ``key = value`` grammar with
the keys listed by ``--print-defaults``; its path comes from ``--config``
or the ``RANGETHERMAL_CONFIG`` environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calibration, detection, fusion, io_formats, metrics, simulation
from .geometry import Extrinsics, TaitBryanAngles

CONFIG_ENV = "RANGETHERMAL_CONFIG"

DEFAULTS = {
    "simulation.sigma_depth": simulation.DEFAULT_SIGMA_DEPTH,
    "simulation.sigma_temp": simulation.DEFAULT_SIGMA_TEMP,
    "simulation.seed": 0,
    "calibration.method": "centroid",
    "calibration.threshold_offset": calibration.DEFAULT_THRESHOLD_OFFSET,
    "calibration.background_gap": calibration.DEFAULT_BACKGROUND_GAP,
    "fusion.method": "segment",
    "fusion.mode": "similarity",
    "fusion.homogeneity_tol": fusion.DEFAULT_HOMOGENEITY_TOL,
    "fusion.area_floor": fusion.DEFAULT_AREA_FLOOR,
    "metrics.n_bins": 0,
    "detection.n_init": detection.DEFAULT_N_INIT,
    "detection.delta": detection.DEFAULT_DELTA,
    "detection.min_blob_area": detection.DEFAULT_MIN_BLOB_AREA,
    "detection.t_min": detection.DEFAULT_T_MIN,
    "detection.t_max": detection.DEFAULT_T_MAX,
    "detection.gate": detection.DEFAULT_GATE,
    "detection.max_misses": detection.DEFAULT_MAX_MISSES,
}


class CliError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    kv = io_formats.parse_key_values(Path(path).read_text(encoding="utf-8"), path)
    unknown = sorted(set(kv) - set(DEFAULTS))
    if unknown:
        raise CliError(f"{path}: unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, raw in kv.items():
        kind = type(DEFAULTS[key])
        try:
            out[key] = kind(raw)
        except ValueError:
            raise CliError(f"{path}: bad value for {key}: {raw!r}") from None
    return out


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(load_config(args.config or os.environ.get(CONFIG_ENV)))
    return cfg


def _pick(flag, cfg: dict, key: str):
    return cfg[key] if flag is None else flag


def _triple(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return vals


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file or directory: {path}")
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg) -> None:
    if args.scene:
        spec = io_formats.read_scene(_existing(args.scene))
    else:
        spec = replace(
            simulation.default_scene(cfg["simulation.seed"]),
            sigma_depth=cfg["simulation.sigma_depth"],
            sigma_temp=cfg["simulation.sigma_temp"],
        )
    seed = spec.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ds = simulation.simulate(spec, seed=seed)
    io_formats.write_scene(out / "scene.txt", spec)
    io_formats.write_temperature(out / "truth_thermal.csv", ds.truth.thermal_hi)
    io_formats.write_depth(out / "truth_depth.pgm", ds.truth.depth_hi)
    io_formats.write_depth(out / "depth.pgm", ds.depth)
    io_formats.write_temperature(out / "thermal.csv", ds.thermal)
    io_formats.write_calibration(out / "calib.txt", ds.K_ir, ds.K_tof, ds.ext)
    print(f"wrote scene {spec.width}x{spec.height} -> thermal {ds.thermal.shape[1]}x{ds.thermal.shape[0]} in {out}")

    if args.calib_views:
        _simulate_calibration(out / "pairs", args, seed)
    if args.sequence:
        _simulate_sequence(out / "frames", args.sequence, seed, cfg)


def _simulate_calibration(out: Path, args, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    K_tof, K_ir = simulation.DEFAULT_K_TOF, simulation.DEFAULT_K_IR
    ext = Extrinsics(TaitBryanAngles(*args.angles), args.translation)
    rng = np.random.default_rng(seed)
    for k in range(args.calib_views):
        z = rng.uniform(1.2, 2.5)
        center = (rng.uniform(-0.35, 0.35) * z, rng.uniform(-0.25, 0.25) * z, z)
        depth, thermal = simulation.render_calibration_view(center, 0.12, K_tof, K_ir, ext)
        io_formats.write_depth(out / f"view_{k:03d}_depth.pgm", depth)
        io_formats.write_temperature(out / f"view_{k:03d}_thermal.csv", thermal)
    io_formats.write_calibration(out / "rig_truth.txt", K_ir, K_tof, ext)
    print(f"wrote {args.calib_views} calibration views in {out}")


def _simulate_sequence(out: Path, n_frames: int, seed: int, cfg) -> None:
    out.mkdir(parents=True, exist_ok=True)
    seq = simulation.simulate_sequence(n_frames, n_background=cfg["detection.n_init"], seed=seed)
    for k, (depth, thermal) in enumerate(seq.frames):
        io_formats.write_depth(out / f"frame_{k:04d}_depth.pgm", depth)
        io_formats.write_temperature(out / f"frame_{k:04d}_thermal.csv", thermal)
    with open(out / "truth_tracks.csv", "w", encoding="ascii", newline="\n") as f:
        f.write("frame,object,u,v\n")
        for obj, hist in seq.truth.items():
            for frame, u, v in hist:
                f.write(f"{frame},{obj},{u!r},{v!r}\n")
    io_formats.write_calibration(out / "calib.txt", seq.K_ir, seq.K_tof, Extrinsics())
    print(f"wrote {len(seq.frames)} frames ({seq.n_background} background) in {out}")


def _pairs(directory: Path, kind: str) -> list[tuple[Path, Path]]:
    pairs = []
    for depth_path in sorted(directory.glob("*_depth.pgm")):
        thermal_path = depth_path.with_name(depth_path.name[: -len("_depth.pgm")] + "_thermal.csv")
        if not thermal_path.exists():
            raise CliError(f"{kind} {depth_path.name} has no matching {thermal_path.name}")
        pairs.append((depth_path, thermal_path))
    if not pairs:
        raise CliError(f"no *_depth.pgm / *_thermal.csv pairs in {directory}")
    return pairs


def cmd_calibrate(args, cfg) -> None:
    if args.intrinsics:
        K_ir, K_tof, _ = io_formats.read_calibration(_existing(args.intrinsics))
    else:
        K_ir, K_tof = simulation.DEFAULT_K_IR, simulation.DEFAULT_K_TOF
    paths = _pairs(_existing(args.pairs), "pair")
    pairs = [(io_formats.read_depth(d), io_formats.read_temperature(t)) for d, t in paths]
    for (d, t), (dp, tp) in zip(pairs, paths):
        if d.shape != K_tof.shape or t.shape != K_ir.shape:
            raise CliError(f"{dp.name}/{tp.name}: image sizes do not match the intrinsics")
    ext, result = calibration.calibrate(
        pairs,
        args.translation,
        K_tof,
        K_ir,
        method=_pick(args.method, cfg, "calibration.method"),
        threshold_offset=_pick(args.threshold_offset, cfg, "calibration.threshold_offset"),
        background_gap=_pick(args.background_gap, cfg, "calibration.background_gap"),
    )
    io_formats.write_calibration(args.out, K_ir, K_tof, ext)
    a = result.angles
    print(
        f"angles = ({a.a1:.6f}, {a.a2:.6f}, {a.a3:.6f}) rad, residual rms = {result.residual_rms:.4f} px, "
        f"{result.iterations} iterations, converged = {result.converged}, views = {len(pairs)}"
    )


def cmd_fuse(args, cfg) -> None:
    K_ir, K_tof, ext = io_formats.read_calibration(_existing(args.calib))
    depth = io_formats.read_depth(_existing(args.depth))
    thermal = io_formats.read_temperature(_existing(args.thermal))
    if depth.shape != K_tof.shape:
        raise CliError(f"depth image is {depth.shape[1]}x{depth.shape[0]}, calibration says {K_tof.width}x{K_tof.height}")
    if thermal.shape != K_ir.shape:
        raise CliError(f"thermal image is {thermal.shape[1]}x{thermal.shape[0]}, calibration says {K_ir.width}x{K_ir.height}")
    method = _pick(args.method, cfg, "fusion.method")
    pmap = fusion.build_projection_map(depth, K_tof, K_ir, ext)
    fused = fusion.fuse(
        method,
        pmap,
        thermal,
        depth,
        mode=_pick(args.mode, cfg, "fusion.mode"),
        homogeneity_tol=_pick(args.homogeneity_tol, cfg, "fusion.homogeneity_tol"),
        area_floor=_pick(args.area_floor, cfg, "fusion.area_floor"),
    )
    io_formats.write_temperature(args.out, fused.data)
    if args.preview:
        io_formats.write_visualization(args.preview, fused.data)
    print(f"fused {method}: {int(fused.valid.sum())}/{fused.valid.size} valid pixels -> {args.out}")


def cmd_evaluate(args, cfg) -> None:
    fused = io_formats.read_temperature(_existing(args.fused))
    truth = io_formats.read_temperature(_existing(args.truth))
    n_bins = _pick(args.bins, cfg, "metrics.n_bins") or None
    report = metrics.evaluate(fused, truth, n_bins)
    curve = Path(args.curve) if args.curve else Path(args.report).with_suffix(".curve.csv")
    io_formats.write_report(
        args.report,
        {
            "mean_abs_error": report.mean_abs_error,
            "max_abs_error": report.max_abs_error,
            "valid_pixels": report.valid_pixels,
            "curve": curve.name,
            "curve_axes": "rank = pixels sorted by increasing error; cumulative_error = summed degC",
        },
    )
    io_formats.write_curve(curve, report.ranks, report.cumulative_error)
    print(f"mean_abs_error = {report.mean_abs_error:.6f} degC over {report.valid_pixels} pixels")
    print(f"curve: cumulative error vs pixel rank (sorted by increasing error) -> {curve}")


def cmd_track(args, cfg) -> None:
    K_ir, K_tof, ext = io_formats.read_calibration(_existing(args.calib))
    paths = _pairs(_existing(args.frames), "frame")
    frames = [(io_formats.read_depth(d), io_formats.read_temperature(t)) for d, t in paths]
    n_init = _pick(args.n_init, cfg, "detection.n_init")
    if len(frames) <= n_init:
        raise CliError(f"need more than {n_init} frames (the first {n_init} build the background)")
    pipe = detection.TrackingPipeline(
        K_tof,
        K_ir,
        ext,
        method=_pick(args.method, cfg, "fusion.method"),
        n_init=n_init,
        delta=_pick(args.delta, cfg, "detection.delta"),
        min_blob_area=_pick(args.min_blob_area, cfg, "detection.min_blob_area"),
        gate=_pick(args.gate, cfg, "detection.gate"),
        max_misses=_pick(args.max_misses, cfg, "detection.max_misses"),
    )
    tracks = pipe.run(frames)
    t_min = _pick(args.t_min, cfg, "detection.t_min")
    t_max = _pick(args.t_max, cfg, "detection.t_max")
    io_formats.write_tracks(args.out, detection.track_rows(tracks, t_min, t_max))
    people = sum(1 for t in tracks if t.is_person(t_min, t_max))
    print(f"{len(tracks)} tracks ({people} people) over {len(frames) - n_init} frames -> {args.out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangethermal",
        description="Range/thermal fusion: calibration, depth-guided thermal upsampling, evaluation and tracking.",
    )
    parser.add_argument("--config", help=f"key = value config file (default: ${CONFIG_ENV})")
    parser.add_argument("--print-defaults", action="store_true", help="print all default settings and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="render a synthetic scene with ground truth")
    p.add_argument("--scene", help="scene file (default: built-in scene)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="noise seed (overrides the scene file)")
    p.add_argument("--calib-views", type=int, default=0, help="also render N calibration target views")
    p.add_argument("--angles", type=_triple, default=(0.05, -0.03, 0.02), help="a1,a2,a3 of the simulated rig (rad)")
    p.add_argument("--translation", type=_triple, default=(0.04, 0.0, 0.0), help="tx,ty,tz of the simulated rig (m)")
    p.add_argument("--sequence", type=int, default=0, help="also render an N-frame tracking sequence")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate the TOF-to-IR rotation from target views")
    p.add_argument("--pairs", required=True, help="directory of <name>_depth.pgm / <name>_thermal.csv pairs")
    p.add_argument("--translation", type=_triple, required=True, help="measured tx,ty,tz in meters")
    p.add_argument("--out", required=True, help="calibration file to write")
    p.add_argument("--intrinsics", help="calibration file to take intrinsics from (default: built-in rig)")
    p.add_argument("--method", choices=("centroid", "hough"))
    p.add_argument("--threshold-offset", type=float, help="degC above the thermal median")
    p.add_argument("--background-gap", type=float, help="min target-to-background depth gap (m)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fuse", help="upsample a thermal image to depth resolution")
    p.add_argument("--method", choices=fusion.FUSION_METHODS)
    p.add_argument("--calib", required=True)
    p.add_argument("--depth", required=True, help="16-bit depth PGM")
    p.add_argument("--thermal", required=True, help="thermal CSV")
    p.add_argument("--out", required=True, help="fused thermal CSV")
    p.add_argument("--mode", choices=("similarity", "as_printed"), help="depth weighting mode")
    p.add_argument("--homogeneity-tol", type=float, help="segment split threshold (m)")
    p.add_argument("--area-floor", type=float, help="smallest segment area used in compensation")
    p.add_argument("--preview", help="also write an 8-bit PGM visualization")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="compare a fused image with ground truth")
    p.add_argument("--fused", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True, help="key = value summary")
    p.add_argument("--curve", help="accumulated error CSV (default: <report>.curve.csv)")
    p.add_argument("--bins", type=int, help="curve samples (0 = every pixel)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("track", help="detect and track people over a frame sequence")
    p.add_argument("--calib", required=True)
    p.add_argument("--frames", required=True, help="directory of <name>_depth.pgm / <name>_thermal.csv frames")
    p.add_argument("--out", required=True, help="tracks CSV")
    p.add_argument("--method", choices=fusion.FUSION_METHODS)
    p.add_argument("--n-init", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--min-blob-area", type=int)
    p.add_argument("--gate", type=float)
    p.add_argument("--max-misses", type=int)
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _settings(args)
        if args.print_defaults:
            sys.stdout.write(io_formats.format_key_values(cfg))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("rangethermal: error: a subcommand is required", file=sys.stderr)
            return 2
        args.func(args, cfg)
    except (CliError, ValueError, OSError) as e:
        msg = " ".join(str(e).split())
        print(f"rangethermal: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
