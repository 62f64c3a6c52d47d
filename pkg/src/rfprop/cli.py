"""Command-line interface wiring the pipeline end to end.

Subcommands: synth, build-grid, features, fit, train, eval, map, replay.
Every command is deterministic given its inputs and seed, writes its
outputs plus a run manifest into --out, and exits 0 on success, 2 on
usage errors, or 1 with a one-line ``error=...`` message otherwise.
Report-producing commands render matplotlib figures next to their
delimited outputs (disable with --no-figures).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .conventional import append_params, fit_model, load_params, \
    make_predictor
from .features import RadioSpec, read_samples, write_samples
from .mlp import TrainConfig, evaluate, load_model, save_model, train_offline
from .pipeline import (NOISE_FLOOR_DBM, RadioRegistry, augment_disconnections,
                       correlation_report, parse_logs, parse_radios,
                       remove_static_outliers, synchronize, to_samples,
                       write_correlation_csv, write_measurements, write_poses,
                       write_radios)
from .replay import replay
from .signal_map import Transmitter, build_map, export_map_csv, export_map_pgm
from .synthworld import (build_schedule, generate_dataset, load_worldspec,
                         pose_rows, rasterize, scan_schedule, simulate_scans)
from .voxel_grid import (OccupancyGrid, UpdateParams, dump_grid,
                         integrate_scan, load_grid, read_scans, write_scans)
from .pipeline import RadioInfo

TRANSMITTER_HEADER = "tx_id,x,y,z,tx_power_dbm"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(args, out: Path, started: float, extra=None):
    manifest = {
        "command": args.command,
        "tool_version": __version__,
        "args": {k: v for k, v in sorted(vars(args).items())
                 if k not in ("func", "command") and v is not None},
        "started_at": started,
        "finished_at": time.time(),
    }
    if extra:
        manifest["outputs"] = extra
    with open(out / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _radio_spec(args) -> RadioSpec:
    return RadioSpec(frequency_hz=args.frequency_hz,
                     antenna_height_tx_m=args.antenna_height,
                     antenna_height_rx_m=args.antenna_height)


def _add_radio_args(p):
    p.add_argument("--frequency-hz", type=float, default=2.4e9,
                   help="link frequency (default 2.4 GHz)")
    p.add_argument("--antenna-height", type=float, default=0.5,
                   help="antenna height above ground, m (default 0.5)")


def _load_predictor(args):
    """Predictor from either a neural model file or a params file."""
    if getattr(args, "model_file", None):
        model = load_model(args.model_file)
        return model, f"nn-{model.variant}"
    if getattr(args, "params", None):
        name, params = load_params(args.params, getattr(args, "model", None))
        return make_predictor(name, params), name
    raise ValueError("give either --model-file or --params")


def read_transmitters(path: str):
    txs = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != TRANSMITTER_HEADER:
            raise ValueError(f"{path}: expected header "
                             f"{TRANSMITTER_HEADER!r}, got {header!r}")
        for line in fh:
            p = line.strip().split(",")
            if len(p) == 5:
                txs.append(Transmitter(tx_id=p[0],
                                       position=[float(v) for v in p[1:4]],
                                       tx_power_dbm=float(p[4])))
    return txs


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.time()
    out = _out_dir(args)
    spec = load_worldspec(args.world)
    if args.seed is not None:
        spec.seed = args.seed

    grid, _ = rasterize(spec)
    dump_grid(grid, str(out / "truth_grid.txt"))

    poses, stamps, ids = scan_schedule(spec)
    frames = []
    for pose, stamp, rid in zip(poses, stamps, ids):
        frames.extend(simulate_scans(
            spec, [pose], timestamps=[stamp], robot_id=rid,
            azimuth_step_deg=args.azimuth_step_deg, n_rings=args.n_rings,
            elevation_span_deg=args.elevation_span_deg))
    frames.sort(key=lambda f: (f.timestamp, f.robot_id))
    write_scans(frames, str(out / "scans.txt"))

    records = generate_dataset(spec, build_schedule(spec))
    write_measurements(records, str(out / "measurements.csv"))
    write_poses(pose_rows(spec), str(out / "poses.csv"))
    write_radios(RadioRegistry([RadioInfo(r.radio_id, r.kind)
                                for r in spec.radios]),
                 str(out / "radios.csv"))
    _write_manifest(args, out, started,
                    ["truth_grid.txt", "scans.txt", "measurements.csv",
                     "poses.csv", "radios.csv"])
    print(f"records={len(records)} scans={len(frames)}")
    return 0


def cmd_build_grid(args) -> int:
    started = time.time()
    out = _out_dir(args)
    frames = read_scans(args.scans)
    frames.sort(key=lambda f: f.timestamp)
    grid = OccupancyGrid(voxel_size=args.voxel_size)
    params = UpdateParams(l_hit=args.l_hit, l_miss=args.l_miss,
                          max_range=args.max_range)
    n_updates = sum(integrate_scan(f, grid, params) for f in frames)
    dump_grid(grid, str(out / "grid.txt"))
    _write_manifest(args, out, started, ["grid.txt"])
    print(f"scans={len(frames)} cells={grid.n_cells} updates={n_updates}")
    return 0


def _prepared_records(args, poses_needed=True):
    logs = parse_logs(args.measurements, args.poses)
    records = synchronize(logs.records, logs.poses, max_skew=args.max_skew)
    if args.radios:
        registry = parse_radios(args.radios)
        records = remove_static_outliers(records, registry,
                                         radius=args.static_radius)
    if getattr(args, "augment", False):
        records = augment_disconnections(
            records, logs.poses, window_s=args.disconnect_window_s,
            tick_s=args.disconnect_tick_s, floor_dbm=args.noise_floor_dbm)
    return records, logs


def cmd_features(args) -> int:
    started = time.time()
    out = _out_dir(args)
    grid = load_grid(args.grid)
    records, logs = _prepared_records(args)
    samples = to_samples(records, grid, _radio_spec(args))
    write_samples(samples, str(out / "samples.csv"))
    outputs = ["samples.csv"]
    if len(samples) >= 3:
        entries = correlation_report(samples)
        write_correlation_csv(entries, str(out / "correlation.csv"))
        outputs.append("correlation.csv")
        if not args.no_figures:
            from .plots import save_correlation_bars
            save_correlation_bars(entries, str(out / "correlation.png"))
            outputs.append("correlation.png")
    _write_manifest(args, out, started, outputs)
    print(f"records={len(records)} samples={len(samples)} "
          f"skipped={logs.skipped_measurements}")
    return 0


def cmd_fit(args) -> int:
    started = time.time()
    out = _out_dir(args)
    samples = read_samples(args.samples)
    if not samples:
        raise ValueError("no samples to fit")
    params = fit_model(args.model, samples)
    data_t = max(s.timestamp for s in samples)
    append_params(str(out / "params.txt"), args.model, params,
                  n_samples=len(samples), data_timestamp=data_t)
    _write_manifest(args, out, started, ["params.txt"])
    from .conventional import _params_dict
    kv = " ".join(f"{k}={v!r}" for k, v in
                  _params_dict(args.model, params).items())
    print(f"model={args.model} n={len(samples)} {kv}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    out = _out_dir(args)
    samples = read_samples(args.samples)
    config = TrainConfig(seed=args.seed, max_epochs=args.epochs,
                         batch_size=args.batch_size,
                         learning_rate=args.learning_rate,
                         holdout_fraction=args.holdout_fraction)
    model, report = train_offline(samples, args.variant, config)
    save_model(model, str(out / "model.txt"))
    report.write_csv(str(out / "train_report.csv"))
    outputs = ["model.txt", "train_report.csv"]
    if not args.no_figures:
        from .plots import save_training_curve
        save_training_curve(report, str(out / "train_curve.png"))
        outputs.append("train_curve.png")
    _write_manifest(args, out, started, outputs)
    print(f"variant={args.variant} epochs={len(report.epochs)} "
          f"holdout_mae_db={report.final_holdout_mae!r}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    out = _out_dir(args)
    samples = read_samples(args.samples)
    predictor, name = _load_predictor(args)
    result = evaluate(predictor, samples)
    result.write_csv(str(out / "eval_report.csv"))
    outputs = ["eval_report.csv"]
    if not args.no_figures:
        from .plots import save_error_histogram
        save_error_histogram(result, str(out / "error_hist.png"), title=name)
        outputs.append("error_hist.png")
    _write_manifest(args, out, started, outputs)
    print(f"predictor={name} n={result.n} mae_db={result.mae!r}")
    return 0


def cmd_map(args) -> int:
    started = time.time()
    out = _out_dir(args)
    grid = load_grid(args.grid)
    transmitters = read_transmitters(args.transmitters)
    predictor, name = _load_predictor(args)
    if not callable(predictor):
        model = predictor
        predictor = model.predict
    bounds = None
    if args.bounds:
        vals = [float(v) for v in args.bounds.split(",")]
        if len(vals) != 6:
            raise ValueError("--bounds takes x0,y0,z0,x1,y1,z1")
        bounds = (vals[:3], vals[3:])
    smap = build_map(grid, transmitters, predictor, _radio_spec(args),
                     resolution=args.resolution,
                     threshold_dbm=args.threshold_dbm, bounds=bounds)
    outputs = []
    if args.format in ("csv", "both"):
        export_map_csv(smap, str(out / "map.csv"))
        outputs.append("map.csv")
    if args.format in ("pgm", "both"):
        outputs.extend(Path(p).name for p in
                       export_map_pgm(smap, str(out / "map")))
    if not args.no_figures:
        from .plots import save_map_slices
        outputs.extend(Path(p).name for p in
                       save_map_slices(smap, str(out / "map")))
    _write_manifest(args, out, started, outputs)
    n_conn = int(smap.connected.sum())
    print(f"predictor={name} cells={int(np.prod(smap.shape))} "
          f"explored={int(smap.explored.sum())} connected={n_conn}")
    return 0


def cmd_replay(args) -> int:
    started = time.time()
    out = _out_dir(args)
    records, _ = _prepared_records(args)
    records.sort(key=lambda r: r.timestamp)
    scans = read_scans(args.scans) if args.scans else []
    scans.sort(key=lambda f: f.timestamp)
    offline_model = load_model(args.offline_model) if args.offline_model \
        else None
    config = TrainConfig(seed=args.seed, online_epochs=args.epochs_online,
                         learning_rate=args.learning_rate,
                         batch_size=args.batch_size)
    result = replay(records, scans, _radio_spec(args), variant=args.variant,
                    window_s=args.window_s, k_minutes=args.k_minutes,
                    offline_model=offline_model, train_config=config,
                    voxel_size=args.voxel_size)
    result.write_csv(str(out / "replay.csv"))
    outputs = ["replay.csv"]
    if result.model is not None:
        save_model(result.model, str(out / "model_final.txt"))
        outputs.append("model_final.txt")
    if not args.no_figures and result.rows:
        from .plots import save_replay_curve
        save_replay_curve(result.rows, str(out / "replay.png"))
        outputs.append("replay.png")
    _write_manifest(args, out, started, outputs)
    scored = [r for r in result.rows if r.n_samples]
    final = scored[-1].mae_online if scored else float("nan")
    print(f"windows={len(result.rows)} final_mae_db={final!r}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfprop",
        description="Radio propagation modeling and RSS prediction toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic world fixtures")
    p.add_argument("--world", required=True, help="worldspec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the worldspec seed")
    p.add_argument("--azimuth-step-deg", type=float, default=1.0)
    p.add_argument("--n-rings", type=int, default=16)
    p.add_argument("--elevation-span-deg", type=float, default=30.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-grid", help="integrate scans into a grid dump")
    p.add_argument("--scans", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--voxel-size", type=float, default=0.5)
    p.add_argument("--l-hit", type=float, default=0.85)
    p.add_argument("--l-miss", type=float, default=-0.40)
    p.add_argument("--max-range", type=float, default=100.0)
    p.set_defaults(func=cmd_build_grid)

    def add_pipeline_args(p, augment_default):
        p.add_argument("--measurements", required=True)
        p.add_argument("--poses", required=True)
        p.add_argument("--radios", default=None,
                       help="radio registry CSV for static-outlier removal")
        p.add_argument("--max-skew", type=float, default=1.0)
        p.add_argument("--static-radius", type=float, default=3.0)
        p.add_argument("--noise-floor-dbm", type=float,
                       default=NOISE_FLOOR_DBM)
        p.add_argument("--disconnect-window-s", type=float, default=120.0)
        p.add_argument("--disconnect-tick-s", type=float, default=10.0)
        if augment_default:
            p.add_argument("--no-augment", dest="augment",
                           action="store_false",
                           help="skip disconnection augmentation")
        else:
            p.add_argument("--augment", action="store_true",
                           help="augment disconnected pairs at the floor")

    p = sub.add_parser("features",
                       help="samples + correlation report from logs")
    p.add_argument("--grid", required=True)
    add_pipeline_args(p, augment_default=True)
    _add_radio_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", help="fit a conventional model")
    p.add_argument("--samples", required=True)
    p.add_argument("--model", required=True,
                   choices=["simple", "visibility", "shadowing", "two-ray",
                            "knife-edge", "refl-diff"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="train a neural variant offline")
    p.add_argument("--samples", required=True)
    p.add_argument("--variant", required=True,
                   choices=["vis", "vox", "ref", "diff", "all"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=2048)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--holdout-fraction", type=float, default=0.30)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MAE report for any fitted predictor")
    p.add_argument("--samples", required=True)
    p.add_argument("--model-file", default=None, help="neural model file")
    p.add_argument("--params", default=None, help="conventional params file")
    p.add_argument("--model", default=None,
                   help="model name inside the params file")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="signal strength map over explored space")
    p.add_argument("--grid", required=True)
    p.add_argument("--transmitters", required=True,
                   help=f"CSV with header {TRANSMITTER_HEADER!r}")
    p.add_argument("--model-file", default=None)
    p.add_argument("--params", default=None)
    p.add_argument("--model", default=None)
    _add_radio_args(p)
    p.add_argument("--resolution", type=float, default=1.0)
    p.add_argument("--threshold-dbm", type=float, default=NOISE_FLOOR_DBM)
    p.add_argument("--bounds", default=None,
                   help="x0,y0,z0,x1,y1,z1 world-space map bounds "
                        "(default: the grid's touched bounding box)")
    p.add_argument("--format", choices=["csv", "pgm", "both"],
                   default="both")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("replay",
                       help="online-learning replay over time-sorted logs")
    add_pipeline_args(p, augment_default=False)
    p.add_argument("--scans", default=None)
    _add_radio_args(p)
    p.add_argument("--variant", default="vox",
                   choices=["vis", "vox", "ref", "diff", "all"])
    p.add_argument("--offline-model", default=None,
                   help="warm-start model file (else the first window "
                        "bootstraps one)")
    p.add_argument("--window-s", type=float, default=60.0)
    p.add_argument("--epochs-online", type=int, default=10)
    p.add_argument("--k-minutes", type=int, default=1)
    p.add_argument("--voxel-size", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parseable failure
        print(f"error={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
