"""Command line entry point: ``glipmap <command> [options]``.

Exit codes: 0 success, 1 validation error, 2 divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import Config
from .errors import DivergenceError, ValidationError
from .grid import ExposureGrid, read_grid, read_mask, read_sensors
from .harness import (load_world, manifest_text, reconstruct_run, rescore,
                      resolve, run_sweep, write_world)
from .metrics import RESULT_COLUMNS, evaluate, format_row, held_out_mask, report_row
from .render import render_grid

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 1, 2, 3


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="dotted-key config file")
    p.add_argument("--out", default=d, help="output directory (or file for render)")
    p.add_argument("--seed", type=int, default=d, help="run seed (sensor draw and network init)")
    p.add_argument("--jobs", type=int, default=d, help="parallel sweep workers")
    p.add_argument("--set", dest="overrides", action="append", default=d, metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glipmap", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scene and its ground-truth field")
    _global_flags(p, suppress=True)

    p = sub.add_parser("reconstruct", help="reconstruct one map from sparse sensors")
    _global_flags(p, suppress=True)
    p.add_argument("--method", choices=("glip", "grip", "idw", "nearest"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--scene", help="scene directory written by simulate")
    p.add_argument("--sensors", help="sensor CSV (row,col,value_vm)")
    p.add_argument("--count", type=int, help="number of sensors to draw")

    p = sub.add_parser("sweep", help="density sweep over methods, sensor counts and seeds")
    _global_flags(p, suppress=True)

    p = sub.add_parser("metrics", help="score a predicted map against the ground truth")
    _global_flags(p, suppress=True)
    p.add_argument("run_dir", nargs="?", help="run directory written by reconstruct")
    p.add_argument("--truth")
    p.add_argument("--predicted")
    p.add_argument("--sensors")
    p.add_argument("--buildings")
    p.add_argument("--method", default="unknown")

    p = sub.add_parser("render", help="render an EMGRID file to a plain graymap")
    _global_flags(p, suppress=True)
    p.add_argument("grid")
    p.add_argument("--scale", type=float, help="value mapped to white (default: grid max)")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.overrides or []:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["run.seed"] = args.seed
    if args.jobs is not None:
        out["sweep.jobs"] = args.jobs
    return out


def _config(args, extra: dict | None = None) -> Config:
    base = Config.load(args.config) if args.config else None
    return resolve(base, {**_overrides(args), **(extra or {})})


def _out_dir(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    world = load_world(cfg)
    out = _out_dir(args, "scene")
    write_world(world, out)
    (out / "manifest").write_text(manifest_text(cfg))
    if cfg.get_bool("output.figures"):
        render_grid(world.truth, out / "truth.pgm")
    print(f"wrote {out}/truth.emgrid (max {world.truth.values.max():.6g} V/m)")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    extra = {}
    if args.method:
        extra["run.method"] = args.method
    if args.epochs is not None:
        extra["train.epochs"] = args.epochs
    if args.scene:
        extra["scene.path"] = args.scene
    if args.sensors:
        extra["sensors.path"] = args.sensors
    if args.count is not None:
        extra["sensors.count"] = args.count
    cfg = _config(args, extra)
    result = reconstruct_run(cfg, _out_dir(args, "run"))
    sys.stdout.write(",".join(RESULT_COLUMNS) + "\n" + format_row(result.row))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "sweep")
    rows = run_sweep(cfg, out)
    failed = sum(1 for r in rows if r["status"].startswith("failed"))
    print(f"wrote {out}/results.csv ({len(rows)} rows, {failed} failed)")
    return EXIT_OK


def cmd_metrics(args) -> int:
    if args.run_dir:
        row = rescore(args.run_dir)
    else:
        if not (args.truth and args.predicted):
            raise ValidationError("metrics needs a run directory or --truth and --predicted")
        truth, pred = read_grid(args.truth), read_grid(args.predicted)
        sensors = read_sensors(args.sensors, truth.dims) if args.sensors else None
        buildings = read_mask(args.buildings) if args.buildings else None
        report = evaluate(truth, pred, held_out_mask(truth.dims, sensors, buildings))
        n = len(sensors) if sensors is not None else 0
        row = report_row(report, Path(args.predicted).stem, args.method, n, args.seed or 0)
    text = ",".join(RESULT_COLUMNS) + "\n" + format_row(row)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args) -> int:
    grid: ExposureGrid = read_grid(args.grid)
    scale = args.scale
    if scale is None and args.config:
        cfg = _config(args)
        if cfg.get_str("render.scale"):
            scale = cfg.get_float("render.scale")
    out = Path(args.out) if args.out else Path(args.grid).with_suffix(".pgm")
    render_grid(grid, out, scale)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "metrics": cmd_metrics,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
