"""Experiment plumbing: config resolution, single runs and the density sweep.

Every run is driven by a flat dotted-key config (see :data:`DEFAULTS`). The
resolved config is written as the run's ``manifest``; loading that file
back with ``--config`` repeats the run exactly.
"""

from __future__ import annotations

import csv
import io
import platform
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config
from .errors import DivergenceError, ValidationError
from .fieldsim import (PropagationConfig, Scene, generate_ground_truth, place_sensors,
                       random_scene, read_scene, write_scene)
from .generator import GLIP, GRIP, NetConfig
from .grid import (ExposureGrid, GridDims, SensorSet, read_grid, read_sensors, write_grid,
                   write_sensors)
from .metrics import (RESULT_COLUMNS, evaluate, format_row, held_out_mask, idw_interpolate,
                      nearest_interpolate, report_row)
from .reconstruct import ReconstructionConfig, fit, suppress_buildings, write_loss_curve

METHODS = (GLIP, GRIP, "idw", "nearest")
SWEEP_COLUMNS = RESULT_COLUMNS + ("status", "n_runs", "mse_vm_std", "mae_vm_std")

DEFAULTS = {
    # scene: generated from scene.seed unless scene.path names a simulate output
    "scene.path": "",
    "scene.rows": "128",
    "scene.cols": "",
    "scene.cell_size_m": "",
    "scene.seed": "0",
    "scene.n_transmitters": "2",
    "scene.power_w": "120.0",
    "scene.frequency_hz": "5.89e9",
    "scene.building_fraction": "0.2",
    "prop.wall_loss_db": "10.0",
    "prop.min_distance_cells": "4.0",
    # sensors: drawn with run.seed unless sensors.path names a CSV
    "sensors.path": "",
    "sensors.count": "100",
    "run.method": "",
    "run.seed": "0",
    "prior.mode": GLIP,
    "prior.mask_channel": "false",
    "train.epochs": "150",
    "train.lr": "0.01",
    "train.log_every": "1",
    "recon.suppress_buildings": "true",
    "net.depth": "6",
    "net.enc_channels": "16,32,64,128,128,128",
    "net.dec_channels": "",
    "net.skip_channels": "4",
    "net.enc_kernel": "3",
    "net.dec_kernel": "3",
    "net.skip_kernel": "1",
    "net.down_stride": "2",
    "net.final_activation": "sigmoid",
    "net.input_channels": "1",
    "net.kernel_profile": "default",
    "net.leaky_slope": "0.2",
    "net.skip_source": "input",
    "idw.power": "2.0",
    "eval.exclude_sensors": "true",
    "eval.exclude_buildings": "true",
    "sweep.sensor_counts": "20,40,60,100",
    "sweep.seeds": "0,1,2,3,4,5,6,7,8,9",
    "sweep.methods": "glip,grip,idw,nearest",
    "sweep.jobs": "1",
    "sweep.save_maps": "true",
    "output.figures": "true",
    "render.scale": "",
}
PATH_KEYS = ("scene.path", "sensors.path")


def resolve(cfg: Config | None = None, overrides: dict | None = None) -> Config:
    """Defaults, then ``cfg``, then ``overrides``; unknown keys are rejected.

    ``meta.*`` keys (written into manifests) are dropped. Relative paths are
    taken relative to the config file that named them.
    """
    cfg = cfg or Config()
    base = Path(cfg.source).parent if cfg.source else Path.cwd()
    values = {}
    for key in cfg.keys():
        if key.startswith("meta."):
            continue
        if key not in DEFAULTS:
            cfg.fail(key, "unknown config key")
        values[key] = cfg.get_str(key)
    for key in PATH_KEYS:
        if values.get(key):
            values[key] = str((base / values[key]).resolve())
    out = Config(DEFAULTS).merged(Config(values, {k: cfg.line_of(k) for k in values}))
    out.source = cfg.source
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ValidationError(f"{key}: unknown config key")
        value = str(value)
        if key in PATH_KEYS and value:
            value = str(Path(value).resolve())
        out = out.merged({key: value})
    return out


# -- config -> objects -----------------------------------------------------------


def dims_from(cfg: Config) -> GridDims:
    rows = cfg.get_int("scene.rows")
    cols = cfg.get_int("scene.cols") if cfg.get_str("scene.cols") else rows
    if cfg.get_str("scene.cell_size_m"):
        return GridDims(rows, cols, cfg.get_float("scene.cell_size_m"))
    return GridDims.square_km(rows, cols)


def prop_from(cfg: Config) -> PropagationConfig:
    return PropagationConfig(cfg.get_float("prop.wall_loss_db"),
                             cfg.get_float("prop.min_distance_cells"))


def net_from(cfg: Config) -> NetConfig:
    dec = cfg.get_list("net.dec_channels", cast=int) if cfg.get_str("net.dec_channels") else None
    return NetConfig(
        depth=cfg.get_int("net.depth"),
        enc_channels=tuple(cfg.get_list("net.enc_channels", cast=int)),
        dec_channels=tuple(dec) if dec else None,
        skip_channels=cfg.get_int("net.skip_channels"),
        enc_kernel=cfg.get_int("net.enc_kernel"),
        dec_kernel=cfg.get_int("net.dec_kernel"),
        skip_kernel=cfg.get_int("net.skip_kernel"),
        down_stride=cfg.get_int("net.down_stride"),
        final_activation=cfg.get_choice("net.final_activation", ("sigmoid", "none")),
        input_channels=cfg.get_int("net.input_channels"),
        kernel_profile=cfg.get_choice("net.kernel_profile", ("default", "paper")),
        leaky_slope=cfg.get_float("net.leaky_slope"),
        skip_source=cfg.get_choice("net.skip_source", ("input", "encoder")),
    )


def method_of(cfg: Config) -> str:
    if cfg.get_str("run.method"):
        return cfg.get_choice("run.method", METHODS)
    return cfg.get_choice("prior.mode", (GLIP, GRIP))


def recon_from(cfg: Config, mode: str, seed: int) -> ReconstructionConfig:
    return ReconstructionConfig(
        prior_mode=mode,
        epochs=cfg.get_int("train.epochs"),
        lr=cfg.get_float("train.lr"),
        net=net_from(cfg),
        seed=seed,
        suppress_buildings=cfg.get_bool("recon.suppress_buildings"),
        log_every=cfg.get_int("train.log_every"),
        mask_channel=cfg.get_bool("prior.mask_channel"),
    )


@dataclass(frozen=True)
class World:
    scene: Scene
    truth: ExposureGrid


def load_world(cfg: Config) -> World:
    """Scene and ground truth, from ``scene.path`` or generated from ``scene.*``."""
    prop = prop_from(cfg)
    path = cfg.get_str("scene.path")
    if path:
        scene = read_scene(path)
        tpath = (Path(path) if Path(path).is_dir() else Path(path).parent) / "truth.emgrid"
        truth = read_grid(tpath) if tpath.exists() else generate_ground_truth(scene, prop)
        if truth.dims.shape != scene.dims.shape:
            raise ValidationError(f"{tpath}: truth grid does not match the scene")
        return World(scene, truth)
    n_tx = cfg.get_int("scene.n_transmitters")
    scene = random_scene(dims_from(cfg), cfg.get_int("scene.seed"), n_tx,
                         cfg.get_float("scene.building_fraction"),
                         cfg.get_float("scene.power_w"), cfg.get_float("scene.frequency_hz"))
    return World(scene, generate_ground_truth(scene, prop))


def write_world(world: World, directory) -> Path:
    directory = Path(directory)
    write_scene(world.scene, directory)
    write_grid(world.truth, directory / "truth.emgrid")
    return directory


def sensors_for(cfg: Config, world: World, count: int | None = None, seed: int | None = None):
    path = cfg.get_str("sensors.path")
    if path and count is None:
        return read_sensors(path, world.scene.dims)
    count = cfg.get_int("sensors.count") if count is None else count
    seed = cfg.get_int("run.seed") if seed is None else seed
    return place_sensors(world.scene, count, seed, truth=world.truth)


def eval_mask_for(cfg: Config, world: World, sensors: SensorSet):
    return held_out_mask(world.scene.dims, sensors, world.scene.buildings,
                         cfg.get_bool("eval.exclude_sensors"), cfg.get_bool("eval.exclude_buildings"))


# -- single run -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunOutput:
    predicted: ExposureGrid
    row: dict
    loss_curve: list | None


def run_method(cfg: Config, world: World, sensors: SensorSet, method: str, seed: int):
    """Predicted map and (for the generator methods) the loss curve."""
    buildings = world.scene.buildings
    if method in (GLIP, GRIP):
        res = fit(sensors, buildings, recon_from(cfg, method, seed))
        return res.predicted, res.loss_curve
    if method == "idw":
        pred = idw_interpolate(sensors, world.scene.dims, cfg.get_float("idw.power"))
    elif method == "nearest":
        pred = nearest_interpolate(sensors, world.scene.dims)
    else:
        raise ValidationError(f"unknown method {method!r}")
    if cfg.get_bool("recon.suppress_buildings"):
        pred = suppress_buildings(pred, buildings)
    return pred, None


def run_id(method: str, count: int, seed: int) -> str:
    return f"{method}-n{count:03d}-s{seed}"


def manifest_text(cfg: Config, extra: dict | None = None) -> str:
    meta = {
        "meta.glipmap_version": __version__,
        "meta.numpy_version": np.__version__,
        "meta.python_version": platform.python_version(),
    }
    meta.update(extra or {})
    head = "".join(f"{k}={v}\n" for k, v in sorted(meta.items()))
    return head + cfg.dump()


def write_manifest(cfg: Config, path, extra: dict | None = None) -> None:
    Path(path).write_text(manifest_text(cfg, extra))


def reconstruct_run(cfg: Config, out_dir, world: World | None = None,
                    figures: bool | None = None) -> RunOutput:
    """One reconstruction with all artifacts written into ``out_dir``."""
    out_dir = Path(out_dir)
    world = world or load_world(cfg)
    sensors = sensors_for(cfg, world)
    method, seed = method_of(cfg), cfg.get_int("run.seed")
    pred, curve = run_method(cfg, world, sensors, method, seed)
    report = evaluate(world.truth, pred, eval_mask_for(cfg, world, sensors))
    row = report_row(report, run_id(method, len(sensors), seed), method, len(sensors), seed)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_grid(pred, out_dir / "predicted.emgrid")
    write_grid(report.error_map, out_dir / "error.emgrid")
    write_sensors(sensors, out_dir / "sensors.csv")
    if curve is not None:
        write_loss_curve(curve, out_dir / "loss.csv")
    (out_dir / "metrics.csv").write_text(",".join(RESULT_COLUMNS) + "\n" + format_row(row))
    run_cfg = cfg.merged({"run.method": method})
    if not cfg.get_str("scene.path"):
        # the scene travels with the run so `metrics` can re-score it offline
        write_world(world, out_dir / "scene")
    write_manifest(run_cfg, out_dir / "manifest")
    if cfg.get_bool("output.figures") if figures is None else figures:
        from .plots import plot_loss, plot_maps
        plot_maps(world.truth, pred, report.error_map, out_dir / "maps.png", sensors,
                  title=row["run_id"])
        if curve:
            plot_loss(curve, out_dir / "loss.png")
    return RunOutput(pred, row, curve)


def rescore(run_dir) -> dict:
    """Recompute a run's metrics row from its persisted files."""
    run_dir = Path(run_dir)
    cfg = resolve(Config.load(run_dir / "manifest"))
    if not cfg.get_str("scene.path") and (run_dir / "scene").is_dir():
        cfg = cfg.merged({"scene.path": str((run_dir / "scene").resolve())})
    world = load_world(cfg)
    sensors = read_sensors(run_dir / "sensors.csv", world.scene.dims)
    pred = read_grid(run_dir / "predicted.emgrid")
    method, seed = method_of(cfg), cfg.get_int("run.seed")
    report = evaluate(world.truth, pred, eval_mask_for(cfg, world, sensors))
    return report_row(report, run_id(method, len(sensors), seed), method, len(sensors), seed)


# -- sweep ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    sensor_counts: tuple[int, ...]
    seeds: tuple[int, ...]
    methods: tuple[str, ...]
    jobs: int = 1
    save_maps: bool = True

    def __post_init__(self):
        if not (self.sensor_counts and self.seeds and self.methods):
            raise ValidationError("sweep needs at least one count, seed and method")
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown sweep method {m!r}; expected one of {METHODS}")
        if min(self.sensor_counts) < 1:
            raise ValidationError("sweep sensor counts must be >= 1")
        if min(self.seeds) < 0:
            raise ValidationError("sweep seeds must be unsigned")
        if len(set(self.methods)) != len(self.methods) or len(set(self.sensor_counts)) != len(self.sensor_counts) \
                or len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("sweep counts, seeds and methods must not repeat")
        if self.jobs < 1:
            raise ValidationError("sweep.jobs must be >= 1")

    @classmethod
    def from_config(cls, cfg: Config) -> "SweepSpec":
        methods = tuple(m.lower() for m in cfg.get_list("sweep.methods"))
        return cls(tuple(cfg.get_list("sweep.sensor_counts", cast=int)),
                   tuple(cfg.get_list("sweep.seeds", cast=int)), methods,
                   cfg.get_int("sweep.jobs"), cfg.get_bool("sweep.save_maps"))

    def jobs_in_order(self):
        """(method, count, seed) in table order."""
        return [(m, n, s) for m in self.methods for n in self.sensor_counts for s in self.seeds]


_WORLDS: dict = {}


def _sweep_job(args):
    cfg_text, scene_dir, runs_dir, method, count, seed, save = args
    cfg = Config.parse(cfg_text)
    key = (scene_dir, cfg_text)
    if key not in _WORLDS:
        _WORLDS.clear()
        _WORLDS[key] = load_world(cfg.merged({"scene.path": scene_dir}))
    world = _WORLDS[key]
    rid = run_id(method, count, seed)
    base = {"run_id": rid, "method": method, "sensor_count": count, "seed": seed}
    try:
        run_cfg = cfg.merged({"run.method": method, "run.seed": seed, "sensors.count": count,
                              "sensors.path": "", "scene.path": scene_dir})
        if save:
            out = reconstruct_run(run_cfg, Path(runs_dir) / rid, world, figures=False)
            row = out.row
        else:
            sensors = sensors_for(run_cfg, world, count, seed)
            pred, _ = run_method(run_cfg, world, sensors, method, seed)
            report = evaluate(world.truth, pred, eval_mask_for(run_cfg, world, sensors))
            row = report_row(report, rid, method, count, seed)
        return {**row, "status": "ok", "n_runs": 1}
    except (ValidationError, DivergenceError, ArithmeticError, OSError) as exc:
        msg = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
        return {**base, "status": msg, "n_runs": 0}


def aggregate_rows(rows, spec: SweepSpec) -> list[dict]:
    out = []
    for m in spec.methods:
        for n in spec.sensor_counts:
            ok = [r for r in rows if r["method"] == m and r["sensor_count"] == n and r["status"] == "ok"]
            agg = {"run_id": f"{m}-n{n:03d}-mean", "method": m, "sensor_count": n, "seed": "all",
                   "status": "mean", "n_runs": len(ok)}
            if ok:
                for col in ("mse_vm", "mae_vm", "mse_norm", "mae_norm"):
                    agg[col] = statistics.fmean(r[col] for r in ok)
                for col in ("mse_vm", "mae_vm"):
                    agg[col + "_std"] = statistics.pstdev([r[col] for r in ok])
                agg["n_evaluated"] = round(statistics.fmean(r["n_evaluated"] for r in ok))
            out.append(agg)
    return out


def run_sweep(cfg: Config, out_dir, jobs: int | None = None, figures: bool | None = None) -> list[dict]:
    """Run every (method, count, seed) job and write ``results.csv``.

    Rows land in table order whatever the completion order; workers only
    touch their own run directories and the parent is the single CSV writer.
    """
    out_dir = Path(out_dir)
    spec = SweepSpec.from_config(cfg)
    jobs = spec.jobs if jobs is None else jobs
    world = load_world(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_dir = cfg.get_str("scene.path") or str(write_world(world, out_dir / "scene").resolve())
    write_manifest(cfg, out_dir / "manifest")

    run_cfg = cfg.merged({"output.figures": "false"})
    text = run_cfg.dump()
    runs_dir = str((out_dir / "runs").resolve())
    tasks = [(text, scene_dir, runs_dir, m, n, s, spec.save_maps) for m, n, s in spec.jobs_in_order()]

    rows = []
    with open(out_dir / "results.csv", "w", newline="") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        if jobs == 1:
            results = map(_sweep_job, tasks)
            for row in results:
                rows.append(row)
                fh.write(format_row(row, SWEEP_COLUMNS))
                fh.flush()
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for row in pool.map(_sweep_job, tasks):
                    rows.append(row)
                    fh.write(format_row(row, SWEEP_COLUMNS))
                    fh.flush()
        aggs = aggregate_rows(rows, spec)
        for row in aggs:
            fh.write(format_row(row, SWEEP_COLUMNS))
    if cfg.get_bool("output.figures") if figures is None else figures:
        from .plots import plot_density
        plot_density(aggs, out_dir / "density_mse.png", "mse_vm")
        plot_density(aggs, out_dir / "density_mae.png", "mae_vm")
    return rows + aggs


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def table_text(rows, columns=SWEEP_COLUMNS) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(format_row(r, columns))
    return buf.getvalue()
