import numpy as np
import pytest

from glipmap.cli import main
from glipmap.config import Config
from glipmap.errors import ValidationError
from glipmap.grid import read_grid, read_mask, read_sensors
from glipmap.harness import (SWEEP_COLUMNS, SweepSpec, load_world, read_results, resolve,
                             run_sweep)
from glipmap.render import read_pgm

SMALL = [
    "--set", "scene.rows=32",
    "--set", "net.depth=3",
    "--set", "net.enc_channels=8,8,8",
    "--set", "train.epochs=3",
]


def small_cfg(**extra):
    over = {"scene.rows": 32, "net.depth": 3, "net.enc_channels": "8,8,8", "train.epochs": 3,
            "output.figures": "false"}
    over.update(extra)
    return resolve(None, over)


# -- config ------------------------------------------------------------------------


def test_defaults_resolve():
    cfg = resolve()
    assert cfg.get_int("scene.rows") == 128
    assert cfg.get_list("sweep.sensor_counts", cast=int) == [20, 40, 60, 100]
    assert cfg.get_list("sweep.seeds", cast=int) == list(range(10))
    assert cfg.get_int("train.epochs") == 150 and cfg.get_float("train.lr") == 0.01


def test_unknown_key_names_file_and_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("scene.seed=1\n\nnet.dpeth=3\n")
    with pytest.raises(ValidationError, match=r"c\.cfg:3: net\.dpeth"):
        resolve(Config.load(p))


def test_bad_value_names_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("train.epochs=many\n")
    with pytest.raises(ValidationError, match="train.epochs"):
        resolve(Config.load(p)).get_int("train.epochs")


def test_meta_keys_ignored_and_paths_relative_to_file(tmp_path):
    (tmp_path / "sub").mkdir()
    p = tmp_path / "sub" / "c.cfg"
    p.write_text("meta.numpy_version=0\nsensors.path=s.csv\n")
    cfg = resolve(Config.load(p))
    assert "meta.numpy_version" not in cfg
    assert cfg.get_str("sensors.path") == str(tmp_path / "sub" / "s.csv")


def test_sweep_spec_validation():
    with pytest.raises(ValidationError):
        SweepSpec((), (0,), ("glip",))
    with pytest.raises(ValidationError):
        SweepSpec((20,), (0,), ("kriging",))
    spec = SweepSpec((20, 40), (0, 1), ("glip", "idw"))
    assert spec.jobs_in_order()[:3] == [("glip", 20, 0), ("glip", 20, 1), ("glip", 40, 0)]


# -- simulate -----------------------------------------------------------------------


def test_simulate_default_scale_and_determinism(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--out", str(tmp_path / "b")]) == 0
    truth = read_grid(tmp_path / "a" / "truth.emgrid")
    assert truth.dims.shape == (128, 128)
    assert 0.05 <= truth.values.max() <= 2.0
    for name in ("truth.emgrid", "buildings.emgrid", "scene.cfg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    buildings = read_mask(tmp_path / "a" / "buildings.emgrid")
    assert (truth.values[buildings.as_bool()] == 0).all()


def test_simulate_transmitter_in_building_is_validation_error(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "s")] + SMALL[:2]) == 0
    scene = tmp_path / "s"
    bits = read_mask(scene / "buildings.emgrid").bits
    r, c = map(int, np.argwhere(bits == 1)[0])
    text = (scene / "scene.cfg").read_text().replace("scene.tx.0=", f"scene.tx.0={r},{c},120.0,5.89e9\n#")
    (scene / "scene.cfg").write_text(text)
    assert main(["simulate", "--out", str(tmp_path / "t"), "--set", f"scene.path={scene}"]) == 1


# -- reconstruct / metrics -------------------------------------------------------------


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["simulate", "--out", str(d)] + SMALL[:2]) == 0
    return d


def test_nearest_one_sensor_constant(tmp_path, scene_dir):
    bits = read_mask(scene_dir / "buildings.emgrid").bits
    r, c = map(int, np.argwhere(bits == 0)[0])
    (tmp_path / "s.csv").write_text(f"row,col,value_vm\n{r},{c},0.25\n")
    rc = main(["reconstruct", "--scene", str(scene_dir), "--sensors", str(tmp_path / "s.csv"),
               "--method", "nearest", "--out", str(tmp_path / "r"),
               "--set", "recon.suppress_buildings=false"])
    assert rc == 0
    pred = read_grid(tmp_path / "r" / "predicted.emgrid")
    assert (pred.values == 0.25).all()


def test_glip_one_epoch_writes_artifacts_and_metrics_reproduce(tmp_path, scene_dir, capsys):
    out = tmp_path / "r"
    rc = main(["reconstruct", "--scene", str(scene_dir), "--method", "glip", "--epochs", "1",
               "--count", "30", "--seed", "4", "--out", str(out)] + SMALL[2:6])
    assert rc == 0
    printed = capsys.readouterr().out
    for name in ("predicted.emgrid", "error.emgrid", "loss.csv", "manifest", "metrics.csv",
                 "sensors.csv", "maps.png", "loss.png"):
        assert (out / name).exists(), name
    pred = read_grid(out / "predicted.emgrid")
    assert len(read_sensors(out / "sensors.csv", pred.dims)) == 30
    assert (out / "loss.csv").read_text().splitlines()[0] == "iter,loss"
    assert "run.seed=4" in (out / "manifest").read_text().splitlines()
    assert main(["metrics", str(out)]) == 0
    again = capsys.readouterr().out
    assert again == printed == (out / "metrics.csv").read_text()


def test_metrics_from_explicit_files(tmp_path, scene_dir, capsys):
    out = tmp_path / "r"
    main(["reconstruct", "--scene", str(scene_dir), "--method", "idw", "--count", "25",
          "--out", str(out)])
    row = capsys.readouterr().out.splitlines()[1].split(",")
    assert main(["metrics", "--truth", str(scene_dir / "truth.emgrid"),
                 "--predicted", str(out / "predicted.emgrid"),
                 "--sensors", str(out / "sensors.csv"),
                 "--buildings", str(scene_dir / "buildings.emgrid")]) == 0
    again = capsys.readouterr().out.splitlines()[1].split(",")
    assert again[4:] == row[4:]


def test_manifest_rerun_is_bitwise(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["reconstruct", "--out", str(a), "--count", "20", "--seed", "3",
                 "--set", "output.figures=false"] + SMALL) == 0
    assert main(["reconstruct", "--config", str(a / "manifest"), "--out", str(b)]) == 0
    assert (a / "predicted.emgrid").read_bytes() == (b / "predicted.emgrid").read_bytes()
    assert (a / "loss.csv").read_bytes() == (b / "loss.csv").read_bytes()
    assert (a / "manifest").read_bytes() == (b / "manifest").read_bytes()


def test_exit_codes(tmp_path):
    assert main(["reconstruct", "--set", "net.nope=1"]) == 1
    assert main(["reconstruct", "--sensors", str(tmp_path / "missing.csv")] + SMALL) == 3
    diverge = ["--set", "train.lr=1e300", "--set", "net.final_activation=none",
               "--set", "output.figures=false"]
    with np.errstate(all="ignore"):
        assert main(["reconstruct", "--out", str(tmp_path / "d"), "--count", "10"]
                    + SMALL + diverge) == 2
    assert main(["render", str(tmp_path / "nothing.emgrid")]) == 3


def test_render_cli(tmp_path, scene_dir):
    out = tmp_path / "t.pgm"
    assert main(["render", str(scene_dir / "truth.emgrid"), "--out", str(out)]) == 0
    px = read_pgm(out)
    assert px.shape == (32, 32) and px.max() == 255
    assert main(["render", str(scene_dir / "truth.emgrid"), "--out", str(out), "--scale", "0"]) == 1


# -- sweep ----------------------------------------------------------------------------------


def test_sweep_counts_rows(tmp_path):
    cfg = small_cfg(**{"sweep.sensor_counts": "20", "sweep.seeds": "0",
                       "sweep.methods": "glip,nearest"})
    rows = run_sweep(cfg, tmp_path)
    assert len(rows) == 4
    table = read_results(tmp_path / "results.csv")
    assert [r["status"] for r in table] == ["ok", "ok", "mean", "mean"]
    assert list(table[0].keys()) == list(SWEEP_COLUMNS)
    assert (tmp_path / "runs" / "glip-n020-s0" / "predicted.emgrid").exists()


def test_sweep_rows_recomputable_from_run_dirs(tmp_path, capsys):
    cfg = small_cfg(**{"sweep.sensor_counts": "15", "sweep.seeds": "0,1",
                       "sweep.methods": "grip,idw"})
    run_sweep(cfg, tmp_path)
    table = read_results(tmp_path / "results.csv")
    for row in table:
        if row["status"] != "ok":
            continue
        capsys.readouterr()
        assert main(["metrics", str(tmp_path / "runs" / row["run_id"])]) == 0
        line = capsys.readouterr().out.splitlines()[1].split(",")
        assert line[4:9] == [row[c] for c in ("mse_vm", "mae_vm", "mse_norm", "mae_norm", "n_evaluated")]


def test_sweep_parallel_matches_sequential_and_manifest(tmp_path):
    cfg = small_cfg(**{"sweep.sensor_counts": "10,20", "sweep.seeds": "0,1",
                       "sweep.methods": "glip,grip,idw,nearest", "sweep.save_maps": "false"})
    run_sweep(cfg, tmp_path / "seq", jobs=1)
    run_sweep(cfg, tmp_path / "par", jobs=2)
    seq = (tmp_path / "seq" / "results.csv").read_bytes()
    assert seq == (tmp_path / "par" / "results.csv").read_bytes()
    assert main(["sweep", "--config", str(tmp_path / "seq" / "manifest"),
                 "--out", str(tmp_path / "again"), "--jobs", "1"]) == 0
    assert (tmp_path / "again" / "results.csv").read_bytes() == seq


def test_sweep_failure_recorded_and_continues(tmp_path):
    free = load_world(small_cfg()).scene.free_cells().size
    cfg = small_cfg(**{"sweep.sensor_counts": f"10,{free + 1}", "sweep.seeds": "0",
                       "sweep.methods": "nearest"})
    rows = run_sweep(cfg, tmp_path)
    status = [r["status"] for r in rows]
    assert status[0] == "ok" and status[1].startswith("failed: ValidationError")
    agg = [r for r in rows if r["status"] == "mean"]
    assert agg[1]["n_runs"] == 0


def test_sweep_figures(tmp_path):
    cfg = small_cfg(**{"sweep.sensor_counts": "10,20", "sweep.seeds": "0",
                       "sweep.methods": "idw,nearest", "output.figures": "true"})
    run_sweep(cfg, tmp_path)
    assert (tmp_path / "density_mse.png").stat().st_size > 0
    assert (tmp_path / "density_mae.png").stat().st_size > 0
