"""End-to-end CLI tests on a small synthetic world."""

import json

import pytest

from rfprop.cli import main
from rfprop.conventional import load_params
from rfprop.features import read_samples
from rfprop.synthworld import Box, RadioDef, WorldSpec, save_worldspec


@pytest.fixture(scope="module")
def world_path(tmp_path_factory):
    """Corridor world: static base, one mobile robot, noiseless simple model."""
    root = tmp_path_factory.mktemp("world")
    spec = WorldSpec(
        bounds_lo=(0, 0, 0), bounds_hi=(24, 8, 3),
        obstacles=[Box(lo=(12, 3, 0), hi=(12.5, 8, 3),
                       attenuation_db_per_m=1.0)],
        generator_model="simple",
        params={"pl_d0": 14.84, "eta": 4.73},
        noise_sigma_db=0.0, seed=5, voxel_size=0.5,
        radios=[RadioDef("base", "base", [[1.5, 4.0, 1.0]]),
                RadioDef("husky1", "mobile",
                         [[2.0, 6.5, 1.0], [22.0, 6.5, 1.0]],
                         speed_mps=0.2)],
        duration_s=100.0, measurement_rate_hz=1.0, pose_rate_hz=2.0,
        scan_period_s=25.0)
    path = root / "world.json"
    save_worldspec(spec, str(path))
    return str(path)


@pytest.fixture(scope="module")
def fixture_dir(world_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main(["synth", "--world", world_path, "--out", str(out),
               "--azimuth-step-deg", "6", "--n-rings", "12",
               "--elevation-span-deg", "50"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def samples_dir(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("features")
    rc = main(["features",
               "--grid", str(fixture_dir / "truth_grid.txt"),
               "--measurements", str(fixture_dir / "measurements.csv"),
               "--poses", str(fixture_dir / "poses.csv"),
               "--radios", str(fixture_dir / "radios.csv"),
               "--out", str(out)])
    assert rc == 0
    return out


class TestUsage:
    def test_no_args_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["prophesy"])
        assert exc.value.code == 2

    def test_runtime_error_is_one_line(self, capsys, tmp_path):
        rc = main(["build-grid", "--scans", "does_not_exist.txt",
                   "--out", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error=") and err.count("\n") == 1


class TestSynth(object):
    def test_outputs_exist(self, fixture_dir):
        for name in ("truth_grid.txt", "scans.txt", "measurements.csv",
                     "poses.csv", "radios.csv", "run_manifest.json"):
            assert (fixture_dir / name).exists()

    def test_manifest_contents(self, fixture_dir):
        manifest = json.loads((fixture_dir / "run_manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert "started_at" in manifest and "finished_at" in manifest
        assert manifest["args"]["n_rings"] == 12


class TestBuildGrid:
    def test_build_and_compare_to_truth(self, fixture_dir, tmp_path, capsys):
        rc = main(["build-grid", "--scans", str(fixture_dir / "scans.txt"),
                   "--out", str(tmp_path), "--voxel-size", "0.5"])
        assert rc == 0
        assert (tmp_path / "grid.txt").exists()
        out = capsys.readouterr().out
        assert "cells=" in out


class TestFeatures:
    def test_sample_file_written(self, samples_dir):
        samples = read_samples(str(samples_dir / "samples.csv"))
        assert len(samples) > 50
        assert (samples_dir / "correlation.csv").exists()
        assert (samples_dir / "correlation.png").exists()

    def test_blocked_links_flagged(self, samples_dir):
        samples = read_samples(str(samples_dir / "samples.csv"))
        blocked = [s for s in samples if s.features.strictly_not_visible]
        visible = [s for s in samples if s.features.strictly_visible]
        assert blocked and visible


class TestFitEval:
    def test_fit_recovers_generator(self, samples_dir, tmp_path, capsys):
        rc = main(["fit", "--samples", str(samples_dir / "samples.csv"),
                   "--model", "simple", "--out", str(tmp_path)])
        assert rc == 0
        name, params = load_params(str(tmp_path / "params.txt"))
        assert name == "simple"
        assert params.pl_d0 == pytest.approx(14.84, abs=1e-6)
        assert params.eta == pytest.approx(4.73, abs=1e-6)

    def test_eval_reports_mae(self, samples_dir, tmp_path, capsys):
        fit_dir = tmp_path / "fit"
        rc = main(["fit", "--samples", str(samples_dir / "samples.csv"),
                   "--model", "simple", "--out", str(fit_dir)])
        assert rc == 0
        capsys.readouterr()
        eval_dir = tmp_path / "eval"
        rc = main(["eval", "--samples", str(samples_dir / "samples.csv"),
                   "--params", str(fit_dir / "params.txt"),
                   "--out", str(eval_dir)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mae_db=" in out
        mae = float(out.split("mae_db=")[1].split()[0])
        assert mae < 1e-6  # noiseless closed loop
        assert (eval_dir / "eval_report.csv").exists()
        assert (eval_dir / "error_hist.png").exists()

    def test_fit_deterministic_rerun(self, samples_dir, tmp_path):
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            rc = main(["fit", "--samples", str(samples_dir / "samples.csv"),
                       "--model", "visibility", "--out", str(d)])
            assert rc == 0
        assert (d1 / "params.txt").read_bytes() == \
            (d2 / "params.txt").read_bytes()


class TestTrain:
    def test_train_writes_model_and_report(self, samples_dir, tmp_path,
                                           capsys):
        rc = main(["train", "--samples", str(samples_dir / "samples.csv"),
                   "--variant", "vis", "--out", str(tmp_path),
                   "--seed", "3", "--epochs", "10",
                   "--learning-rate", "0.01"])
        assert rc == 0
        assert (tmp_path / "model.txt").exists()
        assert (tmp_path / "train_report.csv").exists()
        assert (tmp_path / "train_curve.png").exists()
        assert "holdout_mae_db=" in capsys.readouterr().out

    def test_train_deterministic(self, samples_dir, tmp_path):
        d1, d2 = tmp_path / "t1", tmp_path / "t2"
        for d in (d1, d2):
            rc = main(["train", "--samples",
                       str(samples_dir / "samples.csv"),
                       "--variant", "vis", "--out", str(d),
                       "--seed", "3", "--epochs", "5", "--no-figures"])
            assert rc == 0
        assert (d1 / "model.txt").read_bytes() == \
            (d2 / "model.txt").read_bytes()


class TestMap:
    def test_map_outputs(self, fixture_dir, samples_dir, tmp_path, capsys):
        fit_dir = tmp_path / "fit"
        main(["fit", "--samples", str(samples_dir / "samples.csv"),
              "--model", "simple", "--out", str(fit_dir)])
        tx_file = tmp_path / "transmitters.csv"
        tx_file.write_text("tx_id,x,y,z,tx_power_dbm\n"
                           "base,1.5,4.0,1.0,30.0\n")
        out = tmp_path / "map"
        rc = main(["map", "--grid", str(fixture_dir / "truth_grid.txt"),
                   "--transmitters", str(tx_file),
                   "--params", str(fit_dir / "params.txt"),
                   "--resolution", "2.0", "--out", str(out)])
        assert rc == 0
        assert (out / "map.csv").exists()
        pgms = list(out.glob("map_z*.pgm"))
        pngs = list(out.glob("map_z*.png"))
        assert pgms and pngs
        text = capsys.readouterr().out
        assert "explored=" in text

    def test_map_rerun_byte_identical(self, fixture_dir, samples_dir,
                                      tmp_path):
        fit_dir = tmp_path / "fit"
        main(["fit", "--samples", str(samples_dir / "samples.csv"),
              "--model", "simple", "--out", str(fit_dir)])
        tx_file = tmp_path / "transmitters.csv"
        tx_file.write_text("tx_id,x,y,z,tx_power_dbm\n"
                           "base,1.5,4.0,1.0,30.0\n")
        d1, d2 = tmp_path / "m1", tmp_path / "m2"
        for d in (d1, d2):
            rc = main(["map", "--grid", str(fixture_dir / "truth_grid.txt"),
                       "--transmitters", str(tx_file),
                       "--params", str(fit_dir / "params.txt"),
                       "--resolution", "2.0", "--format", "both",
                       "--no-figures", "--out", str(d)])
            assert rc == 0
        assert (d1 / "map.csv").read_bytes() == (d2 / "map.csv").read_bytes()
        assert (d1 / "map_z0.pgm").read_bytes() == \
            (d2 / "map_z0.pgm").read_bytes()


class TestReplayCommand:
    def test_replay_smoke(self, fixture_dir, tmp_path, capsys):
        out = tmp_path / "replay"
        rc = main(["replay",
                   "--measurements", str(fixture_dir / "measurements.csv"),
                   "--poses", str(fixture_dir / "poses.csv"),
                   "--scans", str(fixture_dir / "scans.txt"),
                   "--variant", "vis", "--window-s", "25",
                   "--learning-rate", "0.01",
                   "--out", str(out)])
        assert rc == 0
        assert (out / "replay.csv").exists()
        assert (out / "model_final.txt").exists()
        assert (out / "replay.png").exists()
        text = capsys.readouterr().out
        assert "windows=" in text and "final_mae_db=" in text
