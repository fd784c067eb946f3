import json

import numpy as np
import pytest
import yaml

from dynpinn import runner
from dynpinn.cli import main
from dynpinn.runner import (ConfigError, RunConfig, build_configs, expand_config,
                            export_plot_data, fmt, load_configs, read_csv, run_experiment, sweep)

SMALL = {"n_points": 30, "hidden": [6, 6], "checkpoint_resolution": 16, "eval_resolution": 20,
         "checkpoint_every": 4}


def small(problem="wave", **kw):
    base = dict(SMALL, problem=problem, adam_iters=3, lbfgs_iters=10)
    base.update(kw)
    return RunConfig.from_dict(base)


def csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


class TestConfig:
    def test_defaults(self):
        c = RunConfig("sg").resolved()
        assert c.problem == "sine-gordon" and c.loss_form == "SgG2" and c.hidden == (80, 80)
        assert c.adam_iters == 100 and c.lbfgs_iters == 5000 and c.checkpoint_every == 100
        assert c.name == "sine-gordon-SgG2-N2000-s0"
        c = RunConfig("elasto", loss_form="h2").resolved()
        assert c.loss_form == "ElastoH2" and c.hidden == (90, 60)
        assert RunConfig("wave").resolved().hidden == (90, 60)

    @pytest.mark.parametrize("bad", [
        {"problem": "heat"}, {"problem": "wave", "loss_form": "SgG1"},
        {"problem": "wave", "n_points": 0}, {"problem": "wave", "lbfgs_iters": -1},
        {"problem": "wave", "weights": [1.0, 2.0]}, {"problem": "wave", "hidden": [10]},
        {"problem": "wave", "colour": "red"}, {"seed": 1},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad).resolved()

    def test_round_trip(self):
        c = small("elasto").resolved()
        assert RunConfig.from_dict(yaml.safe_load(yaml.safe_dump(c.to_dict()))).resolved() == c

    def test_sweep_expansion_order(self):
        runs = expand_config({"problem": "wave", "sweep": {"loss_form": ["F1", "F2"],
                                                           "seed": [0, 1, 2]}})
        assert [(r["loss_form"], r["seed"]) for r in runs] == [
            ("F1", 0), ("F1", 1), ("F1", 2), ("F2", 0), ("F2", 1), ("F2", 2)]

    def test_overrides_apply_to_every_run(self):
        cfgs = build_configs({"problem": "wave", "sweep": {"seed": [0, 1]}}, {"n_points": 7})
        assert [c.n_points for c in cfgs] == [7, 7]

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError):
            build_configs({"problem": "wave", "name": "x", "sweep": {"seed": [0, 1]}})

    def test_load_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("problem: wave\nsweep:\n  n_points: [1000, 2000]\n")
        assert [c.n_points for c in load_configs(path)] == [1000, 2000]
        with pytest.raises(ConfigError):
            load_configs(tmp_path / "missing.yaml")
        path.write_text("[1, 2]\n")
        with pytest.raises(ConfigError):
            load_configs(path)


class TestFormatting:
    def test_float_round_trip(self):
        for x in [0.1, 1 / 3, 2.0 ** -1074, 1e300, -7.25]:
            assert float(fmt(x)) == x
        assert fmt(None) == "" and fmt(3) == "3" and fmt(np.float64(0.5)) == "0.5"


class TestRun:
    def test_outputs_and_schedule(self, tmp_path):
        res = run_experiment(small(), tmp_path)
        d = res.directory
        assert res.exit_code == 0 and res.status == "completed"
        for name in ("config.yaml", "history.csv", "checkpoints.csv", "errors.csv",
                     "scaling.json", "params.npy", "status.json"):
            assert (d / name).is_file(), name
        assert (d / "history.csv").read_text().startswith("# dynpinn history v1\n")
        hist = read_csv(d / "history.csv")
        its = [int(r["iteration"]) for r in hist]
        assert its == list(range(len(its)))
        phases = [r["phase"] for r in hist]
        assert phases[0] == "init" and phases[1:4] == ["adam"] * 3
        assert set(phases[4:]) <= {"lbfgs"}
        ck = [int(r["iteration"]) for r in read_csv(d / "checkpoints.csv")]
        assert ck[:-1] == list(range(0, its[-1] + 1, 4))[:len(ck) - 1]
        assert ck[-1] == its[-1]
        status = json.loads((d / "status.json").read_text())
        assert status["iterations"] == its[-1] and status["exit_code"] == 0
        assert np.load(d / "params.npy").shape == (2 * 6 + 6 + 6 * 6 + 6 + 6 * 2 + 2,)
        echoed = yaml.safe_load((d / "config.yaml").read_text())
        assert echoed["loss_form"] == "WaveF1" and echoed["hidden"] == [6, 6]

    def test_noop_schedule_records_initial_state(self, tmp_path):
        cfg = RunConfig.from_dict(dict(SMALL, problem="sg", adam_iters=0, lbfgs_iters=0))
        res = run_experiment(cfg, tmp_path)
        assert res.exit_code == 0
        assert [r["iteration"] for r in read_csv(res.directory / "history.csv")] == ["0"]
        assert len(read_csv(res.directory / "checkpoints.csv")) == 1

    def test_byte_identical_reruns(self, tmp_path):
        a = run_experiment(small("elasto"), tmp_path / "a")
        b = run_experiment(small("elasto"), tmp_path / "b")
        assert csv_bytes(a.directory) == csv_bytes(b.directory)
        assert (a.directory / "params.npy").read_bytes() == (b.directory / "params.npy").read_bytes()

    def test_non_finite_exit_and_partial_records(self, tmp_path, monkeypatch):
        orig = runner.TrainingObjective.__call__
        calls = {"n": 0}

        def flaky(self, theta):
            calls["n"] += 1
            if calls["n"] > 9:
                raise runner.NonFiniteError("int2", "injected")
            return orig(self, theta)

        monkeypatch.setattr(runner.TrainingObjective, "__call__", flaky)
        res = run_experiment(small(adam_iters=20), tmp_path)
        assert res.exit_code == 2 and res.status == "failed"
        status = json.loads((res.directory / "status.json").read_text())
        assert status["status"] == "failed" and "int2" in status["message"]
        assert len(read_csv(res.directory / "history.csv")) == 9
        assert [r["iteration"] for r in read_csv(res.directory / "checkpoints.csv")] == ["0", "4", "8"]

    def test_out_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DYNPINN_OUT", str(tmp_path / "env"))
        res = run_experiment(small(adam_iters=0, lbfgs_iters=1))
        assert res.directory.parent == tmp_path / "env"


class TestSweepAndExport:
    def test_sweep_rows_and_comparison(self, tmp_path):
        cfgs = build_configs(dict(SMALL, problem="wave", adam_iters=2, lbfgs_iters=4,
                                  sweep={"seed": [1, 0], "loss_form": ["F1", "F2"]}))
        rows = sweep(cfgs, tmp_path)
        assert [(r["seed"], r["form"]) for r in rows] == [
            (1, "WaveF1"), (1, "WaveF2"), (0, "WaveF1"), (0, "WaveF2")]
        assert all(r["status"] == "completed" for r in rows)
        comp = read_csv(tmp_path / "compare.csv")
        assert len(comp) == 2 and {r["form_a"] for r in comp} == {"WaveF1"}
        summ = read_csv(tmp_path / "summary.csv")
        assert [(r["form"], r["runs"]) for r in summ] == [("WaveF1", "2"), ("WaveF2", "2")]

    def test_single_config_sweep_matches_run(self, tmp_path):
        cfg = small("sg")
        rows = sweep([cfg.resolved()], tmp_path / "s")
        res = run_experiment(cfg, tmp_path / "r")
        assert rows[0] == res.summary_row()
        assert csv_bytes(tmp_path / "s" / cfg.resolved().name) == csv_bytes(res.directory)

    def test_failed_run_does_not_stop_sweep(self, tmp_path, monkeypatch):
        orig = runner.run_experiment

        def maybe(cfg, root):
            if cfg.seed == 0:
                raise RuntimeError("boom")
            return orig(cfg, root)

        monkeypatch.setattr(runner, "run_experiment", maybe)
        cfgs = build_configs(dict(SMALL, problem="wave", adam_iters=1, lbfgs_iters=1,
                                  sweep={"seed": [0, 1]}))
        rows = sweep(cfgs, tmp_path)
        assert [r["status"] for r in rows] == ["error", "completed"]

    def test_export(self, tmp_path):
        res = run_experiment(small(), tmp_path)
        paths = export_plot_data(res.directory)
        n_ck = len(read_csv(res.directory / "checkpoints.csv"))
        assert len(read_csv(paths["error_vs_loss"])) == n_ck
        its = [int(r["iteration"]) for r in read_csv(paths["loss_history"])]
        assert its == sorted(its)
        data = json.loads(paths["json"].read_text())
        assert len(data["error_vs_loss"]["loss_total"]) == n_ck

    def test_export_without_records(self, tmp_path):
        with pytest.raises(ValueError):
            export_plot_data(tmp_path)
        (tmp_path / "history.csv").write_text("# dynpinn history v1\niteration,phase,loss\n")
        (tmp_path / "checkpoints.csv").write_text("# dynpinn checkpoints v1\niteration,loss_total\n")
        with pytest.raises(ValueError):
            export_plot_data(tmp_path)


class TestCli:
    def test_run_and_export(self, tmp_path, capsys):
        cfg = tmp_path / "wave.yaml"
        cfg.write_text(yaml.safe_dump(dict(SMALL, problem="wave")))
        code = main(["run", str(cfg), "--adam-iters", "2", "--lbfgs-iters", "3", "--seed", "4",
                     "--out", str(tmp_path / "o"), "--set", "checkpoint_every=2"])
        assert code == 0
        d = tmp_path / "o" / "wave-WaveF1-N30-s4"
        assert yaml.safe_load((d / "config.yaml").read_text())["checkpoint_every"] == 2
        assert main(["export", str(d)]) == 0
        assert (d / "plot_error_vs_loss.csv").is_file()

    def test_run_without_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DYNPINN_OUT", str(tmp_path))
        code = main(["run", "--problem", "elasto", "--n-points", "10", "--adam-iters", "0",
                     "--lbfgs-iters", "1", "--set", "hidden=[4, 4]", "--set", "eval_resolution=5",
                     "--set", "checkpoint_resolution=5"])
        assert code == 0 and (tmp_path / "elastodynamics-ElastoH1-N10-s0" / "errors.csv").is_file()

    def test_config_errors_exit_before_compute(self, tmp_path, capsys):
        assert main(["run", "--problem", "wave", "--loss-form", "G1",
                     "--out", str(tmp_path)]) == 1
        assert "config error" in capsys.readouterr().err
        assert not any(tmp_path.iterdir())
        assert main(["sweep", str(tmp_path / "nothing-*.yaml")]) == 1
        assert main(["export", str(tmp_path)]) == 1

    def test_sweep_glob(self, tmp_path):
        for seed in (0, 1):
            (tmp_path / f"c{seed}.yaml").write_text(
                yaml.safe_dump(dict(SMALL, problem="sg", seed=seed, adam_iters=1, lbfgs_iters=1)))
        assert main(["sweep", str(tmp_path / "c*.yaml"), "--out", str(tmp_path / "o")]) == 0
        assert len(read_csv(tmp_path / "o" / "sweep.csv")) == 2


class TestWaveC2Flag:
    def test_flag_reaches_the_objective(self, tmp_path):
        a = run_experiment(small(adam_iters=0, lbfgs_iters=0), tmp_path / "a")
        b = run_experiment(small(adam_iters=0, lbfgs_iters=0, wave_c2_in_loss=False), tmp_path / "b")
        la = float(read_csv(a.directory / "checkpoints.csv")[0]["loss_W2"])
        lb = float(read_csv(b.directory / "checkpoints.csv")[0]["loss_W2"])
        assert la != lb

    def test_flag_type_checked(self):
        with pytest.raises(ConfigError):
            small(wave_c2_in_loss="yes").resolved()
