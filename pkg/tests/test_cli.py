import json

import numpy as np
import pytest

import mixbridge as mb
from mixbridge.cli import main


def write_fixtures(tmp_path, n=256, seed=0):
    rng = mb.make_rng(seed)
    x0 = tmp_path / "x0.csv"
    x1 = tmp_path / "x1.csv"
    mb.save_samples_csv(x0, rng.standard_normal((n, 2)))
    mb.save_samples_csv(x1, rng.standard_normal((n, 2)) * 0.5 + 1.0)
    return str(x0), str(x1)


def train_args(x0, x1, out, iters=400):
    return ["train", "--x0", x0, "--x1", x1, "--eps", "0.5", "--k", "4",
            "--lr", "1e-2", "--batch", "64", "--iters", str(iters),
            "--eval-every", "200", "--seed", "3", "--out", out]


class TestTrainCommand:
    def test_writes_outputs_and_manifest(self, tmp_path, capsys):
        x0, x1 = write_fixtures(tmp_path)
        out = tmp_path / "run"
        assert main(train_args(x0, x1, str(out))) == 0
        for name in ("checkpoint.json", "loss.csv", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert set(manifest["dataset_hashes"]) == {"x0", "x1"}
        loss_lines = (out / "loss.csv").read_text().splitlines()
        assert loss_lines[0] == "iter,loss,wallclock_ms"

    def test_rerun_reproduces_outputs(self, tmp_path):
        x0, x1 = write_fixtures(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(train_args(x0, x1, str(out_a))) == 0
        assert main(train_args(x0, x1, str(out_b))) == 0
        assert (out_a / "checkpoint.json").read_bytes() == (out_b / "checkpoint.json").read_bytes()
        # loss trace identical except the wallclock column
        for la, lb in zip((out_a / "loss.csv").read_text().splitlines(),
                          (out_b / "loss.csv").read_text().splitlines()):
            assert la.rsplit(",", 1)[0] == lb.rsplit(",", 1)[0]

    def test_dimension_mismatch_fails(self, tmp_path, capsys):
        x0, _ = write_fixtures(tmp_path)
        bad = tmp_path / "bad.csv"
        mb.save_samples_csv(bad, np.zeros((10, 3)))
        rc = main(train_args(x0, str(bad), str(tmp_path / "nope")))
        assert rc != 0
        assert "dimension" in capsys.readouterr().err

    def test_divergent_run_reports_iteration(self, tmp_path, capsys):
        x0, x1 = write_fixtures(tmp_path)
        rc = main(["train", "--x0", x0, "--x1", x1, "--eps", "1e-4", "--k", "2",
                   "--lr", "1e4", "--batch", "32", "--iters", "400",
                   "--seed", "0", "--out", str(tmp_path / "div")])
        assert rc == 3
        assert "iteration" in capsys.readouterr().err


class TestSampleCommand:
    def test_single_row_emits_n_by_d(self, tmp_path):
        x0, x1 = write_fixtures(tmp_path)
        run = tmp_path / "run"
        assert main(train_args(x0, x1, str(run))) == 0
        one = tmp_path / "one.csv"
        mb.save_samples_csv(one, np.array([[0.5, -0.5]]))
        out = tmp_path / "samp"
        rc = main(["sample", "--checkpoint", str(run / "checkpoint.json"),
                   "--cond-input", str(one), "--n", "17", "--seed", "9",
                   "--out", str(out)])
        assert rc == 0
        assert mb.load_samples(out / "samples.csv").shape == (17, 2)


class TestTrajectoriesCommand:
    def test_bridge_mode_outputs(self, tmp_path):
        x0, x1 = write_fixtures(tmp_path, n=32)
        run = tmp_path / "run"
        assert main(train_args(x0, x1, str(run))) == 0
        out = tmp_path / "traj"
        rc = main(["trajectories", "--checkpoint", str(run / "checkpoint.json"),
                   "--x0", x0, "--mode", "bridge", "--times", "0.25,0.5,0.75",
                   "--seed", "4", "--out", str(out)])
        assert rc == 0
        tb = mb.load_trajectories(out / "trajectories.bin")
        assert tb.states.shape == (32, 5, 2)
        np.testing.assert_allclose(tb.times, [0, 0.25, 0.5, 0.75, 1.0])

    def test_em_mode_outputs(self, tmp_path):
        x0, x1 = write_fixtures(tmp_path, n=16)
        run = tmp_path / "run"
        assert main(train_args(x0, x1, str(run))) == 0
        out = tmp_path / "traj"
        rc = main(["trajectories", "--checkpoint", str(run / "checkpoint.json"),
                   "--x0", x0, "--mode", "em", "--steps", "20", "--seed", "4",
                   "--out", str(out)])
        assert rc == 0
        assert mb.load_trajectories(out / "trajectories.bin").states.shape == (16, 21, 2)


class TestEvaluateCommand:
    def test_energy_metric_csv(self, tmp_path):
        x0, x1 = write_fixtures(tmp_path)
        run = tmp_path / "run"
        assert main(train_args(x0, x1, str(run))) == 0
        out = tmp_path / "ev"
        rc = main(["evaluate", "--checkpoint", str(run / "checkpoint.json"),
                   "--metric", "energy", "--x0", x0, "--against", x1,
                   "--seed", "6", "--out", str(out)])
        assert rc == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "metric,value,stderr,n,seed"
        metric, value, stderr, n, seed = lines[1].split(",")
        assert metric == "energy" and float(value) >= 0 and seed == "6"


class TestBenchmarkPipeline:
    def test_make_train_evaluate_small(self, tmp_path, capsys):
        bench = tmp_path / "bench"
        rc = main(["make-benchmark", "--dim", "2", "--k", "2", "--eps", "0.5",
                   "--n-pairs", "2048", "--seed", "7", "--out", str(bench)])
        assert rc == 0
        run = tmp_path / "run"
        rc = main(["train", "--x0", str(bench / "x0.csv"), "--x1", str(bench / "x1.csv"),
                   "--eps", "0.5", "--k", "4", "--lr", "5e-3", "--batch", "256",
                   "--iters", "3000", "--seed", "1", "--out", str(run)])
        assert rc == 0
        out = tmp_path / "ev"
        rc = main(["evaluate", "--checkpoint", str(run / "checkpoint.json"),
                   "--metric", "cbw2uvp", "--against", str(bench / "checkpoint.json"),
                   "--n", "128", "--seed", "2", "--out", str(out)])
        assert rc == 0
        value = float((out / "metrics.csv").read_text().splitlines()[1].split(",")[1])
        assert value < 5.0  # small desk-scale run; the tight bound lives in acceptance

    def test_kl_metric_runs(self, tmp_path):
        bench = tmp_path / "bench"
        main(["make-benchmark", "--dim", "1", "--k", "1", "--eps", "0.5",
              "--n-pairs", "512", "--seed", "8", "--out", str(bench)])
        out = tmp_path / "kl"
        rc = main(["evaluate", "--checkpoint", str(bench / "checkpoint.json"),
                   "--metric", "kl", "--against", str(bench / "checkpoint.json"),
                   "--n", "32", "--seed", "3", "--out", str(out)])
        assert rc == 0
        value = float((out / "metrics.csv").read_text().splitlines()[1].split(",")[1])
        assert value == pytest.approx(0.0, abs=1e-10)


class TestUsageErrors:
    def test_unknown_metric_rejected(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["evaluate", "--checkpoint", "x", "--metric", "nope",
                  "--against", "y", "--out", str(tmp_path)])

    def test_missing_required_flag_rejected(self):
        with pytest.raises(SystemExit):
            main(["train", "--x0", "only.csv"])

    def test_missing_file_is_diagnosed(self, tmp_path, capsys):
        rc = main(["sample", "--checkpoint", str(tmp_path / "none.json"),
                   "--cond-input", str(tmp_path / "none.csv"), "--n", "1",
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "error" in capsys.readouterr().err
