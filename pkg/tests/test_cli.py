import numpy as np
import pytest

from ratlab.cli import main
from ratlab.models import MlpModel
from ratlab.tensor_io import read_tensors, write_tensors

FAST_VAT = """
[dataset]
kind = moons
n_validation_per_class = 20
n_test_per_class = 50
[method]
name = vat
[transform.1]
family = noise
epsilon = 0.3
[training]
iterations = 30
[trials]
seeds = 0, 1
"""


@pytest.fixture
def vat_config(tmp_path):
    path = tmp_path / "vat.cfg"
    path.write_text(FAST_VAT)
    return path


class TestRun:
    def test_emits_expected_layout(self, vat_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", "--config", str(vat_config), "--out", str(out),
                     "--resolution", "10"])
        assert code == 0
        assert (out / "summary.txt").exists()
        assert (out / "config.cfg").exists()
        for seed in (0, 1):
            trial = out / f"trial_{seed}"
            assert (trial / "metrics.csv").exists()
            assert (trial / "snapshot.rat").exists()
            assert (trial / "boundary.csv").exists()
        summary = (out / "summary.txt").read_text()
        assert "mean_test_error = " in summary
        table = capsys.readouterr().out
        assert "mean_test_error" in table

    def test_reruns_are_byte_identical(self, vat_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(vat_config), "--out", str(out_a),
                     "--resolution", "5"]) == 0
        assert main(["run", "--config", str(vat_config), "--out", str(out_b),
                     "--resolution", "5"]) == 0
        for name in ("summary.txt", "trial_0/metrics.csv", "trial_0/boundary.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
        assert (out_a / "trial_0/snapshot.rat").read_bytes() == (
            out_b / "trial_0/snapshot.rat"
        ).read_bytes()
        # resolved configs differ only in their output paths
        diff = [
            (la, lb)
            for la, lb in zip(
                (out_a / "config.cfg").read_text().splitlines(),
                (out_b / "config.cfg").read_text().splitlines(),
            )
            if la != lb
        ]
        assert all(la.startswith("dir = ") for la, _ in diff)

    def test_refuses_nonempty_dir_without_force(self, vat_config, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        with pytest.raises(SystemExit):
            main(["run", "--config", str(vat_config), "--out", str(out)])
        assert main(["run", "--config", str(vat_config), "--out", str(out),
                     "--force", "--resolution", "5"]) == 0

    def test_seed_list_override(self, vat_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(vat_config), "--out", str(out),
                     "--seed-list", "7", "--resolution", "5"]) == 0
        assert (out / "trial_7").exists()
        assert not (out / "trial_0").exists()

    def test_trials_override(self, vat_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(vat_config), "--out", str(out),
                     "--trials", "3", "--resolution", "5"]) == 0
        for seed in (0, 1, 2):
            assert (out / f"trial_{seed}").exists()

    def test_unknown_method_fails_before_compute(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[method]\nname = alchemy\n")
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "config error" in capsys.readouterr().err


class TestGridsearch:
    def test_sweep_rows_and_argmin_flag(self, tmp_path, capsys):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text(FAST_VAT.replace("seeds = 0, 1", "seeds = 0"))
        out = tmp_path / "grid"
        code = main([
            "gridsearch", "--config", str(cfg), "--out", str(out),
            "--param", "transform.1.epsilon", "--values", "0.1,0.3,0.5,1.0",
        ])
        assert code == 0
        lines = (out / "gridsearch.csv").read_text().strip().splitlines()
        assert lines[0].startswith("transform.1.epsilon,")
        assert len(lines) == 5
        best_flags = [line.rsplit(",", 1)[1] for line in lines[1:]]
        assert best_flags.count("1") == 1
        means = [float(line.split(",")[1]) for line in lines[1:]]
        assert means[best_flags.index("1")] == min(means)
        assert "*" in capsys.readouterr().out

    def test_range_expansion(self, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text(FAST_VAT.replace("seeds = 0, 1", "seeds = 0")
                       .replace("iterations = 30", "iterations = 5"))
        out = tmp_path / "grid"
        code = main([
            "gridsearch", "--config", str(cfg), "--out", str(out),
            "--param", "method.lambda_max", "--values", "0.1:0.5:0.1",
        ])
        assert code == 0
        lines = (out / "gridsearch.csv").read_text().strip().splitlines()
        assert len(lines) == 6  # header + 5 values


class TestMakeMoons:
    def test_exports_csv(self, vat_config, tmp_path):
        dest = tmp_path / "moons.csv"
        assert main(["make-moons", "--config", str(vat_config),
                     "--out-file", str(dest)]) == 0
        lines = dest.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,label,split"
        assert len(lines) == 1 + 2 * (10 + 30 + 20 + 50)


class TestExportBoundary:
    def test_from_snapshot(self, tmp_path):
        model = MlpModel(2, 2, rng=0)
        snapshot = tmp_path / "snap.rat"
        write_tensors(snapshot, model.param_arrays())
        dest = tmp_path / "boundary.csv"
        code = main(["export-boundary", "--snapshot", str(snapshot),
                     "--out-file", str(dest), "--resolution", "8"])
        assert code == 0
        lines = dest.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,class,confidence"
        assert len(lines) == 1 + 64

    def test_rejects_non_2d_snapshot(self, tmp_path, capsys):
        model = MlpModel(5, 2, rng=0)
        snapshot = tmp_path / "snap.rat"
        write_tensors(snapshot, model.param_arrays())
        code = main(["export-boundary", "--snapshot", str(snapshot),
                     "--out-file", str(tmp_path / "b.csv")])
        assert code == 1
        assert "2-D" in capsys.readouterr().err


class TestSelfcheck:
    def test_passes_and_prints_one_line_per_suite(self, capsys):
        assert main(["selfcheck"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 5
        assert all(line.startswith("PASS") for line in out)
