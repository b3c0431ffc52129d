import csv
import json

import pytest

from chain_perturb import VerificationResult, kernel_pair, kernel_to_json
from chain_perturb.cli import main
import chain_perturb.cli as cli_mod


@pytest.fixture()
def pair_file(tmp_path):
    P_eps, P = kernel_pair(0.25, 0.1)
    path = tmp_path / "pair.json"
    path.write_text(json.dumps({"P": kernel_to_json(P), "P_eps": kernel_to_json(P_eps)}))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConstants:
    def test_prints_and_writes_csv(self, tmp_path, pair_file, capsys):
        rc = main(["--out-dir", str(tmp_path / "out"), "constants", "--pair", str(pair_file)])
        assert rc == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0] == "a,alpha,epsilon"
        a, alpha, eps = map(float, out[1].split(","))
        assert (a, alpha) == (0.5, 0.4)
        assert eps == pytest.approx(0.1, abs=1e-15)
        rows = read_csv(tmp_path / "out" / "constants.csv")
        assert float(rows[0]["a"]) == 0.5

    def test_manifest_lists_outputs(self, tmp_path, pair_file):
        out = tmp_path / "out"
        main(["--out-dir", str(out), "constants", "--pair", str(pair_file)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "constants"
        assert manifest["outputs"] == ["constants.csv"]
        assert (out / "constants.csv").exists()
        assert "version" in manifest and "duration_s" in manifest

    def test_missing_pair_file_is_usage_error(self, tmp_path):
        rc = main(["--out-dir", str(tmp_path), "constants", "--pair", str(tmp_path / "nope.json")])
        assert rc == 2


class TestBounds:
    def test_csv_table(self, tmp_path, capsys):
        rc = main(["--out-dir", str(tmp_path), "bounds", "--alpha", "0.4",
                   "--epsilon", "0.1", "--a", "0.5", "--n", "100", "--p0", "0.5",
                   "--fstar", "0.5", "--lambda", "2.0", "--etau", "30",
                   "--format", "csv"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "name,value,raw,capped,regime_ok"
        table = {row.split(",")[0]: row.split(",") for row in lines[1:]}
        assert float(table["avg_disagreement"][1]) == pytest.approx(
            0.2 + (1 - 0.5 ** 100) / (100 * 0.5) * 0.3)
        assert table["decoupling_time"][1] == "1"  # 0.1 * 30 capped by the evaluator

    def test_text_table_and_regime_rows(self, tmp_path, capsys):
        rc = main(["--out-dir", str(tmp_path), "bounds", "--epsilon", "0.1", "--n", "10"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "avg_disagreement" in out
        assert "false" in out  # regime_ok False rows: no alpha, no a given

    def test_unknown_flag_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--out-dir", str(tmp_path), "bounds", "--nonsense", "1"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err


class TestSharpness:
    def test_exit_zero_and_gap_column(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["--out-dir", str(out), "sharpness", "--beta", "0.3",
                   "--eps", "0.05", "--gamma", "0.9", "--nmax", "100"])
        assert rc == 0
        rows = read_csv(out / "sharpness.csv")
        assert len(rows) == 100
        assert all(float(r["gap"]) <= 1e-12 for r in rows)
        assert [r["n"] for r in rows] == [str(n) for n in range(1, 101)]

    def test_byte_identical_across_runs(self, tmp_path):
        args = ["sharpness", "--beta", "0.25", "--eps", "0.1", "--gamma", "1.0", "--nmax", "30"]
        main(["--out-dir", str(tmp_path / "a")] + args)
        main(["--out-dir", str(tmp_path / "b")] + args)
        assert (tmp_path / "a" / "sharpness.csv").read_bytes() == \
            (tmp_path / "b" / "sharpness.csv").read_bytes()


class TestSimulate:
    def test_single_trajectory_csv(self, tmp_path, pair_file):
        out = tmp_path / "out"
        rc = main(["--out-dir", str(out), "simulate", "--pair", str(pair_file),
                   "--n", "40", "--replicates", "1", "--seed", "9"])
        assert rc == 0
        rows = read_csv(out / "trajectory.csv")
        assert len(rows) == 41
        assert set(rows[0]) == {"step", "x", "x_eps", "z", "y"}

    def test_batch_summary_csv(self, tmp_path, pair_file):
        out = tmp_path / "out"
        rc = main(["--out-dir", str(out), "simulate", "--pair", str(pair_file),
                   "--n", "30", "--replicates", "8", "--seed", "2"])
        assert rc == 0
        rows = read_csv(out / "summary.csv")
        assert len(rows) == 8
        assert set(rows[0]) == {"seed", "n", "disagreement_fraction", "first_decoupling_step"}

    def test_deterministic_output(self, tmp_path, pair_file):
        args = ["simulate", "--pair", str(pair_file), "--n", "25",
                "--replicates", "6", "--seed", "4"]
        main(["--out-dir", str(tmp_path / "a")] + args)
        main(["--out-dir", str(tmp_path / "b")] + args)
        assert (tmp_path / "a" / "summary.csv").read_bytes() == \
            (tmp_path / "b" / "summary.csv").read_bytes()


class TestVerify:
    def write_config(self, tmp_path, pair_file, **extra):
        doc = {
            "pair": pair_file.name,
            "n": 120,
            "replicates": 400,
            "seed": 5,
            "x0": 0,
            "x0_eps": 0,
            "f": [0.0, 1.0],
            "experiments": ["disagreement", "average_difference"],
        }
        doc.update(extra)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return path

    def test_satisfied_run_exits_zero(self, tmp_path, pair_file, capsys):
        cfg = self.write_config(tmp_path, pair_file)
        out = tmp_path / "out"
        rc = main(["--out-dir", str(out), "verify", "--config", str(cfg)])
        assert rc == 0
        rows = read_csv(out / "verify.csv")
        assert [r["name"] for r in rows] == ["disagreement", "average_difference"]
        assert all(r["satisfied"] == "true" for r in rows)
        assert "disagreement" in capsys.readouterr().out

    def test_stopping_rule_config(self, tmp_path, pair_file):
        cfg = self.write_config(
            tmp_path, pair_file,
            experiments=["decoupling", "bounding_decoupling"],
            stopping={"kind": "deterministic", "time": 50},
        )
        rc = main(["--out-dir", str(tmp_path / "out"), "verify", "--config", str(cfg)])
        assert rc == 0

    def test_unsatisfied_exits_one(self, tmp_path, pair_file, monkeypatch):
        # wiring test: force an unsatisfied result through the dispatcher
        def fake(name, config, lam=1.0):
            return VerificationResult(name=name, estimate=1.0, std_error=0.0,
                                      bound=0.0, satisfied=False, replicates_used=1)
        monkeypatch.setattr(cli_mod, "run_experiment", fake)
        cfg = self.write_config(tmp_path, pair_file, experiments=["disagreement"])
        rc = main(["--out-dir", str(tmp_path / "out"), "verify", "--config", str(cfg)])
        assert rc == 1

    def test_numerical_failure_exits_three(self, tmp_path, pair_file, monkeypatch):
        from chain_perturb import NumericalFailureError

        def boom(name, config, lam=1.0):
            raise NumericalFailureError("synthetic")
        monkeypatch.setattr(cli_mod, "run_experiment", boom)
        cfg = self.write_config(tmp_path, pair_file)
        rc = main(["--out-dir", str(tmp_path / "out"), "verify", "--config", str(cfg)])
        assert rc == 3

    def test_malformed_config_exits_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"n\": 5}")
        rc = main(["--out-dir", str(tmp_path / "out"), "verify", "--config", str(bad)])
        assert rc == 2


class TestGpSweep:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_small_sweep_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["--out-dir", str(out), "gp-sweep", "--n", "20", "--m", "2",
                   "--replicates", "2", "--seed", "3"])
        assert rc == 0
        rows = read_csv(out / "sweep.csv")
        assert set(rows[0]) == {"replicate", "q", "epsilon", "alpha", "ratio"}
        snap = json.loads((out / "config.json").read_text())
        assert snap["n"] == 20 and snap["m"] == 2
        assert snap["prior_a"] == 2.0 and snap["prior_b"] == 2.0
        assert snap["replicates"] == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert sorted(manifest["outputs"]) == ["config.json", "sweep.csv"]
