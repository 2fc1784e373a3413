import json

import numpy as np
import pytest

from satforest.cli import main
from satforest.data import load_csv
from satforest.model_io import load_model


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def train_csv(tmp_path):
    path = tmp_path / "train.csv"
    assert run("gen", "friedman1", "--n", "80", "--seed", "3", "--out", str(path)) == 0
    return path


class TestGen:
    def test_friedman1_shape(self, tmp_path, capsys):
        out = tmp_path / "f1.csv"
        assert run("gen", "friedman1", "--n", "100", "--seed", "7", "--out", str(out)) == 0
        ds = load_csv(out)
        assert ds.n == 100 and ds.m == 10  # 11 columns on disk
        assert "n=100 m=10" in capsys.readouterr().out

    def test_friedman2_shape(self, tmp_path):
        out = tmp_path / "f2.csv"
        assert run("gen", "friedman2", "--n", "100", "--out", str(out)) == 0
        assert load_csv(out).m == 4  # 5 columns on disk

    def test_unknown_generator_usage_error(self, capsys):
        assert run("gen", "nope") == 1
        assert "unknown generator" in capsys.readouterr().err

    def test_same_seed_same_file(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("gen", "sparse", "--n", "50", "--seed", "5", "--out", str(a))
        run("gen", "sparse", "--n", "50", "--seed", "5", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()


class TestTrain:
    def test_model_files_byte_identical(self, tmp_path, train_csv):
        m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
        args = ("train", "--data", str(train_csv), "--trees", "6", "--seed", "9",
                "--epsilon", "0.5", "--gamma", "0.25")
        assert run(*args, "--out", str(m1)) == 0
        assert run(*args, "--out", str(m2)) == 0
        assert m1.read_bytes() == m2.read_bytes()

    def test_zero_rates_note(self, tmp_path, train_csv, capsys):
        model = tmp_path / "m.json"
        assert run(
            "train", "--data", str(train_csv), "--trees", "4", "--epsilon", "0",
            "--gamma", "0", "--out", str(model),
        ) == 0
        assert "trainable weights inactive" in capsys.readouterr().out

    def test_l1_loss_summary_matches_recomputation(self, tmp_path, train_csv, capsys):
        model_path = tmp_path / "m.json"
        assert run(
            "train", "--data", str(train_csv), "--trees", "5", "--loss", "l1",
            "--epsilon", "0.5", "--gamma", "0.5", "--seed", "2", "--out", str(model_path),
        ) == 0
        out = capsys.readouterr().out
        reported = float(out.split("training_l1_loss=")[1].split()[0])
        from satforest.attention import predict_batch

        model = load_model(model_path)
        ds = load_csv(train_csv)
        recomputed = float(np.abs(ds.targets - predict_batch(model, ds.features)).sum())
        assert reported == pytest.approx(recomputed, rel=1e-4)  # %.6g rounding

    def test_standardize_round_trips_through_model_file(self, tmp_path, train_csv):
        model_path = tmp_path / "m.json"
        assert run(
            "train", "--data", str(train_csv), "--trees", "4", "--standardize",
            "--out", str(model_path),
        ) == 0
        model = load_model(model_path)
        assert model.feature_loc is not None
        ds = load_csv(train_csv)
        from satforest.attention import predict_batch

        pred = predict_batch(model, ds.features)
        assert np.all(np.isfinite(pred))


class TestEval:
    def test_eval_prints_metrics(self, tmp_path, train_csv, capsys):
        model = tmp_path / "m.json"
        run("train", "--data", str(train_csv), "--trees", "4", "--out", str(model))
        capsys.readouterr()
        assert run("eval", "--model", str(model), "--data", str(train_csv)) == 0
        out = capsys.readouterr().out
        assert out.startswith("dataset\tr2\tmae")

    def test_missing_data_file_is_data_error(self, tmp_path, train_csv, capsys):
        model = tmp_path / "m.json"
        run("train", "--data", str(train_csv), "--trees", "4", "--out", str(model))
        assert run("eval", "--model", str(model), "--data", "missing.csv") == 2


class TestGrid:
    def test_prints_table_and_best(self, train_csv, capsys):
        assert run(
            "grid", "--data", str(train_csv), "--trees", "5", "--repeats", "1",
            "--grid-eps", "0,1", "--grid-gamma", "0,1",
        ) == 0
        out = capsys.readouterr().out
        assert out.startswith("epsilon\tgamma\tcv_r2\tfolds")
        assert "best: epsilon=" in out


class TestBench:
    def test_generated_datasets_and_outputs(self, tmp_path, capsys):
        prefix = tmp_path / "report"
        assert run(
            "bench", "--datasets", "sparse,friedman3", "--gen-n", "60",
            "--trees", "6", "--repeats", "1", "--grid-eps", "0,1",
            "--grid-gamma", "0,1", "--seed", "4", "--out", str(prefix),
        ) == 0
        tsv = (tmp_path / "report.bench.tsv").read_text()
        md = (tmp_path / "report.bench.md").read_text()
        assert tsv.splitlines()[0].startswith("dataset\tkind\tvariant")
        assert len(tsv.strip().splitlines()) == 3
        assert md.startswith("| dataset")

    def test_heads_column(self, tmp_path, capsys):
        assert run(
            "bench", "--datasets", "sparse", "--gen-n", "60", "--trees", "5",
            "--repeats", "1", "--grid-eps", "0.5", "--grid-gamma", "0.5",
            "--heads", "2", "--format", "tsv",
        ) == 0
        out = capsys.readouterr().out
        assert "r2_multihead" in out

    def test_sweep_output(self, tmp_path):
        prefix = tmp_path / "surf"
        assert run(
            "bench", "--datasets", "friedman1", "--gen-n", "60", "--trees", "5",
            "--repeats", "1", "--sweep", "attention", "--out", str(prefix),
            "--format", "tsv",
        ) == 0
        text = (tmp_path / "surf.sweep.tsv").read_text()
        assert text.splitlines()[0] == "tau\tepsilon\tkappa\tgamma\tr2\tdataset"

    def test_bad_dataset_spec_is_data_error(self):
        assert run("bench", "--datasets", "No_Such_Thing.csv") == 2


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_override(self, tmp_path, train_csv):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("trees = 4\nepsilon = 0.5\n# comment\nseed = 11\n")
        m1 = tmp_path / "m1.json"
        assert run(
            "train", "--data", str(train_csv), "--config", str(cfg),
            "--out", str(m1),
        ) == 0
        model = load_model(m1)
        assert model.forest.n_trees == 4
        assert model.config.epsilon == 0.5
        # explicit flag beats the file
        m2 = tmp_path / "m2.json"
        assert run(
            "train", "--data", str(train_csv), "--config", str(cfg),
            "--trees", "3", "--out", str(m2),
        ) == 0
        assert load_model(m2).forest.n_trees == 3

    def test_unknown_config_key_usage_error(self, tmp_path, train_csv, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus = 1\n")
        assert run("train", "--data", str(train_csv), "--config", str(cfg)) == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_dump_config(self, tmp_path, train_csv, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("trees = 7\n")
        assert run(
            "train", "--data", str(train_csv), "--config", str(cfg), "--dump-config"
        ) == 0
        out = capsys.readouterr().out
        assert "trees = 7" in out
        assert "epsilon = 0.25" in out


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert run("train") == 1  # --data is required

    def test_bad_flag_value(self, capsys):
        assert run("gen", "friedman1", "--n", "not-a-number") == 1

    def test_data_error(self):
        assert run("train", "--data", "does-not-exist.csv") == 2

    def test_model_version_mismatch_is_numeric_error(self, tmp_path, train_csv):
        model = tmp_path / "m.json"
        run("train", "--data", str(train_csv), "--trees", "3", "--out", str(model))
        obj = json.loads(model.read_text())
        obj["version"] = 99
        model.write_text(json.dumps(obj))
        assert run("eval", "--model", str(model), "--data", str(train_csv)) == 3
