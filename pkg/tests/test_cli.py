import json

import numpy as np
import pytest

from gtn import checkpoint, cli, evaluate
from gtn.architecture import ArchitectureSpec, build
from gtn.data import load_scalar_csv, make_xor_features, write_scalar_csv
from gtn.training import accuracy

XOR_RUN = {
    "architecture": {"kind": "mps", "grid": [2], "bond_dim": 2, "num_classes": 2,
                     "feature_map": "learnable-table", "feature_bins": 16},
    "train": {"learning_rate": 0.05, "epochs": 30, "dropout_keep": 1.0, "seed": 0},
    "data": {"kind": "synthetic", "generator": "xor", "n_train": 2000, "n_test": 500, "seed": 0},
}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def xor_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("xor")
    cfg = write_config(d / "run.json", {**XOR_RUN, "output_dir": str(d / "out")})
    assert cli.main(["train", str(cfg)]) == 0
    return d, cfg


class TestTrain:
    def test_outputs(self, xor_run):
        d, _ = xor_run
        out = d / "out"
        for name in ("metrics.csv", "checkpoint.gtn", "summary.json"):
            assert (out / name).exists()
        s = json.loads((out / "summary.json").read_text())
        assert s["train_accuracy"] == 1.0
        assert s["kind"] == "mps" and s["seed"] == 0
        assert len(s["config_hash"]) == 64
        assert s["n_params"] > 0 and s["wall_clock_seconds"] > 0

    def test_rerun_identical_metrics(self, xor_run, tmp_path):
        d, cfg = xor_run
        assert cli.main(["train", str(cfg), "--output-dir", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "metrics.csv").read_bytes() == \
            (d / "out" / "metrics.csv").read_bytes()
        assert (tmp_path / "again" / "checkpoint.gtn").read_bytes() == \
            (d / "out" / "checkpoint.gtn").read_bytes()

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"architecture": {"kind": "mps",')
        out = tmp_path / "o"
        assert cli.main(["train", str(p), "--output-dir", str(out)]) == 1
        assert not out.exists()
        assert "malformed JSON" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        cfg = {**XOR_RUN, "train": {**XOR_RUN["train"], "lr": 1.0}}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg)),
                         "--output-dir", str(tmp_path / "o")]) == 1

    def test_geometry_mismatch(self, tmp_path):
        cfg = {**XOR_RUN, "architecture": {**XOR_RUN["architecture"], "grid": [3]}}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg)),
                         "--output-dir", str(tmp_path / "o")]) == 2

    def test_missing_data_file(self, tmp_path):
        cfg = {**XOR_RUN, "data": {"kind": "scalar-csv", "train": str(tmp_path / "none.csv")}}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg)),
                         "--output-dir", str(tmp_path / "o")]) == 2

    def test_overflow_exit(self, tmp_path):
        cfg = {**XOR_RUN, "train": {**XOR_RUN["train"], "learning_rate": 1e300, "epochs": 3},
               "output_dir": str(tmp_path / "o")}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg))]) == 3
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert "error" in s

    def test_grid(self, tmp_path):
        cfg = {**XOR_RUN, "train": {**XOR_RUN["train"], "epochs": 2,
                                    "grid": {"learning_rate": [0.01, 0.05]}},
               "data": {**XOR_RUN["data"], "n_train": 200, "n_val": 100, "n_test": 0},
               "output_dir": str(tmp_path / "o")}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg))]) == 0
        rows = (tmp_path / "o" / "grid.csv").read_text().splitlines()
        assert len(rows) == 3
        assert "grid_best" in json.loads((tmp_path / "o" / "summary.json").read_text())

    def test_digest_ignores_output_dir(self):
        a = cli.RunConfig.from_dict({**XOR_RUN, "output_dir": "a"})
        b = cli.RunConfig.from_dict({**XOR_RUN, "output_dir": "b"})
        c = cli.RunConfig.from_dict({**XOR_RUN, "train": {**XOR_RUN["train"], "seed": 1}})
        assert a.digest() == b.digest() != c.digest()


class TestEval:
    def test_train_split_matches_summary(self, xor_run, capsys):
        d, cfg = xor_run
        capsys.readouterr()
        assert cli.main(["eval", str(d / "out" / "checkpoint.gtn"), "--config", str(cfg),
                         "--split", "train"]) == 0
        acc = float(capsys.readouterr().out.split()[1])
        assert acc == json.loads((d / "out" / "summary.json").read_text())["train_accuracy"]

    def test_confusion_rows(self, xor_run, tmp_path):
        d, cfg = xor_run
        cm = tmp_path / "cm.csv"
        assert cli.main(["eval", str(d / "out" / "checkpoint.gtn"), "--config", str(cfg),
                         "--confusion", str(cm)]) == 0
        rows = np.loadtxt(cm, delimiter=",", skiprows=1)[:, 1:]
        test = make_xor_features(2500, seed=0).subset(np.arange(2000, 2500))
        np.testing.assert_array_equal(rows.sum(axis=1), np.bincount(test.y, minlength=2))

    def test_roundtrip_accuracy(self, xor_run, tmp_path, capsys):
        d, _ = xor_run
        model = checkpoint.load(d / "out" / "checkpoint.gtn")
        ds = make_xor_features(300, seed=9)
        csv = tmp_path / "x.csv"
        write_scalar_csv(csv, ds)
        capsys.readouterr()
        assert cli.main(["eval", str(d / "out" / "checkpoint.gtn"), "--scalar-csv", str(csv)]) == 0
        assert float(capsys.readouterr().out.split()[1]) == accuracy(model, load_scalar_csv(csv))

    def test_geometry_mismatch(self, xor_run, tmp_path):
        d, _ = xor_run
        csv = tmp_path / "x.csv"
        from gtn.data import Dataset
        write_scalar_csv(csv, Dataset(np.zeros((3, 3)), [0, 1, 0], 2))
        assert cli.main(["eval", str(d / "out" / "checkpoint.gtn"), "--scalar-csv", str(csv)]) == 2

    def test_bad_checkpoint(self, tmp_path, xor_run):
        p = tmp_path / "junk.gtn"
        p.write_bytes(b"hello")
        assert cli.main(["eval", str(p), "--config", str(xor_run[1])]) == 2


class TestExportFeatures:
    def test_rows(self, xor_run, tmp_path):
        d, _ = xor_run
        out = tmp_path / "f.csv"
        assert cli.main(["export-features", str(d / "out" / "checkpoint.gtn"),
                         "--out", str(out)]) == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        assert rows.shape == (16, 3)
        np.testing.assert_allclose(np.linalg.norm(rows[:, 1:], axis=1), 1.0, atol=1e-12)

    def test_fixed_features(self, tmp_path, capsys):
        p = tmp_path / "m.gtn"
        checkpoint.save(build(ArchitectureSpec(kind="mps", grid=(2,))), p)
        assert cli.main(["export-features", str(p), "--out", str(tmp_path / "f.csv")]) == 1
        assert "learnable" in capsys.readouterr().err
        assert not (tmp_path / "f.csv").exists()


class TestVerify:
    def test_passes(self, capsys):
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") >= 10

    def test_sign_flip_detected(self, monkeypatch, capsys):
        real = evaluate.loss_and_gradient

        def flipped(*args, **kw):
            value, grads, s = real(*args, **kw)
            return value, {k: -g for k, g in grads.items()}, s

        monkeypatch.setattr(evaluate, "loss_and_gradient", flipped)
        assert cli.main(["verify"]) == 4
        out = capsys.readouterr().out
        assert "gradient[" in out.split("failing properties:")[1]


class TestGenData:
    def test_xor(self, tmp_path):
        out = tmp_path / "x.csv"
        assert cli.main(["gen-data", "xor", "--n", "50", "--seed", "3", "--out", str(out)]) == 0
        ds = load_scalar_csv(out)
        ref = make_xor_features(50, seed=3)
        np.testing.assert_array_equal(ds.x, ref.x)
        np.testing.assert_array_equal(ds.y, ref.y)

    def test_bad_n(self, tmp_path):
        assert cli.main(["gen-data", "xor", "--n", "0", "--out", str(tmp_path / "x.csv")]) == 1


class TestSequenceRun:
    def test_identity_features_train(self, tmp_path, rng):
        from gtn.data import write_sequence_csv
        x = rng.normal(0, 1, (60, 5, 3))
        y = (x[:, :, 0].sum(axis=1) > 0).astype(int)
        write_sequence_csv(tmp_path / "tr.csv", x, y, lo=-3, hi=3)
        cfg = {"architecture": {"kind": "mps", "grid": [5], "bond_dim": 2, "num_classes": 2,
                                "feature_dim": 3, "feature_map": "identity"},
               "train": {"learning_rate": 0.01, "epochs": 2, "dropout_keep": 1.0},
               "data": {"kind": "sequence-csv", "train": str(tmp_path / "tr.csv"), "n_val": 10,
                        "num_classes": 2},
               "output_dir": str(tmp_path / "o")}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg))]) == 0
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["val_accuracy"] is not None and s["test_accuracy"] is None

    def test_wrong_vector_length(self, tmp_path, rng):
        from gtn.data import write_sequence_csv
        write_sequence_csv(tmp_path / "tr.csv", rng.uniform(0, 1, (4, 5, 2)), [0, 1, 0, 1])
        cfg = {"architecture": {"kind": "mps", "grid": [5], "num_classes": 2, "feature_dim": 3,
                                "feature_map": "identity"},
               "data": {"kind": "sequence-csv", "train": str(tmp_path / "tr.csv")},
               "output_dir": str(tmp_path / "o")}
        assert cli.main(["train", str(write_config(tmp_path / "c.json", cfg))]) == 2
