import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from trainmem.accounting import emit_summary, summarize
from trainmem.archspec import ArchSpec, GenerationConfig, Range, custom_op, dump_generation_config, linear
from trainmem.cli import holdout_split, main
from trainmem.dataset import read_table


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def config(tmp_path):
    cfg = GenerationConfig.for_family("MLP", num_random_configs=12, input_size=Range(4, 64), width=Range(8, 64))
    path = tmp_path / "mlp.yaml"
    path.write_text(dump_generation_config(cfg))
    return path


@pytest.fixture
def spec_file(tmp_path):
    spec = ArchSpec("MLP", 32, (4,), 2, (linear(4, 8), linear(8, 2)))
    path = tmp_path / "spec.json"
    path.write_text(spec.to_json())
    return path


def test_generate_writes_one_dir_per_spec(tmp_path, config, capsys):
    code, _, _ = run(capsys, "--seed", 3, "generate", config, "--out", tmp_path / "gen")
    assert code == 0
    dirs = sorted((tmp_path / "gen").iterdir())
    assert len(dirs) == 12
    assert {p.name for p in dirs[0].iterdir()} == {"spec.json", "summary.txt"}


def test_generate_missing_config(tmp_path, capsys):
    code, _, err = run(capsys, "generate", tmp_path / "nope.yaml", "--out", tmp_path / "gen")
    assert code == 1 and "not found" in err
    assert not (tmp_path / "gen").exists()


def test_generate_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("family: MLP\nbatch_size: {min: 5, max: 1}\n")
    code, _, err = run(capsys, "generate", bad, "--out", tmp_path / "gen")
    assert code == 1 and "Traceback" not in err
    assert not (tmp_path / "gen").exists()


def test_generate_parallel_matches_serial(tmp_path, config, capsys):
    run(capsys, "generate", config, "--out", tmp_path / "a")
    run(capsys, "--jobs", 2, "generate", config, "--out", tmp_path / "b")
    for p in (tmp_path / "a").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_summarize(spec_file, capsys):
    code, out, _ = run(capsys, "summarize", spec_file)
    assert code == 0 and out.startswith("Layer (type)") and "Total params: 58" in out


class TestEstimate:
    def test_analytic(self, spec_file, capsys):
        code, out, _ = run(capsys, "estimate", spec_file)
        rep = json.loads(out)
        assert code == 0 and rep["method"] == "analytic" and rep["estimated_mb"] > 0

    def test_shapeprop_with_bin(self, spec_file, capsys):
        code, out, _ = run(capsys, "estimate", spec_file, "--method", "shapeprop", "--margin-mb", 0, "--bin-mb", 1)
        rep = json.loads(out)
        assert code == 0 and rep["margin_mb"] == 0 and rep["bin"] == 0

    def test_csv_format(self, spec_file, capsys):
        code, out, _ = run(capsys, "--format", "csv", "estimate", spec_file)
        assert code == 0 and out.splitlines()[0] == "method,estimated_mb,margin_mb,bin,elapsed_ms"

    def test_custom_op_shapeprop(self, tmp_path, capsys):
        spec = ArchSpec("MLP", 1, (4,), 2, (linear(4, 4), custom_op("warp"), linear(4, 2)))
        path = tmp_path / "c.json"
        path.write_text(spec.to_json())
        code, out, err = run(capsys, "estimate", path, "--method", "shapeprop")
        assert code == 3 and out == "" and "Traceback" not in err

    def test_ml_requires_model(self, spec_file, capsys):
        assert run(capsys, "estimate", spec_file, "--method", "ml")[0] == 1

    def test_invalid_spec(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(ArchSpec("MLP", 1, (4,), 2, (linear(4, 8), linear(9, 2))).to_json())
        code, _, err = run(capsys, "estimate", path)
        assert code == 2 and "shape mismatch at layer 1" in err

    def test_out_file(self, spec_file, tmp_path, capsys):
        run(capsys, "estimate", spec_file, "--out", tmp_path / "est.json")
        assert json.loads((tmp_path / "est.json").read_text())["method"] == "analytic"


def _runs(root: Path, n: int):
    spec = ArchSpec("MLP", 8, (4,), 2, (linear(4, 8), linear(8, 2)))
    for i in range(n):
        d = root / f"run_{i:02d}"
        d.mkdir(parents=True)
        (d / "summary.txt").write_text(emit_summary(summarize(spec)))
        (d / "monitor.csv").write_text(f"timestamp_s,mem_mb,smact,smocc,drama\n0,{100 * i},0.1,0.2,0.3\n1,{100 * i + 50},0.3,0.2,0.5\n")
    return root


class TestIngestFeaturize:
    def test_ingest(self, tmp_path, capsys):
        code, _, _ = run(capsys, "ingest", _runs(tmp_path / "runs", 10), "--out", tmp_path / "d.csv")
        rows = read_table((tmp_path / "d.csv").read_text())
        assert code == 0 and len(rows) == 10 and rows[3].peak_mem_mb == 350

    def test_ingest_missing_monitor(self, tmp_path, capsys):
        runs = _runs(tmp_path / "runs", 3)
        (runs / "run_01" / "monitor.csv").unlink()
        code, _, err = run(capsys, "ingest", runs, "--out", tmp_path / "d.csv")
        assert code == 2 and "run_01" in err
        assert not (tmp_path / "d.csv").exists()

    def test_featurize_measured(self, tmp_path, capsys):
        run(capsys, "ingest", _runs(tmp_path / "runs", 10), "--out", tmp_path / "d.csv")
        code, _, _ = run(capsys, "featurize", tmp_path / "d.csv", "--out", tmp_path / "f.csv", "--bin-mb", 256, "--smact-edges", "0.1,0.5")
        rows = read_table((tmp_path / "f.csv").read_text())
        assert code == 0
        assert [r.mem_class for r in rows] == [(100 * i + 50) // 256 for i in range(10)]
        assert {r.smact_class for r in rows} == {1}  # mean 0.2 -> [0.1, 0.5)
        assert {r.drama_class for r in rows} == {1}  # MLP default edges

    def test_featurize_8gb_bins(self, tmp_path, config, capsys):
        cfg = GenerationConfig.for_family("CNN", num_random_configs=10)
        (tmp_path / "cnn.yaml").write_text(dump_generation_config(cfg))
        run(capsys, "generate", tmp_path / "cnn.yaml", "--out", tmp_path / "gen")
        code, _, _ = run(capsys, "featurize", tmp_path / "gen", "--label-source", "analytic", "--bin-mb", 8192, "--out", tmp_path / "f.csv")
        rows = read_table((tmp_path / "f.csv").read_text())
        assert code == 0 and all(r.mem_class == int(r.peak_mem_mb // 8192) for r in rows)


def _labelled_csv(tmp_path, capsys, n=90):
    cfg = GenerationConfig.for_family("MLP", num_random_configs=n)
    (tmp_path / "m.yaml").write_text(dump_generation_config(cfg))
    assert run(capsys, "--seed", 1, "generate", tmp_path / "m.yaml", "--out", tmp_path / "gen")[0] == 0
    assert run(capsys, "featurize", tmp_path / "gen", "--label-source", "analytic", "--out", tmp_path / "data.csv")[0] == 0
    return tmp_path / "data.csv"


FAST = ("--members", 2, "--epochs", 8, "--max-width", 5, "--min-width", 3)


class TestTrainEvaluate:
    def test_train_evaluate_estimate(self, tmp_path, capsys):
        data = _labelled_csv(tmp_path, capsys)
        code, out, _ = run(capsys, "train", data, "--out", tmp_path / "model.json", "--bin-mb", 2048, "--test-out", tmp_path / "test.csv", *FAST)
        assert code == 0
        metrics = json.loads(out)
        assert {"accuracy", "macro_f1", "per_class_recall", "folds"} <= set(metrics)
        assert len(metrics["folds"]) == 3
        code, out, _ = run(capsys, "evaluate", tmp_path / "model.json", tmp_path / "test.csv")
        assert code == 0 and {"accuracy", "macro_f1", "per_class_recall"} <= set(json.loads(out))
        spec = tmp_path / "gen" / "config_00000" / "spec.json"
        code, out, _ = run(capsys, "estimate", spec, "--method", "ml", "--model", tmp_path / "model.json")
        rep = json.loads(out)
        assert code == 0 and rep["method"] == "ml" and rep["estimated_mb"] % 2048 == 0

    def test_unseen_family(self, tmp_path, capsys):
        data = _labelled_csv(tmp_path, capsys)
        run(capsys, "train", data, "--out", tmp_path / "model.json", "--bin-mb", 2048, *FAST)
        cnn = GenerationConfig.for_family("CNN", num_random_configs=1)
        (tmp_path / "c.yaml").write_text(dump_generation_config(cnn))
        run(capsys, "generate", tmp_path / "c.yaml", "--out", tmp_path / "cgen")
        code, _, err = run(capsys, "estimate", tmp_path / "cgen" / "config_00000" / "spec.json", "--method", "ml", "--model", tmp_path / "model.json")
        assert code == 3 and "CNN" in err

    def test_utilization_target(self, tmp_path, capsys):
        runs = tmp_path / "runs"
        spec = ArchSpec("MLP", 8, (4,), 2, (linear(4, 8), linear(8, 2)))
        for i in range(30):
            d = runs / f"r{i:02d}"
            d.mkdir(parents=True)
            (d / "summary.txt").write_text(emit_summary(summarize(ArchSpec("MLP", 1 + i, (4,), 2, spec.layers))))
            u = (0.1, 0.5, 0.9)[i % 3]
            (d / "monitor.csv").write_text(f"timestamp_s,mem_mb,smact,smocc,drama\n0,100,{u},0,0\n")
        run(capsys, "ingest", runs, "--out", tmp_path / "u.csv")
        code, out, _ = run(capsys, "train", tmp_path / "u.csv", "--target", "smact", "--edges", "0.2,0.7", "--out", tmp_path / "m.json", *FAST)
        assert code == 0
        result = json.loads(out)
        assert result["bin_scheme"]["edges"] == [0.0, 0.2, 0.7, 1.0]
        assert result["classes"] == [0, 1, 2]

    def test_class_starved(self, tmp_path, capsys):
        run(capsys, "ingest", _runs(tmp_path / "runs", 6), "--out", tmp_path / "d.csv")
        code, _, err = run(capsys, "train", tmp_path / "d.csv", "--out", tmp_path / "m.json", "--bin-mb", 128, *FAST)
        assert code == 2 and "class-starved" in err
        assert not (tmp_path / "m.json").exists()

    def test_bad_model_file(self, tmp_path, spec_file, capsys):
        (tmp_path / "m.json").write_text("{}")
        assert run(capsys, "estimate", spec_file, "--method", "ml", "--model", tmp_path / "m.json")[0] == 2


class TestPCA:
    def test_outputs(self, tmp_path, capsys):
        data = _labelled_csv(tmp_path, capsys, n=30)
        code, _, _ = run(capsys, "pca", data, "--k", 3, "--out", tmp_path / "pca.csv")
        lines = (tmp_path / "pca.csv").read_text().splitlines()
        assert code == 0 and lines[0] == "pc1,pc2,pc3,mem_class" and len(lines) == 31
        ratios = [float(l.split(",")[1]) for l in (tmp_path / "pca_variance.csv").read_text().splitlines()[1:]]
        assert ratios == sorted(ratios, reverse=True)

    def test_k_too_large(self, tmp_path, capsys):
        data = _labelled_csv(tmp_path, capsys, n=5)
        code, _, _ = run(capsys, "pca", data, "--k", 14, "--out", tmp_path / "pca.csv")
        assert code == 1 and not (tmp_path / "pca.csv").exists()


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["estimate"], ["estimate", "x.json", "--method", "guess"], ["--jobs", "0", "summarize", "x"]],
)
def test_usage_errors(argv, capsys):
    assert run(capsys, *argv)[0] == 1


def test_console_entry_point_no_traceback(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "trainmem.cli", "estimate", str(tmp_path / "missing.json")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1 and "Traceback" not in proc.stderr


def test_holdout_keeps_folds_rows_per_class():
    y = np.array([0] * 40 + [1] * 3 + [2] * 5)
    train, test = holdout_split(y, 0.3, 3, 0)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(len(y)))
    assert int((y[train] == 1).sum()) == 3 and int((y[train] == 2).sum()) >= 3
    assert int((y[test] == 0).sum()) == 12


def test_evaluate_on_training_data_beats_cv(tmp_path, capsys):
    data = _labelled_csv(tmp_path, capsys)
    code, out, _ = run(capsys, "train", data, "--out", tmp_path / "m.json", "--bin-mb", 1024, "--test-fraction", 0.0)
    assert code == 0
    cv = json.loads(out)["accuracy"]
    code, out, _ = run(capsys, "evaluate", tmp_path / "m.json", data)
    assert code == 0 and json.loads(out)["accuracy"] >= cv


def test_bad_test_fraction(tmp_path, capsys):
    run(capsys, "ingest", _runs(tmp_path / "runs", 6), "--out", tmp_path / "d.csv")
    assert run(capsys, "train", tmp_path / "d.csv", "--out", tmp_path / "m.json", "--test-fraction", 1.0)[0] == 1
