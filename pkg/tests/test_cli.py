import json
from pathlib import Path

import numpy as np
import pytest

from qglime.circuit import init_model, load_checkpoint
from qglime.cli import main
from qglime.graphs import generate_dataset, save_dataset
from qglime.seeds import TAG_INIT, spawn_seed


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """Shared tiny pipeline: dataset + 1-epoch checkpoint."""
    root = tmp_path_factory.mktemp("tiny")
    assert main(["gen-data", "--case", "1", "--seed", "3", "--out", str(root / "data")]) == 0
    assert (
        main(
            [
                "train",
                "--dataset",
                str(root / "data" / "dataset.json"),
                "--epochs",
                "1",
                "--batch-size",
                "50",
                "--out",
                str(root / "model"),
            ]
        )
        == 0
    )
    return root


def read_bytes_map(directory: Path, patterns=("*.json", "*.csv")) -> dict:
    out = {}
    for pattern in patterns:
        for f in sorted(directory.rglob(pattern)):
            out[str(f.relative_to(directory))] = f.read_bytes()
    return out


class TestGenData:
    def test_writes_graph_counts(self, tmp_path):
        assert main(["gen-data", "--case", "1", "--seed", "7", "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "dataset.json").read_text())
        assert len(payload["graphs"]) == 140
        assert (tmp_path / "run-manifest.json").is_file()

    def test_identical_flags_identical_bytes(self, tmp_path):
        main(["gen-data", "--case", "2", "--seed", "9", "--out", str(tmp_path / "a")])
        main(["gen-data", "--case", "2", "--seed", "9", "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "dataset.json").read_bytes()
        b = (tmp_path / "b" / "dataset.json").read_bytes()
        assert a == b

    def test_unknown_case_is_usage_error(self, tmp_path):
        assert main(["gen-data", "--case", "3", "--seed", "1", "--out", str(tmp_path)]) == 2

    def test_rerun_from_manifest(self, tmp_path):
        main(["gen-data", "--case", "1", "--seed", "4", "--out", str(tmp_path / "a")])
        manifest = tmp_path / "a" / "run-manifest.json"
        assert main(["gen-data", "--config", str(manifest), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "dataset.json").read_bytes() == (
            tmp_path / "b" / "dataset.json"
        ).read_bytes()


class TestTrainCommand:
    def test_missing_dataset_no_partial_outputs(self, tmp_path):
        rc = main(["train", "--dataset", str(tmp_path / "nope.json"), "--out", str(tmp_path / "m")])
        assert rc == 3
        assert not (tmp_path / "m").exists()

    def test_zero_epochs_equals_initialization(self, tmp_path):
        ds = generate_dataset("Case1", 2)
        save_dataset(ds, tmp_path / "d.json")
        rc = main(
            ["train", "--dataset", str(tmp_path / "d.json"), "--epochs", "0",
             "--seed", "17", "--out", str(tmp_path / "m")]
        )
        assert rc == 0
        model = load_checkpoint(tmp_path / "m" / "checkpoint.json")
        fresh = init_model(spawn_seed(17, TAG_INIT))
        assert np.array_equal(model.params.node_angles, fresh.params.node_angles)
        log = (tmp_path / "m" / "train_log.csv").read_text().splitlines()
        assert log == ["epoch,train_loss,train_acc,test_acc"]

    def test_log_has_one_row_per_epoch(self, tiny_run):
        log = (tiny_run / "model" / "train_log.csv").read_text().splitlines()
        assert len(log) == 2


class TestExplainCommand:
    def test_writes_one_file_per_test_graph(self, tiny_run, tmp_path):
        out = tmp_path / "exp"
        rc = main(
            [
                "explain",
                "--dataset", str(tiny_run / "data" / "dataset.json"),
                "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                "-m", "2", "-p", "6", "--shots", "32", "--flip-trials", "2",
                "--out", str(out),
            ]
        )
        assert rc == 0
        files = sorted(out.glob("explanation_*.json"))
        assert len(files) == 40
        payload = json.loads(files[0].read_text())
        assert set(payload) >= {
            "graph_id", "m", "scores", "mean", "tip_k", "iqr", "ci90",
            "flip", "indecision", "nonconverged_rows",
        }
        assert payload["m"] == 2

    def test_surrogate_and_perturb_flags(self, tiny_run, tmp_path):
        for surrogate, strategy in (("logistic", "random-walk"), ("hsic-group", "random-node")):
            out = tmp_path / f"exp_{surrogate}"
            rc = main(
                [
                    "explain",
                    "--dataset", str(tiny_run / "data" / "dataset.json"),
                    "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                    "--surrogate", surrogate, "--perturb", strategy,
                    "-m", "1", "-p", "6", "--shots", "16", "--flip-trials", "1",
                    "--out", str(out),
                ]
            )
            assert rc == 0
            payload = json.loads(next(iter(sorted(out.glob("explanation_*.json")))).read_text())
            assert payload["surrogate"] == surrogate.replace("-", "_")

    def test_dump_perturbations(self, tiny_run, tmp_path):
        out = tmp_path / "exp"
        rc = main(
            [
                "explain",
                "--dataset", str(tiny_run / "data" / "dataset.json"),
                "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                "-m", "1", "-p", "4", "--shots", "16", "--flip-trials", "1",
                "--dump-perturbations", "--out", str(out),
            ]
        )
        assert rc == 0
        dumps = sorted(out.glob("perturbations_*.json"))
        assert len(dumps) == 40
        payload = json.loads(dumps[0].read_text())
        passes = payload["surrogate_passes"]
        assert len(passes) == 1
        assert len(passes[0]["masks"]) == 4
        assert len(passes[0]["outputs"]) == 4

    def test_manifest_rerun_byte_identical(self, tiny_run, tmp_path):
        args = [
            "explain",
            "--dataset", str(tiny_run / "data" / "dataset.json"),
            "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
            "-m", "2", "-p", "4", "--shots", "16", "--flip-trials", "1",
        ]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        manifest = tmp_path / "a" / "run-manifest.json"
        assert main(["explain", "--config", str(manifest), "--out", str(tmp_path / "b")]) == 0
        a = read_bytes_map(tmp_path / "a")
        b = read_bytes_map(tmp_path / "b")
        assert a == b

    def test_jobs_flag_does_not_change_outputs(self, tiny_run, tmp_path):
        common = [
            "explain",
            "--dataset", str(tiny_run / "data" / "dataset.json"),
            "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
            "-m", "1", "-p", "4", "--shots", "16", "--flip-trials", "1",
        ]
        assert main(common + ["--jobs", "1", "--out", str(tmp_path / "a")]) == 0
        assert main(common + ["--jobs", "2", "--out", str(tmp_path / "b")]) == 0
        assert read_bytes_map(tmp_path / "a") == read_bytes_map(tmp_path / "b")


class TestEvaluateCommand:
    def test_report_written(self, tiny_run, tmp_path):
        exp = tmp_path / "exp"
        main(
            [
                "explain",
                "--dataset", str(tiny_run / "data" / "dataset.json"),
                "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                "-m", "2", "-p", "6", "--shots", "16", "--flip-trials", "1",
                "--out", str(exp),
            ]
        )
        out = tmp_path / "eval"
        rc = main(
            [
                "evaluate",
                "--explanations", str(exp),
                "--dataset", str(tiny_run / "data" / "dataset.json"),
                "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                "--shots", "16", "--fidelity-trials", "2", "--random-baseline",
                "--out", str(out),
            ]
        )
        assert rc == 0
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == "method,metric,mean,std"
        methods = {line.split(",")[0] for line in lines[1:]}
        assert methods == {"hsic_l1", "random"}
        payload = json.loads((out / "report.json").read_text())
        assert {rep["method"] for rep in payload} == {"hsic_l1", "random"}

    def test_empty_dir_is_data_error(self, tiny_run, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        rc = main(
            [
                "evaluate",
                "--explanations", str(empty),
                "--dataset", str(tiny_run / "data" / "dataset.json"),
                "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                "--out", str(tmp_path / "eval"),
            ]
        )
        assert rc == 3


class TestPlanCommand:
    def test_reference_values(self, capsys):
        assert main(["plan", "--eps", "0.1", "--delta", "0.05"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["m_min_single"] == 185
        assert main(
            ["plan", "--eps", "0.1", "--delta", "0.05", "--graphs", "40", "--stats", "2"]
        ) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["m_min_simultaneous"] == 404

    def test_zero_eps_usage_error(self):
        assert main(["plan", "--eps", "0", "--delta", "0.05"]) == 2


class TestFlipTestCommand:
    def test_flip_files(self, tiny_run, tmp_path):
        out = tmp_path / "flips"
        rc = main(
            [
                "flip-test",
                "--dataset", str(tiny_run / "data" / "dataset.json"),
                "--checkpoint", str(tiny_run / "model" / "checkpoint.json"),
                "--trials", "2", "--shots", "16", "--out", str(out),
            ]
        )
        assert rc == 0
        lines = (out / "flips.csv").read_text().splitlines()
        assert lines[0] == "graph_id,node,flip"
        payload = json.loads((out / "flips.json").read_text())
        assert len(payload) == 40


class TestAblateCommand:
    def test_sweep_with_failure_recording(self, tiny_run, tmp_path):
        matrix = {
            "dataset": str(tiny_run / "data" / "dataset.json"),
            "checkpoint": str(tiny_run / "model" / "checkpoint.json"),
            "seed": 1,
            "base": {
                "num_surrogates": 1,
                "num_perturbations": 4,
                "shots": 8,
                "flip_trials": 1,
            },
            "axes": {"surrogate": ["hsic_l1"], "lam": [0.01, -1.0]},
        }
        cfg_path = tmp_path / "matrix.json"
        cfg_path.write_text(json.dumps(matrix))
        out = tmp_path / "ablate"
        rc = main(["ablate", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        lines = (out / "ablation_summary.csv").read_text().splitlines()
        assert lines[0] == "perturbation,surrogate,measurement,lam,status,metric,mean,std"
        statuses = {line.split(",")[4] for line in lines[1:]}
        assert statuses == {"ok", "failed"}
        results = json.loads((out / "ablation_results.json").read_text())
        assert len(results) == 2

    def test_single_shot_measurement_axis(self, tiny_run, tmp_path):
        matrix = {
            "dataset": str(tiny_run / "data" / "dataset.json"),
            "checkpoint": str(tiny_run / "model" / "checkpoint.json"),
            "seed": 1,
            "base": {"num_surrogates": 2, "num_perturbations": 4, "shots": 8, "flip_trials": 1},
            "axes": {"measurement": ["multi_shot", "single_shot"]},
        }
        cfg_path = tmp_path / "matrix.json"
        cfg_path.write_text(json.dumps(matrix))
        out = tmp_path / "ablate"
        assert main(["ablate", "--config", str(cfg_path), "--out", str(out)]) == 0
        results = json.loads((out / "ablation_results.json").read_text())
        assert all(r["status"] == "ok" for r in results)


    def test_rerun_from_manifest(self, tiny_run, tmp_path):
        matrix = {
            "dataset": str(tiny_run / "data" / "dataset.json"),
            "checkpoint": str(tiny_run / "model" / "checkpoint.json"),
            "seed": 2,
            "base": {"num_surrogates": 1, "num_perturbations": 4, "shots": 8, "flip_trials": 1},
            "axes": {"lam": [0.01, 0.1]},
        }
        cfg_path = tmp_path / "matrix.json"
        cfg_path.write_text(json.dumps(matrix))
        assert main(["ablate", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
        manifest = tmp_path / "a" / "run-manifest.json"
        assert main(["ablate", "--config", str(manifest), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "ablation_summary.csv").read_bytes() == (
            tmp_path / "b" / "ablation_summary.csv"
        ).read_bytes()


class TestUsageErrors:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_explain_requires_paths(self, tmp_path):
        assert main(["explain", "--out", str(tmp_path)]) == 2

    def test_plan_accepts_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "plan.json"
        cfg.write_text(json.dumps({"eps": 0.1, "delta": 0.05, "graphs": 40, "stats": 2}))
        assert main(["plan", "--config", str(cfg)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["m_min_simultaneous"] == 404

    def test_plan_requires_eps_and_delta(self):
        assert main(["plan", "--delta", "0.05"]) == 2
