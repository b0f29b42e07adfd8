"""End-to-end CLI runs: determinism, exit codes, report arithmetic."""

import json
from pathlib import Path

import pytest

from neuralign.cli import main

FIXTURE = Path(__file__).resolve().parent.parent / "fixtures" / "layer_summary.json"

SYNTH_FLAGS = [
    "synth", "--concepts", "12", "--test-concepts", "4", "--images-per", "2",
    "--layers", "3", "--dim", "8", "--channels", "2", "--time-points", "4",
    "--seed", "7",
]

FAST_TRAIN = ["--epochs", "2", "--batch-size", "16", "--d-s", "16",
              "--encoder-dim", "8", "--seed", "3"]


def run(args):
    return main([str(a) for a in args])


@pytest.fixture()
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert run(SYNTH_FLAGS + ["--out", out]) == 0
    return out


class TestSynth:
    def test_outputs_exist(self, synth_dir):
        assert (synth_dir / "manifest.json").exists()
        assert (synth_dir / "neural_synth01.neb").exists()
        assert len(list(synth_dir.glob("bank_layer*.neb"))) == 3
        assert (synth_dir / "run.json").exists()

    def test_rerun_byte_identical(self, synth_dir, tmp_path):
        other = tmp_path / "data2"
        assert run(SYNTH_FLAGS + ["--out", other]) == 0
        for name in ["manifest.json", "neural_synth01.neb", "bank_layer01.neb",
                     "bank_layer02.neb", "bank_layer03.neb"]:
            assert (synth_dir / name).read_bytes() == (other / name).read_bytes()

    def test_invalid_spec_nonzero_exit(self, tmp_path, capsys):
        # 2 layers cannot host an intermediate mixing layer
        code = run(["synth", "--layers", "2", "--out", tmp_path / "x"])
        assert code == 2
        assert "invalid synthesis spec" in capsys.readouterr().err


class TestTrain:
    def test_writes_checkpoint_and_loss_log(self, synth_dir, tmp_path):
        out = tmp_path / "run"
        code = run([
            "train", "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--bank", synth_dir / "bank_layer02.neb",
            "--out", out, *FAST_TRAIN,
        ])
        assert code == 0
        assert (out / "checkpoint.nck").exists()
        log = json.loads((out / "loss_log.json").read_text())
        assert [e["epoch"] for e in log] == [1, 2]
        run_record = json.loads((out / "run.json").read_text())
        assert run_record["command"] == "train"
        assert run_record["config"]["epochs"] == 2

    def test_deterministic_across_runs(self, synth_dir, tmp_path):
        outs = []
        for i in range(2):
            out = tmp_path / f"run{i}"
            assert run([
                "train", "--manifest", synth_dir / "manifest.json",
                "--neural", synth_dir / "neural_synth01.neb",
                "--bank", synth_dir / "bank_layer02.neb",
                "--out", out, *FAST_TRAIN,
            ]) == 0
            outs.append(out)
        assert (outs[0] / "checkpoint.nck").read_bytes() == (outs[1] / "checkpoint.nck").read_bytes()
        assert (outs[0] / "loss_log.json").read_text() == (outs[1] / "loss_log.json").read_text()

    def test_missing_bank_fails_fast(self, synth_dir, tmp_path, capsys):
        code = run([
            "train", "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--bank", synth_dir / "nope.neb",
            "--out", tmp_path / "r", *FAST_TRAIN,
        ])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_identity_projector_ablation(self, synth_dir, tmp_path):
        # identity requires encoder dim == bank dim == d_s
        code = run([
            "train", "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--bank", synth_dir / "bank_layer02.neb",
            "--out", tmp_path / "abl", "--projector", "identity",
            "--epochs", "1", "--batch-size", "16", "--d-s", "8",
            "--encoder-dim", "8", "--seed", "3",
        ])
        assert code == 0

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["train"])  # missing required flags
        assert exc.value.code == 1

    def test_numeric_failure_exit_code(self, synth_dir, tmp_path, capsys):
        # a wildly divergent learning rate overflows float32 training
        import numpy as np

        with np.errstate(over="ignore", invalid="ignore"):
            code = run([
                "train", "--manifest", synth_dir / "manifest.json",
                "--neural", synth_dir / "neural_synth01.neb",
                "--bank", synth_dir / "bank_layer02.neb",
                "--out", tmp_path / "div", "--learning-rate", "1e18",
                "--epochs", "5", "--batch-size", "16", "--d-s", "16",
                "--encoder-dim", "8", "--seed", "3",
            ])
        assert code == 3
        assert "numeric failure" in capsys.readouterr().err


class TestEvalExportSweep:
    @pytest.fixture()
    def trained(self, synth_dir, tmp_path):
        out = tmp_path / "trained"
        assert run([
            "train", "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--bank", synth_dir / "bank_layer02.neb",
            "--out", out, *FAST_TRAIN,
        ]) == 0
        return out

    def test_eval_all_metrics(self, synth_dir, trained, tmp_path, capsys):
        code = run([
            "eval", "--ckpt", trained / "checkpoint.nck",
            "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--bank", synth_dir / "bank_layer02.neb",
            "--metrics", "top1,top5,concept",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        for key in ("top1", "top5", "concept_accuracy"):
            assert key in payload

    def test_export_csv(self, synth_dir, trained, tmp_path):
        out = tmp_path / "emb.csv"
        code = run([
            "export", "--ckpt", trained / "checkpoint.nck",
            "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--bank", synth_dir / "bank_layer02.neb",
            "--out", out,
        ])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 8  # header + both modalities of 8 test pairs

    def test_sweep_json(self, synth_dir, tmp_path):
        out = tmp_path / "sweep"
        code = run([
            "sweep", "--manifest", synth_dir / "manifest.json",
            "--neural", synth_dir / "neural_synth01.neb",
            "--banks-dir", synth_dir, "--out", out, *FAST_TRAIN,
        ])
        assert code == 0
        payload = json.loads((out / "sweep.json").read_text())
        assert len(payload["reports"]) == 3
        assert payload["delta"] == pytest.approx(
            payload["best_top1"] - payload["final_top1"]
        )


class TestReport:
    def test_summary_reproduces_published_columns(self, tmp_path):
        out = tmp_path / "report"
        assert run(["report", "--results", FIXTURE, "--out", out, "--regress"]) == 0
        lines = (out / "summary.csv").read_text().strip().splitlines()
        rows = [line.split(",") for line in lines[1:]]
        depths = [r[4] for r in rows]
        deltas = [r[7] for r in rows]
        assert depths == ["66.7", "66.7", "45.5", "32.3", "38.5", "55.3", "54.0", "60.0"]
        assert deltas == ["+27.4", "+22.7", "+31.5", "+43.3", "+58.4", "+42.0", "+41.1", "+26.7"]

    def test_regression_significance_split(self, tmp_path):
        out = tmp_path / "report"
        assert run(["report", "--results", FIXTURE, "--out", out, "--regress"]) == 0
        reg = json.loads((out / "regression.json").read_text())
        assert reg["best_layer"]["slope"] > 0
        assert reg["best_layer"]["p_value"] < 0.01
        assert reg["final_output"]["p_value"] > 0.05

    def test_bad_results_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert run(["report", "--results", bad, "--out", tmp_path / "r"]) == 2
