import csv
import io

import numpy as np
import pytest

from sswim.cli import main

CONFIG = """\
dataset:
  synth: {{kind: multisine, variables: 2, steps: 420, seed: 7}}
  observation: 24
  horizon: 8
architecture:
  hidden: [20]
  pspk: hat
sswim:
  subbatch: 60
  sigma_min: 3.0
  sigma_max: 12.0
  sigma_cycle: 5
  support_count: 8
  lambda_count: 6
run:
  seeds: {seeds}
  out_dir: {out}
"""


def write_config(tmp_path, seeds="[1]", extra="", name="run.yaml"):
    out = tmp_path / "results"
    text = CONFIG.format(seeds=seeds, out=out) + extra
    path = tmp_path / name
    path.write_text(text)
    return path, out


class TestTrainCommand:
    def test_minimal_synth_run(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        assert (out / "model_seed1.json").exists()
        assert (out / "report_seed1.txt").exists()
        assert (out / "predictions_seed1.csv").exists()
        assert "rse_test" in capsys.readouterr().out

    def test_multiple_seeds_write_suffixed_models(self, tmp_path):
        cfg, out = write_config(tmp_path, seeds="[1, 2, 3]")
        assert main(["train", "--config", str(cfg)]) == 0
        for seed in (1, 2, 3):
            assert (out / f"model_seed{seed}.json").exists()

    def test_missing_config_is_config_error(self, tmp_path, capsys):
        missing = tmp_path / "nope.yaml"
        assert main(["train", "--config", str(missing)]) == 2
        assert "config" in capsys.readouterr().err

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path, extra="  typo_key: 3\n")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "typo_key" in capsys.readouterr().err

    def test_missing_csv_path_named_in_error(self, tmp_path, capsys):
        path = tmp_path / "run.yaml"
        path.write_text(
            "dataset:\n  csv: /does/not/exist.csv\n  observation: 24\n  horizon: 8\n"
        )
        assert main(["train", "--config", str(path)]) == 2
        assert "exist.csv" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        first = (out / "model_seed1.json").read_bytes()
        first_preds = (out / "predictions_seed1.csv").read_bytes()
        assert main(["train", "--config", str(cfg)]) == 0
        assert (out / "model_seed1.json").read_bytes() == first
        assert (out / "predictions_seed1.csv").read_bytes() == first_preds

    def test_out_env_var_overrides(self, tmp_path, monkeypatch):
        cfg, _ = write_config(tmp_path)
        env_out = tmp_path / "env_results"
        monkeypatch.setenv("SSWIM_OUT", str(env_out))
        assert main(["train", "--config", str(cfg)]) == 0
        assert (env_out / "model_seed1.json").exists()


class TestEvalCommand:
    def test_eval_reproduces_training_rse(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        report = (out / "report_seed1.txt").read_text()
        trained = {
            line.split("=")[0]: line.split("=")[1]
            for line in report.strip().splitlines()
        }
        capsys.readouterr()
        assert main(["eval", "--model", str(out / "model_seed1.json"),
                     "--config", str(cfg), "--split", "test"]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("split=test rse=")
        evaluated = float(line.split("rse=")[1])
        assert evaluated == pytest.approx(float(trained["rse_test"]), abs=1e-12)

    def test_wrong_variable_count_exits_one(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        other = tmp_path / "other.yaml"
        other.write_text(
            "dataset:\n  synth: {kind: multisine, variables: 3, steps: 420, seed: 7}\n"
            "  observation: 24\n  horizon: 8\n"
        )
        assert main(["eval", "--model", str(out / "model_seed1.json"),
                     "--config", str(other)]) == 1


class TestAblateCommand:
    def test_single_cell_sweep(self, tmp_path):
        extra = "ablation:\n  criteria: [dot]\n  normalizers: [ms]\n  neuron_counts: [15]\n"
        cfg, out = write_config(tmp_path, extra=extra)
        assert main(["ablate", "--config", str(cfg)]) == 0
        with open(out / "ablation.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["criterion", "normalizer", "neurons", "seed", "rse_test", "status"]
        assert len(rows) == 3  # one run row + one mean row
        assert rows[1][5] == "ok"

    def test_two_criteria_grid(self, tmp_path):
        extra = "ablation:\n  criteria: [dot, random]\n  normalizers: [ms]\n  neuron_counts: [12]\n"
        cfg, out = write_config(tmp_path, seeds="[1, 2]", extra=extra)
        assert main(["ablate", "--config", str(cfg)]) == 0
        with open(out / "ablation.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        run_rows = [r for r in rows if r[3] != "mean"]
        assert len(run_rows) == 4

    def test_resume_skips_completed_cells(self, tmp_path):
        extra = "ablation:\n  criteria: [dot]\n  normalizers: [ms]\n  neuron_counts: [12]\n"
        cfg, out = write_config(tmp_path, seeds="[1, 2]", extra=extra)
        assert main(["ablate", "--config", str(cfg)]) == 0
        manifest = out / "ablation_manifest.json"
        stamp = manifest.read_text()
        # rerun: nothing new to compute, manifest content unchanged
        assert main(["ablate", "--config", str(cfg)]) == 0
        assert manifest.read_text() == stamp


class TestInspectCommand:
    def test_dump_has_layer_blocks_and_parses(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        capsys.readouterr()
        assert main(["inspect", "--model", str(out / "model_seed1.json")]) == 0
        text = capsys.readouterr().out
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["layer", "field", "stat", "value"]
        layers = {row[0] for row in rows[1:]}
        assert layers == {"1", "2"}  # one hidden + one output block

    def test_delays_within_observation_window(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        from sswim.network import load_model

        model = load_model(out / "model_seed1.json")
        assert np.all(model.layers[-1].delay >= 0)
        assert np.all(model.layers[-1].delay < 24)
        capsys.readouterr()
