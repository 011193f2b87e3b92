"""End-to-end command coverage: synth -> train -> eval, overrides, exit codes."""

import json
import os
import re
import subprocess
import sys

import pytest

from fibinet.cli import main


def write_json(path, payload) -> str:
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth + train run shared by the read-only assertions below."""
    root = tmp_path_factory.mktemp("cli")
    synth_cfg = write_json(root / "synth.json", {
        "seed": 3,
        "synth": {"f": 4, "k_true": 2, "n_rows": 1500, "pairs": [[0, 1, 6.0]]},
    })
    assert main(["synth", "--config", synth_cfg, str(root / "syn")]) == 0
    sidecar = json.loads((root / "syn.json").read_text())

    run_config = {
        "seed": 11,
        "schema": sidecar["schema"],
        "model": {"k": 4, "hidden_units": [16], "dropout_rate": 0.0},
        "train": {"epochs": 4, "batch_size": 128, "learning_rate": 0.02},
        "paths": {
            "train": str(root / "syn_train.tsv"),
            "test": str(root / "syn_test.tsv"),
            "checkpoint": str(root / "model.fibn"),
            "log": str(root / "log.csv"),
        },
    }
    run_cfg_path = write_json(root / "run.json", run_config)
    assert main(["train", "--config", run_cfg_path]) == 0
    return {"root": root, "config": run_config, "config_path": run_cfg_path,
            "sidecar": sidecar}


class TestSynth:
    def test_writes_files_and_sidecar(self, pipeline):
        root = pipeline["root"]
        assert (root / "syn_train.tsv").exists()
        assert (root / "syn_test.tsv").exists()
        sidecar = pipeline["sidecar"]
        assert sidecar["train_rows"] == 1250 and sidecar["test_rows"] == 250
        assert 0.7 < sidecar["bayes_auc"] < 1.0
        assert sidecar["spec"]["seed"] == 3
        train_lines = (root / "syn_train.tsv").read_text().splitlines()
        assert len(train_lines) == 1250
        assert all(ln.split("\t")[0] in ("0", "1") for ln in train_lines[:20])

    def test_prints_summary(self, pipeline, tmp_path, capsys):
        cfg = write_json(tmp_path / "s.json", {
            "synth": {"f": 3, "k_true": 2, "n_rows": 60, "pairs": [[0, 1, 2.0]]},
        })
        assert main(["synth", "--config", cfg, str(tmp_path / "tiny")]) == 0
        out = capsys.readouterr().out
        assert re.search(r"bayes_auc=0\.\d{6} train=.*tiny_train\.tsv test=.*tiny_test\.tsv", out)

    def test_seed_changes_dataset(self, tmp_path):
        for seed, prefix in [(1, "a"), (2, "b"), (1, "a2")]:
            cfg = write_json(tmp_path / f"s{prefix}.json", {
                "synth": {"f": 3, "k_true": 2, "n_rows": 50, "pairs": [[0, 1, 2.0]]},
            })
            assert main(["synth", "--config", cfg, "--seed", str(seed),
                         str(tmp_path / prefix)]) == 0
        a = (tmp_path / "a_train.tsv").read_bytes()
        assert a != (tmp_path / "b_train.tsv").read_bytes()
        assert a == (tmp_path / "a2_train.tsv").read_bytes()

    def test_requires_synth_section(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "bare.json", {"seed": 1})
        assert main(["synth", "--config", cfg, str(tmp_path / "x")]) == 2
        assert "synth" in capsys.readouterr().err


class TestTrain:
    def test_artifacts_written(self, pipeline):
        root = pipeline["root"]
        assert (root / "model.fibn").exists()
        log_lines = (root / "log.csv").read_text().splitlines()
        assert log_lines[0] == "epoch,split,auc,logloss,seconds"
        assert len(log_lines) == 1 + 2 * 4  # train + valid rows per epoch
        assert all(ln.endswith(",0.000") for ln in log_lines[1:])  # timing off

    def test_prints_final_validation(self, pipeline, capsys):
        assert main(["train", "--config", pipeline["config_path"]]) == 0
        out = capsys.readouterr().out
        assert re.search(r"valid auc=0\.\d{6} logloss=\d+\.\d{6}", out)

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        config = dict(pipeline["config"])
        config["paths"] = dict(config["paths"],
                               checkpoint=str(tmp_path / "model2.fibn"),
                               log=str(tmp_path / "log2.csv"))
        cfg = write_json(tmp_path / "rerun.json", config)
        assert main(["train", "--config", cfg]) == 0
        root = pipeline["root"]
        assert (tmp_path / "model2.fibn").read_bytes() == (root / "model.fibn").read_bytes()
        assert (tmp_path / "log2.csv").read_bytes() == (root / "log.csv").read_bytes()

    def test_zero_epochs_notes_empty_validation(self, pipeline, tmp_path, capsys):
        config = dict(pipeline["config"])
        config["paths"] = dict(config["paths"],
                               checkpoint=str(tmp_path / "m.fibn"),
                               log=str(tmp_path / "l.csv"))
        cfg = write_json(tmp_path / "zero.json", config)
        assert main(["train", "--config", cfg, "--set", "train.epochs=0"]) == 0
        assert "no validation rows" in capsys.readouterr().out

    def test_missing_train_path(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "no_paths.json", {
            "schema": {"fields": [{"name": "a", "kind": "categorical", "buckets": 3},
                                  {"name": "b", "kind": "categorical", "buckets": 3}]},
            "model": {"k": 2},
        })
        assert main(["train", "--config", cfg]) == 2
        assert "paths.train" in capsys.readouterr().err

    def test_set_override_changes_training(self, pipeline, tmp_path):
        config = dict(pipeline["config"])
        config["paths"] = dict(config["paths"],
                               checkpoint=str(tmp_path / "m.fibn"),
                               log=str(tmp_path / "l.csv"))
        cfg = write_json(tmp_path / "ov.json", config)
        assert main(["train", "--config", cfg, "--set", "train.epochs=1"]) == 0
        log_lines = (tmp_path / "l.csv").read_text().splitlines()
        assert len(log_lines) == 1 + 2  # single epoch now


class TestEval:
    def test_positional_paths(self, pipeline, capsys):
        root = pipeline["root"]
        rc = main(["eval", str(root / "model.fibn"), str(root / "syn_test.tsv")])
        assert rc == 0
        assert re.fullmatch(r"auc=0\.\d{6} logloss=\d+\.\d{6}\n", capsys.readouterr().out)

    def test_paths_from_config(self, pipeline, capsys):
        assert main(["eval", "--config", pipeline["config_path"]]) == 0
        assert capsys.readouterr().out.startswith("auc=")

    def test_learned_better_than_chance(self, pipeline, capsys):
        assert main(["eval", "--config", pipeline["config_path"]]) == 0
        auc_value = float(re.search(r"auc=(0\.\d+)", capsys.readouterr().out).group(1))
        assert auc_value > 0.65

    def test_column_mismatch_names_counts(self, pipeline, tmp_path, capsys):
        wide = tmp_path / "wide.tsv"
        wide.write_text("0\ta\tb\tc\td\te\n")
        rc = main(["eval", str(pipeline["root"] / "model.fibn"), str(wide)])
        assert rc == 2
        err = capsys.readouterr().err
        assert "5 feature columns" in err and "4 fields" in err

    def test_corrupt_checkpoint(self, pipeline, tmp_path, capsys):
        bogus = tmp_path / "bogus.fibn"
        bogus.write_bytes(b"JUNKJUNKJUNK")
        rc = main(["eval", str(bogus), str(pipeline["root"] / "syn_test.tsv")])
        assert rc == 2
        assert "bad magic" in capsys.readouterr().err

    def test_missing_checkpoint_config(self, capsys):
        assert main(["eval"]) == 2
        assert "paths.checkpoint" in capsys.readouterr().err

    def test_nonexistent_checkpoint_file(self, pipeline, capsys):
        rc = main(["eval", "/nonexistent/model.fibn", str(pipeline["root"] / "syn_test.tsv")])
        assert rc == 1  # runtime I/O failure, not a config mistake


class TestGradcheck:
    def test_default_config_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert re.search(r"\d+ blocks, 0 failed", out)
        assert "embedding" in out and "skipped" in out  # bilinear_w row

    def test_set_quoting_caveat(self, capsys):
        # unquoted 10 parses as the integer 10 and is rejected; JSON string works
        assert main(["gradcheck", "--set", "model.combination_code=10"]) == 2
        assert "combination_code" in capsys.readouterr().err
        assert main(["gradcheck", "--set", 'model.combination_code="10"']) == 0

    def test_set_without_equals(self, capsys):
        assert main(["gradcheck", "--set", "model.k"]) == 2
        assert "dotted.key=value" in capsys.readouterr().err


class TestAblate:
    def test_writes_five_variant_csv(self, pipeline, tmp_path, capsys):
        config = dict(pipeline["config"])
        config["train"] = dict(config["train"], epochs=1)
        config["paths"] = dict(config["paths"], ablation=str(tmp_path / "ablation.csv"))
        cfg = write_json(tmp_path / "ab.json", config)
        assert main(["ablate", "--config", cfg]) == 0
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[0] == "variant,auc,logloss"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["BASE", "NO-SE", "NO-BI", "FM", "FNN"]
        out = capsys.readouterr().out
        assert out.count("\n") >= 6  # header + five rows


class TestConfigHandling:
    def test_unknown_top_level_key(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "bad.json", {"modle": {"k": 4}})
        assert main(["gradcheck", "--config", cfg]) == 2
        assert "unknown top-level keys" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert main(["gradcheck", "--config", "/nonexistent/run.json"]) == 2
        assert "config" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["gradcheck", "--config", str(path)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_non_object_config(self, tmp_path, capsys):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        assert main(["gradcheck", "--config", str(path)]) == 2
        assert "JSON object" in capsys.readouterr().err

    def test_seed_flag_overrides_config(self, tmp_path):
        # same config, different --seed: different synthetic data
        cfg = write_json(tmp_path / "s.json", {
            "seed": 1,
            "synth": {"f": 3, "k_true": 2, "n_rows": 40, "pairs": [[0, 1, 1.0]]},
        })
        assert main(["synth", "--config", cfg, str(tmp_path / "d1")]) == 0
        assert main(["synth", "--config", cfg, "--seed", "99", str(tmp_path / "d2")]) == 0
        assert (tmp_path / "d1_train.tsv").read_bytes() != (tmp_path / "d2_train.tsv").read_bytes()


class TestModuleEntry:
    def test_python_dash_m_with_numpy_backend(self):
        out = subprocess.run(
            [sys.executable, "-m", "fibinet", "gradcheck"],
            env={**os.environ, "FIBINET_BACKEND": "numpy"},
            capture_output=True, text=True,
        )
        assert out.returncode == 0, out.stderr
        assert re.search(r"\d+ blocks, 0 failed", out.stdout)
