import json
import shutil
import subprocess
import sys

import pytest

from mhan.cli import run_cli

SMALL = ["--d-w", "8", "--d-s", "8", "--d-a", "8", "--epoch-size", "32", "--max-epochs", "2"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run_cli(["synth-corpus", "--m", "2", "--k", "5", "--docs", "60", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    argv = ["train", "--corpus", str(synth_dir / "corpus.jsonl"), "--embeddings",
            str(synth_dir / "embeddings.aligned.txt"), "--sharing", "both", "--out", str(out), *SMALL]
    assert run_cli(argv) == 0
    return out


def data_flags(synth_dir):
    return ["--corpus", str(synth_dir / "corpus.jsonl"), "--embeddings", str(synth_dir / "embeddings.aligned.txt")]


def test_count_params_both(tmp_path, capsys):
    code = run_cli(["count-params", "--sharing", "both", "--langs", "2", "--encoder", "dense",
                    "--k", "300,300", "--out", str(tmp_path)])
    assert code == 0
    assert "total 95,200" in capsys.readouterr().out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["params_total"] == 95_200
    assert {"command", "f1", "params_total", "params_per_lang", "wall_seconds"} <= set(summary)


def test_grad_check_bigru(tmp_path):
    assert run_cli(["grad-check", "--encoder", "bigru", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["max_relative_error"] < 1e-4 and summary["passed"]


def test_synth_files(synth_dir):
    for name in ("corpus.jsonl", "embeddings.aligned.txt", "embeddings.nonaligned.txt",
                 "synth_config.json", "config.json", "summary.json"):
        assert (synth_dir / name).exists()


def test_train_outputs(trained):
    for name in ("checkpoint.json", "train_log.jsonl", "metrics.json", "summary.json", "config.json"):
        assert (trained / name).exists()
    log = [json.loads(s) for s in (trained / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 2
    summary = json.loads((trained / "summary.json").read_text())
    assert summary["command"] == "train" and 0.0 <= summary["f1"] <= 1.0


def test_evaluate_does_not_mutate_checkpoint(synth_dir, trained, tmp_path):
    before = (trained / "checkpoint.json").read_bytes()
    code = run_cli(["evaluate", "--checkpoint", str(trained / "checkpoint.json"), *data_flags(synth_dir),
                    "--out", str(tmp_path)])
    assert code == 0
    assert (trained / "checkpoint.json").read_bytes() == before
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics) == {"en", "de"}


def test_evaluate_matches_train_metrics(synth_dir, trained, tmp_path):
    run_cli(["evaluate", "--checkpoint", str(trained / "checkpoint.json"), *data_flags(synth_dir),
             "--out", str(tmp_path)])
    assert json.loads((tmp_path / "metrics.json").read_text()) == json.loads((trained / "metrics.json").read_text())


def test_predict_and_export(synth_dir, trained, tmp_path):
    ckpt = ["--checkpoint", str(trained / "checkpoint.json"), *data_flags(synth_dir)]
    assert run_cli(["predict", *ckpt, "--out", str(tmp_path / "p")]) == 0
    lines = (tmp_path / "p" / "predictions.tsv").read_text().splitlines()
    assert lines[0] == "id\tlang\tpredicted" and len(lines) == 1 + 12
    assert run_cli(["export-vectors", *ckpt, "--out", str(tmp_path / "v")]) == 0
    rows = (tmp_path / "v" / "vectors.tsv").read_text().splitlines()
    assert len(rows) == 13 and all(len(r.split("\t")[3].split(" ")) == 8 for r in rows[1:])


def test_config_echo_reproduces(synth_dir, trained, tmp_path):
    cfg = json.loads((trained / "config.json").read_text())
    cfg["out"] = str(tmp_path)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run_cli(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    for name in ("checkpoint.json", "train_log.jsonl", "metrics.json"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_flags_override_config(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"sharing": "mono", "k": 300}))
    run_cli(["count-params", "--config", str(tmp_path / "cfg.json"), "--sharing", "att", "--out", str(tmp_path)])
    assert "total 109,400" in capsys.readouterr().out


def test_fraction_subsamples(synth_dir, tmp_path):
    code = run_cli(["train", *data_flags(synth_dir), "--fraction", "0.1", "--out", str(tmp_path), *SMALL])
    assert code == 0


def test_low_resource_sweep(synth_dir, tmp_path):
    code = run_cli(["low-resource-sweep", *data_flags(synth_dir), "--target", "de", "--aux", "en",
                    "--fractions", "0.5", "--out", str(tmp_path), *SMALL])
    assert code == 0
    sweep = json.loads((tmp_path / "sweep.json").read_text())
    assert set(sweep["table"]["custom"]) == {"mono", "mhan-enc", "mhan-att", "mhan-both", "ensemble"}


def test_unknown_flag_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(["train", "--no-such-flag"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exit_2():
    with pytest.raises(SystemExit) as exc:
        run_cli(["fly"])
    assert exc.value.code == 2


def test_validation_error_exit_1(tmp_path, capsys):
    code = run_cli(["count-params", "--langs", "3", "--k", "1,2", "--out", str(tmp_path)])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_missing_corpus_exit_1(tmp_path):
    assert run_cli(["train", "--corpus", str(tmp_path / "none.jsonl"), "--embeddings", "x",
                    "--out", str(tmp_path)]) == 1


def test_unknown_config_key_exit_1(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"colour": "red"}))
    assert run_cli(["count-params", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path)]) == 1


@pytest.mark.skipif(shutil.which("mhan") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["mhan", "count-params", "--k", "300", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "total 95,200" in proc.stdout


def test_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mhan", "count-params", "--sharing", "mono", "--k", "300",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "total 129,800" in proc.stdout
