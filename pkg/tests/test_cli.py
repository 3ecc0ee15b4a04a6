import json

import numpy as np
import pytest

from convsim import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_default_small(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--trials", "60", "--out-dir", str(tmp_path))
    assert code == 0
    for name in ("identity", "decomposition", "gradient", "certificate_exact", "certificate_bound"):
        assert name in out
    manifest = json.loads((tmp_path / "verify_manifest.json").read_text())
    assert manifest["subcommand"] == "verify" and all(r["passed"] for r in manifest["results"])


def test_verify_usage_errors(capsys):
    assert run(capsys, "verify", "--trials", "0")[0] == 2
    assert run(capsys, "verify", "--n-min", "5", "--n-max", "2")[0] == 2
    assert run(capsys, "bogus")[0] == 2
    assert run(capsys, "verify", "--trials", "notanumber")[0] == 2


def test_verify_detects_broken_rhs(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "identity_rhs", lambda x, k1, k2: 1.0 + np.sum(k1 * k2))
    code, out, _ = run(capsys, "verify", "--trials", "5", "--out-dir", str(tmp_path))
    assert code == 1
    failure = json.loads((tmp_path / "verify_failure.json").read_text())
    assert failure["check"] == "identity" and failure["residual"] > failure["tolerance"]
    assert {"x", "k1", "k2", "M", "N"} <= set(failure)


def test_run_checks_with_injected_rhs():
    results = cli.run_checks(trials=3, rhs=lambda x, k1, k2: 0.0)
    assert not results[0].passed


def test_mc_preset_and_manifest_replay(capsys, tmp_path):
    code, out, _ = run(capsys, "mc", "--config", "conv_sim_full_n3_adam", "--episodes", "20", "--out-dir", str(tmp_path))
    assert code == 0
    header, row = out.strip().splitlines()[-2:]
    assert header.startswith("name,objective,N,optimizer")
    manifest = tmp_path / "conv_sim_full_n3_adam_manifest.json"
    summary = (tmp_path / "conv_sim_full_n3_adam_summary.csv").read_text()
    replay = tmp_path / "replay"
    code, out2, _ = run(capsys, "mc", "--config", str(manifest), "--out-dir", str(replay))
    assert code == 0
    assert (replay / "conv_sim_full_n3_adam_summary.csv").read_text() == summary
    assert (replay / "conv_sim_full_n3_adam_traces.csv").read_bytes() == (tmp_path / "conv_sim_full_n3_adam_traces.csv").read_bytes()


def test_mc_key_value_config(capsys, tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# a small run\nobjective = conv_sim\nN = 3\noptimizer = sgd\nlr = 0.2\niters = 50\nepisodes = 10\n")
    code, out, _ = run(capsys, "mc", "--config", str(cfg), "--seed", "4", "--dry-run")
    assert code == 0
    d = json.loads(out)
    assert d["optimizer"]["kind"] == "sgd" and d["base_seed"] == 4 and d["episodes"] == 10


@pytest.mark.parametrize("text,needle", [
    ("objective = conv_sim\nN 3\n", ":2:"),
    ("objective = conv_sim\nN = 3\niters = 5\ncolour = red\n", "colour"),
    ("objective = conv_sim\nN = 3\n", "iters"),
    ("objective = conv_sim\nN = 3\niters = 5\nlr = -1\n", "optimizer"),
    ('{"objective": "conv_sim", "N": 3,,}', ":1:"),
])
def test_mc_malformed_config(capsys, tmp_path, text, needle):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    out_dir = tmp_path / "out"
    code, _, err = run(capsys, "mc", "--config", str(cfg), "--out-dir", str(out_dir))
    assert code == 2
    assert needle in err
    assert not out_dir.exists()


def test_mc_unknown_preset(capsys):
    code, _, err = run(capsys, "mc", "--config", "no_such_n3_adam")
    assert code == 2 and "neither a preset" in err


def test_train_dry_run_counts(capsys):
    code, out, _ = run(capsys, "train", "--config", "cnn1_baseline", "--dry-run")
    assert code == 0
    assert "118,858" in out and "458,890" in out


def test_train_missing_dataset(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("CIFAR10_DIR", raising=False)
    code, _, err = run(capsys, "train", "--config", "cnn1_baseline", "--out-dir", str(tmp_path / "o"))
    assert code == 2 and "data_batch_1.bin" in err
    assert not (tmp_path / "o").exists()
    code, _, err = run(capsys, "train", "--config", "cnn1_baseline", "--data-dir", str(tmp_path))
    assert code == 2 and "data_batch_1.bin" in err


def test_train_invalid_combination(capsys):
    code, _, err = run(capsys, "train", "--config", "cnn1_I500", "--set", "beta=0.1", "--dry-run")
    assert code == 2 and "not both" in err


def test_train_and_resume(capsys, tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    assert run(capsys, "train", "--config", "synthetic_tiny", "--out-dir", str(full))[0] == 0
    assert run(capsys, "train", "--config", "synthetic_tiny", "--set", "epochs=1", "--out-dir", str(part))[0] == 0
    code, _, _ = run(capsys, "train", "--resume", str(part / "checkpoint.npz"), "--set", "epochs=3",
                     "--out-dir", str(part))
    assert code == 0
    assert (full / "train_log.csv").read_text() == (part / "train_log.csv").read_text()
    lines = (full / "train_log.csv").read_text().splitlines()
    assert lines[0] == "epoch,task_loss,train_acc,test_acc,conv_sim" and len(lines) == 4
    manifest = json.loads((full / "train_manifest.json").read_text())
    assert manifest["config"]["arch"] == "tiny32" and manifest["seed"] == 0
    assert (full / "init_curve.csv").exists()
    # replay from the manifest
    replay = tmp_path / "replay"
    assert run(capsys, "train", "--config", str(full / "train_manifest.json"), "--out-dir", str(replay))[0] == 0
    assert (replay / "train_log.csv").read_text() == (full / "train_log.csv").read_text()


def test_minimize(capsys, tmp_path):
    code, out, _ = run(capsys, "minimize", "--S", "2", "--C", "1", "--N", "3", "--lr", "0.1", "--iters", "300",
                       "--out-dir", str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "minimize_report.json").read_text())
    assert report["final_loss"] < 1e-6 < report["initial_loss"]
    assert report["pairs"][0]["i"] == 0 and report["pairs"][0]["j"] == 1


def test_minimize_zero_bank(capsys, tmp_path):
    code, out, _ = run(capsys, "minimize", "--init", "zeros", "--out-dir", str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "minimize_report.json").read_text())
    assert report["initial_loss"] == 0 and report["final_loss"] == 0
    assert report["iterations_with_change"] == 0


def test_minimize_2d_bank(capsys):
    code, out, _ = run(capsys, "minimize", "--S", "3", "--C", "2", "--N", "3x3", "--iters", "50")
    assert code == 0 and "pair (1,2)" in out


def test_minimize_degenerate(capsys):
    code, _, err = run(capsys, "minimize", "--S", "1")
    assert code == 2 and "S=1" in err
    assert run(capsys, "minimize", "--N", "0")[0] == 2
