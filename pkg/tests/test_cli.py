"""CLI contract: exit codes, artifact files, determinism, live serving."""

import json
import socket
import threading
import time

import numpy as np
import pytest

from revae.cli import main


def write_config(tmp_path, **overrides):
    cfg = {
        "objective": "revae",
        "dataset": {"kind": "synthetic", "n": 64, "n_test": 32, "seed": 5},
        "hidden": 16,
        "m_notc": 3,
        "f": 0.5,
        "seed": 3,
        "epochs": 1,
        "batch_size": 16,
        "lr": 1e-3,
        "k_sup": 2,
        "k_unsup": 2,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestTrain:
    def test_artifacts_written(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        for name in ("final.ckpt", "best.ckpt", "metrics.jsonl",
                     "config.resolved.json", "training_curves.png"):
            assert (out / name).exists(), name

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, f=1.5)
        assert main(["train", "--config", str(cfg),
                     "--out", str(tmp_path / "x")]) == 2
        assert "f:" in capsys.readouterr().err

    def test_unknown_field_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        cfg.write_text(json.dumps({"bogus_knob": 1}))
        assert main(["train", "--config", str(cfg),
                     "--out", str(tmp_path / "x")]) == 2

    def test_deterministic_checkpoint_bytes(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(b)]) == 0
        assert (a / "final.ckpt").read_bytes() == (b / "final.ckpt").read_bytes()

    def test_seed_override_changes_bytes(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(b),
                     "--seed", "99"]) == 0
        assert (a / "final.ckpt").read_bytes() != (b / "final.ckpt").read_bytes()

    def test_nonfinite_loss_exit_3(self, tmp_path, capsys, monkeypatch):
        from revae import cli
        from revae.training import NonFiniteLoss

        def exploding_fit(*args, **kwargs):
            raise NonFiniteLoss("non-finite loss at epoch 0, batch 1")

        monkeypatch.setattr(cli, "fit", exploding_fit)
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg),
                     "--out", str(tmp_path / "x")]) == 3
        assert "non-finite" in capsys.readouterr().err

    def test_data_dir_env_var(self, tmp_path, monkeypatch):
        from revae.config import data_dir
        monkeypatch.setenv("REVAE_DATA_DIR", str(tmp_path / "elsewhere"))
        assert str(data_dir()) == str(tmp_path / "elsewhere")


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    cfg = write_config(tmp)
    out = tmp / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestEval:
    @pytest.mark.parametrize("suite,artifact", [
        ("accuracy", "accuracy.json"),
        ("swaps", "swap_examples.png"),
        ("diversity", "diversity.png"),
        ("traversal", "traversal.png"),
        ("generate", "generated.png"),
    ])
    def test_suites_write_artifacts(self, trained_dir, tmp_path, suite,
                                    artifact, capsys):
        out = tmp_path / f"eval_{suite}"
        code = main(["eval", "--ckpt", str(trained_dir / "final.ckpt"),
                     "--suite", suite, "--n", "6", "--out", str(out)])
        assert code == 0
        assert (out / artifact).exists()
        assert (out / "summary.csv").exists()

    def test_confusion_suite(self, trained_dir, tmp_path, capsys):
        out = tmp_path / "eval_confusion"
        code = main(["eval", "--ckpt", str(trained_dir / "final.ckpt"),
                     "--suite", "confusion", "--n", "10", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "confusion.json").read_text())
        L = len(doc["labels"])
        assert np.asarray(doc["value"]).shape == (L, L)
        assert "condition_number" in doc
        assert (out / "confusion.png").exists()

    def test_unknown_suite_exit_2(self, trained_dir, capsys):
        assert main(["eval", "--ckpt", str(trained_dir / "final.ckpt"),
                     "--suite", "nonsense"]) == 2

    def test_version_mismatch_exit_4(self, trained_dir, tmp_path, capsys):
        raw = bytearray((trained_dir / "final.ckpt").read_bytes())
        raw[7] = 42
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(raw))
        assert main(["eval", "--ckpt", str(bad), "--suite", "accuracy"]) == 4


class TestServe:
    def test_live_roundtrip_and_busy_port(self, trained_dir, capsys):
        import httpx

        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]

        errors = []

        def run():
            code = main(["serve", "--ckpt", str(trained_dir / "final.ckpt"),
                         "--port", str(port)])
            errors.append(code)

        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        deadline = time.time() + 15
        info = None
        while time.time() < deadline:
            try:
                info = httpx.get(f"http://127.0.0.1:{port}/model/info",
                                 timeout=1.0)
                break
            except Exception:
                time.sleep(0.1)
        assert info is not None and info.status_code == 200
        body = info.json()
        assert "labels" in body

        r = httpx.post(f"http://127.0.0.1:{port}/reconstruct",
                       json={"sample_id": 0}, timeout=5.0)
        assert r.status_code == 200

        # Second bind on the same port must fail with exit code 5.
        assert main(["serve", "--ckpt", str(trained_dir / "final.ckpt"),
                     "--port", str(port)]) == 5
