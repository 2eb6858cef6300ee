"""Training loop: Adam semantics, checkpoint round trips, determinism, resume."""

import numpy as np
import pytest

from revae import tensor as T
from revae.config import TrainConfig, validate_config
from revae.data import SyntheticSpec, synthetic_manifest
from revae.tensor import Tensor
from revae.training import (
    AdamState,
    Checkpoint,
    CorruptFile,
    VersionMismatch,
    adam_step,
    build_model,
    clip_global_norm,
    evaluate_accuracy,
    fit,
    load_checkpoint,
    save_checkpoint,
)


def quick_config(**overrides):
    base = dict(
        objective="revae",
        dataset={"kind": "synthetic", "n": 64, "n_test": 32, "seed": 5},
        hidden=24,
        m_notc=4,
        f=0.5,
        seed=7,
        epochs=1,
        batch_size=16,
        lr=1e-3,
        k_sup=2,
        k_unsup=2,
    )
    base.update(overrides)
    return validate_config(base)


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = {"w": Tensor.param(np.array([1.0, 2.0]))}
        state = AdamState.init(p, lr=0.1)
        adam_step(p, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(p["w"].values, [1.0, 2.0])

    def test_first_step_magnitude_is_lr(self):
        # Bias correction makes m_hat/sqrt(v_hat) = 1 for any constant grad.
        p = {"w": Tensor.param(np.array(0.0))}
        state = AdamState.init(p, lr=0.05)
        adam_step(p, {"w": np.array(1.0)}, state)
        assert p["w"].values == pytest.approx(-0.05, rel=1e-6)

    def test_deterministic_trajectory(self):
        def run():
            p = {"w": Tensor.param(np.array([0.3, -0.2]))}
            state = AdamState.init(p, lr=0.01)
            rng = np.random.default_rng(0)
            for _ in range(20):
                adam_step(p, {"w": rng.normal(size=2)}, state)
            return p["w"].values.copy()

        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        p = {"w": Tensor.param(np.zeros(2))}
        state = AdamState.init(p, lr=0.1)
        with pytest.raises(T.ShapeMismatch):
            adam_step(p, {"w": np.zeros(3)}, state)

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0, 4.0]), "b": None}
        out = clip_global_norm(grads, 1.0)
        assert np.linalg.norm(out["a"]) == pytest.approx(1.0)
        assert clip_global_norm({"a": np.array([0.3])}, 1.0)["a"][0] == 0.3


class TestCheckpoint:
    def make(self, tmp_path, cfg=None):
        cfg = cfg or quick_config()
        final, best, history = fit(cfg, out_dir=tmp_path / "run")
        return cfg, final

    def test_roundtrip_forward_identical(self, tmp_path):
        cfg, final = self.make(tmp_path)
        path = tmp_path / "run" / "final.ckpt"
        loaded = load_checkpoint(path)
        m1, m2 = final.build_model(), loaded.build_model()
        x = Tensor(np.random.default_rng(0).random((4, 784)))
        np.testing.assert_array_equal(m1.encode(x).mu.values,
                                      m2.encode(x).mu.values)
        assert loaded.rng_state == final.rng_state

    def test_version_mismatch(self, tmp_path):
        cfg, final = self.make(tmp_path)
        path = tmp_path / "run" / "final.ckpt"
        raw = bytearray(path.read_bytes())
        raw[7] = 99  # version byte
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_checkpoint(bad)

    def test_truncated(self, tmp_path):
        cfg, final = self.make(tmp_path)
        path = tmp_path / "run" / "final.ckpt"
        raw = path.read_bytes()
        bad = tmp_path / "trunc.ckpt"
        bad.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(CorruptFile):
            load_checkpoint(bad)

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "junk.ckpt"
        bad.write_bytes(b"NOPE" + bytes(100))
        with pytest.raises(CorruptFile):
            load_checkpoint(bad)


class TestFit:
    def test_smoke_single_epoch(self, tmp_path):
        cfg = quick_config()
        final, best, history = fit(cfg, out_dir=tmp_path / "out")
        assert len(history) == 1
        assert np.isfinite(history[0]["bound"])
        for name in ("final.ckpt", "best.ckpt", "metrics.jsonl",
                     "config.resolved.json"):
            assert (tmp_path / "out" / name).exists(), name

    def test_seeded_runs_identical(self):
        cfg = quick_config(epochs=2)
        a, _, _ = fit(cfg)
        b, _, _ = fit(cfg)
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name]), name
        assert a.rng_state == b.rng_state

    def test_resume_equivalence(self):
        cfg5 = quick_config(epochs=4)
        full, _, _ = fit(cfg5)

        cfg2 = quick_config(epochs=2)
        part, _, _ = fit(cfg2)
        resumed, _, _ = fit(cfg5, resume=part)
        for name in full.params:
            assert np.array_equal(full.params[name], resumed.params[name]), name
        assert full.rng_state == resumed.rng_state

    def test_parameters_stay_finite(self):
        cfg = quick_config(epochs=2)
        final, _, _ = fit(cfg)
        for name, val in final.params.items():
            assert np.all(np.isfinite(val)), name

    @pytest.mark.parametrize("objective", ["m3", "m2", "diva"])
    def test_baseline_objectives_run(self, objective):
        cfg = quick_config(objective=objective, epochs=1,
                           dataset={"kind": "synthetic", "n": 32, "n_test": 16,
                                    "seed": 5},
                           batch_size=16, alpha=1.0)
        final, _, history = fit(cfg)
        assert np.isfinite(history[0]["bound"])

    def test_accuracy_evaluated_each_epoch(self):
        cfg = quick_config(epochs=2)
        _, _, history = fit(cfg)
        assert all(rec["accuracy"] is not None for rec in history)

    def test_bound_trend_over_ten_epochs(self):
        # Epoch-mean bound should trend upward; tolerate two dips.
        cfg = quick_config(epochs=10,
                           dataset={"kind": "synthetic", "n": 256,
                                    "n_test": 64, "seed": 5})
        _, _, history = fit(cfg)
        bounds = [rec["bound"] for rec in history]
        violations = sum(1 for a, b in zip(bounds, bounds[1:]) if b < a)
        assert violations <= 2, bounds


class TestConfigValidation:
    def test_unknown_field(self):
        from revae.config import ConfigError
        with pytest.raises(ConfigError, match="warp_factor"):
            validate_config({"warp_factor": 9})

    def test_bad_f(self):
        from revae.config import ConfigError
        with pytest.raises(ConfigError, match="f:"):
            validate_config({"f": 1.5})

    def test_bad_objective(self):
        from revae.config import ConfigError
        with pytest.raises(ConfigError, match="objective"):
            validate_config({"objective": "banana"})

    def test_defaults_valid(self):
        cfg = validate_config({})
        assert cfg.objective == "revae"
