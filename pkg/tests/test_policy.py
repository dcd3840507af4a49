import json

import numpy as np
import pytest

from vfp.autodiff import make_rng
from vfp.config import TrainConfig
from vfp.envs import gen_crossing
from vfp.errors import ConfigError, SchemaError
from vfp.estimator import VFPPolicy
from vfp.trainer import Trainer, resolve_dataset


def small_cfg(**overrides) -> TrainConfig:
    base = dict(env="crossing", n_experts=2, steps=150, batch_size=32,
                encoder_hidden=(32, 32), expert_hidden=(16,),
                prior_hidden=(16,), gating_hidden=(16,), seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestConfig:
    def test_validation_reports_field_paths(self):
        with pytest.raises(ConfigError, match="ot_weight"):
            TrainConfig(ot_weight=-1.0).validate()
        with pytest.raises(ConfigError, match="env:"):
            TrainConfig(env="mars").validate()

    def test_vanilla_normalizes_to_composed_flags(self):
        cfg = TrainConfig(vanilla_fm=True).normalized()
        assert cfg.no_moe and cfg.no_kot
        assert cfg.latent_dim == 0
        assert cfg.n_experts == 1

    def test_latent_dim_defaults_to_expert_count(self):
        cfg = TrainConfig(n_experts=6).normalized()
        assert cfg.latent_dim == 6

    def test_overrides_parse_types(self):
        cfg = TrainConfig().with_overrides(
            ["ot_weight=0.5", "no_moe=true", "env=crossing", "n_experts=2"])
        assert cfg.ot_weight == 0.5
        assert cfg.no_moe is True
        assert cfg.env == "crossing"

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="mystery"):
            TrainConfig().with_overrides(["mystery=1"])
        with pytest.raises(ConfigError, match="mystery"):
            TrainConfig.from_dict({"mystery": 1})

    def test_fused_gating_dimension_guard(self):
        with pytest.raises(ConfigError, match="fused_gating"):
            TrainConfig(fused_gating=True, latent_dim=3,
                        n_experts=4).normalized()

    def test_json_round_trip(self, tmp_path):
        cfg = small_cfg(ot_weight=0.25)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg.to_dict()))
        loaded = TrainConfig.from_json(str(p))
        assert loaded == cfg


class TestTrainerDeterminism:
    def test_identical_seeds_identical_logs(self):
        cfg = small_cfg(steps=100)
        env, ds = resolve_dataset(cfg.normalized())
        logs = []
        for _ in range(2):
            tr = Trainer(cfg, ds, env)
            logs.append(tr.train())
        assert logs[0] == logs[1]

    def test_different_seeds_differ(self):
        cfg = small_cfg(steps=20)
        env, ds = resolve_dataset(cfg.normalized())
        a = Trainer(cfg, ds, env).train()
        b = Trainer(small_cfg(steps=20, seed=1), ds, env).train()
        assert a != b

    def test_ablation_flags_compose_to_vanilla(self):
        env, ds = resolve_dataset(small_cfg().normalized())
        cfg_vanilla = small_cfg(steps=60, vanilla_fm=True)
        cfg_composed = small_cfg(steps=60, no_kot=True, no_moe=True,
                                 latent_dim=0, n_experts=1)
        a = Trainer(cfg_vanilla, ds, env).train()
        b = Trainer(cfg_composed, ds, env).train()
        assert a == b

    def test_no_nan_guard_trips_on_divergence(self):
        # lr so large the first update overflows the next step's squares
        import warnings
        cfg = small_cfg(steps=10, lr=1e160, no_kot=True)
        env, ds = resolve_dataset(cfg.normalized())
        tr = Trainer(cfg, ds, env)
        from vfp.errors import NumericError
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(NumericError, match="step"):
                tr.train()


class TestCheckpoint:
    def test_round_trip_bitwise_stable(self, tmp_path):
        cfg = small_cfg(steps=40)
        env, ds = resolve_dataset(cfg.normalized())
        tr = Trainer(cfg, ds, env)
        tr.train()
        path = tmp_path / "ck.json"
        tr.save_checkpoint(str(path))
        restored = Trainer.from_checkpoint(str(path), dataset=ds, env=env)
        a = tr.train(3)
        b = restored.train(3)
        assert a == b
        for (_, p), (_, q) in zip(tr.named_params, restored.named_params):
            np.testing.assert_array_equal(p.value, q.value)

    def test_save_load_save_identical_bytes(self, tmp_path):
        cfg = small_cfg(steps=10)
        env, ds = resolve_dataset(cfg.normalized())
        tr = Trainer(cfg, ds, env)
        tr.train()
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        tr.save_checkpoint(str(p1))
        Trainer.from_checkpoint(str(p1), dataset=ds, env=env).save_checkpoint(str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_schema_mismatch_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"schema": "vfp-ckpt-v0"}))
        with pytest.raises(SchemaError):
            Trainer.from_checkpoint(str(p))

    def test_checkpoint_validates_against_shipped_schema(self, tmp_path):
        import jsonschema
        from importlib import resources
        cfg = small_cfg(steps=5)
        env, ds = resolve_dataset(cfg.normalized())
        tr = Trainer(cfg, ds, env)
        tr.train()
        path = tmp_path / "ck.json"
        tr.save_checkpoint(str(path))
        schema = json.loads((resources.files("vfp.schemas")
                             / "checkpoint.schema.json").read_text())
        jsonschema.validate(json.loads(path.read_text()), schema)

    def test_zero_step_checkpoint_of_initialization(self, tmp_path):
        cfg = small_cfg(steps=0)
        env, ds = resolve_dataset(cfg.normalized())
        tr = Trainer(cfg, ds, env)
        records = tr.train()
        assert records == []
        path = tmp_path / "init.json"
        tr.save_checkpoint(str(path))
        restored = Trainer.from_checkpoint(str(path), dataset=ds, env=env)
        assert restored.step_count == 0


class TestPolicyInterface:
    def test_nfe_counter_matches_inference_steps(self):
        for n in (1, 5):
            cfg = small_cfg(steps=5, inference_steps=n)
            env, ds = resolve_dataset(cfg.normalized())
            tr = Trainer(cfg, ds, env)
            tr.train()
            pol = tr.policy()
            rng = make_rng(0)
            for _ in range(7):
                pol(np.zeros(2), rng)
            assert pol.nfe_per_action == float(n)

    def test_policy_draws_are_deterministic_given_stream(self):
        cfg = small_cfg(steps=30)
        env, ds = resolve_dataset(cfg.normalized())
        tr = Trainer(cfg, ds, env)
        tr.train()
        pol = tr.policy()
        a = pol(np.zeros(2), make_rng(5))
        b = pol(np.zeros(2), make_rng(5))
        np.testing.assert_array_equal(a, b)


class TestEstimator:
    def _toy_data(self):
        _, ds = gen_crossing(seed=0, n_trajs=60)
        return ds.flat_states(), ds.flat_actions()

    def test_fit_predict_shapes(self):
        X, y = self._toy_data()
        est = VFPPolicy(n_experts=2, n_train_steps=100, batch_size=32,
                        encoder_hidden=(32, 32), expert_hidden=(16,),
                        random_state=0)
        est.fit(X, y)
        pred = est.predict(X[:5])
        assert pred.shape == (5, 2)

    def test_predict_deterministic_across_calls(self):
        X, y = self._toy_data()
        est = VFPPolicy(n_experts=2, n_train_steps=60, batch_size=32,
                        encoder_hidden=(32, 32), expert_hidden=(16,),
                        random_state=3)
        est.fit(X, y)
        np.testing.assert_array_equal(est.predict(X[:4]), est.predict(X[:4]))

    def test_sklearn_clone_and_params(self):
        from sklearn.base import clone
        est = VFPPolicy(n_experts=3, ot_weight=0.2)
        cloned = clone(est)
        assert cloned.get_params()["n_experts"] == 3
        assert cloned.get_params()["ot_weight"] == 0.2

    def test_unfitted_predict_raises(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            VFPPolicy().predict(np.zeros((1, 2)))

    def test_dimension_mismatch_raises(self):
        X, y = self._toy_data()
        est = VFPPolicy(n_experts=2, n_train_steps=30, batch_size=16,
                        encoder_hidden=(16,), expert_hidden=(8,))
        est.fit(X, y)
        with pytest.raises(ValueError):
            est.predict(np.zeros((2, 5)))
