"""Tests for the schedule, AdamW, checkpoints and the pre-training loop."""
import math

import numpy as np
import pytest

from src.config.run_config import ModelConfig, TrainConfig, TransformerConfig
from src.data.sampler import sample_epoch
from src.enums import Variant
from src.model.archive import FORMAT_VERSION, ArchiveFormatError
from src.model.params import LOG_TAU
from src.model.tokenizer import Vocab
from src.numeric.rng import Rng
from src.numeric.tensor import Tensor, float64_mode
from src.training.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_model_params,
    save_checkpoint,
)
from src.training.optim import (
    AdamState,
    OptimizerError,
    Schedule,
    adamw_step,
    clip_grad_norm,
    global_grad_norm,
    lr_at,
)
from src.training.trainer import (
    STEP_LOG_HEADER,
    VARIANT_PLANS,
    check_variant_fits,
    compute_losses,
    init_train_state,
    read_step_log,
    resolve_model_config,
    train_loop,
    train_step,
)


@pytest.fixture()
def tiny_model_config(tiny_bundle):
    """Tiny widths with the bundle's vocabulary."""
    return resolve_model_config(tiny_bundle, ModelConfig.tiny())


def _first_batches(bundle, config, model_config, epoch=0):
    vocab = Vocab(tokens=bundle.vocab.tokens, max_len=model_config.max_text_len)
    return sample_epoch(bundle, config.batch_paired, config.batch_unpaired,
                        Rng.derive(config.seed, "epoch", epoch), vocab=vocab)


def _snapshot(params):
    return {k: v.copy() for k, v in params.arrays().items()}


# ── Schedule ─────────────────────────────────────────────────────────────


class TestSchedule:
    schedule = Schedule(base_lr=1.0, warmup_epochs=2, epochs=10)

    def test_starts_at_zero(self):
        """Step 0 has learning rate 0."""
        assert lr_at(self.schedule, 0, 100) == 0.0

    def test_warmup_boundary(self):
        """At the end of warmup the rate is base_lr."""
        assert lr_at(self.schedule, 20, 100) == pytest.approx(1.0)
        assert lr_at(self.schedule, 10, 100) == pytest.approx(0.5)

    def test_decay_midpoint(self):
        """Halfway through the decay the rate is base_lr / 2."""
        assert abs(lr_at(self.schedule, 60, 100) - 0.5) <= 1e-9

    def test_ends_at_zero(self):
        """The last step decays to 0."""
        assert lr_at(self.schedule, 100, 100) == pytest.approx(0.0, abs=1e-12)

    def test_train_config_drives_schedule(self):
        """TrainConfig defaults give a warmup of epochs // 5."""
        cfg = TrainConfig(epochs=10, base_lr=2e-3)
        assert cfg.warmup_epochs == 2
        assert lr_at(cfg, 20, 100) == pytest.approx(2e-3)

    def test_warmup_must_be_shorter(self):
        """warmup_epochs >= epochs is rejected."""
        with pytest.raises(ValueError):
            TrainConfig(epochs=3, warmup_epochs=3)


# ── AdamW ────────────────────────────────────────────────────────────────


class TestAdamW:
    def _params(self, **values):
        with float64_mode():
            return {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
                    for k, v in values.items()}

    def test_zero_gradient_no_decay(self):
        """Zero gradients and zero decay leave parameters unchanged."""
        params = self._params(w=[1.0, -2.0])
        state = AdamState.zeros_like(params)
        adamw_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        assert params["w"].data.tolist() == [1.0, -2.0]

    def test_unit_gradient_step(self):
        """g=1 for one step at lr=0.1 moves θ down by ≈ 0.1."""
        params = self._params(w=[0.5])
        adamw_step(params, {"w": np.ones(1)}, AdamState.zeros_like(params), lr=0.1)
        assert params["w"].data[0] == pytest.approx(0.4, abs=1e-7)

    def test_decay_only(self):
        """With zero gradient, decay scales θ by 1 − lr·wd."""
        params = self._params(w=[2.0])
        adamw_step(params, {"w": np.zeros(1)}, AdamState.zeros_like(params), lr=0.1,
                   weight_decay=0.5)
        assert params["w"].data[0] == pytest.approx(2.0 * (1 - 0.05), abs=1e-12)

    def test_exempt_names_not_decayed(self):
        """Biases skip weight decay."""
        params = self._params(**{"fc.bias": [2.0], "fc.weight": [2.0]})
        zeros = {k: np.zeros(1) for k in params}
        adamw_step(params, zeros, AdamState.zeros_like(params), lr=0.1, weight_decay=0.5)
        assert params["fc.bias"].data[0] == 2.0
        assert params["fc.weight"].data[0] < 2.0

    def test_none_gradient_skipped(self):
        """A parameter without a gradient keeps its value and moments."""
        params = self._params(a=[1.0], b=[1.0])
        state = AdamState.zeros_like(params)
        adamw_step(params, {"a": np.ones(1), "b": None}, state, lr=0.1, weight_decay=0.1)
        assert params["b"].data[0] == 1.0 and state.v["b"][0] == 0.0
        assert state.step == 1

    def test_non_finite_gradient_names_parameter(self):
        """A NaN gradient raises naming the parameter, before any update."""
        params = self._params(a=[1.0], b=[1.0])
        state = AdamState.zeros_like(params)
        with pytest.raises(OptimizerError, match="'b'"):
            adamw_step(params, {"a": np.ones(1), "b": np.array([np.nan])}, state, lr=0.1)
        assert params["a"].data[0] == 1.0 and state.step == 0

    def test_key_mismatch(self):
        """Moments must cover exactly the parameters."""
        params = self._params(a=[1.0])
        state = AdamState.zeros_like(self._params(z=[1.0]))
        with pytest.raises(OptimizerError):
            adamw_step(params, {"a": np.ones(1)}, state, lr=0.1)

    def test_unknown_gradient(self):
        """Gradients for unknown names are rejected."""
        params = self._params(a=[1.0])
        with pytest.raises(OptimizerError, match="'q'"):
            adamw_step(params, {"q": np.ones(1)}, AdamState.zeros_like(params), lr=0.1)

    def test_clip_grad_norm(self):
        """Clipping rescales to max_norm and reports the pre-clip norm."""
        grads = {"a": np.array([3.0]), "b": np.array([4.0]), "c": None}
        clipped, norm = clip_grad_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        assert global_grad_norm(clipped) == pytest.approx(1.0)
        same, _ = clip_grad_norm(grads, 10.0)
        assert same["a"][0] == 3.0


# ── Variant gating ───────────────────────────────────────────────────────


class TestTrainStep:
    def _state(self, variant, bundle, model_config):
        cfg = TrainConfig(epochs=2, warmup_epochs=0, batch_paired=4, batch_unpaired=4,
                          base_lr=1e-3, variant=variant)
        return cfg, init_train_state(cfg, model_config, total_steps=4)

    def test_mae_only_freezes_text_bridge_and_feature_decoder(self, tiny_bundle,
                                                               tiny_model_config):
        """mae_only: CLIP and distillation terms are 0 and their networks stay put."""
        cfg, state = self._state(Variant.MAE_ONLY, tiny_bundle, tiny_model_config)
        before = _snapshot(state.params)
        batch = _first_batches(tiny_bundle, cfg, tiny_model_config)[0]
        record = train_step(state, batch)
        assert record.losses["lg_clip"] == 0.0 and record.losses["mfd"] == 0.0
        assert record.losses["mim"] > 0.0
        frozen = state.params.names_with_prefix("text_encoder.", "bridge.", "feature_decoder.",
                                                "text_proj", "image_proj", "mask_token_feature",
                                                "log_tau")
        assert frozen
        for name in frozen:
            np.testing.assert_array_equal(state.params[name].data, before[name])
        moved = state.params["pixel_decoder.head.weight"].data
        assert not np.array_equal(moved, before["pixel_decoder.head.weight"])

    def test_clip_only_freezes_pixel_decoder(self, tiny_bundle, tiny_model_config):
        """clip_only: MIM and distillation are 0 and D_I stays put."""
        cfg, state = self._state(Variant.CLIP_ONLY, tiny_bundle, tiny_model_config)
        before = _snapshot(state.params)
        record = train_step(state, _first_batches(tiny_bundle, cfg, tiny_model_config)[0])
        assert record.losses["mim"] == 0.0 and record.losses["mfd"] == 0.0
        assert record.losses["lg_clip"] > 0.0
        for name in state.params.names_with_prefix("pixel_decoder.", "mask_token_pixel"):
            np.testing.assert_array_equal(state.params[name].data, before[name])

    def test_mae_clip_bridge_drops_distillation(self, tiny_bundle, tiny_model_config):
        """mae_clip_bridge trains MIM and CLIP through the bridge but not distillation."""
        plan = VARIANT_PLANS[Variant.MAE_CLIP_BRIDGE]
        assert plan.bridge and not plan.mfd
        cfg, state = self._state(Variant.MAE_CLIP_BRIDGE, tiny_bundle, tiny_model_config)
        before = _snapshot(state.params)
        train_step(state, _first_batches(tiny_bundle, cfg, tiny_model_config)[0])
        for name in state.params.names_with_prefix("feature_decoder."):
            np.testing.assert_array_equal(state.params[name].data, before[name])
        assert not np.array_equal(state.params["bridge.norm.gamma"].data,
                                  before["bridge.norm.gamma"])

    def test_maskedclip_all_terms_and_ema(self, tiny_bundle, tiny_model_config):
        """maskedclip computes every term and moves the momentum shadow."""
        cfg, state = self._state(Variant.MASKEDCLIP, tiny_bundle, tiny_model_config)
        shadow_before = state.momentum["image_encoder.patch_embed.weight"].data.copy()
        record = train_step(state, _first_batches(tiny_bundle, cfg, tiny_model_config)[0])
        assert all(record.losses[k] != 0.0 for k in ("mim", "i2t", "t2i", "lg_clip", "mfd"))
        expected = record.losses["mim"] + 0.01 * record.losses["lg_clip"] \
            + 0.01 * record.losses["mfd"]
        assert record.losses["total"] == pytest.approx(expected, rel=1e-5)
        assert not np.array_equal(state.momentum["image_encoder.patch_embed.weight"].data,
                                  shadow_before)
        assert state.step == 1 and state.adam.step == 1

    def test_momentum_never_tracks_gradients(self, tiny_bundle, tiny_model_config):
        """The shadow stays outside autodiff: no grad and no tracking after a full step."""
        cfg, state = self._state(Variant.MASKEDCLIP, tiny_bundle, tiny_model_config)
        train_step(state, _first_batches(tiny_bundle, cfg, tiny_model_config)[0])
        assert len(state.momentum) > 0
        for name, shadow in state.momentum.items():
            assert shadow.grad is None, name
            assert not shadow.requires_grad, name

    def test_ema_uses_updated_online_weights(self, tiny_bundle, tiny_model_config):
        """After a step the shadow equals m·old + (1−m)·new online within 1e-7."""
        cfg = TrainConfig(epochs=2, warmup_epochs=0, batch_paired=4, batch_unpaired=4,
                          base_lr=1e-2, ema_decay=0.9, variant=Variant.MASKEDCLIP)
        batch = _first_batches(tiny_bundle, cfg, tiny_model_config)[0]
        with float64_mode():
            state = init_train_state(cfg, tiny_model_config, total_steps=4)
            old_shadow = {name: t.data.copy() for name, t in state.momentum.items()}
            old_online = _snapshot(state.params)
            train_step(state, batch)
        assert any(not np.allclose(state.params[name].data, old_online[name], atol=1e-5)
                   for name in old_shadow)
        for name, shadow in state.momentum.items():
            expected = 0.9 * old_shadow[name] + 0.1 * state.params[name].data
            np.testing.assert_allclose(shadow.data, expected, rtol=0, atol=1e-7)

    def test_tau_clamped_after_step(self, tiny_bundle, tiny_model_config):
        """A step that starts with τ = 150 leaves τ at or below 100."""
        cfg, state = self._state(Variant.CLIP_ONLY, tiny_bundle, tiny_model_config)
        state.params[LOG_TAU].data[...] = math.log(150.0)
        assert state.params.tau > tiny_model_config.tau_max
        train_step(state, _first_batches(tiny_bundle, cfg, tiny_model_config)[0])
        assert tiny_model_config.tau_max == 100.0
        assert state.params.tau <= tiny_model_config.tau_max * (1 + 1e-6)

    def test_losses_deterministic(self, tiny_bundle, tiny_model_config):
        """The same state, batch and mask stream give identical losses."""
        cfg, a = self._state(Variant.MASKEDCLIP, tiny_bundle, tiny_model_config)
        _, b = self._state(Variant.MASKEDCLIP, tiny_bundle, tiny_model_config)
        batch = _first_batches(tiny_bundle, cfg, tiny_model_config)[0]
        la = compute_losses(a, batch, Rng(5)).as_floats()
        lb = compute_losses(b, batch, Rng(5)).as_floats()
        assert la == lb

    def test_shared_variant_needs_equal_widths(self, tiny_model_config):
        """mae_clip_shared refuses encoder and bridge widths that differ."""
        wide = tiny_model_config.model_copy(
            update={"bridge": TransformerConfig(depth=1, width=12, heads=2)})
        with pytest.raises(ValueError):
            check_variant_fits(TrainConfig(variant=Variant.MAE_CLIP_SHARED), wide)
        check_variant_fits(TrainConfig(variant=Variant.MASKEDCLIP), wide)

    def test_geometry_mismatch(self, tiny_bundle):
        """A model config whose geometry differs from the bundle is refused."""
        with pytest.raises(ValueError):
            resolve_model_config(tiny_bundle, ModelConfig.desk())


# ── Checkpoints ──────────────────────────────────────────────────────────


class TestCheckpoint:
    def _trained_state(self, bundle, model_config, train_config):
        state = init_train_state(train_config, model_config, total_steps=4)
        train_step(state, _first_batches(bundle, train_config, model_config)[0])
        return state

    def test_save_load_save_identical(self, tiny_bundle, tiny_model_config, tiny_train_config,
                                      tmp_path):
        """save → load → save reproduces the file byte for byte."""
        state = self._trained_state(tiny_bundle, tiny_model_config, tiny_train_config)
        first = save_checkpoint(state, tmp_path / "a.mclp")
        loaded = load_checkpoint(first)
        second = save_checkpoint(loaded, tmp_path / "b.mclp")
        assert first.read_bytes() == second.read_bytes()
        assert loaded.step == 1 and loaded.adam.step == 1

    def test_config_mismatch_names_field(self, tiny_bundle, tiny_model_config,
                                         tiny_train_config, tmp_path):
        """A differing model dimension is reported by field name."""
        state = self._trained_state(tiny_bundle, tiny_model_config, tiny_train_config)
        path = save_checkpoint(state, tmp_path / "c.mclp")
        other = tiny_model_config.model_copy(update={"joint_dim": 8})
        with pytest.raises(CheckpointError, match="joint_dim"):
            load_checkpoint(path, model_config=other)
        with pytest.raises(CheckpointError, match="epochs"):
            load_checkpoint(path, train_config=tiny_train_config.model_copy(
                update={"epochs": 3}))

    def test_version_bump_refused(self, tiny_bundle, tiny_model_config, tiny_train_config,
                                  tmp_path):
        """A checkpoint with a newer version byte is refused."""
        state = self._trained_state(tiny_bundle, tiny_model_config, tiny_train_config)
        path = save_checkpoint(state, tmp_path / "d.mclp")
        buf = bytearray(path.read_bytes())
        buf[4] = FORMAT_VERSION + 1
        path.write_bytes(bytes(buf))
        with pytest.raises(ArchiveFormatError, match="version"):
            load_checkpoint(path)

    def test_model_params_only(self, tiny_bundle, tiny_model_config, tiny_train_config,
                               tmp_path):
        """load_model_params returns frozen online weights."""
        state = self._trained_state(tiny_bundle, tiny_model_config, tiny_train_config)
        path = save_checkpoint(state, tmp_path / "e.mclp")
        params = load_model_params(path)
        assert set(params) == set(state.params)
        assert not any(t.requires_grad for t in params.values())

    def test_resumed_step_is_bit_exact(self, tiny_bundle, tiny_model_config,
                                       tiny_train_config, tmp_path):
        """The step after a reload matches the uninterrupted step exactly."""
        state = self._trained_state(tiny_bundle, tiny_model_config, tiny_train_config)
        path = save_checkpoint(state, tmp_path / "f.mclp")
        resumed = load_checkpoint(path)
        batch = _first_batches(tiny_bundle, tiny_train_config, tiny_model_config)[1]
        a = train_step(state, batch)
        b = train_step(resumed, batch)
        assert a.losses == b.losses and a.lr == b.lr
        for name in state.params:
            np.testing.assert_array_equal(state.params[name].data, resumed.params[name].data)


# ── Training loop ────────────────────────────────────────────────────────


class TestTrainLoop:
    def test_steps_logged(self, tiny_bundle, tmp_path):
        """One epoch of 8+8 items at 4+4 logs two steps."""
        cfg = TrainConfig(epochs=1, warmup_epochs=0, batch_paired=4, batch_unpaired=4)
        result = train_loop(cfg, tiny_bundle, tmp_path, model_config=ModelConfig.tiny())
        log = read_step_log(result.log_path)
        assert list(log["step"]) == [0, 1]
        assert result.log_path.read_text().splitlines()[0] == STEP_LOG_HEADER
        assert result.checkpoint_path.exists()

    def test_same_seed_same_log(self, tiny_bundle, tiny_train_config, tmp_path):
        """Two runs with one seed write identical step logs."""
        a = train_loop(tiny_train_config, tiny_bundle, tmp_path / "a", ModelConfig.tiny())
        b = train_loop(tiny_train_config, tiny_bundle, tmp_path / "b", ModelConfig.tiny())
        assert a.log_path.read_bytes() == b.log_path.read_bytes()
        assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()

    def test_resume_continues_identically(self, tiny_bundle, tiny_train_config,
                                          tiny_model_config, tmp_path):
        """Resuming mid-run reproduces the remaining log rows exactly."""
        full = train_loop(tiny_train_config, tiny_bundle, tmp_path / "full", ModelConfig.tiny())

        state = init_train_state(tiny_train_config, tiny_model_config, full.state.total_steps)
        for batch in _first_batches(tiny_bundle, tiny_train_config, tiny_model_config):
            train_step(state, batch)
        mid = save_checkpoint(state, tmp_path / "mid" / "checkpoint.mclp")

        resumed = train_loop(tiny_train_config, tiny_bundle, tmp_path / "resumed",
                             ModelConfig.tiny(), resume_from=mid)
        full_rows = full.log_path.read_text().splitlines()
        resumed_rows = resumed.log_path.read_text().splitlines()
        assert resumed_rows[1:] == full_rows[3:]
        assert [r.step for r in resumed.records] == [2, 3]

    def test_resume_rejects_other_config(self, tiny_bundle, tiny_train_config, tmp_path):
        """A checkpoint cannot continue under a different training config."""
        run = train_loop(tiny_train_config, tiny_bundle, tmp_path / "r", ModelConfig.tiny())
        other = tiny_train_config.model_copy(update={"lambda_mfd": 0.5})
        with pytest.raises(CheckpointError, match="lambda_mfd"):
            train_loop(other, tiny_bundle, tmp_path / "s", ModelConfig.tiny(),
                       resume_from=run.checkpoint_path)

    @pytest.mark.slow
    def test_total_loss_decreases(self, tiny_bundle, tmp_path):
        """Fifty steps cut the total loss by at least a fifth."""
        cfg = TrainConfig(epochs=25, warmup_epochs=1, batch_paired=4, batch_unpaired=4,
                          base_lr=1e-2, checkpoint_every=25)
        result = train_loop(cfg, tiny_bundle, tmp_path, model_config=ModelConfig.tiny())
        totals = read_step_log(result.log_path)["total"].to_numpy()
        assert len(totals) == 50
        assert totals[-5:].mean() <= 0.8 * totals[:3].mean()
