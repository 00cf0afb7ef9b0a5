"""
MoE Lab - Training Tests
========================

Tests for the schedule, Adam, gradient accumulation and the training loop
"""

import math

import numpy as np
import pytest

from tests.conftest import make_model_config


def training_stream(dataset, schema, seed=5, dr_probability=0.0):
    from moelab.data.sampling import TrainingStream

    return TrainingStream(dataset.split("train"), schema.probabilities, seed, dr_probability)


def parameters(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def assert_same_parameters(a, b):
    assert a.keys() == b.keys()
    for name in a:
        assert a[name].tobytes() == b[name].tobytes(), name


# =============================================================================
# Schedule and Optimizer
# =============================================================================

class TestSchedule:
    """Tests for warmup plus inverse square root decay"""

    @pytest.mark.parametrize("step, expected", [(0, 0.0), (2000, 0.0005), (4000, 0.001), (16000, 0.0005)])
    def test_reference_points(self, step, expected):
        from moelab.train.optim import lr_schedule

        assert lr_schedule(step, 0.001, 4000) == pytest.approx(expected, rel=1e-12)

    def test_peak_at_warmup(self):
        from moelab.train.optim import lr_schedule

        values = [lr_schedule(s, 0.002, 50) for s in range(1, 200)]

        assert max(values) == lr_schedule(50, 0.002, 50) == pytest.approx(0.002)

    def test_invalid_arguments(self):
        from moelab.core.errors import ConfigError, ContractError
        from moelab.train.optim import lr_schedule

        with pytest.raises(ContractError):
            lr_schedule(-1, 0.001, 10)
        with pytest.raises(ConfigError):
            lr_schedule(1, 0.001, 0)


class TestAdam:
    """Tests for the bias-corrected Adam update"""

    def test_first_step_hand_value(self):
        """The first update has magnitude lr regardless of gradient scale"""
        from moelab.train.optim import AdamState, adam_step

        x = np.array([1.0, -2.0])
        state = adam_step({"x": x}, {"x": np.array([0.5, -40.0])}, AdamState(), lr=0.1)

        np.testing.assert_allclose(x, [0.9, -1.9], rtol=1e-7)
        assert state.t == 1
        np.testing.assert_allclose(state.m["x"], [0.05, -4.0])
        np.testing.assert_allclose(state.v["x"], [0.005, 32.0])

    def test_second_step_hand_value(self):
        from moelab.train.optim import AdamState, adam_step

        x = np.array([0.0])
        state = AdamState()
        adam_step({"x": x}, {"x": np.array([1.0])}, state, lr=1.0, betas=(0.5, 0.5), eps=0.0)
        adam_step({"x": x}, {"x": np.array([0.0])}, state, lr=1.0, betas=(0.5, 0.5), eps=0.0)
        # m = 0.25, v = 0.25; corrections 0.75 and 0.75
        expected = -1.0 - (0.25 / 0.75) / math.sqrt(0.25 / 0.75)

        np.testing.assert_allclose(x, [expected], rtol=1e-12)

    def test_missing_gradient_keeps_value(self):
        from moelab.train.optim import AdamState, adam_step

        x = np.array([3.0])
        adam_step({"x": x}, {}, AdamState(), lr=0.5)

        assert x.tolist() == [3.0]

    def test_gradient_shape_mismatch(self):
        from moelab.core.errors import DimensionError
        from moelab.train.optim import AdamState, adam_step

        with pytest.raises(DimensionError):
            adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, AdamState(), lr=0.1)


# =============================================================================
# Loss and Accumulation
# =============================================================================

class TestGroupLoss:
    """Tests for accumulated loss and gradients"""

    def test_accumulation_matches_one_large_batch(self, tiny_model, dataset, train_config):
        """Two micro-batches give the gradient of their union"""
        from moelab.data.sampling import make_batch
        from moelab.train.loop import group_loss

        examples = dataset.split("train")[1][:6]
        tiny_model.zero_grad()
        whole = group_loss(tiny_model, [make_batch(examples, tiny_model.prepare_source)], train_config, 0.0, 1)
        expected = {n: p.grad.copy() for n, p in tiny_model.named_parameters() if p.grad is not None}

        tiny_model.zero_grad()
        split = group_loss(
            tiny_model,
            [make_batch(examples[:2], tiny_model.prepare_source), make_batch(examples[2:], tiny_model.prepare_source)],
            train_config, 0.0, 1,
        )

        assert split == pytest.approx(whole, rel=1e-10)
        for name, grad in expected.items():
            np.testing.assert_allclose(dict(tiny_model.named_parameters())[name].grad, grad,
                                       rtol=1e-8, atol=1e-12, err_msg=name)

    def test_non_finite_loss_aborts(self, tiny_model, dataset, train_config):
        from moelab.core.errors import NumericError
        from moelab.data.sampling import make_batch
        from moelab.train.loop import group_loss

        tiny_model.W_out.data[:] = np.nan
        batch = make_batch(dataset.split("train")[1][:2], tiny_model.prepare_source)

        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError) as exc:
                group_loss(tiny_model, [batch], train_config, 0.0, step=12)
        assert exc.value.details["step"] == 12
        assert exc.value.details["batch_digest"] == batch.digest()


# =============================================================================
# Training Loop
# =============================================================================

class TestTrainLoop:
    """Tests for train_loop"""

    def test_zero_steps_keeps_initialization(self, tiny_model, dataset, schema, train_config, tmp_path):
        from moelab.train.loop import train_loop

        before = parameters(tiny_model)
        tc = train_config.model_copy(update={"max_steps": 0})
        result = train_loop(tiny_model, training_stream(dataset, schema), tc, dataset.split("valid"), tmp_path)

        assert_same_parameters(before, parameters(tiny_model))
        assert result.steps == 0
        assert result.checkpoint_path.exists()
        assert len(result.log) == 1

    def test_metric_log_columns(self, tiny_model, dataset, schema, train_config, tmp_path):
        from moelab.train.loop import train_loop

        result = train_loop(tiny_model, training_stream(dataset, schema), train_config, dataset.split("valid"), tmp_path)
        lines = result.metrics_path.read_text().splitlines()

        assert lines[0] == "step,lr,loss,acc_generic,acc_alpha,acc_beta,acc_alpha_related"
        assert [row["step"] for row in result.log] == [2, 4]
        assert len(lines) == 3
        assert math.isnan(result.log[-1]["acc_alpha_related"])
        assert math.isfinite(result.final_loss)

    def test_runs_are_deterministic(self, schema, dataset, train_config, tmp_path):
        from moelab.model.transformer import build_model
        from moelab.train.loop import train_loop

        cfg = make_model_config(ffn_variant="smoe", expert_count=3, dropout=0.1)
        runs = []
        for name in ("a", "b"):
            model = build_model(cfg, schema)
            train_loop(model, training_stream(dataset, schema, dr_probability=0.5), train_config, None, tmp_path / name)
            runs.append(parameters(model))

        assert_same_parameters(*runs)

    def test_resume_is_bit_exact(self, schema, dataset, train_config, tmp_path):
        """Stopping at step 2 and resuming matches an uninterrupted run"""
        from moelab.model.checkpoint import load_checkpoint
        from moelab.model.transformer import build_model
        from moelab.train.loop import train_loop

        cfg = make_model_config(ffn_variant="smoe", expert_count=3, dropout=0.1, balance_coefficient=0.01)
        valid = dataset.split("valid")

        continuous = build_model(cfg, schema)
        full = train_loop(continuous, training_stream(dataset, schema, dr_probability=0.5), train_config, valid,
                          tmp_path / "full")

        first = build_model(cfg, schema)
        train_loop(first, training_stream(dataset, schema, dr_probability=0.5),
                   train_config.model_copy(update={"max_steps": 2}), valid, tmp_path / "split")
        resumed = build_model(cfg, schema, seed=123)
        result = train_loop(resumed, training_stream(dataset, schema, dr_probability=0.5), train_config, valid,
                            tmp_path / "split", resume=load_checkpoint(tmp_path / "split" / "checkpoint.npz"))

        assert_same_parameters(parameters(continuous), parameters(resumed))
        assert [r["loss"] for r in result.log] == [r["loss"] for r in full.log]

    def test_resume_rejects_other_schema(self, tiny_model, dataset, schema, plain_schema, train_config, tmp_path):
        from moelab.core.errors import CompatibilityError
        from moelab.data.sampling import TrainingStream
        from moelab.model.checkpoint import load_checkpoint
        from moelab.model.transformer import build_model
        from moelab.train.loop import train_loop

        tc = train_config.model_copy(update={"max_steps": 0})
        train_loop(tiny_model, training_stream(dataset, schema), tc, None, tmp_path)
        other = build_model(make_model_config(ffn_variant="smoe", expert_count=3), plain_schema)
        corpora = [[e] for e in dataset.split("train")[0][:3]]

        with pytest.raises(CompatibilityError):
            train_loop(other, TrainingStream(corpora, plain_schema.probabilities, 1), train_config, None, tmp_path,
                       resume=load_checkpoint(tmp_path / "checkpoint.npz"))

    def test_metrics_registry_updated(self, tiny_model, dataset, schema, train_config, tmp_path):
        from moelab.core.monitoring import TrainingMetrics
        from moelab.train.loop import train_loop

        metrics = TrainingMetrics()
        train_loop(tiny_model, training_stream(dataset, schema), train_config, dataset.split("valid"), tmp_path,
                   metrics=metrics)

        assert metrics.value("moelab_train_updates_total") == 4
        assert metrics.value("moelab_train_step") == 4
        assert (tmp_path / "metrics.prom").exists()

    @pytest.mark.slow
    def test_loss_decreases(self, schema, dataset, tmp_path):
        from moelab.core.validation import TrainConfig
        from moelab.model.transformer import build_model
        from moelab.train.loop import train_loop

        model = build_model(make_model_config(d_model=16, d_ff=32), schema)
        tc = TrainConfig(max_steps=60, batch_tokens=40, lr_max=0.01, warmup_steps=10, eval_every=10, eval_examples=3)
        result = train_loop(model, training_stream(dataset, schema), tc, dataset.split("valid"), tmp_path)

        assert result.log[-1]["loss"] < result.log[0]["loss"]
