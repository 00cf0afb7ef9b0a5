"""
MoE Lab - Core Module Tests
===========================

Tests for core modules: errors, settings, logging, monitoring, validation
"""

import json
import logging

import pytest


# =============================================================================
# Error Tests
# =============================================================================

class TestErrors:
    """Tests for the exception hierarchy"""

    def test_exit_codes_by_category(self):
        """Configuration errors exit 1, data/contract 2, numeric 3"""
        from moelab.core.errors import (
            ConfigError, ContractError, CorpusIOError, DataError, DimensionError, NumericError, exit_code_for,
        )

        assert exit_code_for(ConfigError("bad")) == 1
        assert exit_code_for(DataError("bad")) == 2
        assert exit_code_for(ContractError("bad")) == 2
        assert exit_code_for(CorpusIOError("x.tsv", "missing")) == 2
        assert exit_code_for(DimensionError("bad", (2, 3), (2, 3))) == 3
        assert exit_code_for(NumericError("nan")) == 3
        assert exit_code_for(RuntimeError("other")) == 1

    def test_config_error_enumerates_violations(self):
        """Every violated constraint appears in the message"""
        from moelab.core.errors import ConfigError

        error = ConfigError("invalid", violations=["a too small", "b too large"])

        assert "a too small" in str(error)
        assert "b too large" in str(error)
        assert error.details["violations"] == ["a too small", "b too large"]

    def test_dimension_error_names_both_shapes(self):
        """Shape mismatches name both operands"""
        from moelab.core.errors import DimensionError

        error = DimensionError("matmul inner extents differ", (2, 3), (2, 3))

        assert "(2, 3) vs (2, 3)" in str(error)
        assert error.details["shapes"] == [[2, 3], [2, 3]]

    def test_domain_lookup_error_is_data_error(self):
        """Unknown domains are data errors listing the known ones"""
        from moelab.core.errors import DataError, DomainLookupError

        error = DomainLookupError("legal", ["generic", "news"])

        assert isinstance(error, DataError)
        assert "legal" in str(error)
        assert error.details["known"] == ["generic", "news"]

    def test_to_dict_is_json_serializable(self):
        """Error payloads serialize for reports"""
        from moelab.core.errors import ContractError

        payload = ContractError("k out of range").to_dict()

        assert json.loads(json.dumps(payload))["code"] == "CONTRACT_ERROR"
        assert payload["exit_code"] == 2

    def test_handle_cli_errors_maps_exceptions(self):
        """The decorator converts failures into exit codes"""
        from moelab.core.errors import NumericError, handle_cli_errors

        @handle_cli_errors
        def failing():
            raise NumericError("loss is NaN")

        @handle_cli_errors
        def crashing():
            raise KeyError("oops")

        @handle_cli_errors
        def fine():
            return 0

        assert failing() == 3
        assert crashing() == 1
        assert fine() == 0


# =============================================================================
# Settings Tests
# =============================================================================

class TestSettings:
    """Tests for environment settings"""

    def test_testing_environment(self):
        """The session fixture switches to the testing environment"""
        from moelab.config import get_settings

        settings = get_settings()

        assert settings.is_testing
        assert settings.metrics_enabled is False

    def test_env_override(self, monkeypatch):
        """MOELAB_ variables override defaults"""
        from moelab.config import get_settings
        from moelab.core.validation import Precision

        monkeypatch.setenv("MOELAB_PRECISION", "FLOAT32")
        monkeypatch.setenv("MOELAB_WORKERS", "3")
        get_settings.cache_clear()
        try:
            settings = get_settings()
            assert settings.precision is Precision.FLOAT32
            assert settings.workers == 3
        finally:
            monkeypatch.delenv("MOELAB_PRECISION")
            monkeypatch.delenv("MOELAB_WORKERS")
            get_settings.cache_clear()

    def test_invalid_log_format_rejected(self):
        """Unknown log formats fail validation"""
        from pydantic import ValidationError

        from moelab.config import Settings

        with pytest.raises(ValidationError):
            Settings(log_format="xml")

    def test_unknown_precision_rejected(self):
        from pydantic import ValidationError

        from moelab.config import Settings

        with pytest.raises(ValidationError):
            Settings(precision="float16")


# =============================================================================
# Logging Tests
# =============================================================================

class TestLogging:
    """Tests for structured logging"""

    def test_json_formatter_includes_context(self):
        """Records logged inside a LogContext carry its fields"""
        from moelab.core.logging_config import JSONFormatter, LogContext

        record = logging.LogRecord("moelab.test", logging.INFO, __file__, 1, "hello", None, None)
        with LogContext(command="train", seed=4):
            entry = json.loads(JSONFormatter().format(record))

        assert entry["message"] == "hello"
        assert entry["level"] == "INFO"
        assert entry["command"] == "train"
        assert entry["seed"] == 4
        assert "run_id" in entry

    def test_update_context_sets_step(self):
        """update_context changes the active context only"""
        from moelab.core.logging_config import LogContext, run_context, update_context

        with LogContext(command="train"):
            update_context(step=12)
            assert run_context.get()["step"] == 12
        assert "step" not in run_context.get()

    def test_setup_logging_json_file(self, tmp_path):
        """A log file receives JSON lines"""
        from moelab.core.logging_config import LogConfig, setup_logging

        path = tmp_path / "run.log"
        root = setup_logging(LogConfig(level="INFO", log_file=str(path)))
        logging.getLogger("moelab.test").info("written")
        for handler in root.handlers:
            handler.flush()

        lines = path.read_text(encoding="utf-8").splitlines()
        assert json.loads(lines[-1])["message"] == "written"
        setup_logging(LogConfig(level="DEBUG"))

    def test_timed_passes_result_and_errors_through(self, caplog):
        from moelab.core.errors import ContractError
        from moelab.core.logging_config import timed

        log = logging.getLogger("moelab.test")

        @timed(log, "double")
        def double(x):
            if x < 0:
                raise ContractError("negative")
            return 2 * x

        with caplog.at_level(logging.DEBUG, logger="moelab.test"):
            assert double(3) == 6
            with pytest.raises(ContractError):
                double(-1)

        messages = [r.getMessage() for r in caplog.records]
        assert messages[0].startswith("double completed in")
        assert messages[1].startswith("double failed after")


# =============================================================================
# Monitoring Tests
# =============================================================================

class TestMonitoring:
    """Tests for training metrics and host descriptors"""

    def test_record_step_updates_registry(self):
        """Gauges and counters follow recorded steps"""
        from moelab.core.monitoring import TrainingMetrics

        metrics = TrainingMetrics()
        metrics.record_step(step=3, lr=0.001, loss=2.5, tokens=40, seconds=0.02)
        metrics.record_step(step=4, lr=0.002, loss=2.0, tokens=10, seconds=0.03)

        assert metrics.value("moelab_train_step") == 4
        assert metrics.value("moelab_train_loss") == 2.0
        assert metrics.value("moelab_train_target_tokens_total") == 50
        assert metrics.value("moelab_train_updates_total") == 2

    def test_accuracy_gauge_per_domain(self, tmp_path):
        """Per-domain accuracy is labelled and exported"""
        from moelab.core.monitoring import TrainingMetrics

        metrics = TrainingMetrics()
        metrics.record_accuracy({"news": 0.75})
        metrics.write(str(tmp_path / "metrics.prom"))

        assert metrics.value("moelab_eval_token_accuracy", {"domain": "news"}) == 0.75
        assert "moelab_eval_token_accuracy" in (tmp_path / "metrics.prom").read_text()

    def test_environment_descriptor(self):
        """Benchmark results record host, precision and batch unit"""
        from moelab.core.monitoring import environment_descriptor

        descriptor = environment_descriptor("float64", workers=2, extra={"mode": "multi-worker"})

        assert descriptor["precision"] == "float64"
        assert descriptor["workers"] == 2
        assert descriptor["batch_unit"] == "tokens"
        assert descriptor["mode"] == "multi-worker"
        assert descriptor["logical_cores"] >= 1


# =============================================================================
# Validation Tests
# =============================================================================

class TestModelConfig:
    """Tests for ModelConfig constraints"""

    def test_defaults_are_consistent(self):
        """The default config has no violations"""
        from moelab.core.validation import ModelConfig

        assert ModelConfig().violations() == []

    def test_gate_conditioning_requires_smoe(self):
        """Gate conditionings are only valid for the SMoE variant"""
        from moelab.core.errors import ConfigError
        from moelab.core.validation import ModelConfig

        cfg = ModelConfig(conditioning="domain-aware-gate", ffn_variant="dense")

        with pytest.raises(ConfigError) as exc:
            cfg.validate_consistency()
        assert "requires ffn_variant smoe" in str(exc.value)

    def test_all_violations_collected(self):
        """Several broken constraints are reported together"""
        from moelab.core.validation import ModelConfig

        cfg = ModelConfig(d_model=10, heads=4, ffn_variant="smoe", expert_count=2, top_k=3,
                          conditioning="domain-specialized-gate")

        problems = cfg.violations()
        assert any("heads" in p for p in problems)
        assert any("top_k" in p for p in problems)

    def test_width_multiplier_scales_d_ff(self):
        """width_multiplier changes the FFN width only"""
        from moelab.core.validation import ModelConfig

        cfg = ModelConfig(d_model=512, d_ff=2048, heads=8, width_multiplier=1.5)

        assert cfg.d_ff_effective == 3072
        assert cfg.d_model == 512

    def test_extra_sublayers_at_even_indices(self):
        """Six-layer stacks host three extra sublayers each"""
        from moelab.core.validation import ModelConfig

        cfg = ModelConfig(encoder_layers=6, decoder_layers=6, ffn_variant="smoe", expert_count=10)

        assert [cfg.hosts_extra_sublayer(i) for i in range(6)] == [False, True] * 3
        assert cfg.extra_layer_count() == 6

    def test_build_validated_converts_errors(self):
        """pydantic failures surface as ConfigError"""
        from moelab.core.errors import ConfigError
        from moelab.core.validation import TrainConfig, build_validated

        with pytest.raises(ConfigError) as exc:
            build_validated(TrainConfig, {"lr_max": -1})
        assert "lr_max" in str(exc.value)

    def test_data_config_length_bounds(self):
        """max_len below min_len is rejected"""
        from moelab.core.errors import ConfigError
        from moelab.core.validation import DataConfig, build_validated

        with pytest.raises(ConfigError):
            build_validated(DataConfig, {"min_len": 5, "max_len": 3})
