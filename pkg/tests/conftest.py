"""
MoE Lab - Test Configuration
============================

Pytest configuration and shared fixtures: environment, precision reset,
tiny domain schemas, configs and models.
"""

import os
import sys

import pytest

# Add repository root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains or instruments larger models (deselect with -m 'not slow')")


# =============================================================================
# Environment Configuration
# =============================================================================

@pytest.fixture(scope="session", autouse=True)
def setup_test_environment():
    """Setup test environment variables"""
    os.environ["MOELAB_APP_ENV"] = "testing"
    os.environ["MOELAB_LOG_LEVEL"] = "DEBUG"
    os.environ["MOELAB_METRICS_ENABLED"] = "false"
    from moelab.config import get_settings

    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(autouse=True)
def reset_numerics():
    """Every test starts in 64-bit mode with debug checks off"""
    from moelab.numerics import seed_stochastic, set_debug_checks, set_default_dtype

    set_default_dtype("float64")
    set_debug_checks(False)
    seed_stochastic(0)
    yield
    set_default_dtype("float64")
    set_debug_checks(False)


# =============================================================================
# Domain Fixtures
# =============================================================================

@pytest.fixture
def data_config():
    """Two seen domains plus the unseen related domain, small splits"""
    from moelab.core.validation import DataConfig

    return DataConfig(
        seen_domains=2,
        range_size=3,
        shared_size=4,
        min_len=2,
        max_len=4,
        train_examples=40,
        generic_examples=60,
        valid_examples=6,
        test_examples=8,
        data_seed=11,
    )


@pytest.fixture
def schema(data_config):
    from moelab.data.tasks import build_synthetic_schema

    return build_synthetic_schema(data_config)


@pytest.fixture
def plain_schema():
    """generic + two seen domains, no tasks attached"""
    from moelab.model.schema import DomainSchema, DomainSpec

    return DomainSchema(
        [DomainSpec("generic", 0.5, True), DomainSpec("news", 0.25, True), DomainSpec("medical", 0.25, True)],
        content_size=10,
    )


@pytest.fixture
def dataset(data_config, schema):
    from moelab.data.corpus_io import generate_splits

    return generate_splits(data_config, schema)


# =============================================================================
# Model Fixtures
# =============================================================================

def make_model_config(**overrides):
    from moelab.core.validation import ModelConfig

    values = dict(d_model=8, d_ff=16, encoder_layers=2, decoder_layers=2, heads=2, dropout=0.0, seed=3)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def model_config_factory():
    return make_model_config


@pytest.fixture
def tiny_model(schema):
    from moelab.model.transformer import build_model

    return build_model(make_model_config(ffn_variant="smoe", expert_count=3, top_k=2), schema)


@pytest.fixture
def train_config():
    from moelab.core.validation import TrainConfig

    return TrainConfig(
        max_steps=4,
        batch_tokens=24,
        lr_max=0.01,
        warmup_steps=2,
        label_smoothing=0.1,
        seed=5,
        eval_every=2,
        eval_examples=3,
    )
