"""
MoE Lab - Experiment Config Tests
=================================

Tests for the flat key = value experiment files and the shipped presets
"""

from pathlib import Path

import pytest

PRESETS = Path(__file__).resolve().parent.parent / "presets"


class TestParse:
    """Tests for ExperimentConfig.parse"""

    def test_comments_and_blank_lines(self):
        from moelab.core.validation import Conditioning, FfnVariant
        from moelab.experiment import ExperimentConfig

        text = "# variant\nname = demo\n\nffn_variant = smoe   # experts\nconditioning = tags\nmax_steps = 7\n"
        config = ExperimentConfig.parse(text)

        assert config.name == "demo"
        assert config.model.ffn_variant == FfnVariant.SMOE
        assert config.model.conditioning == Conditioning.TAGS
        assert config.train.max_steps == 7

    def test_seed_sets_every_section(self):
        from moelab.experiment import KEY_OWNERS, ExperimentConfig

        config = ExperimentConfig.parse("seed = 9")

        assert len(KEY_OWNERS["seed"]) > 1
        assert config.model.seed == config.train.seed == 9

    def test_default_seed_only_when_absent(self):
        from moelab.experiment import ExperimentConfig

        assert ExperimentConfig.parse("", default_seed=4).train.seed == 4
        assert ExperimentConfig.parse("seed = 2", default_seed=4).train.seed == 2

    def test_unknown_key(self):
        from moelab.core.errors import ConfigError
        from moelab.experiment import ExperimentConfig

        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.parse("d_model = 16\nexperts = 8\n")
        assert exc.value.violations == ["unknown key: experts"]
        assert exc.value.exit_code == 1

    def test_repeated_and_malformed_lines_all_reported(self):
        from moelab.core.errors import ConfigError
        from moelab.experiment import ExperimentConfig

        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.parse("d_model = 16\nd_model = 32\njust words\n", source="x.cfg")
        assert len(exc.value.violations) == 2
        assert exc.value.violations[0].startswith("x.cfg:2:")
        assert exc.value.violations[1].startswith("x.cfg:3:")

    def test_invalid_values_collected(self):
        from moelab.core.errors import ConfigError
        from moelab.experiment import ExperimentConfig

        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.parse("d_model = -1\nlr_max = 0\n")
        assert len(exc.value.violations) >= 2

    def test_cross_field_violation(self):
        """top_k above expert_count is rejected"""
        from moelab.core.errors import ConfigError
        from moelab.experiment import ExperimentConfig

        with pytest.raises(ConfigError):
            ExperimentConfig.parse("ffn_variant = smoe\nexpert_count = 2\ntop_k = 3\n")


class TestEmit:
    """Tests for writing configs back out"""

    def test_emit_then_parse_is_identity(self):
        from moelab.experiment import ExperimentConfig

        config = ExperimentConfig.parse("name = x\nffn_variant = smoe\nlr_max = 0.002\ndr_probability = 0.5\n")

        assert ExperimentConfig.parse(config.emit()) == config

    def test_every_key_emitted(self):
        from moelab.experiment import KNOWN_KEYS, ExperimentConfig

        assert list(ExperimentConfig().values()) == KNOWN_KEYS

    def test_with_overrides(self):
        from moelab.experiment import ExperimentConfig

        config = ExperimentConfig.parse("name = base\nd_model = 16\n").with_overrides(seed=5, unseen_related=False)

        assert config.name == "base"
        assert config.model.d_model == 16
        assert config.model.seed == 5
        assert config.data.unseen_related is False

    def test_format_value(self):
        from moelab.core.validation import MixtureMode
        from moelab.experiment import format_value

        assert format_value(True) == "true"
        assert format_value(0.1) == "0.1"
        assert format_value(MixtureMode.SEEN_ONLY) == "seen_only"

    def test_save_and_load(self, tmp_path):
        from moelab.experiment import ExperimentConfig

        config = ExperimentConfig.parse("name = saved\ntop_k = 1\n")
        config.save(tmp_path / "saved.cfg")

        assert ExperimentConfig.load(tmp_path / "saved.cfg") == config

    def test_missing_file(self, tmp_path):
        from moelab.core.errors import CorpusIOError
        from moelab.experiment import ExperimentConfig

        with pytest.raises(CorpusIOError):
            ExperimentConfig.load(tmp_path / "absent.cfg")


class TestPresets:
    """Every shipped preset loads"""

    @pytest.mark.parametrize("path", sorted(PRESETS.glob("*.cfg")), ids=lambda p: p.stem)
    def test_preset_loads(self, path):
        from moelab.experiment import ExperimentConfig

        config = ExperimentConfig.load(path)

        assert config.name == path.stem

    def test_dr_presets_set_probability(self):
        from moelab.experiment import ExperimentConfig

        for path in PRESETS.glob("*_dr.cfg"):
            assert ExperimentConfig.load(path).model.dr_probability == 0.5, path.stem
