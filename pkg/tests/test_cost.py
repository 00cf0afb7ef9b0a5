"""
MoE Lab - Cost Accounting Tests
===============================

Tests for closed-form parameter and MAC counts against built models,
the runtime counter and the reference model sizes
"""

from pathlib import Path

import pytest

from tests.conftest import make_model_config

PRESETS = Path(__file__).resolve().parent.parent / "presets"

DESK_PRESETS = [
    "desk_dense", "desk_dense_tags", "desk_smoe", "desk_smoe_tags", "desk_smoe_tags_dr",
    "desk_smoe_domain_aware", "desk_smoe_domain_specialized", "desk_adapters",
]


def preset(name):
    from moelab.data.tasks import build_synthetic_schema
    from moelab.experiment import ExperimentConfig

    config = ExperimentConfig.load(PRESETS / f"{name}.cfg")
    return config, build_synthetic_schema(config.data)


def report(name, **kwargs):
    from moelab.cost.accounting import cost_report

    config, schema = preset(name)
    return cost_report(config.model, schema, instrument=False, name=name, **kwargs)


# =============================================================================
# Reference Sizes
# =============================================================================

class TestReferenceSizes:
    """Tests for the base-size configurations"""

    def test_base_parameters(self):
        """Untied and tied totals of the base transformer"""
        base = report("transformer_base")

        assert base.params_total == 68_716_544
        assert base.params_tied == 56_428_544

    def test_base_macs_for_ten_token_pair(self):
        base = report("transformer_base")

        assert base.table_flops == 442_245_120
        assert base.macs_by_group["output"] == 10 * 512 * 24000
        assert base.flops == 2 * base.total_macs

    def test_smoe_matches_wider_dense_flops(self):
        """Top-2 SMoE on every second layer costs the same backbone MACs as the 1.5x FFN"""
        assert report("smoe").table_flops == report("transformer_x1_5").table_flops

    @pytest.mark.parametrize("name, expected", [
        ("transformer_x1_5", 69.0e6),
        ("transformer_x5", 157.2e6),
        ("smoe", 169.8e6),
        ("adapters", 169.8e6),
    ])
    def test_parameter_bands(self, name, expected):
        assert report(name).params_tied == pytest.approx(expected, rel=0.05)

    def test_tag_adds_one_source_position(self):
        from moelab.cost.accounting import estimate_flops

        config, schema = preset("transformer_base_tags")
        tagged = estimate_flops(config.model, schema)
        untagged = estimate_flops(config.model, schema, tagged=False)

        assert tagged.tagged and not untagged.tagged
        assert tagged.total_macs > untagged.total_macs
        assert tagged.macs_by_group["output"] == untagged.macs_by_group["output"]


# =============================================================================
# Closed Form vs Built Models
# =============================================================================

class TestClosedForm:
    """Closed-form counts against built models and the MAC counter"""

    @pytest.mark.parametrize("name", DESK_PRESETS)
    def test_params_match_built_model(self, name):
        from moelab.cost.accounting import count_params
        from moelab.model.transformer import build_model

        config, schema = preset(name)

        assert count_params(config.model, schema).params_total == build_model(config.model, schema).num_parameters()

    @pytest.mark.parametrize("name", DESK_PRESETS)
    def test_macs_match_runtime_counter(self, name):
        from moelab.cost.accounting import cost_report

        config, schema = preset(name)
        result = cost_report(config.model, schema, src_len=7, tgt_len=5, name=name)

        assert result.instrumented_matches is True

    @pytest.mark.parametrize("conditioning", ["none", "domain-aware-gate", "domain-specialized-gate"])
    def test_gate_groups(self, plain_schema, conditioning):
        from moelab.cost.accounting import count_params, estimate_flops

        cfg = make_model_config(ffn_variant="smoe", expert_count=3, conditioning=conditioning)
        params = count_params(cfg, plain_schema).params_by_group["gates"]
        macs = estimate_flops(cfg, plain_schema, 4, 3).macs_by_group["gates"]
        tokens = 4 + 3

        expected_params, expected_macs = {
            "none": (2 * 8 * 3, tokens * 8 * 3),
            "domain-aware-gate": (3 * 8 + 2 * 16 * 3, tokens * 16 * 3),
            "domain-specialized-gate": (2 * 3 * 8 * 3, tokens * 8 * 3),
        }[conditioning]
        assert params == expected_params
        assert macs == expected_macs

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["transformer_base", "smoe", "adapters"])
    def test_base_size_runtime_counter(self, name):
        from moelab.cost.accounting import cost_report

        config, schema = preset(name)

        assert cost_report(config.model, schema, name=name).instrumented_matches is True


# =============================================================================
# Output
# =============================================================================

class TestCostOutput:
    """Tests for report files"""

    def test_table_csv(self, tmp_path):
        from moelab.cost.accounting import write_table_csv

        write_table_csv(tmp_path / "cost.csv", [report("transformer_base")])
        lines = (tmp_path / "cost.csv").read_text().splitlines()

        assert lines[0] == "model,params,params_tied,table_flops,total_macs,flops"
        assert lines[1].startswith("transformer_base,68716544,56428544,442245120,")

    def test_json_and_table(self, tmp_path):
        import json

        from moelab.cost.accounting import format_table, write_reports_json

        reports = [report("transformer_base"), report("smoe")]
        write_reports_json(tmp_path / "cost.json", reports)
        payload = json.loads((tmp_path / "cost.json").read_text())

        assert [p["name"] for p in payload] == ["transformer_base", "smoe"]
        assert payload[0]["instrumented_matches"] is None
        assert len(format_table(reports)) == 3
