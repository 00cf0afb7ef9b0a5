"""
MoE Lab - Evaluation Tests
==========================

Tests for BLEU, accuracies, greedy decoding, wrong-label robustness and
expert activity analysis
"""

import math

import numpy as np
import pytest

from tests.conftest import make_model_config


class ScriptedModel:
    """Emits a fixed token script; stands in for Seq2SeqModel during decoding"""

    def __init__(self, script, vocab_size=12):
        self.script = script
        self.vocab_size = vocab_size
        self.prefixes = []

    def prepare_source(self, source, domain):
        return list(source)

    def start_decoding(self, sources, domains, examples=None, trace=False):
        from moelab.moe import GateTrace

        class State:
            pass

        state = State()
        state.trace = GateTrace() if trace else None
        return state

    def next_token_logits(self, state, prefix):
        self.prefixes.append(prefix.copy())
        step = prefix.shape[1] - 1
        logits = np.zeros((prefix.shape[0], self.vocab_size))
        token = self.script[min(step, len(self.script) - 1)]
        logits[:, token] = 1.0
        return logits


def layer_trace(layer, first_choices, expert_count=4):
    from moelab.moe import LayerTrace

    n = len(first_choices)
    dist = np.full((n, expert_count), 1.0 / expert_count)
    return LayerTrace(layer, np.zeros(n, dtype=np.int64), np.arange(n), np.zeros(n, dtype=np.int64), dist,
                      np.asarray(first_choices)[:, None], np.ones((n, 1)))


# =============================================================================
# BLEU and Accuracy
# =============================================================================

class TestBleu:
    """Tests for corpus BLEU"""

    def test_identical_is_100(self):
        from moelab.evaluation.metrics import corpus_bleu

        refs = [[5, 6, 7, 8, 9], [6, 7, 8, 9]]

        assert corpus_bleu(refs, refs) == pytest.approx(100.0)

    def test_disjoint_hits_the_floor(self):
        from moelab.evaluation.metrics import corpus_bleu

        assert corpus_bleu([[1, 2, 3, 4]], [[5, 6, 7, 8]]) == pytest.approx(1e-7)

    def test_brevity_penalty(self):
        """A correct half-length hypothesis scores 100 * e^-1"""
        from moelab.evaluation.metrics import corpus_bleu

        assert corpus_bleu([[1, 2, 3, 4]], [[1, 2, 3, 4, 5, 6, 7, 8]]) == pytest.approx(100 * math.exp(-1))

    def test_short_outputs_skip_missing_orders(self):
        from moelab.evaluation.metrics import corpus_bleu

        assert corpus_bleu([[1, 2]], [[1, 2]]) == pytest.approx(100.0)

    def test_empty_hypotheses(self):
        from moelab.evaluation.metrics import corpus_bleu

        assert corpus_bleu([[]], [[1, 2]]) == 0.0

    def test_length_mismatch(self):
        from moelab.core.errors import ContractError
        from moelab.evaluation.metrics import corpus_bleu

        with pytest.raises(ContractError):
            corpus_bleu([[1]], [[1], [2]])


class TestAccuracy:
    """Tests for accuracies and token ranges"""

    def test_sequence_accuracy(self):
        from moelab.evaluation.metrics import sequence_accuracy

        assert sequence_accuracy([[1, 2], [3]], [[1, 2], [4]]) == 0.5
        assert math.isnan(sequence_accuracy([], []))

    def test_token_accuracy_bounds(self, tiny_model, dataset):
        from moelab.evaluation.metrics import token_accuracy

        value = token_accuracy(tiny_model, dataset.split("test")[1])

        assert 0.0 <= value <= 1.0

    def test_empty_restriction_is_nan(self, tiny_model, dataset):
        from moelab.evaluation.metrics import token_accuracy

        assert math.isnan(token_accuracy(tiny_model, dataset.split("test")[1], restrict_to=set()))

    def test_token_ranges(self, schema):
        from moelab.evaluation.metrics import shared_range, uncovered_range

        assert shared_range(schema) == set(schema.task(0).shared)
        assert uncovered_range(schema, schema.unseen_ids[0])
        assert uncovered_range(schema, "beta") == set()

    def test_score_row(self, tiny_model, dataset, schema):
        from moelab.evaluation.metrics import score_testset

        score = score_testset(tiny_model, dataset.split("test")[2], domain=2, label=0)

        assert score.domain == "beta"
        assert score.label == "generic"
        assert score.examples == 8
        assert 0.0 <= score.bleu <= 100.0
        assert math.isnan(score.uncovered_accuracy)

    def test_empty_testset(self, tiny_model):
        from moelab.core.errors import ContractError
        from moelab.evaluation.metrics import score_testset

        with pytest.raises(ContractError):
            score_testset(tiny_model, [], domain=1, label=1)


# =============================================================================
# Greedy Decoding
# =============================================================================

class TestGreedyDecode:
    """Tests for greedy decoding"""

    def test_stops_at_eos_and_excludes_it(self):
        from moelab.evaluation.decoding import greedy_decode

        model = ScriptedModel([7, 8, 2])

        assert greedy_decode(model, [7, 2], 1) == [7, 8]
        assert len(model.prefixes) == 3

    def test_stops_at_max_len(self):
        from moelab.evaluation.decoding import greedy_decode

        assert greedy_decode(ScriptedModel([9]), [7, 2], 1, max_len=5) == [9] * 5

    def test_default_max_len(self):
        from moelab.evaluation.decoding import default_max_len, greedy_decode

        assert default_max_len([[7, 8, 2]]) == 7
        assert len(greedy_decode(ScriptedModel([9]), [7, 8, 2], 1)) == 7

    def test_ties_choose_lowest_id(self):
        from moelab.evaluation.decoding import greedy_decode_batch

        class Tied(ScriptedModel):
            def next_token_logits(self, state, prefix):
                logits = np.zeros((prefix.shape[0], self.vocab_size))
                logits[:, [5, 6]] = 1.0
                if prefix.shape[1] > 1:
                    logits[:, 2] = 2.0
                return logits

        outputs, _ = greedy_decode_batch(Tied([0]), [[7, 2]], [1])

        assert outputs == [[5]]

    def test_finished_rows_feed_pad(self):
        from moelab.evaluation.decoding import greedy_decode_batch

        class Staggered(ScriptedModel):
            def next_token_logits(self, state, prefix):
                self.prefixes.append(prefix.copy())
                logits = np.zeros((prefix.shape[0], self.vocab_size))
                logits[0, 2 if prefix.shape[1] >= 2 else 7] = 1.0
                logits[1, 2 if prefix.shape[1] >= 3 else 8] = 1.0
                return logits

        model = Staggered([0])
        outputs, _ = greedy_decode_batch(model, [[7, 2], [8, 2]], [1, 1])

        assert outputs == [[7], [8, 8]]
        assert model.prefixes[-1].tolist() == [[1, 7, 0], [1, 8, 8]]

    def test_label_count_mismatch(self):
        from moelab.core.errors import ContractError
        from moelab.evaluation.decoding import greedy_decode_batch

        with pytest.raises(ContractError):
            greedy_decode_batch(ScriptedModel([2]), [[7, 2]], [1, 2])

    def test_chunking_and_workers_agree(self, tiny_model, dataset):
        from moelab.evaluation.decoding import decode_corpus

        examples = dataset.split("test")[1]
        sources = [e.source for e in examples]
        domains = [1] * len(examples)

        single, _ = decode_corpus(tiny_model, sources, domains, batch_size=len(examples))
        chunked, trace = decode_corpus(tiny_model, sources, domains, batch_size=3, trace=True, workers=2)

        assert chunked == single
        assert trace.layers == ["encoder.2", "decoder.2"]
        assert set(trace.layer("encoder.2").examples.tolist()) == set(range(len(examples)))


# =============================================================================
# Wrong-Label Robustness
# =============================================================================

class TestRobustness:
    """Tests for wrong-label matrices"""

    def test_summary_statistics(self):
        from moelab.evaluation.analysis import RobustnessMatrix

        matrix = RobustnessMatrix(["alpha", "beta"], [[0.9, 0.3], [0.2, 0.8]])

        np.testing.assert_allclose(matrix.diagonal, [0.9, 0.8])
        np.testing.assert_allclose(matrix.off_diagonal_means(), [0.3, 0.2])
        assert matrix.degradation == pytest.approx(0.6)

    def test_scorer_grid(self, schema, dataset):
        from moelab.evaluation.analysis import wrong_label_matrix
        from moelab.model.transformer import build_model

        model = build_model(make_model_config(conditioning="tags"), schema)
        testsets = {d: dataset.split("test")[d] for d in schema.seen_ids}
        calls = []

        def scorer(examples, label):
            calls.append((examples[0].true_domain, label))
            return 1.0 if label == examples[0].true_domain else 0.0

        matrix = wrong_label_matrix(model, testsets, schema.seen_ids, scorer=scorer, seed=5)

        np.testing.assert_array_equal(matrix.values, np.eye(2))
        assert matrix.domains == ["alpha", "beta"]
        assert matrix.degradation == 1.0
        assert calls == [(1, 1), (1, 2), (2, 1), (2, 2)]

    def test_unconditioned_model_rejected(self, tiny_model, dataset, schema):
        from moelab.core.errors import ContractError
        from moelab.evaluation.analysis import wrong_label_matrix

        with pytest.raises(ContractError):
            wrong_label_matrix(tiny_model, {1: dataset.split("test")[1]}, [1])

    def test_writers(self, tmp_path):
        import json

        from moelab.evaluation.analysis import RobustnessMatrix

        matrix = RobustnessMatrix(["alpha", "beta"], [[1.0, 0.5], [0.25, 1.0]], model_id="m1")
        matrix.write_csv(tmp_path / "m.csv")
        matrix.write_long_csv(tmp_path / "m.long.csv")
        matrix.write_json(tmp_path / "m.json")

        assert (tmp_path / "m.csv").read_text().splitlines() == [
            "true_domain\\label,alpha,beta", "alpha,1.0,0.5", "beta,0.25,1.0",
        ]
        assert len((tmp_path / "m.long.csv").read_text().splitlines()) == 5
        assert json.loads((tmp_path / "m.json").read_text())["degradation"] == pytest.approx(0.625)


# =============================================================================
# Expert Activity
# =============================================================================

class TestActivity:
    """Tests for top-1 activity and similarity"""

    def test_hand_profile(self):
        """First choices [0, 0, 1, 2] over 4 experts"""
        from moelab.evaluation.analysis import top1_activity
        from moelab.moe import GateTrace

        trace = GateTrace()
        trace.add(layer_trace("encoder.2", [0, 0, 1, 2]))
        profile = top1_activity(trace)

        np.testing.assert_allclose(profile.values, [0.5, 0.25, 0.25, 0.0])
        assert profile.tokens == {"encoder.2": 4}

    def test_blocks_sum_to_one_per_layer(self):
        from moelab.evaluation.analysis import top1_activity
        from moelab.moe import GateTrace

        trace = GateTrace()
        trace.add(layer_trace("decoder.2", [3, 3, 1]))
        trace.add(layer_trace("encoder.2", [0, 1]))
        profile = top1_activity(trace)

        assert profile.layers == ["encoder.2", "decoder.2"]
        assert len(profile) == 8
        assert profile.block("decoder.2").sum() == pytest.approx(1.0)
        np.testing.assert_allclose(profile.for_stack("encoder").values, [0.5, 0.5, 0.0, 0.0])

    def test_empty_trace(self):
        from moelab.core.errors import ContractError
        from moelab.evaluation.analysis import top1_activity
        from moelab.moe import GateTrace

        with pytest.raises(ContractError):
            top1_activity(GateTrace())

    def test_cosine_hand_value(self):
        from moelab.evaluation.analysis import expert_similarity

        assert expert_similarity(np.array([1.0, 1.0, 0, 0]), np.array([0, 1.0, 1.0, 0])) == pytest.approx(0.5)

    def test_identical_profiles_exactly_one(self):
        from moelab.evaluation.analysis import expert_similarity

        u = np.array([0.1, 0.7, 0.2])

        assert expert_similarity(u, u.copy()) == 1.0

    def test_zero_profile_rejected(self):
        from moelab.core.errors import ContractError
        from moelab.evaluation.analysis import expert_similarity

        with pytest.raises(ContractError):
            expert_similarity(np.zeros(3), np.ones(3))

    def test_label_sweep_without_conditioning(self, tiny_model, dataset, schema):
        """An unconditioned model routes identically under every label"""
        from moelab.evaluation.analysis import label_sweep_similarity

        matrix = label_sweep_similarity(tiny_model, dataset.split("test")[1][:4], [0, 1, 2])

        assert matrix.names == ["generic", "alpha", "beta"]
        np.testing.assert_array_equal(matrix.values, np.ones((3, 3)))

    def test_dataset_similarity_symmetric(self, tiny_model, dataset, tmp_path):
        from moelab.evaluation.analysis import dataset_similarity, write_profiles_csv

        matrix = dataset_similarity(tiny_model, {"alpha": dataset.split("test")[1][:4],
                                                 "beta": dataset.split("test")[2][:4]})

        np.testing.assert_array_equal(matrix.values, matrix.values.T)
        assert np.all((matrix.values >= 0) & (matrix.values <= 1))
        write_profiles_csv(tmp_path / "profiles.csv", matrix.profiles)
        assert (tmp_path / "profiles.csv").read_text().splitlines()[0] == "dataset,layer,expert,activity"

    def test_dense_model_rejected(self, schema, dataset):
        from moelab.core.errors import ContractError
        from moelab.evaluation.analysis import label_sweep_similarity
        from moelab.model.transformer import build_model

        with pytest.raises(ContractError):
            label_sweep_similarity(build_model(make_model_config(), schema), dataset.split("test")[1], [0, 1])
