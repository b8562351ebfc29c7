"""Verbalizer read-out and class prediction."""

import numpy as np
import pytest

from unitprompt.autodiff import Tensor
from unitprompt.errors import ModelError
from unitprompt.prompts import TaskSpec
from unitprompt.ulm import ForwardOutput, ULMConfig
from unitprompt.verbalizer import Verbalizer, classify, init_verbalizer, predict_class

CFG = ULMConfig(n_layers=1, n_heads=1, d_model=4, d_ffn=8, vocab_size=6, max_positions=32)
TASK = TaskSpec("d", "l", ("neg", "pos"))


def fake_output(logits: np.ndarray) -> ForwardOutput:
    return ForwardOutput(hidden_states=Tensor(np.zeros((logits.shape[-2], 4))),
                         next_unit_logits=Tensor(logits), input_prefix_len=0)


class TestClassify:
    def test_zero_weight_gives_bias(self):
        vb = Verbalizer(Tensor(np.zeros((2, 6))), Tensor(np.array([0.3, -0.2])), "d:l")
        rng = np.random.default_rng(0)
        out = fake_output(rng.normal(size=(5, 6)))
        np.testing.assert_allclose(classify(out, vb).data, [0.3, -0.2])

    def test_selector_row_picks_unit_logit(self):
        weight = np.zeros((2, 6))
        weight[0, 3] = 1.0  # class 0 reads unit-3 logit
        vb = Verbalizer(Tensor(weight), Tensor(np.zeros(2)), "d:l")
        logits = np.random.default_rng(1).normal(size=(4, 6))
        got = classify(fake_output(logits), vb).data
        assert got[0] == logits[-1, 3]
        assert got[1] == 0.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        weight, bias = rng.normal(size=(3, 6)), rng.normal(size=3)
        logits = rng.normal(size=(7, 6))
        vb = Verbalizer(Tensor(weight), Tensor(bias), "d:l")
        got = classify(fake_output(logits), vb).data
        expected = np.zeros(3)
        for c in range(3):
            expected[c] = bias[c]
            for v in range(6):
                expected[c] += weight[c, v] * logits[-1, v]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_batched_input(self):
        rng = np.random.default_rng(3)
        weight, bias = rng.normal(size=(2, 6)), rng.normal(size=2)
        vb = Verbalizer(Tensor(weight), Tensor(bias), "d:l")
        logits = rng.normal(size=(4, 5, 6))
        got = classify(fake_output(logits), vb).data
        assert got.shape == (4, 2)
        for i in range(4):
            np.testing.assert_allclose(got[i], weight @ logits[i, -1] + bias, atol=1e-12)

    def test_linear_in_input_with_zero_bias(self):
        rng = np.random.default_rng(4)
        weight = rng.normal(size=(2, 6))
        vb = Verbalizer(Tensor(weight), Tensor(np.zeros(2)), "d:l")
        logits = rng.normal(size=(3, 6))
        one = classify(fake_output(logits), vb).data
        scaled = classify(fake_output(2.5 * logits), vb).data
        np.testing.assert_allclose(scaled, 2.5 * one, atol=1e-12)

    def test_dimension_mismatch(self):
        vb = Verbalizer(Tensor(np.zeros((2, 9))), Tensor(np.zeros(2)), "d:l")
        with pytest.raises(ModelError, match="dimension mismatch"):
            classify(fake_output(np.zeros((3, 6))), vb)


class TestPredictClass:
    def test_uniform_ties_break_low(self):
        idx, probs = predict_class(np.array([0.0, 0.0]))
        assert idx == 0
        np.testing.assert_allclose(probs, [0.5, 0.5])

    def test_confident_prediction(self):
        idx, probs = predict_class(np.array([10.0, -10.0]))
        assert idx == 0
        assert probs[0] >= 0.9999

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=4)
        idx_a, probs_a = predict_class(logits)
        idx_b, probs_b = predict_class(logits + 123.4)
        assert idx_a == idx_b
        np.testing.assert_allclose(probs_a, probs_b, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            _, probs = predict_class(rng.normal(0, 5, size=rng.integers(2, 8)))
            assert abs(probs.sum() - 1.0) <= 1e-6

    def test_non_finite_rejected(self):
        with pytest.raises(ModelError, match="finite"):
            predict_class(np.array([np.inf, 0.0]))


def test_init_verbalizer_shapes_and_determinism():
    a = init_verbalizer(TASK, CFG, seed=3)
    b = init_verbalizer(TASK, CFG, seed=3)
    assert a.weight.shape == (2, 6) and a.bias.shape == (2,)
    assert a.task_id == "d:l"
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    assert np.all(a.bias.data == 0.0)
