import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transformer_tts.inference import (
    band_halfwidth, best_head_diagonality, causality_equivalence_check, default_max_steps,
    diagonality_score, incremental_decode, parallel_vs_sequential, synthesize)
from transformer_tts.model import ModelConfig, TTSModel, shift_right
from transformer_tts.tensor import ContractError


@pytest.fixture(scope="module")
def model(tiny_config_module):
    return TTSModel(tiny_config_module, seed=0)


@pytest.fixture(scope="module")
def tiny_config_module():
    return ModelConfig.toy(vocab_size=20, n_mels=6, d_model=16, n_heads=2, ffn_hidden=32,
                           prenet_hidden=8, enc_conv_channels=8, postnet_channels=8)


def test_max_steps_one(model):
    res = synthesize(model, [1, 2, 3], max_steps=1, threshold=0.999999)
    assert res.n_frames == 1
    assert res.mel.frames.shape == (1, 6)
    assert res.stop_probs.shape == (1,)


def test_max_steps_flagged(model):
    res = synthesize(model, [1, 2, 3], max_steps=4, threshold=0.999999)
    assert res.n_frames == 4 and not res.stopped_naturally


def test_stop_threshold_ends_generation(model):
    model.stop_linear.bias.data[...] += 50.0
    try:
        res = synthesize(model, [4, 5], max_steps=30)
    finally:
        model.stop_linear.bias.data[...] -= 50.0
    assert res.n_frames == 1 and res.stopped_naturally


def test_deterministic(model):
    a = synthesize(model, [3, 4, 5, 6], max_steps=8)
    b = synthesize(model, [3, 4, 5, 6], max_steps=8)
    np.testing.assert_array_equal(a.mel.frames, b.mel.frames)
    np.testing.assert_array_equal(a.stop_probs, b.stop_probs)


def test_invalid_inputs(model):
    with pytest.raises(ContractError):
        synthesize(model, [])
    with pytest.raises(ValueError):
        synthesize(model, [1], threshold=1.5)
    with pytest.raises(ValueError):
        synthesize(model, [1], max_steps=0)


def test_default_max_steps():
    assert default_max_steps(12) == 220


def test_attention_shapes_and_rows(model):
    res = synthesize(model, [1, 2, 3, 4, 5], max_steps=6, threshold=0.999999)
    for w in res.attention.decoder_cross:
        assert w.shape == (1, 2, 6, 5)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


def test_feedback_modes_share_first_frame(model):
    a = synthesize(model, [1, 2, 3], max_steps=5, threshold=0.999999, feedback="after")
    b = synthesize(model, [1, 2, 3], max_steps=5, threshold=0.999999, feedback="before")
    np.testing.assert_allclose(a.mel_before[0], b.mel_before[0], atol=1e-12)


def test_prefix_consistency(model):
    """Frames generated within a short budget are a prefix of a longer run."""
    short = synthesize(model, [2, 3, 4], max_steps=4, threshold=0.999999)
    long = synthesize(model, [2, 3, 4], max_steps=9, threshold=0.999999)
    np.testing.assert_allclose(long.mel_before[:4], short.mel_before, atol=1e-10)
    np.testing.assert_allclose(long.stop_probs[:4], short.stop_probs, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**16))
def test_parallel_equals_incremental(seed):
    cfg = ModelConfig.toy(vocab_size=20, n_mels=6, d_model=16, n_heads=2, ffn_hidden=32,
                          prenet_hidden=8, enc_conv_channels=8, postnet_channels=8)
    model = TTSModel(cfg, seed=seed % 5)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(1, 20, int(rng.integers(2, 10)))
    mel = rng.standard_normal((int(rng.integers(2, 16)), 6))
    assert causality_equivalence_check(model, tokens, mel) < 1e-5


def test_incremental_decode_shapes(model):
    before, stops, after = incremental_decode(model, [1, 2], shift_right(np.ones((5, 6))))
    assert before.shape == after.shape == (5, 6) and stops.shape == (5,)


# -- diagonality --------------------------------------------------------------

def test_one_hot_diagonal_scores_one():
    tq, tk = 40, 10
    w = np.zeros((tq, tk))
    for t in range(tq):
        w[t, int(t * tk / tq)] = 1.0
    assert diagonality_score(w) == 1.0


@pytest.mark.parametrize("tq, tk", [(60, 12), (100, 30), (17, 50)])
def test_uniform_attention_band_fraction(tq, tk):
    w = np.full((tq, tk), 1.0 / tk)
    b = band_halfwidth(tk)
    expected = np.mean([
        sum(1 for k in range(tk) if abs(k - t * tk / tq) <= b) / tk for t in range(tq)])
    assert abs(diagonality_score(w) - expected) < 1e-12
    assert diagonality_score(w) <= (2 * b + 1) / tk + 1e-12


def test_anti_diagonal_scores_low():
    tq = tk = 30
    w = np.fliplr(np.eye(tq))
    assert diagonality_score(w) < 0.2


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.integers(0, 2**16))
def test_diagonality_in_unit_interval_and_renormalization_invariant(tq, tk, seed):
    rng = np.random.default_rng(seed)
    w = rng.random((tq, tk))
    w /= w.sum(axis=1, keepdims=True)
    s = diagonality_score(w)
    assert 0.0 <= s <= 1.0 + 1e-12
    again = w / w.sum(axis=1, keepdims=True)
    assert abs(diagonality_score(again) - s) < 1e-12


def test_best_head_requires_layer_and_head(model):
    res = synthesize(model, [1, 2, 3], max_steps=3, threshold=0.999999)
    with pytest.raises(ValueError):
        diagonality_score(res.attention)
    best = best_head_diagonality(res.attention)
    assert best == max(diagonality_score(res.attention, l, h)
                       for l in range(2) for h in range(2))


def test_parallel_vs_sequential_rows(model):
    rows = parallel_vs_sequential(model, [4, 8], n_tokens=5, reps=2)
    assert [r["T"] for r in rows] == [4, 8]
    assert all(r["parallel_seconds"] > 0 and r["sequential_seconds"] > 0 for r in rows)
