import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transformer_tts import tensor as T
from transformer_tts.layers import Linear
from transformer_tts.model import (
    ModelConfig, MultiHeadAttention, TTSModel, causal_mask, forward_teacher_forced,
    scaled_pe_add, shift_right, triangle_pe)
from transformer_tts.tensor import ConfigError, ContractError, Tensor, no_grad
from transformer_tts.model import LengthError


def _model(cfg, seed=0):
    return TTSModel(cfg, seed=seed).eval()


def _random_io(cfg, rng, n_tok=7, n_frames=9, batch=None):
    shape = (n_tok,) if batch is None else (batch, n_tok)
    ids = rng.integers(1, cfg.vocab_size, shape)
    mel = rng.standard_normal(((n_frames, cfg.n_mels) if batch is None
                               else (batch, n_frames, cfg.n_mels)))
    return ids, mel


# -- positional encoding ------------------------------------------------------

def test_pe_closed_form():
    pe = triangle_pe(50, 16).data
    for pos in range(50):
        for i in range(8):
            angle = pos / 10000 ** (2 * i / 16)
            assert abs(pe[pos, 2 * i] - math.sin(angle)) < 1e-12
            assert abs(pe[pos, 2 * i + 1] - math.cos(angle)) < 1e-12
    assert np.all(np.abs(pe) <= 1.0)


def test_pe_origin_and_sin1():
    pe = triangle_pe(2, 512).data
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    assert abs(pe[1, 0] - 0.841471) < 1e-6


def test_pe_periods_grow_with_channel():
    d = 32
    periods = [2 * math.pi * 10000 ** (2 * i / d) for i in range(d // 2)]
    assert all(a < b for a, b in zip(periods, periods[1:]))
    pe = triangle_pe(200, d).data
    # zero crossings thin out as the channel index grows
    crossings = [np.sum(np.diff(np.sign(pe[:, 2 * i])) != 0) for i in range(d // 2)]
    assert all(a >= b for a, b in zip(crossings, crossings[1:]))


def test_pe_odd_dim_rejected():
    with pytest.raises(ConfigError):
        triangle_pe(4, 7)


def test_scaled_pe_alpha_zero_and_zero_input():
    rng = np.random.default_rng(0)
    table = triangle_pe(20, 8)
    x = rng.standard_normal((5, 8))
    out = scaled_pe_add(Tensor(x), Tensor(np.asarray(0.0)), table).data
    np.testing.assert_array_equal(out, x)
    out = scaled_pe_add(Tensor(np.zeros((5, 8))), Tensor(np.asarray(1.0)), table).data
    np.testing.assert_array_equal(out, table.data[:5])


def test_scaled_pe_alpha_gradient_matches_finite_difference():
    rng = np.random.default_rng(1)
    table = triangle_pe(20, 8)
    x = Tensor(rng.standard_normal((6, 8)))
    alpha = Tensor(np.asarray(0.7), requires_grad=True)
    scaled_pe_add(x, alpha, table).sum().backward()
    h = 1e-5
    f = lambda a: scaled_pe_add(x, Tensor(np.asarray(a)), table).data.sum()
    numeric = (f(0.7 + h) - f(0.7 - h)) / (2 * h)
    assert abs(alpha.grad - numeric) < 1e-6
    assert abs(alpha.grad - table.data[:6].sum()) < 1e-9


def test_scaled_pe_too_long():
    with pytest.raises(LengthError):
        scaled_pe_add(Tensor(np.zeros((30, 8))), Tensor(np.asarray(1.0)), triangle_pe(20, 8))


# -- attention ----------------------------------------------------------------

def test_attention_single_key_returns_value_projection():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(8, 2, rng)
    v = Tensor(rng.standard_normal((1, 8)))
    for _ in range(3):
        q = Tensor(rng.standard_normal((4, 8)))
        out, w = mha(q, v, v)
        expected = mha.w_o(mha.w_v(v)).data
        np.testing.assert_allclose(out.data, np.repeat(expected, 4, axis=0), atol=1e-12)
        np.testing.assert_array_equal(w, 1.0)


def test_attention_mask_leaves_one_key():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.standard_normal((5, 8)))
    mask = np.zeros((5, 5), dtype=bool)
    mask[:, 3] = True
    _, w = mha(x, x, x, mask)
    assert np.all(np.abs(w[..., 3] - 1.0) < 1e-9)


def test_attention_two_by_two_hand_computed():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(2, 1, rng)
    for lin in (mha.w_q, mha.w_k, mha.w_v, mha.w_o):
        lin.weight.data[...] = np.eye(2)
        lin.bias.data[...] = 0.0
    q = np.array([[2.0, 0.0], [0.0, 1.0]])
    k = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, w = mha(Tensor(q), Tensor(k), Tensor(k))
    scores = q @ k.T / math.sqrt(2)
    expected = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w[0, 0], expected, atol=1e-12)


def test_attention_indivisible_heads():
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 3, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ModelConfig.toy(d_model=10, n_heads=3)


# -- pre-nets -----------------------------------------------------------------

def test_encoder_prenet_shapes_and_recentering(tiny_config):
    model = _model(tiny_config)
    ids = np.array([[1, 2, 3, 4]])
    assert model.encoder_prenet(ids).shape == (1, 4, tiny_config.d_model)
    proj = Linear(3, 3, np.random.default_rng(0))
    proj.weight.data[...] = np.eye(3)
    proj.bias.data[...] = -2.5
    out = proj(Tensor(np.full((4, 3), 2.5))).data
    np.testing.assert_array_equal(out, 0.0)


def test_no_recenter_ablation_skips_projection(tiny_config):
    cfg = dataclasses.replace(tiny_config, enc_recenter=False, enc_conv_channels=16)
    model = _model(cfg)
    assert model.encoder_prenet.projection is None
    assert not any(n.startswith("encoder_prenet.projection") for n, _ in model.named_parameters())
    with pytest.raises(ConfigError):
        dataclasses.replace(tiny_config, enc_recenter=False)  # 8 channels != d_model 16


def test_decoder_prenet_zero_in_zero_out(tiny_config):
    model = _model(tiny_config)
    out = model.decoder_prenet(Tensor(np.zeros((1, 5, tiny_config.n_mels))))
    assert out.shape == (1, 5, tiny_config.d_model)
    np.testing.assert_array_equal(out.data, 0.0)


def test_decoder_prenet_final_relu_ablation(tiny_config):
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 6, tiny_config.n_mels)))
    plain = _model(tiny_config).decoder_prenet(x).data
    relu = _model(dataclasses.replace(tiny_config, dec_prenet_final_relu=True)).decoder_prenet(x).data
    assert np.any(plain < 0)
    np.testing.assert_array_equal(relu, np.maximum(plain, 0.0))


# -- encoder / decoder --------------------------------------------------------

def test_encoder_shape_and_rows_sum(tiny_config):
    model = _model(tiny_config)
    mem, weights = model.encode(np.array([[1, 2, 3, 4, 5]]))
    assert mem.shape == (1, 5, tiny_config.d_model)
    for w in weights:
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16))
def test_encoder_permutation_equivariant_without_pe(seed):
    cfg = ModelConfig.toy(vocab_size=20, d_model=16, n_heads=2, ffn_hidden=32)
    model = _model(cfg, seed % 7)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 6, 16))
    perm = rng.permutation(6)
    with no_grad():
        out, _ = model.encoder(Tensor(x))
        out_p, _ = model.encoder(Tensor(x[:, perm]))
    np.testing.assert_allclose(out_p.data, out.data[:, perm], atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16), st.integers(0, 7))
def test_decoder_causality(seed, t):
    cfg = ModelConfig.toy(vocab_size=20, n_mels=6, d_model=16, n_heads=2, ffn_hidden=32,
                          prenet_hidden=8, enc_conv_channels=8, postnet_channels=8)
    model = _model(cfg)
    rng = np.random.default_rng(seed)
    ids, mel = _random_io(cfg, rng, n_frames=8)
    with no_grad():
        memory, _ = model.encode(ids[None])
        base, _, _ = model.decode(Tensor(mel[None]), memory, causal=causal_mask(8))
        pert = mel.copy()
        pert[t + 1:] += rng.standard_normal(pert[t + 1:].shape) * 3
        out, _, _ = model.decode(Tensor(pert[None]), memory, causal=causal_mask(8))
    assert np.max(np.abs(out.data[0, :t + 1] - base.data[0, :t + 1])) < 1e-10


def test_decoder_needs_mask_in_training(tiny_config):
    model = TTSModel(tiny_config).train()
    memory = Tensor(np.zeros((1, 3, tiny_config.d_model)))
    with pytest.raises(ContractError):
        model.decoder(Tensor(np.zeros((1, 2, tiny_config.d_model))), memory, None)


def test_single_frame_self_attention_is_identity_weighted(tiny_config):
    model = _model(tiny_config)
    ids, mel = _random_io(tiny_config, np.random.default_rng(0), n_frames=1)
    out = model.forward(ids[None], mel[None])
    for w in out.attention.decoder_self:
        np.testing.assert_array_equal(w, 1.0)


def test_cross_attention_rows_and_mask(tiny_config):
    model = _model(tiny_config)
    rng = np.random.default_rng(0)
    ids = np.array([[3, 4, 5, 6, 7], [3, 4, 5, 0, 0]])
    src_mask = np.array([[True] * 5, [True] * 3 + [False] * 2])
    mel = rng.standard_normal((2, 4, tiny_config.n_mels))
    out = model.forward(ids, mel, src_mask=src_mask)
    for w in out.attention.decoder_cross + out.attention.encoder + out.attention.decoder_self:
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)
    for w in out.attention.decoder_cross:
        assert np.all(w[1, :, :, 3:] < 1e-9)


# -- output heads -------------------------------------------------------------

def test_output_heads_zero_input(tiny_config):
    model = _model(tiny_config)
    model.mel_linear.bias.data[...] = 0.0
    model.stop_linear.bias.data[...] = 0.0
    before, stop, after = model.output_heads(Tensor(np.zeros((1, 4, tiny_config.d_model))))
    np.testing.assert_array_equal(before.data, 0.0)
    np.testing.assert_array_equal(stop.data, 0.0)
    assert before.shape == after.shape == (1, 4, tiny_config.n_mels)
    assert stop.shape == (1, 4)


def test_postnet_residual_contract(tiny_config):
    model = _model(tiny_config)
    h = Tensor(np.random.default_rng(0).standard_normal((1, 6, tiny_config.d_model)))
    before, _, after = model.output_heads(h)
    residual = model.postnet(before).data
    np.testing.assert_allclose(after.data - before.data, residual, atol=1e-14)


# -- end to end ---------------------------------------------------------------

def test_teacher_forced_frame_count_and_go_frame(tiny_config):
    model = _model(tiny_config)
    ids, mel = _random_io(tiny_config, np.random.default_rng(0), n_frames=11)
    out = forward_teacher_forced(model, ids, mel)
    assert out.mel_after.shape == (1, 11, tiny_config.n_mels)
    shifted = shift_right(mel)
    np.testing.assert_array_equal(shifted[0], 0.0)
    np.testing.assert_array_equal(shifted[1:], mel[:-1])


def test_teacher_forced_empty_inputs(tiny_config):
    model = _model(tiny_config)
    with pytest.raises(ContractError):
        forward_teacher_forced(model, np.array([], dtype=int), np.zeros((3, 6)))
    with pytest.raises(ContractError):
        forward_teacher_forced(model, np.array([1, 2]), np.zeros((0, 6)))


def test_batch_duplication_independence(tiny_config):
    model = _model(tiny_config)
    ids, mel = _random_io(tiny_config, np.random.default_rng(0))
    one = model.forward(ids[None], mel[None])
    two = model.forward(np.stack([ids, ids]), np.stack([mel, mel]))
    for a, b in ((one.mel_after, two.mel_after), (one.stop_logits, two.stop_logits)):
        np.testing.assert_allclose(b.data[0], a.data[0], atol=1e-12)
        np.testing.assert_allclose(b.data[1], a.data[0], atol=1e-12)


def test_gradients_reach_every_parameter(tiny_config):
    model = TTSModel(tiny_config, seed=0).train()
    model.reseed_dropout(1)
    rng = np.random.default_rng(0)
    ids = np.arange(1, tiny_config.vocab_size)[None]
    mel = rng.standard_normal((1, 12, tiny_config.n_mels))
    out = model.forward(ids, shift_right(mel))
    loss = T.masked_mse(out.mel_before, mel) + T.masked_mse(out.mel_after, mel) + \
        T.bce_with_logits(out.stop_logits, np.eye(1, 12, 11))
    loss.backward()
    for name, p in model.named_parameters():
        if name == "encoder_prenet.embedding.table":
            assert np.all(np.abs(p.grad[1:]).sum(axis=1) > 0), name
        else:
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name
    assert abs(model.enc_pe.alpha.grad) > 0 and abs(model.dec_pe.alpha.grad) > 0


def test_fixed_pe_mode_freezes_alpha(tiny_config):
    model = TTSModel(dataclasses.replace(tiny_config, pe_mode="fixed"))
    names = [n for n, _ in model.named_parameters()]
    assert "enc_pe.alpha" not in names and "dec_pe.alpha" not in names
    assert model.alpha_enc == model.alpha_dec == 1.0


def oracle_param_count(c: ModelConfig) -> int:
    d, h, f, k = c.d_model, c.prenet_hidden, c.ffn_hidden, c.enc_kernel
    ch = c.enc_conv_channels
    lin = lambda i, o: i * o + o
    n = c.vocab_size * ch + c.enc_conv_layers * (k * ch * ch + ch + 2 * ch)
    n += lin(ch, d) if c.enc_recenter else 0
    n += lin(c.n_mels, h) + lin(h, h) + lin(h, d)
    n += 2 if c.pe_mode == "scaled" else 0
    ffn = lin(d, f) + lin(f, d)
    n += c.n_layers_enc * (4 * lin(d, d) + 2 * 2 * d + ffn)
    n += c.n_layers_dec * (8 * lin(d, d) + 3 * 2 * d + ffn)
    n += lin(d, c.n_mels) + lin(d, 1)
    dims = [c.n_mels] + [c.postnet_channels] * (c.postnet_layers - 1) + [c.n_mels]
    n += sum(c.postnet_kernel * a * b + b + 2 * b for a, b in zip(dims, dims[1:]))
    return n


@pytest.mark.parametrize("cfg", [ModelConfig.toy(), ModelConfig.toy(n_layers_enc=3, n_heads=8),
                                 ModelConfig.toy(pe_mode="fixed"),
                                 ModelConfig.toy(enc_recenter=False)])
def test_param_count_pure_function_of_config(cfg):
    a, b = TTSModel(cfg, seed=0), TTSModel(cfg, seed=5)
    assert a.num_parameters() == b.num_parameters() == oracle_param_count(cfg)


def test_param_count_paper_preset():
    cfg = ModelConfig.paper()
    assert TTSModel(cfg).num_parameters() == oracle_param_count(cfg)
