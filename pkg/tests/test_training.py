import dataclasses
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transformer_tts import tensor as T
from transformer_tts.data import (
    DataError, ManifestEntry, batching_sweep, build_dynamic_batches, collate, plan_violations,
    read_manifest, write_manifest)
from transformer_tts.model import ModelConfig, TTSModel
from transformer_tts.tensor import ContractError, Tensor
from transformer_tts.training import (
    Adam, NumericalError, TrainConfig, Trainer, clip_grad_norm, compute_losses,
    evaluate_mel_mse, mel_loss, noam_lr, read_metrics_log, train_step, weighted_stop_bce)


def plain_bce(logits, targets):
    # textbook form, written independently of the package's stable version
    p = 1.0 / (1.0 + np.exp(-logits))
    return float(np.mean(-(targets * np.log(p) + (1 - targets) * np.log(1 - p))))


# -- stop loss ----------------------------------------------------------------

def test_stop_bce_closed_forms():
    loss = weighted_stop_bce(Tensor(np.zeros(1)), np.ones(1), 5.0).item()
    assert abs(loss - 5 * math.log(2)) < 1e-12
    assert abs(loss - 3.46574) < 1e-5
    frames = weighted_stop_bce(Tensor(np.zeros(4)), np.array([0, 0, 0, 1.0]), 5.0).item()
    assert abs(frames - (3 * math.log(2) + 5 * math.log(2)) / 4) < 1e-12


def test_stop_bce_negative_frame_is_ln2():
    frame = T.bce_with_logits(Tensor(np.zeros(1)), np.zeros(1), 5.0).item()
    assert abs(frame - math.log(2)) < 1e-12
    assert abs(frame - 0.69315) < 1e-5
    pair = weighted_stop_bce(Tensor(np.zeros(2)), np.array([0.0, 1.0]), 5.0).item()
    assert abs(2 * pair - 5 * math.log(2) - math.log(2)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**16))
def test_stop_bce_unit_weight_is_plain_bce(n, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 3, n)
    targets = np.zeros(n)
    targets[-1] = 1
    got = weighted_stop_bce(Tensor(logits), targets, 1.0).item()
    assert abs(got - plain_bce(logits, targets)) < 1e-12


def test_stop_bce_needs_positive_frame():
    with pytest.raises(DataError):
        weighted_stop_bce(Tensor(np.zeros((2, 3))), np.array([[0, 0, 1.0], [0, 0, 0]]), 6.5)


# -- mel loss -----------------------------------------------------------------

def test_mel_loss_examples():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((2, 5, 3))
    assert mel_loss(Tensor(y), Tensor(y), y).item() == 0.0
    ones = Tensor(np.ones((2, 5, 3)))
    assert mel_loss(ones, ones, np.zeros((2, 5, 3))).item() == 2.0


def test_mel_loss_padding_excluded():
    rng = np.random.default_rng(1)
    a, b, y = (rng.standard_normal((1, 4, 3)) for _ in range(3))
    base = mel_loss(Tensor(a), Tensor(b), y).item()
    pad = lambda x: np.concatenate([x, rng.standard_normal((1, 3, 3)) * 10], axis=1)
    mask = np.array([[True] * 4 + [False] * 3])
    padded = mel_loss(Tensor(pad(a)), Tensor(pad(b)), pad(y), mask).item()
    assert abs(padded - base) < 1e-12


def test_mel_loss_all_masked():
    z = Tensor(np.zeros((1, 3, 2)))
    with pytest.raises(ContractError):
        mel_loss(z, z, np.zeros((1, 3, 2)), np.zeros((1, 3), dtype=bool))


def test_mel_loss_shape_mismatch():
    with pytest.raises(T.DimensionError):
        mel_loss(Tensor(np.zeros((1, 3, 2))), Tensor(np.zeros((1, 3, 2))), np.zeros((1, 4, 2)))


# -- schedule / optimizer ------------------------------------------------------

def test_noam_at_warmup():
    for d, w, s in [(512, 4000, 1.0), (128, 400, 0.5), (16, 1, 2.0)]:
        assert abs(noam_lr(w, d, w, s) - s * d ** -0.5 * w ** -0.5) < 1e-15


def test_noam_shape():
    lrs = [noam_lr(s, 128, 100) for s in range(1, 400)]
    peak = int(np.argmax(lrs)) + 1
    assert peak == 100
    assert all(a < b for a, b in zip(lrs[:99], lrs[1:100]))
    assert all(a > b for a, b in zip(lrs[100:], lrs[101:]))


def test_clip_grad_norm():
    p = Tensor(np.zeros(4), requires_grad=True)
    p.grad = np.array([3.0, 4.0, 0.0, 0.0])
    assert clip_grad_norm([p], 1.0) == 5.0
    assert abs(np.linalg.norm(p.grad) - 1.0) < 1e-9


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([("p", p)])
    p.grad = np.array([0.5, -3.0])
    opt.step(0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-8)
    assert opt.m["p"].shape == opt.v["p"].shape == p.shape


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(stop_weight=0.5)
    with pytest.raises(ValueError):
        TrainConfig(warmup_steps=0)
    assert TrainConfig().stop_weight == 6.5


# -- batching -----------------------------------------------------------------

def oracle_greedy(lengths, budget):
    sizes, cur, total = [], 0, 0
    for n in sorted(lengths):
        if n > budget:
            sizes.append(1)
            continue
        if cur and total + n <= budget:
            cur, total = cur + 1, total + n
        else:
            if cur:
                sizes.append(cur)
            cur, total = 1, n
    if cur:
        sizes.append(cur)
    return sorted(sizes)


def test_ten_300_frame_utterances():
    manifest = [(f"u{i}", 300) for i in range(10)]
    plan = build_dynamic_batches(manifest, 1000)
    assert sorted(len(b.utt_ids) for b in plan) == [1, 3, 3, 3]
    assert sorted(len(b.utt_ids) for b in plan) == oracle_greedy([300] * 10, 1000)


def test_oversized_utterance_is_singleton(caplog):
    with caplog.at_level(logging.WARNING):
        plan = build_dynamic_batches([("long", 5000), ("a", 100)], 1000)
    assert ["long"] in [b.utt_ids for b in plan]
    assert plan.warnings and "long" in caplog.text


def test_empty_manifest():
    with pytest.raises(DataError):
        build_dynamic_batches([], 1000)


def test_padding_overhead():
    plan = build_dynamic_batches([("a", 100), ("b", 120)], 1000)
    (b,) = plan.batches
    assert b.padding_overhead == 20


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 1500), min_size=1, max_size=40), st.integers(50, 4000),
       st.integers(0, 1000))
def test_plan_invariants(lengths, budget, seed):
    manifest = [(f"u{i}", n) for i, n in enumerate(lengths)]
    plan = build_dynamic_batches(manifest, budget, seed, log_warnings=False)
    assert plan_violations(plan, manifest) == []
    assert sorted(len(b.utt_ids) for b in plan) == oracle_greedy(lengths, budget)


def test_batching_sweep_clean():
    assert batching_sweep(cases=100) == []


def test_manifest_roundtrip(tmp_path):
    entries = [ManifestEntry("u1", "a.wav", "hello there", 42)]
    write_manifest(tmp_path / "m.tsv", entries)
    assert read_manifest(tmp_path / "m.tsv") == entries
    (tmp_path / "bad.tsv").write_text("u1\ta.wav\thi\tmany\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "bad.tsv")


# -- training step ------------------------------------------------------------

def _tiny_batch(cfg, seed=0, n=3):
    rng = np.random.default_rng(seed)
    ids = [rng.integers(1, cfg.vocab_size, int(rng.integers(4, 8))) for _ in range(n)]
    mels = [rng.standard_normal((int(rng.integers(5, 10)), cfg.n_mels)) * 0.5 for _ in range(n)]
    return collate([f"u{i}" for i in range(n)], ids, mels)


def test_descent_on_fixed_batch(tiny_config):
    cfg = dataclasses.replace(tiny_config, dropout=0.0, prenet_dropout=0.0, conv_dropout=0.0)
    model = TTSModel(cfg, seed=0)
    tcfg = TrainConfig(warmup_steps=1, lr_scale=0.02, grad_clip=0.0)
    opt = Adam(model.named_parameters())
    batch = _tiny_batch(cfg)

    def current_loss():
        model.train()
        return compute_losses(model, batch, tcfg)[0].item()

    losses = [current_loss()]
    for _ in range(20):
        train_step(model, batch, opt, tcfg)
        losses.append(current_loss())
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_toy_preset_loss_falls_over_50_steps():
    cfg = ModelConfig.toy(vocab_size=30, n_mels=20)
    model = TTSModel(cfg, seed=0)
    tcfg = TrainConfig.toy()
    opt = Adam(model.named_parameters())
    batch = _tiny_batch(cfg, seed=3, n=2)
    first = train_step(model, batch, opt, tcfg)["loss"]
    for _ in range(49):
        last = train_step(model, batch, opt, tcfg)["loss"]
    assert last < 0.5 * first


def _run(cfg, utterances, steps, seed=0):
    model = TTSModel(cfg, seed=seed)
    trainer = Trainer(model, utterances, TrainConfig.toy(seed=seed, max_frames=20))
    return trainer.run(steps), model


def _tiny_utterances(cfg, n=4, seed=0):
    rng = np.random.default_rng(seed)
    return {f"u{i}": (rng.integers(1, cfg.vocab_size, 5), rng.standard_normal((6 + i, cfg.n_mels)))
            for i in range(n)}


def test_equal_seeds_bit_identical(tiny_config):
    utts = _tiny_utterances(tiny_config)
    a, ma = _run(tiny_config, utts, 6)
    b, mb = _run(tiny_config, utts, 6)
    strip = lambda h: [{k: v for k, v in m.items() if k != "step_seconds"} for m in h]
    assert strip(a) == strip(b)
    for (n, p), (_, q) in zip(ma.named_parameters(), mb.named_parameters()):
        assert np.array_equal(p.data, q.data), n


def test_trainer_walks_the_plan(tiny_config):
    utts = _tiny_utterances(tiny_config)
    trainer = Trainer(TTSModel(tiny_config), utts, TrainConfig.toy(max_frames=20))
    epoch0 = trainer.plan_for_epoch(0)
    seen = [u for s in range(1, len(epoch0) + 1) for u in trainer.batch_schedule(s).utt_ids]
    assert sorted(seen) == sorted(utts)


def test_trainer_writes_metrics_log(tiny_config, tmp_path):
    utts = _tiny_utterances(tiny_config)
    trainer = Trainer(TTSModel(tiny_config), utts, TrainConfig.toy(max_frames=20))
    trainer.run(3, log_path=tmp_path / "metrics.tsv")
    rows = read_metrics_log(tmp_path / "metrics.tsv")
    assert [r["step"] for r in rows] == [1, 2, 3]
    assert all(np.isfinite(r["mel_loss"]) for r in rows)


def test_non_finite_loss_aborts_with_diagnostics(tiny_config):
    model = TTSModel(tiny_config)
    batch = _tiny_batch(tiny_config)
    batch.mel[0, 0, 0] = np.nan
    with pytest.raises(NumericalError) as info:
        train_step(model, batch, Adam(model.named_parameters()), TrainConfig())
    msg = str(info.value)
    assert "step 1" in msg and "u0" in msg and "alpha_enc" in msg


def test_empty_trainer():
    with pytest.raises(DataError):
        Trainer(TTSModel(ModelConfig.toy(d_model=16, n_heads=2)), {}, TrainConfig())


def test_evaluate_mel_mse(tiny_config):
    model = TTSModel(tiny_config)
    utts = _tiny_utterances(tiny_config)
    res = evaluate_mel_mse(model, utts)
    assert res["mse_after"] > 0 and res["mse_before"] > 0
