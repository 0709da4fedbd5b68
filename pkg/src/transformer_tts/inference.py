"""Autoregressive synthesis, alignment and causality diagnostics, timing harness."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .audio import MelSpectrogram
from .model import AttentionRecord, ModelConfig, TTSModel, shift_right
from .tensor import ContractError, Tensor, _sigmoid, no_grad

DEFAULT_THRESHOLD = 0.5


def default_max_steps(n_tokens: int) -> int:
    return 10 * n_tokens + 100


@dataclass
class SynthesisResult:
    mel: MelSpectrogram  # post-net refined frames
    mel_before: np.ndarray
    stop_probs: np.ndarray
    attention: AttentionRecord
    stopped_naturally: bool

    @property
    def n_frames(self) -> int:
        return self.mel.n_frames


def _token_ids(tokens) -> np.ndarray:
    ids = np.asarray(getattr(tokens, "ids", tokens), dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("synthesis needs a non-empty 1-D token sequence")
    return ids


def synthesize(model: TTSModel, tokens, threshold: float = DEFAULT_THRESHOLD,
               max_steps: int | None = None, feedback: str = "after") -> SynthesisResult:
    """Generate mel frames one at a time, each conditioned on every earlier frame.

    Decoding starts from the all-zero go frame. At every step the whole
    prefix of fed-back frames is run through the decoder pre-net and the
    masked decoder again (no key/value cache). With ``feedback="after"`` the
    post-net is applied to the predicted prefix and its newest refined frame
    is fed back; ``"before"`` feeds the raw projection instead. Generation
    ends once the stop probability reaches ``threshold`` or after
    ``max_steps`` frames; the post-net then refines the whole sequence.
    """
    ids = _token_ids(tokens)
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if feedback not in ("after", "before"):
        raise ValueError("feedback must be 'after' or 'before'")
    max_steps = default_max_steps(len(ids)) if max_steps is None else max_steps
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    model.eval()
    n_mels = model.config.n_mels
    with no_grad():
        memory, enc_w = model.encode(ids[None])
        inputs = np.zeros((1, 1, n_mels))
        befores, stops = [], []
        self_w = cross_w = None
        stopped = False
        for _ in range(max_steps):
            hidden, self_w, cross_w = model.decode(Tensor(inputs), memory)
            frame, stop = model.project(hidden[:, -1:])
            befores.append(frame.data[0, 0])
            stops.append(float(stop.data[0, 0]))
            if _sigmoid(np.asarray(stops[-1])) >= threshold:
                stopped = True
                break
            if feedback == "after":
                prefix = np.stack(befores)[None]
                frame = prefix[:, -1:] + model.postnet(Tensor(prefix)).data[:, -1:]
            else:
                frame = frame.data
            inputs = np.concatenate([inputs, frame], axis=1)
        mel_before = np.stack(befores)
        mel_after = mel_before + model.postnet(Tensor(mel_before[None])).data[0]
    record = AttentionRecord(enc_w, self_w, cross_w)
    return SynthesisResult(MelSpectrogram(mel_after), mel_before,
                           _sigmoid(np.asarray(stops)), record, stopped)


def incremental_decode(model: TTSModel, tokens, dec_in: np.ndarray):
    """Frame-by-frame decoding with fixed teacher inputs ``dec_in`` ``(T', n_mels)``.

    Returns ``(mel_before, stop_logits, mel_after)`` for a single utterance.
    """
    ids = _token_ids(tokens)
    dec_in = np.asarray(dec_in, dtype=np.float64)
    model.eval()
    with no_grad():
        memory, _ = model.encode(ids[None])
        befores, stops = [], []
        for t in range(1, dec_in.shape[0] + 1):
            hidden, _, _ = model.decode(Tensor(dec_in[None, :t]), memory)
            frame, stop = model.project(hidden[:, -1:])
            befores.append(frame.data[0, 0])
            stops.append(stop.data[0, 0])
        mel_before = np.stack(befores)
        mel_after = mel_before + model.postnet(Tensor(mel_before[None])).data[0]
    return mel_before, np.asarray(stops), mel_after


def causality_equivalence_check(model: TTSModel, tokens, target_mel) -> float:
    """Max |parallel - incremental| over mel predictions (before and after post-net)."""
    ids = _token_ids(tokens)
    target = np.asarray(getattr(target_mel, "frames", target_mel), dtype=np.float64)
    dec_in = shift_right(target)
    model.eval()
    with no_grad():
        out = model.forward(ids[None], dec_in[None])
    before, stops, after = incremental_decode(model, ids, dec_in)
    return float(max(np.max(np.abs(out.mel_before.data[0] - before)),
                     np.max(np.abs(out.mel_after.data[0] - after)),
                     np.max(np.abs(out.stop_logits.data[0] - stops))))


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def band_halfwidth(n_keys: int) -> int:
    return math.ceil(0.1 * n_keys)


def diagonality_score(attn, layer: int | None = None, head: int | None = None,
                      item: int = 0) -> float:
    """Mean attention mass inside a band around the straight alignment line.

    ``attn`` is either a ``(T', T)`` weight matrix or an
    :class:`AttentionRecord` (cross-attention of ``layer``/``head`` is used).
    Decoder step ``t`` is expected near key ``t * T / T'``; the band
    half-width is ``ceil(0.1 * T)`` keys.
    """
    if isinstance(attn, AttentionRecord):
        if layer is None or head is None:
            raise ValueError("layer and head are required with an AttentionRecord")
        weights = attn.cross(layer, head, item)
    else:
        weights = np.asarray(attn, dtype=np.float64)
    tq, tk = weights.shape
    b = band_halfwidth(tk)
    centre = np.arange(tq)[:, None] * tk / tq
    band = np.abs(np.arange(tk)[None, :] - centre) <= b
    return float(np.mean((weights * band).sum(axis=1)))


def best_head_diagonality(record: AttentionRecord, layers=(0, 1), item: int = 0) -> float:
    scores = [diagonality_score(record, l, h, item)
              for l in layers if l < len(record.decoder_cross)
              for h in range(record.decoder_cross[l].shape[1])]
    return max(scores)


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------

def _median_time(fn, reps: int, warmup: int = 2) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def _random_batch(cfg: ModelConfig, batch: int, n_tokens: int, n_frames: int, seed: int):
    from .data import collate

    rng = np.random.default_rng(seed)
    ids = [rng.integers(1, cfg.vocab_size, n_tokens) for _ in range(batch)]
    mels = [rng.standard_normal((n_frames, cfg.n_mels)) for _ in range(batch)]
    return collate([f"b{i}" for i in range(batch)], ids, mels)


def parallel_vs_sequential(model: TTSModel, t_values, n_tokens: int = 20, reps: int = 10,
                           seed: int = 0) -> list[dict]:
    """Median seconds for one parallel teacher-forced pass vs frame-by-frame emulation."""
    rows = []
    for steps in t_values:
        batch = _random_batch(model.config, 1, n_tokens, steps, seed)
        ids, dec_in = batch.ids[0], batch.dec_in[0]

        def parallel():
            with no_grad():
                model.forward(ids[None], dec_in[None])

        def sequential():
            incremental_decode(model, ids, dec_in)

        model.eval()
        rows.append({"T": int(steps),
                     "parallel_seconds": _median_time(parallel, reps),
                     "sequential_seconds": _median_time(sequential, max(3, reps // 3), 1)})
    return rows


def train_step_time(cfg: ModelConfig, batch_size: int = 4, n_tokens: int = 40,
                    n_frames: int = 160, reps: int = 10, seed: int = 0) -> float:
    """Median wall time of a full training step for ``cfg`` on a fixed random batch."""
    from .training import Adam, TrainConfig, train_step

    model = TTSModel(cfg, seed)
    tcfg = TrainConfig(max_frames=10 ** 6, seed=seed)
    batch = _random_batch(cfg, batch_size, n_tokens, n_frames, seed)
    opt = Adam(model.named_parameters())
    return _median_time(lambda: train_step(model, batch, opt, tcfg), reps)


def step_time_benchmark(base: ModelConfig, variants=((3, 8), (6, 8), (6, 4)), reps: int = 10,
                        **kwargs) -> list[dict]:
    """Per-configuration median step time for (layers, heads) variants of ``base``."""
    rows = []
    for layers, heads in variants:
        cfg = ModelConfig.from_dict({**base.to_dict(), "n_layers_enc": layers,
                                     "n_layers_dec": layers, "n_heads": heads})
        rows.append({"config": f"{layers}-layer/{heads}-head", "layers": layers,
                     "heads": heads, "median_seconds": train_step_time(cfg, reps=reps, **kwargs)})
    return rows
