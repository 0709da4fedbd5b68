"""Transformer TTS network: pre-nets, scaled positional encodings, encoder and
decoder stacks, mel/stop projections and the convolutional post-net."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import BatchNorm1d, Conv1d, Dropout, Embedding, LayerNorm, Linear, Module
from .tensor import ConfigError, ContractError, Tensor

MASK_PENALTY = -1e9


class LengthError(ValueError):
    """Raised when a sequence is longer than the positional table."""


@dataclass
class ModelConfig:
    vocab_size: int = 80
    n_mels: int = 80
    d_model: int = 512
    n_heads: int = 8
    n_layers_enc: int = 6
    n_layers_dec: int = 6
    ffn_hidden: int = 2048
    prenet_hidden: int = 256
    enc_conv_channels: int = 512
    enc_conv_layers: int = 3
    enc_kernel: int = 5
    postnet_channels: int = 512
    postnet_layers: int = 5
    postnet_kernel: int = 5
    dropout: float = 0.1
    prenet_dropout: float = 0.5
    conv_dropout: float = 0.1
    alpha_init: float = 1.0
    pe_mode: str = "scaled"  # "scaled" (trainable alpha) or "fixed" (alpha frozen)
    enc_recenter: bool = True  # final linear projection after the encoder conv stack
    dec_prenet_final_relu: bool = False  # ablation arm: ReLU after the final projection
    prenet_bias: bool = True
    max_positions: int = 2048
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("vocab_size", "n_mels", "d_model", "n_heads", "n_layers_enc",
                     "n_layers_dec", "ffn_hidden", "prenet_hidden", "enc_conv_channels",
                     "enc_conv_layers", "postnet_channels", "postnet_layers", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for the sinusoidal table")
        if self.enc_kernel % 2 == 0 or self.postnet_kernel % 2 == 0:
            raise ConfigError("convolution kernel widths must be odd")
        if self.pe_mode not in ("scaled", "fixed"):
            raise ConfigError(f"unknown pe_mode {self.pe_mode!r}")
        if not self.enc_recenter and self.enc_conv_channels != self.d_model:
            raise ConfigError("without re-centering the conv channels must equal d_model")

    @classmethod
    def paper(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(d_model=128, n_heads=4, n_layers_enc=2, n_layers_dec=2, ffn_hidden=512,
                    prenet_hidden=128, enc_conv_channels=128, postnet_channels=128)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------

def triangle_pe(max_pos: int, d_model: int) -> Tensor:
    """Sinusoidal table: sin on even channels, cos on odd, shape ``(max_pos, d_model)``."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    pos = np.arange(max_pos, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((max_pos, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return Tensor(pe)


def scaled_pe_add(x: Tensor, alpha: Tensor, pe_table: Tensor) -> Tensor:
    """``x + alpha * PE[:T]`` where ``T`` is the length of ``x`` along axis -2."""
    steps = x.shape[-2]
    if steps > pe_table.shape[0]:
        raise LengthError(f"sequence of {steps} steps exceeds positional table "
                          f"of {pe_table.shape[0]}")
    return x + T.mul(alpha, Tensor(pe_table.data[:steps]))


class ScaledPositionalEncoding(Module):
    def __init__(self, d_model: int, max_len: int, alpha_init: float = 1.0,
                 trainable: bool = True):
        self.table = triangle_pe(max_len, d_model)
        self.alpha = Tensor(np.asarray(alpha_init, dtype=np.float64), requires_grad=trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return scaled_pe_add(x, self.alpha, self.table)


# ---------------------------------------------------------------------------
# masks and attention
# ---------------------------------------------------------------------------

def causal_mask(steps: int) -> np.ndarray:
    """Boolean ``(steps, steps)``; position t may attend to positions <= t."""
    return np.tril(np.ones((steps, steps), dtype=bool))


def lengths_to_mask(lengths, max_len: int | None = None) -> np.ndarray:
    lengths = np.asarray(lengths)
    max_len = int(lengths.max()) if max_len is None else max_len
    return np.arange(max_len)[None, :] < lengths[:, None]


def _mask_bias(mask: np.ndarray | None) -> np.ndarray | None:
    if mask is None:
        return None
    return np.where(mask, 0.0, MASK_PENALTY)


class MultiHeadAttention(Module):
    """Scaled dot-product attention split over ``n_heads`` subspaces."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ConfigError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return x.reshape(B, L, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        """``mask`` is boolean (True = may attend), broadcastable to ``(B, Tq, Tk)``.

        Returns the attended output and the weights, shape ``(B, H, Tq, Tk)``.
        """
        squeeze = query.ndim == 2
        if squeeze:
            query, key, value = (t.reshape(1, *t.shape) for t in (query, key, value))
        B, Tq, _ = query.shape
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(key))
        v = self._split(self.w_v(value))
        scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / np.sqrt(self.d_head))
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            if m.ndim == 2:
                m = m[None]
            scores = scores + Tensor(_mask_bias(m)[:, None])
        weights = T.softmax_lastdim(scores)
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, Tq, self.n_heads * self.d_head)
        out = self.w_o(ctx)
        if squeeze:
            out = out.reshape(Tq, out.shape[-1])
        return out, weights.data


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


@dataclass
class AttentionRecord:
    """Attention weights per layer, each ``(B, H, Tq, Tk)``."""

    encoder: list[np.ndarray] = field(default_factory=list)
    decoder_self: list[np.ndarray] = field(default_factory=list)
    decoder_cross: list[np.ndarray] = field(default_factory=list)

    def cross(self, layer: int, head: int, item: int = 0) -> np.ndarray:
        return self.decoder_cross[layer][item, head]


# ---------------------------------------------------------------------------
# encoder / decoder stacks
# ---------------------------------------------------------------------------

class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_hidden, rng)
        self.norm2 = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.drop = Dropout(cfg.dropout, drop_rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> tuple[Tensor, np.ndarray]:
        h, w = self.self_attn(x, x, x, mask)
        x = self.norm1(x + self.drop(h))
        x = self.norm2(x + self.drop(self.ffn(x)))
        return x, w


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        self.layers = [EncoderLayer(cfg, rng, drop_rng) for _ in range(cfg.n_layers_enc)]

    def __call__(self, x: Tensor, src_mask: np.ndarray | None = None):
        """Unmasked self-attention over every valid position.

        ``src_mask`` is a ``(B, T)`` validity mask used only to hide padding keys.
        """
        key_mask = None if src_mask is None else src_mask[:, None, :]
        weights = []
        for layer in self.layers:
            x, w = layer(x, key_mask)
            weights.append(w)
        return x, weights


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_hidden, rng)
        self.norm3 = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.drop = Dropout(cfg.dropout, drop_rng)

    def __call__(self, y, memory, self_mask, memory_mask):
        h, ws = self.self_attn(y, y, y, self_mask)
        y = self.norm1(y + self.drop(h))
        h, wc = self.cross_attn(y, memory, memory, memory_mask)
        y = self.norm2(y + self.drop(h))
        y = self.norm3(y + self.drop(self.ffn(y)))
        return y, ws, wc


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        self.layers = [DecoderLayer(cfg, rng, drop_rng) for _ in range(cfg.n_layers_dec)]

    def __call__(self, y: Tensor, memory: Tensor, causal: np.ndarray | None,
                 src_mask: np.ndarray | None = None):
        """Masked self-attention, cross-attention over ``memory``, feed-forward.

        ``causal`` is the ``(T', T')`` lower-triangular mask; it is mandatory in
        training mode and defaults to :func:`causal_mask` in eval mode.
        """
        if causal is None:
            if self.training:
                raise ContractError("decoder needs a causal mask during training")
            causal = causal_mask(y.shape[-2])
        mem_mask = None if src_mask is None else src_mask[:, None, :]
        self_w, cross_w = [], []
        for layer in self.layers:
            y, ws, wc = layer(y, memory, causal, mem_mask)
            self_w.append(ws)
            cross_w.append(wc)
        return y, self_w, cross_w


# ---------------------------------------------------------------------------
# pre-nets and post-net
# ---------------------------------------------------------------------------

def _apply_mask(x: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return x
    return T.mul(x, Tensor(mask[..., None].astype(np.float64)))


class EncoderPrenet(Module):
    """Embedding -> conv/batch-norm/ReLU/dropout stack -> optional re-centering projection."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        ch = cfg.enc_conv_channels
        self.embedding = Embedding(cfg.vocab_size, ch, rng)
        self.convs = [Conv1d(ch, ch, cfg.enc_kernel, rng, gain=np.sqrt(2.0))
                      for _ in range(cfg.enc_conv_layers)]
        self.norms = [BatchNorm1d(ch) for _ in range(cfg.enc_conv_layers)]
        self.drop = Dropout(cfg.conv_dropout, drop_rng)
        self.projection = (Linear(ch, cfg.d_model, rng, bias=cfg.prenet_bias)
                           if cfg.enc_recenter else None)

    def __call__(self, ids, mask: np.ndarray | None = None) -> Tensor:
        x = _apply_mask(self.embedding(ids), mask)
        for conv, norm in zip(self.convs, self.norms):
            x = self.drop(T.relu(norm(conv(x), mask)))
            x = _apply_mask(x, mask)
        if self.projection is not None:
            x = self.projection(x)
        return x


class DecoderPrenet(Module):
    """Two ReLU bottleneck layers then a linear projection to ``d_model``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        self.fc1 = Linear(cfg.n_mels, cfg.prenet_hidden, rng)
        self.fc2 = Linear(cfg.prenet_hidden, cfg.prenet_hidden, rng)
        self.projection = Linear(cfg.prenet_hidden, cfg.d_model, rng, bias=cfg.prenet_bias)
        self.final_relu = cfg.dec_prenet_final_relu
        self.drop = Dropout(cfg.prenet_dropout, drop_rng)

    def __call__(self, mel: Tensor) -> Tensor:
        x = self.drop(T.relu(self.fc1(mel)))
        x = self.drop(T.relu(self.fc2(x)))
        x = self.projection(x)
        return T.relu(x) if self.final_relu else x


class Postnet(Module):
    """Five-layer conv residual predictor; tanh on all but the last layer."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop_rng):
        n = cfg.postnet_layers
        dims = [cfg.n_mels] + [cfg.postnet_channels] * (n - 1) + [cfg.n_mels]
        self.convs = [Conv1d(dims[i], dims[i + 1], cfg.postnet_kernel, rng,
                             gain=5.0 / 3.0 if i < n - 1 else 1.0) for i in range(n)]
        self.norms = [BatchNorm1d(dims[i + 1]) for i in range(n)]
        self.drop = Dropout(cfg.conv_dropout, drop_rng)

    def __call__(self, mel: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = mel
        last = len(self.convs) - 1
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            x = norm(conv(x), mask)
            if i < last:
                x = T.tanh(x)
            x = _apply_mask(self.drop(x), mask)
        return x


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

@dataclass
class ModelOutput:
    mel_before: Tensor  # (B, T', n_mels)
    mel_after: Tensor  # (B, T', n_mels)
    stop_logits: Tensor  # (B, T')
    attention: AttentionRecord


class TTSModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.config = cfg
        rng = np.random.default_rng(seed)
        # shared by every dropout layer; reseeded per training step
        self.dropout_rng = np.random.default_rng(seed + 1)
        d = self.dropout_rng
        self.encoder_prenet = EncoderPrenet(cfg, rng, d)
        self.decoder_prenet = DecoderPrenet(cfg, rng, d)
        trainable = cfg.pe_mode == "scaled"
        self.enc_pe = ScaledPositionalEncoding(cfg.d_model, cfg.max_positions, cfg.alpha_init,
                                               trainable)
        self.dec_pe = ScaledPositionalEncoding(cfg.d_model, cfg.max_positions, cfg.alpha_init,
                                               trainable)
        self.encoder = Encoder(cfg, rng, d)
        self.decoder = Decoder(cfg, rng, d)
        self.mel_linear = Linear(cfg.d_model, cfg.n_mels, rng)
        self.stop_linear = Linear(cfg.d_model, 1, rng)
        self.postnet = Postnet(cfg, rng, d)

    @property
    def alpha_enc(self) -> float:
        return float(self.enc_pe.alpha.data)

    @property
    def alpha_dec(self) -> float:
        return float(self.dec_pe.alpha.data)

    def reseed_dropout(self, *key: int) -> None:
        self.dropout_rng.bit_generator.state = np.random.PCG64(list(key)).state

    # -- pieces -----------------------------------------------------------
    def encode(self, ids: np.ndarray, src_mask: np.ndarray | None = None):
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] == 0:
            raise ContractError("cannot encode an empty token sequence")
        x = self.enc_pe(self.encoder_prenet(ids, src_mask))
        return self.encoder(x, src_mask)

    def decode(self, dec_in: Tensor, memory: Tensor, src_mask=None, causal=None):
        y = self.dec_pe(self.decoder_prenet(dec_in))
        if causal is None and self.training:
            causal = causal_mask(y.shape[-2])
        return self.decoder(y, memory, causal, src_mask)

    def project(self, hidden: Tensor) -> tuple[Tensor, Tensor]:
        mel_before = self.mel_linear(hidden)
        stop = self.stop_linear(hidden)
        stop = stop.reshape(stop.shape[:-1])
        return mel_before, stop

    def output_heads(self, hidden: Tensor, tgt_mask: np.ndarray | None = None):
        """Mel projection, stop projection and post-net residual refinement."""
        mel_before, stop = self.project(hidden)
        mel_after = mel_before + self.postnet(mel_before, tgt_mask)
        return mel_before, stop, mel_after

    # -- end to end -------------------------------------------------------
    def forward(self, ids: np.ndarray, dec_in: np.ndarray, src_mask: np.ndarray | None = None,
                tgt_mask: np.ndarray | None = None) -> ModelOutput:
        """One parallel teacher-forced pass over all decoder positions."""
        dec_in = np.asarray(dec_in, dtype=np.float64)
        if dec_in.ndim == 2:
            dec_in = dec_in[None]
        if dec_in.shape[1] == 0:
            raise ContractError("cannot decode an empty mel sequence")
        memory, enc_w = self.encode(ids, src_mask)
        hidden, self_w, cross_w = self.decode(Tensor(dec_in), memory, src_mask,
                                              causal_mask(dec_in.shape[1]))
        mel_before, stop, mel_after = self.output_heads(hidden, tgt_mask)
        return ModelOutput(mel_before, mel_after, stop, AttentionRecord(enc_w, self_w, cross_w))


def shift_right(mel: np.ndarray) -> np.ndarray:
    """Prepend the all-zero go frame and drop the last frame (time axis -2)."""
    mel = np.asarray(mel, dtype=np.float64)
    go = np.zeros_like(mel[..., :1, :])
    return np.concatenate([go, mel[..., :-1, :]], axis=-2)


def forward_teacher_forced(model: TTSModel, tokens, target_mel: np.ndarray) -> ModelOutput:
    """Teacher-forced pass for a single utterance (ids + ``(T', n_mels)`` target)."""
    ids = np.asarray(getattr(tokens, "ids", tokens))
    target = np.asarray(getattr(target_mel, "frames", target_mel), dtype=np.float64)
    if ids.size == 0:
        raise ContractError("empty token sequence")
    if target.shape[0] == 0:
        raise ContractError("empty target mel")
    return model.forward(ids[None], shift_right(target)[None])
