"""scikit-learn style wrappers: text -> phoneme ids, audio -> mel, text -> mel.

Sequences are ragged, so ``X``/``y`` are Python lists rather than 2-D arrays.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .audio import AudioClip, MelConfig, mel_spectrogram
from .frontend import Lexicon, Phonemizer, TokenSequence
from .inference import synthesize
from .model import ModelConfig, TTSModel
from .pipeline import apply_overrides
from .training import TrainConfig, Trainer, evaluate_mel_mse


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def check_texts(X) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected a sequence of strings, got a single string")
    texts = list(X)
    bad = [type(t).__name__ for t in texts if not isinstance(t, str)]
    if bad:
        raise TypeError(f"expected strings, got {bad[0]}")
    if not texts:
        raise ValueError("empty input")
    return texts


def check_token_ids(X, vocab_size: int | None = None) -> list[np.ndarray]:
    """Items are integer id sequences or :class:`TokenSequence` objects."""
    out = []
    for item in X:
        ids = np.asarray(item.ids if isinstance(item, TokenSequence) else item)
        if ids.ndim != 1 or ids.size == 0 or not np.issubdtype(ids.dtype, np.integer):
            raise ValueError("each token sequence must be a non-empty 1-D integer array")
        if vocab_size is not None and (ids.min() < 0 or ids.max() >= vocab_size):
            raise ValueError(f"token id out of range for vocabulary of {vocab_size}")
        out.append(ids.astype(np.int64))
    if not out:
        raise ValueError("empty input")
    return out


def check_mels(y, n_mels: int) -> list[np.ndarray]:
    out = []
    for m in y:
        frames = np.asarray(getattr(m, "frames", m), dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != n_mels or frames.shape[0] == 0:
            raise ValueError(f"each mel must have shape (frames > 0, {n_mels}), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("mel frames must be finite")
        out.append(frames)
    if not out:
        raise ValueError("empty target list")
    return out


def check_audio(X, sample_rate: int) -> list[AudioClip]:
    clips = []
    for item in X:
        if isinstance(item, AudioClip):
            if item.sample_rate != sample_rate:
                raise ValueError(f"expected {sample_rate} Hz audio, got {item.sample_rate}")
            clips.append(item)
        else:
            samples = np.asarray(item, dtype=np.float64)
            if samples.ndim != 1 or samples.size == 0:
                raise ValueError("raw audio must be a non-empty 1-D array")
            clips.append(AudioClip(samples, sample_rate))
    if not clips:
        raise ValueError("empty input")
    return clips


# ---------------------------------------------------------------------------
# transformers
# ---------------------------------------------------------------------------

class PhonemeEncoder(TransformerMixin, BaseEstimator):
    """Raw text -> phoneme id arrays (stateless; ``fit`` only validates)."""

    def __init__(self, syllable_markers: bool = True, lexicon_path: str | None = None):
        self.syllable_markers = syllable_markers
        self.lexicon_path = lexicon_path

    def _phonemizer(self) -> Phonemizer:
        lexicon = Lexicon.from_file(self.lexicon_path) if self.lexicon_path else None
        return Phonemizer(lexicon, syllable_markers=self.syllable_markers)

    def fit(self, X, y=None):
        check_texts(X)
        self.phonemizer_ = self._phonemizer()
        self.vocab_size_ = len(self.phonemizer_.inventory)
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "phonemizer_")
        return [np.asarray(self.phonemizer_(t).ids) for t in check_texts(X)]


class MelExtractor(TransformerMixin, BaseEstimator):
    """Waveforms (AudioClip or 1-D arrays) -> log-mel frame arrays ``(T', n_mels)``."""

    def __init__(self, sample_rate: int = 16000, n_mels: int = 80):
        self.sample_rate = sample_rate
        self.n_mels = n_mels

    def fit(self, X, y=None):
        self.config_ = MelConfig(sample_rate=self.sample_rate, n_mels=self.n_mels)
        check_audio(X, self.sample_rate)
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "config_")
        return [mel_spectrogram(c, self.config_).frames for c in check_audio(X, self.sample_rate)]


# ---------------------------------------------------------------------------
# the acoustic model
# ---------------------------------------------------------------------------

class TransformerTTS(BaseEstimator):
    """Text (or phoneme ids) -> mel spectrogram regressor.

    ``fit(X, y)`` overfits/trains on parallel lists of texts and mel targets;
    ``predict(X)`` runs autoregressive synthesis and returns post-net mels.
    ``score`` is the negative teacher-forced post-net MSE, so higher is better.
    """

    def __init__(self, preset: str = "toy", n_layers: int | None = None,
                 n_heads: int | None = None, ablation: str = "none", pe_mode: str = "scaled",
                 max_iter: int = 2000, max_frames: int | None = None, stop_weight: float = 6.5,
                 lr_scale: float | None = None, warmup_steps: int | None = None,
                 threshold: float = 0.5, max_steps: int | None = None, random_state: int = 0,
                 verbose: int = 0):
        self.preset = preset
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ablation = ablation
        self.pe_mode = pe_mode
        self.max_iter = max_iter
        self.max_frames = max_frames
        self.stop_weight = stop_weight
        self.lr_scale = lr_scale
        self.warmup_steps = warmup_steps
        self.threshold = threshold
        self.max_steps = max_steps
        self.random_state = random_state
        self.verbose = verbose

    # -- configuration ----------------------------------------------------
    def _configs(self, vocab_size: int) -> tuple[ModelConfig, TrainConfig]:
        if self.preset == "toy":
            model_cfg, train_cfg = ModelConfig.toy(), TrainConfig.toy()
        elif self.preset == "paper":
            model_cfg, train_cfg = ModelConfig.paper(), TrainConfig()
        else:
            raise ValueError(f"unknown preset {self.preset!r}")
        model_cfg = dataclasses.replace(model_cfg, vocab_size=vocab_size)
        model_cfg = apply_overrides(model_cfg, self.ablation, self.pe_mode, self.n_layers,
                                    self.n_heads)
        updates = {"seed": self.random_state, "total_steps": self.max_iter,
                   "stop_weight": self.stop_weight}
        for key in ("max_frames", "lr_scale", "warmup_steps"):
            if getattr(self, key) is not None:
                updates[key] = getattr(self, key)
        return model_cfg, dataclasses.replace(train_cfg, **updates)

    def _encode(self, X) -> list[np.ndarray]:
        items = list(X)
        if items and all(isinstance(t, str) for t in items):
            return [np.asarray(self.phonemizer_(t).ids) for t in items]
        return check_token_ids(items, self.model_.config.vocab_size)

    # -- estimator API ----------------------------------------------------
    def fit(self, X, y):
        check_consistent_length(list(X), list(y))
        self.phonemizer_ = Phonemizer()
        model_cfg, train_cfg = self._configs(len(self.phonemizer_.inventory))
        self.model_ = TTSModel(model_cfg, seed=train_cfg.seed)
        ids = self._encode(X)
        mels = check_mels(y, model_cfg.n_mels)
        utterances = {f"utt{i:05d}": (t, m) for i, (t, m) in enumerate(zip(ids, mels))}
        self.trainer_ = Trainer(self.model_, utterances, train_cfg)
        callback = None
        if self.verbose:
            def callback(m):
                if m["step"] % max(1, int(self.verbose)) == 0:
                    print(f"step {m['step']} mel {m['mel_loss']:.4f} stop {m['stop_loss']:.4f}")
        self.history_ = self.trainer_.run(train_cfg.total_steps, callback=callback)
        self.n_iter_ = len(self.history_)
        return self

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        return [synthesize(self.model_, ids, self.threshold, self.max_steps).mel.frames
                for ids in self._encode(X)]

    def synthesize(self, text: str):
        """Full :class:`SynthesisResult` (mel, stop probabilities, attention) for one text."""
        check_is_fitted(self, "model_")
        return synthesize(self.model_, self._encode([text])[0], self.threshold, self.max_steps)

    def score(self, X, y) -> float:
        check_is_fitted(self, "model_")
        check_consistent_length(list(X), list(y))
        ids = self._encode(X)
        mels = check_mels(y, self.model_.config.n_mels)
        utts = {f"u{i}": (t, m) for i, (t, m) in enumerate(zip(ids, mels))}
        return -evaluate_mel_mse(self.model_, utts)["mse_after"]
