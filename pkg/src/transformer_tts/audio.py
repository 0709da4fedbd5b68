"""Log-mel feature extraction, Griffin-Lim inversion and audio/feature file I/O."""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class AudioError(ValueError):
    """Raised for malformed audio or feature data."""


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    hop_length: int = 200  # 80 frames per second at 16 kHz
    win_length: int = 800
    n_fft: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_length

    @property
    def n_freq(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, n_mels) natural-log magnitudes
    frame_rate: float = 80.0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# filterbank and STFT
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``(n_mels, n_freq)``, unit peak."""
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.n_freq)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_band_centers(cfg: MelConfig = MelConfig()) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return edges[1:-1]


def _window(cfg: MelConfig) -> np.ndarray:
    return np.hanning(cfg.win_length + 1)[:-1]  # periodic Hann


def _pad_offset(cfg: MelConfig) -> int:
    # frame t is centred on sample t*hop + hop/2
    return (cfg.win_length - cfg.hop_length) // 2


def num_frames(n_samples: int, cfg: MelConfig = MelConfig()) -> int:
    return math.ceil(n_samples / cfg.hop_length)


def _padded_length(n_frames: int, cfg: MelConfig) -> int:
    return (n_frames - 1) * cfg.hop_length + cfg.win_length


def _frame_signal(padded: np.ndarray, n_frames: int, cfg: MelConfig) -> np.ndarray:
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    return padded[idx]


def stft_padded(padded: np.ndarray, n_frames: int, cfg: MelConfig) -> np.ndarray:
    """Complex STFT ``(T, n_freq)`` of a signal already laid out on the frame grid."""
    frames = _frame_signal(padded, n_frames, cfg) * _window(cfg)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def istft_padded(spec: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Least-squares inverse of :func:`stft_padded` (window-squared normalization)."""
    n_frames = spec.shape[0]
    win = _window(cfg)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, :cfg.win_length] * win
    length = _padded_length(n_frames, cfg)
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n_frames):
        s = t * cfg.hop_length
        out[s:s + cfg.win_length] += frames[t]
        norm[s:s + cfg.win_length] += win * win
    return out / np.maximum(norm, 1e-10)


def _pad_to_grid(samples: np.ndarray, cfg: MelConfig) -> tuple[np.ndarray, int]:
    T = num_frames(len(samples), cfg)
    padded = np.zeros(_padded_length(T, cfg))
    off = _pad_offset(cfg)
    padded[off:off + len(samples)] = samples
    return padded, T


def magnitude_spectrogram(samples: np.ndarray, cfg: MelConfig = MelConfig()) -> np.ndarray:
    padded, T = _pad_to_grid(np.asarray(samples, dtype=np.float64), cfg)
    return np.abs(stft_padded(padded, T, cfg))


def mel_spectrogram(clip: AudioClip, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    """Log-compressed mel magnitudes, one frame per hop (``ceil(len / hop)`` frames)."""
    if len(clip.samples) == 0:
        raise AudioError("mel_spectrogram needs non-empty audio")
    if clip.sample_rate != cfg.sample_rate:
        raise AudioError(f"expected {cfg.sample_rate} Hz audio, got {clip.sample_rate}")
    mag = magnitude_spectrogram(clip.samples, cfg)
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg.frame_rate)


# ---------------------------------------------------------------------------
# Griffin-Lim
# ---------------------------------------------------------------------------

def mel_to_linear(mel: MelSpectrogram, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Pseudo-inverse filterbank projection to linear magnitudes, clamped at zero."""
    inv = np.linalg.pinv(mel_filterbank(cfg))
    return np.maximum(0.0, np.exp(mel.frames) @ inv.T)


def _bin_weights(cfg: MelConfig) -> np.ndarray:
    # interior rfft bins stand for two conjugate bins of the full spectrum
    w = np.full(cfg.n_freq, 2.0)
    w[0] = 1.0
    if cfg.n_fft % 2 == 0:
        w[-1] = 1.0
    return w


def spectral_convergence(target_mag: np.ndarray, spec: np.ndarray, cfg: MelConfig) -> float:
    w = _bin_weights(cfg)
    num = np.sum(w * (np.abs(spec) - target_mag) ** 2)
    den = np.sum(w * target_mag ** 2)
    return float(np.sqrt(num / max(den, 1e-300)))


@dataclass
class GriffinLimResult:
    clip: AudioClip
    errors: list[float]


def griffin_lim(mel: MelSpectrogram, iterations: int = 60, cfg: MelConfig = MelConfig(),
                seed: int = 0, return_errors: bool = False):
    """Reconstruct a waveform from a log-mel spectrogram by alternating projections.

    ``errors[i]`` is the spectral convergence of the estimate after iteration
    ``i``; with the least-squares inverse STFT used here it cannot increase.
    """
    if iterations < 1:
        raise ValueError("griffin_lim needs at least one iteration")
    target = mel_to_linear(mel, cfg)
    T = target.shape[0]
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target.shape))
    signal = istft_padded(target * phase, cfg)
    errors = []
    for _ in range(iterations):
        spec = stft_padded(signal, T, cfg)
        errors.append(spectral_convergence(target, spec, cfg))
        signal = istft_padded(target * np.exp(1j * np.angle(spec)), cfg)
    off = _pad_offset(cfg)
    samples = signal[off:off + T * cfg.hop_length]
    clip = AudioClip(np.clip(samples, -1.0, 1.0), cfg.sample_rate)
    if return_errors:
        return GriffinLimResult(clip, errors)
    return clip


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_wav(path, clip: AudioClip) -> None:
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(clip.sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise AudioError(f"{path}: only 16-bit PCM is supported")
        n_ch = w.getnchannels()
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_ch > 1:
        data = data.reshape(-1, n_ch).mean(axis=1)
    return AudioClip(data, rate)


FEATURE_MAGIC = 0x4D454C46  # "MELF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4i")


def write_features(path, mel: MelSpectrogram) -> None:
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    T, n_mels = frames.shape
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, n_mels))
        f.write(frames.tobytes())


def read_features(path, frame_rate: float = 80.0) -> MelSpectrogram:
    blob = Path(path).read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise AudioError(f"{path}: truncated feature header")
    magic, version, T, n_mels = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise AudioError(f"{path}: bad feature magic {magic:#x}")
    if version != FEATURE_VERSION:
        raise AudioError(f"{path}: unsupported feature version {version}")
    expected = _FEATURE_HEADER.size + 4 * T * n_mels
    if len(blob) != expected:
        raise AudioError(f"{path}: expected {expected} bytes, found {len(blob)}")
    frames = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(T, n_mels)
    return MelSpectrogram(frames.astype(np.float64), frame_rate)
