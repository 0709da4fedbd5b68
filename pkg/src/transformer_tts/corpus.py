"""Bundled toy corpus: ten short sentences rendered by a formant synthesizer.

Each phoneme becomes a fixed-length segment: vowels, nasals and liquids are
harmonic series shaped by formant resonances over a slowly sine-modulated
pitch contour; fricatives and stop bursts are fixed sums of sinusoids inside
a frequency band; markers are a quiet stationary room tone. Rendering is
fully deterministic, so the corpus can be regenerated bit-exactly.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .audio import AudioClip, MelConfig, write_wav
from .frontend import EOS, Phonemizer

TOY_SENTENCES = [
    ("toy01", "The cat sat."),
    ("toy02", "A cake is sweet."),
    ("toy03", "Hello world."),
    ("toy04", "Dr. Smith came home."),
    ("toy05", "10 red boats."),
    ("toy06", "She likes green tea."),
    ("toy07", "We go to the park."),
    ("toy08", "My dog can run."),
    ("toy09", "The sun is hot."),
    ("toy10", "Time to read a book."),
]

SAMPLE_RATE = 16000
HOP = MelConfig().hop_length
FRAMES_PER_TOKEN = 4
HEAD_FRAMES = 4  # 50 ms of leading silence
TAIL_FRAMES = 8  # 100 ms of trailing silence, carried by EOS
RAMP = 80  # 5 ms crossfade

# (F1, F2, F3) in Hz
_VOWEL_FORMANTS = {
    "AA": (730, 1090, 2440), "AE": (660, 1720, 2410), "AH": (520, 1190, 2390),
    "AO": (570, 840, 2410), "AW": (680, 1300, 2400), "AY": (660, 1600, 2500),
    "EH": (530, 1840, 2480), "ER": (490, 1350, 1690), "EY": (480, 2000, 2600),
    "IH": (390, 1990, 2550), "IY": (270, 2290, 3010), "OW": (450, 900, 2400),
    "OY": (500, 1000, 2400), "UH": (440, 1020, 2240), "UW": (300, 870, 2240),
}
_SONORANTS = {
    "M": ((250, 1100, 2200), 0.10), "N": ((250, 1600, 2500), 0.10),
    "NG": ((250, 2000, 2700), 0.10), "L": ((360, 1300, 2700), 0.14),
    "R": ((420, 1300, 1600), 0.14), "W": ((300, 700, 2200), 0.12),
    "Y": ((280, 2200, 3000), 0.12),
}
# (band low, band high, voiced)
_FRICATIVES = {
    "S": (4500, 7500, False), "Z": (4500, 7500, True), "SH": (2200, 4200, False),
    "ZH": (2200, 4200, True), "F": (1200, 6500, False), "V": (1200, 6500, True),
    "TH": (1500, 7000, False), "DH": (1500, 7000, True), "HH": (600, 3500, False),
}
_STOPS = {
    "P": (400, 1600, False), "B": (400, 1600, True), "T": (3000, 6000, False),
    "D": (3000, 6000, True), "K": (1400, 3000, False), "G": (1400, 3000, True),
    "CH": (2200, 5000, False), "JH": (2200, 5000, True),
}


def _symbol_seed(symbol: str) -> int:
    return sum((i + 1) * ord(c) for i, c in enumerate(symbol))


def _harmonics(phase: np.ndarray, f0: np.ndarray, formants, amp: float) -> np.ndarray:
    out = np.zeros_like(phase)
    f0_mean = float(f0.mean())
    for k in range(1, int(7500 / f0_mean) + 1):
        fk = k * f0_mean
        gain = sum(1.0 / (1.0 + ((fk - F) / (60.0 + 0.05 * F)) ** 2) for F in formants)
        out += gain * np.sin(k * phase)
    peak = np.max(np.abs(out)) or 1.0
    return amp * out / peak


def _band(n: int, start: int, lo: float, hi: float, amp: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    freqs = np.arange(lo, hi, 83.0)
    phases = rng.uniform(0, 2 * np.pi, len(freqs))
    t = (start + np.arange(n))[:, None] / SAMPLE_RATE
    sig = np.sin(2 * np.pi * freqs[None, :] * t + phases[None, :]).sum(axis=1)
    return amp * sig / np.sqrt(len(freqs))


def room_tone(n: int, start: int = 0) -> np.ndarray:
    return _band(n, start, 60.0, 7900.0, 1.5e-3, seed=7)


def _segment(symbol: str, start: int, n: int, phase: np.ndarray, f0: np.ndarray) -> np.ndarray:
    base = symbol.rstrip("012")
    stress = symbol[-1] if symbol[-1] in "012" else None
    ph, f = phase[start:start + n], f0[start:start + n]
    seed = _symbol_seed(base)
    if base in _VOWEL_FORMANTS:
        amp = 0.30 if stress == "1" else 0.20
        return _harmonics(ph, f, _VOWEL_FORMANTS[base], amp)
    if base in _SONORANTS:
        formants, amp = _SONORANTS[base]
        return _harmonics(ph, f, formants, amp)
    if base in _FRICATIVES:
        lo, hi, voiced = _FRICATIVES[base]
        sig = _band(n, start, lo, hi, 0.06, seed)
        if voiced:
            sig += _harmonics(ph, f, (250,), 0.05)
        return sig
    if base in _STOPS:
        lo, hi, voiced = _STOPS[base]
        sig = np.zeros(n)
        half = n // 2
        if voiced:
            sig[:half] = _harmonics(ph[:half], f[:half], (200,), 0.04)
        sig[half:] = _band(n - half, start + half, lo, hi, 0.08, seed)
        return sig
    return np.zeros(n)


def token_frames(symbol: str) -> int:
    return TAIL_FRAMES if symbol == EOS else FRAMES_PER_TOKEN


def render_symbols(symbols, pitch_phase: float = 0.0) -> AudioClip:
    """Render a phoneme/marker symbol sequence to a 16 kHz waveform."""
    durations = [HEAD_FRAMES] + [token_frames(s) for s in symbols]
    total = sum(durations) * HOP
    t = np.arange(total) / SAMPLE_RATE
    f0 = 125.0 + 18.0 * np.sin(2 * np.pi * 0.9 * t + pitch_phase) - 10.0 * t
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    out = room_tone(total)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(RAMP) / RAMP)
    pos = HEAD_FRAMES * HOP
    for sym, frames in zip(symbols, durations[1:]):
        n = frames * HOP
        a = max(pos - RAMP // 2, 0)
        b = min(pos + n + RAMP // 2, total)
        seg = _segment(sym, a, b - a, phase, f0)
        env = np.ones(b - a)
        env[:RAMP] *= ramp[: min(RAMP, b - a)]
        env[-RAMP:] *= ramp[::-1][: min(RAMP, b - a)]
        out[a:b] += seg * env
        pos += n
    return AudioClip(out, SAMPLE_RATE)


def write_toy_corpus(directory, phonemizer: Phonemizer | None = None) -> Path:
    """Write ``<utt>.wav`` files and ``transcript.tsv`` for the toy corpus."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    phonemizer = phonemizer or Phonemizer()
    lines = []
    for i, (utt, text) in enumerate(TOY_SENTENCES):
        clip = render_symbols(phonemizer.symbols(text), pitch_phase=0.7 * i)
        write_wav(directory / f"{utt}.wav", clip)
        lines.append(f"{utt}\t{text}")
    (directory / "transcript.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def toy_corpus_dir() -> Path:
    """Location of the bundled toy corpus inside the installed package."""
    return Path(str(resources.files(__package__).joinpath("data/toy_corpus")))
