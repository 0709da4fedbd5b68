"""Dependency-free plot artifacts: 8-bit PGM heatmaps and CSV tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def to_gray(values: np.ndarray) -> np.ndarray:
    """Min-max scale a 2-D array to uint8; a constant array maps to mid gray."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {values.shape}")
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.round(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, values: np.ndarray) -> Path:
    """Binary P5 graymap; row 0 of ``values`` is the top image row."""
    img = to_gray(values)
    path = Path(path)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    width, height = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: width * height], dtype=np.uint8).reshape(height, width)


def attention_image(weights: np.ndarray, path) -> Path:
    """Cross-attention ``(T', T)``: encoder steps on x, decoder steps on y."""
    return write_pgm(path, weights)


def mel_image(frames: np.ndarray, path) -> Path:
    """Mel ``(T', n_mels)`` drawn with time on x and low bands at the bottom."""
    return write_pgm(path, np.asarray(frames).T[::-1])


def write_pe_scale_csv(path, rows) -> Path:
    """``rows`` of dicts with step, alpha_enc, alpha_dec (e.g. the metrics log)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "alpha_enc", "alpha_dec"])
        for r in rows:
            w.writerow([int(r["step"]), repr(float(r["alpha_enc"])), repr(float(r["alpha_dec"]))])
    return path


def write_bench_csv(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "median_seconds"])
        for r in rows:
            w.writerow([r["config"], repr(float(r["median_seconds"]))])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
