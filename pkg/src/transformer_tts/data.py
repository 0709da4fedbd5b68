"""Manifests, padding/collation and frame-budget dynamic batching."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import lengths_to_mask, shift_right

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed corpus data."""


@dataclass
class ManifestEntry:
    utt_id: str
    wav_path: str
    text: str
    frame_count: int


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
        utt, wav, text, frames = parts
        try:
            entries.append(ManifestEntry(utt, wav, text, int(frames)))
        except ValueError:
            raise DataError(f"{path}:{lineno}: frame_count {frames!r} is not an integer") from None
    return entries


def write_manifest(path, entries) -> None:
    lines = [f"{e.utt_id}\t{e.wav_path}\t{e.text}\t{e.frame_count}" for e in entries]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


@dataclass
class Batch:
    utt_ids: list[str]
    ids: np.ndarray  # (B, T) int, PAD = 0
    src_lens: np.ndarray
    mel: np.ndarray  # (B, T', n_mels) zero padded
    tgt_lens: np.ndarray

    @property
    def src_mask(self) -> np.ndarray:
        return lengths_to_mask(self.src_lens, self.ids.shape[1])

    @property
    def tgt_mask(self) -> np.ndarray:
        return lengths_to_mask(self.tgt_lens, self.mel.shape[1])

    @property
    def dec_in(self) -> np.ndarray:
        return shift_right(self.mel)

    @property
    def stop_targets(self) -> np.ndarray:
        t = np.zeros(self.mel.shape[:2])
        t[np.arange(len(self.tgt_lens)), self.tgt_lens - 1] = 1.0
        return t

    def __len__(self) -> int:
        return len(self.utt_ids)


def collate(utt_ids, token_ids, mels) -> Batch:
    token_ids = [np.asarray(t, dtype=np.int64) for t in token_ids]
    mels = [np.asarray(m, dtype=np.float64) for m in mels]
    if any(len(t) == 0 for t in token_ids) or any(len(m) == 0 for m in mels):
        raise DataError("cannot collate empty token or mel sequences")
    src_lens = np.array([len(t) for t in token_ids])
    tgt_lens = np.array([len(m) for m in mels])
    ids = np.zeros((len(token_ids), src_lens.max()), dtype=np.int64)
    mel = np.zeros((len(mels), tgt_lens.max(), mels[0].shape[1]))
    for i, (t, m) in enumerate(zip(token_ids, mels)):
        ids[i, :len(t)] = t
        mel[i, :len(m)] = m
    return Batch(list(utt_ids), ids, src_lens, mel, tgt_lens)


# ---------------------------------------------------------------------------
# dynamic batching
# ---------------------------------------------------------------------------

@dataclass
class PlannedBatch:
    utt_ids: list[str]
    lengths: list[int]

    @property
    def padded_len(self) -> int:
        return max(self.lengths)

    @property
    def total_frames(self) -> int:
        return sum(self.lengths)

    @property
    def padding_overhead(self) -> int:
        return self.padded_len * len(self.lengths) - self.total_frames


@dataclass
class BatchPlan:
    batches: list[PlannedBatch]
    max_frames: int
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.batches)

    def __len__(self) -> int:
        return len(self.batches)

    def all_ids(self) -> list[str]:
        return [u for b in self.batches for u in b.utt_ids]


def build_dynamic_batches(manifest, max_frames: int, seed: int = 0,
                          log_warnings: bool = True) -> BatchPlan:
    """Pack utterances into batches whose summed frame counts fit ``max_frames``.

    ``manifest`` holds :class:`ManifestEntry` objects or ``(utt_id, frames)``
    pairs. Utterances are sorted by length (ties broken by a seeded shuffle)
    and packed greedily, so similar lengths share a batch and each batch takes
    as many samples as fit. An utterance longer than the budget gets a
    singleton batch and a warning (always kept in ``plan.warnings``; logged
    unless ``log_warnings`` is false). Batch order is shuffled with ``seed``.
    """
    items = [(e.utt_id, e.frame_count) if isinstance(e, ManifestEntry) else (e[0], int(e[1]))
             for e in manifest]
    if not items:
        raise DataError("empty manifest")
    if max_frames < 1:
        raise ValueError("max_frames must be positive")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(items))
    order = sorted(range(len(items)), key=lambda i: (items[i][1], tiebreak[i]))

    batches: list[PlannedBatch] = []
    warnings: list[str] = []
    current: PlannedBatch | None = None
    for i in order:
        utt, frames = items[i]
        if frames > max_frames:
            msg = f"utterance {utt} has {frames} frames, over the {max_frames} budget"
            if log_warnings:
                logger.warning(msg)
            warnings.append(msg)
            batches.append(PlannedBatch([utt], [frames]))
            continue
        if current is not None and current.total_frames + frames <= max_frames:
            current.utt_ids.append(utt)
            current.lengths.append(frames)
        else:
            current = PlannedBatch([utt], [frames])
            batches.append(current)
    perm = rng.permutation(len(batches))
    return BatchPlan([batches[i] for i in perm], max_frames, warnings)


def plan_violations(plan: BatchPlan, manifest) -> list[str]:
    """Invariant breaches of ``plan`` against ``manifest``; empty when the plan is sound."""
    lengths = {}
    for e in manifest:
        utt, frames = (e.utt_id, e.frame_count) if isinstance(e, ManifestEntry) else e
        lengths[utt] = int(frames)
    problems = []
    for i, b in enumerate(plan.batches):
        if len(b.utt_ids) > 1 and b.total_frames > plan.max_frames:
            problems.append(f"batch {i} holds {b.total_frames} frames > {plan.max_frames}")
        if any(lengths.get(u) != n for u, n in zip(b.utt_ids, b.lengths)):
            problems.append(f"batch {i} reports lengths that disagree with the manifest")
    seen = plan.all_ids()
    if len(seen) != len(set(seen)):
        problems.append("an utterance appears in more than one batch")
    if set(seen) != set(lengths):
        problems.append("plan coverage differs from the manifest")
    return problems


def random_manifest(rng: np.random.Generator, max_items: int = 40, max_len: int = 1500):
    n = int(rng.integers(1, max_items + 1))
    return [(f"u{i:03d}", int(rng.integers(1, max_len + 1))) for i in range(n)]


def batching_sweep(cases: int = 100, seed: int = 0) -> list[str]:
    """Build plans for ``cases`` random manifests/budgets; returns all violations found."""
    rng = np.random.default_rng(seed)
    problems = []
    for case in range(cases):
        manifest = random_manifest(rng)
        budget = int(rng.integers(50, 4000))
        plan = build_dynamic_batches(manifest, budget, seed=case, log_warnings=False)
        problems += [f"case {case}: {p}" for p in plan_violations(plan, manifest)]
    return problems
