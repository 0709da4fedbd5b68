"""Glue shared by the CLI and the estimator: corpus preparation, feature cache, runs."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioError, MelConfig, mel_spectrogram, read_features, read_wav, write_features
from .checkpoint import load_checkpoint, save_checkpoint
from .config import write_config
from .data import DataError, ManifestEntry, read_manifest, write_manifest
from .frontend import EmptyInputError, Phonemizer
from .model import ModelConfig, TTSModel
from .training import Adam, TrainConfig, Trainer

logger = logging.getLogger(__name__)

TRANSCRIPT_NAME = "transcript.tsv"
FEATURE_DIR = "features"
CONFIG_NAME = "config.txt"
METRICS_NAME = "metrics.tsv"
LATEST_NAME = "latest.ckpt"

ABLATIONS = {
    "none": {},
    # contrast arm: no encoder projection, decoder pre-net ends in a ReLU layer
    "no-recenter": {"enc_recenter": False, "dec_prenet_final_relu": True},
    "prenet-relu": {"dec_prenet_final_relu": True},
}


@dataclass
class PrepareReport:
    entries: list[ManifestEntry]
    errors: list[str] = field(default_factory=list)
    cache_hits: int = 0


def read_transcript(corpus_dir) -> list[tuple[str, str]]:
    path = Path(corpus_dir) / TRANSCRIPT_NAME
    if not path.exists():
        return []
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected utt_id<TAB>text")
        utt, text = line.split("\t", 1)
        rows.append((utt.strip(), text.strip()))
    return rows


def feature_path(manifest_path, utt_id: str) -> Path:
    return Path(manifest_path).parent / FEATURE_DIR / f"{utt_id}.mel"


def _cached_mel(cache: Path, wav: Path, cfg: MelConfig):
    """Return ``(frames, hit)``; the cache is valid when newer than the WAV."""
    if cache.exists() and cache.stat().st_mtime >= wav.stat().st_mtime:
        try:
            mel = read_features(cache, cfg.frame_rate)
            if mel.frames.shape[1] == cfg.n_mels:
                return mel.frames, True
        except AudioError:
            pass
    mel = mel_spectrogram(read_wav(wav), cfg)
    cache.parent.mkdir(parents=True, exist_ok=True)
    write_features(cache, mel)
    return mel.frames, False


def prepare_corpus(corpus_dir, manifest_path, phonemizer: Phonemizer | None = None,
                   cfg: MelConfig = MelConfig()) -> PrepareReport:
    """Phonemize transcripts, cache mel features and write the manifest.

    Every failing utterance is collected; if any fail, :class:`DataError`
    lists them all and no manifest is written.
    """
    corpus_dir, manifest_path = Path(corpus_dir), Path(manifest_path)
    rows = read_transcript(corpus_dir)
    if not rows:
        raise DataError("empty manifest")
    phonemizer = phonemizer or Phonemizer()
    entries, errors, hits = [], [], 0
    for utt, text in rows:
        wav = corpus_dir / f"{utt}.wav"
        if not wav.exists():
            errors.append(f"{utt}: missing audio {wav}")
            continue
        try:
            phonemizer(text)
            frames, hit = _cached_mel(feature_path(manifest_path, utt), wav, cfg)
        except (EmptyInputError, AudioError, KeyError, ValueError) as exc:
            errors.append(f"{utt}: {exc}")
            continue
        hits += hit
        entries.append(ManifestEntry(utt, str(wav.resolve()), text, int(frames.shape[0])))
    if errors:
        raise DataError("unprocessable utterances:\n  " + "\n  ".join(errors))
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest_path, entries)
    return PrepareReport(entries, errors, hits)


def load_utterances(manifest_path, phonemizer: Phonemizer | None = None,
                    cfg: MelConfig = MelConfig()) -> dict:
    """``{utt_id: (token_ids, mel_frames)}`` for every manifest row."""
    entries = read_manifest(manifest_path)
    if not entries:
        raise DataError("empty manifest")
    phonemizer = phonemizer or Phonemizer()
    out = {}
    for e in entries:
        cache = feature_path(manifest_path, e.utt_id)
        if cache.exists():
            frames = read_features(cache, cfg.frame_rate).frames
        else:
            frames = mel_spectrogram(read_wav(e.wav_path), cfg).frames
        if frames.shape[0] != e.frame_count:
            raise DataError(f"{e.utt_id}: manifest says {e.frame_count} frames, "
                            f"features have {frames.shape[0]}")
        out[e.utt_id] = (np.asarray(phonemizer(e.text).ids), frames)
    return out


def apply_overrides(model_cfg: ModelConfig, ablation: str = "none", pe: str | None = None,
                    layers: int | None = None, heads: int | None = None) -> ModelConfig:
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    kw = dict(ABLATIONS[ablation])
    if pe is not None:
        kw["pe_mode"] = pe
    if layers is not None:
        kw["n_layers_enc"] = kw["n_layers_dec"] = layers
    if heads is not None:
        kw["n_heads"] = heads
    cfg = dataclasses.replace(model_cfg, **kw)
    cfg.validate()
    return cfg


def train_run(model_cfg: ModelConfig, train_cfg: TrainConfig, utterances: dict, run_dir,
              steps: int | None = None, resume: bool = False, callback=None) -> Trainer:
    """Train inside ``run_dir``: config snapshot, metrics log and checkpoints.

    With ``resume`` the latest checkpoint (weights, buffers and Adam state)
    is restored and training continues from its step counter.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    model = TTSModel(model_cfg, seed=train_cfg.seed)
    opt = Adam(model.named_parameters(), train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    latest = run_dir / LATEST_NAME
    metrics = run_dir / METRICS_NAME
    if resume and latest.exists():
        load_checkpoint(latest, model, opt)
        _truncate_log(metrics, opt.step_count)
    else:
        write_config(run_dir / CONFIG_NAME, model_cfg, train_cfg)
        metrics.write_text("")
    trainer = Trainer(model, utterances, train_cfg, opt)

    def checkpoint(step: int) -> None:
        meta = {"step": step, "train_config": train_cfg.to_dict()}
        save_checkpoint(run_dir / f"step{step:06d}.ckpt", model, opt, meta)
        save_checkpoint(latest, model, opt, meta)

    steps = train_cfg.total_steps - opt.step_count if steps is None else steps
    trainer.run(max(steps, 0), log_path=metrics, callback=callback, checkpoint_fn=checkpoint)
    if opt.step_count and (not train_cfg.checkpoint_interval
                           or opt.step_count % train_cfg.checkpoint_interval):
        checkpoint(opt.step_count)
    return trainer


def _truncate_log(path: Path, step: int) -> None:
    """Drop metric lines logged after ``step`` (from a run that died mid-interval)."""
    if not path.exists():
        return
    keep = [line for line in path.read_text().splitlines()
            if line.strip() and int(line.split("\t", 1)[0]) <= step]
    path.write_text("".join(line + "\n" for line in keep))
