"""Losses, optimizer, learning-rate schedule and the training loop."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import Batch, BatchPlan, DataError, build_dynamic_batches, collate
from .model import TTSModel
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    max_frames: int = 4000
    stop_weight: float = 6.5  # positive-class weight for the stop token
    stop_loss_weight: float = 1.0
    lr_scale: float = 1.0
    warmup_steps: int = 4000
    grad_clip: float = 1.0
    total_steps: int = 1000
    seed: int = 0
    checkpoint_interval: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9

    def __post_init__(self):
        if self.stop_weight < 1.0:
            raise ValueError("stop_weight must be >= 1")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Overfit recipe for the bundled corpus: whole-corpus batches, short warm-up."""
        base = dict(max_frames=1000, lr_scale=1.0, warmup_steps=400, total_steps=2000,
                    checkpoint_interval=500)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mel_loss(mel_before: Tensor, mel_after: Tensor, target: np.ndarray,
             mask: np.ndarray | None = None) -> Tensor:
    """Sum of the MSEs of the raw and post-net-refined mel predictions."""
    target = np.asarray(target, dtype=np.float64)
    if mel_before.shape != target.shape or mel_after.shape != target.shape:
        raise T.DimensionError(f"mel shapes {mel_before.shape}/{mel_after.shape} vs "
                               f"target {target.shape}")
    return T.masked_mse(mel_before, target, mask) + T.masked_mse(mel_after, target, mask)


def weighted_stop_bce(stop_logits: Tensor, stop_targets: np.ndarray, pos_weight: float,
                      mask: np.ndarray | None = None) -> Tensor:
    targets = np.asarray(stop_targets, dtype=np.float64)
    if not np.all((targets == 0) | (targets == 1)):
        raise DataError("stop targets must be 0 or 1")
    valid = targets if mask is None else targets * mask
    rows = valid.reshape(-1, valid.shape[-1]) if valid.ndim > 1 else valid[None]
    if np.any(rows.sum(axis=-1) < 1):
        raise DataError("every utterance needs a positive stop frame")
    return T.bce_with_logits(stop_logits, targets, pos_weight, mask)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def noam_lr(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """Linear warm-up then inverse square-root decay."""
    step = max(step, 1)
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def clip_grad_norm(params, max_norm: float) -> float:
    norm = T.parameters_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class Adam:
    def __init__(self, named_params, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = dict(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.step_count = 0

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# training step and loop
# ---------------------------------------------------------------------------

def compute_losses(model: TTSModel, batch: Batch, cfg: TrainConfig):
    out = model.forward(batch.ids, batch.dec_in, batch.src_mask, batch.tgt_mask)
    tgt_mask = batch.tgt_mask
    mloss = mel_loss(out.mel_before, out.mel_after, batch.mel, tgt_mask)
    sloss = weighted_stop_bce(out.stop_logits, batch.stop_targets, cfg.stop_weight, tgt_mask)
    total = mloss + T.scale(sloss, cfg.stop_loss_weight)
    return total, mloss, sloss, out


def train_step(model: TTSModel, batch: Batch, opt: Adam, cfg: TrainConfig) -> dict:
    """Forward, weighted loss, backward, global-norm clip and one Adam update."""
    start = time.perf_counter()
    step = opt.step_count + 1
    model.train()
    model.reseed_dropout(cfg.seed, step)
    opt.zero_grad()
    total, mloss, sloss, out = compute_losses(model, batch, cfg)
    if not np.isfinite(total.item()):
        raise NumericalError(
            f"non-finite loss at step {step}: batch={batch.utt_ids} "
            f"alpha_enc={model.alpha_enc:.6g} alpha_dec={model.alpha_dec:.6g} "
            f"mel_loss={mloss.item()} stop_loss={sloss.item()}")
    total.backward()
    params = list(opt.params.values())
    grad_norm = clip_grad_norm(params, cfg.grad_clip)
    lr = noam_lr(step, model.config.d_model, cfg.warmup_steps, cfg.lr_scale)
    opt.step(lr)
    return {
        "step": step,
        "loss": total.item(),
        "mel_loss": mloss.item(),
        "stop_loss": sloss.item(),
        "grad_norm": grad_norm,
        "lr": lr,
        "alpha_enc": model.alpha_enc,
        "alpha_dec": model.alpha_dec,
        "step_seconds": time.perf_counter() - start,
    }


def format_metrics_line(m: dict) -> str:
    return (f"{m['step']}\t{m['mel_loss']:.8g}\t{m['stop_loss']:.8g}\t"
            f"{m['alpha_enc']:.10g}\t{m['alpha_dec']:.10g}\t{m['step_seconds']:.6f}")


def read_metrics_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        step, ml, sl, ae, ad, secs = line.split("\t")
        rows.append({"step": int(step), "mel_loss": float(ml), "stop_loss": float(sl),
                     "alpha_enc": float(ae), "alpha_dec": float(ad),
                     "step_seconds": float(secs)})
    return rows


class Trainer:
    """Epoch loop over frame-budget batches of in-memory utterances.

    ``utterances`` maps utterance id to ``(token_ids, mel_frames)``. Each epoch
    gets a fresh :class:`BatchPlan` seeded with ``seed + epoch`` so a resumed
    run visits batches in the same order as an uninterrupted one.
    """

    def __init__(self, model: TTSModel, utterances: dict, cfg: TrainConfig,
                 opt: Adam | None = None):
        if not utterances:
            raise DataError("empty manifest")
        self.model = model
        self.cfg = cfg
        self.utterances = utterances
        self.opt = opt or Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.history: list[dict] = []
        self._plans: dict[int, BatchPlan] = {}

    def plan_for_epoch(self, epoch: int) -> BatchPlan:
        manifest = [(u, len(mel)) for u, (_, mel) in self.utterances.items()]
        return build_dynamic_batches(manifest, self.cfg.max_frames, self.cfg.seed + epoch)

    def batch_schedule(self, step: int) -> Batch:
        """The batch used at 1-based ``step``; depends only on the step index."""
        epoch, index = 0, step - 1
        while True:
            plan = self._plan_cache(epoch)
            if index < len(plan):
                planned = plan.batches[index]
                break
            index -= len(plan)
            epoch += 1
        return self.make_batch(planned.utt_ids)

    def _plan_cache(self, epoch: int) -> BatchPlan:
        if epoch not in self._plans:
            self._plans[epoch] = self.plan_for_epoch(epoch)
        return self._plans[epoch]

    def make_batch(self, utt_ids) -> Batch:
        ids = [self.utterances[u][0] for u in utt_ids]
        mels = [self.utterances[u][1] for u in utt_ids]
        return collate(utt_ids, ids, mels)

    def run(self, steps: int | None = None, log_path=None,
            callback: Callable[[dict], None] | None = None,
            checkpoint_fn: Callable[[int], None] | None = None) -> list[dict]:
        steps = self.cfg.total_steps if steps is None else steps
        log = open(log_path, "a") if log_path else None
        try:
            for _ in range(steps):
                step = self.opt.step_count + 1
                metrics = train_step(self.model, self.batch_schedule(step), self.opt, self.cfg)
                self.history.append(metrics)
                if log:
                    log.write(format_metrics_line(metrics) + "\n")
                    log.flush()
                if callback:
                    callback(metrics)
                interval = self.cfg.checkpoint_interval
                if checkpoint_fn and interval and metrics["step"] % interval == 0:
                    checkpoint_fn(metrics["step"])
        finally:
            if log:
                log.close()
        return self.history


def evaluate_mel_mse(model: TTSModel, utterances: dict, max_frames: int = 100000) -> dict:
    """Teacher-forced eval-mode MSE of the post-net output, pooled over all frames."""
    model.eval()
    sq_before = sq_after = count = 0.0
    manifest = [(u, len(m)) for u, (_, m) in utterances.items()]
    plan = build_dynamic_batches(manifest, max_frames, 0)
    with no_grad():
        for planned in plan:
            ids = [utterances[u][0] for u in planned.utt_ids]
            mels = [utterances[u][1] for u in planned.utt_ids]
            batch = collate(planned.utt_ids, ids, mels)
            out = model.forward(batch.ids, batch.dec_in, batch.src_mask, batch.tgt_mask)
            w = batch.tgt_mask[..., None]
            sq_before += float((((out.mel_before.data - batch.mel) ** 2) * w).sum())
            sq_after += float((((out.mel_after.data - batch.mel) ** 2) * w).sum())
            count += float(w.sum()) * batch.mel.shape[-1]
    return {"mse_before": sq_before / count, "mse_after": sq_after / count}


def lr_at(step: int, d_model: int, cfg: TrainConfig) -> float:
    return noam_lr(step, d_model, cfg.warmup_steps, cfg.lr_scale)


__all__ = [
    "Adam", "NumericalError", "TrainConfig", "Trainer", "clip_grad_norm", "compute_losses",
    "evaluate_mel_mse", "format_metrics_line", "mel_loss", "noam_lr", "read_metrics_log",
    "train_step", "weighted_stop_bce"
]
