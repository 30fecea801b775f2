"""Two-stage training: (1) extractor + speaker encoder, (2) adaptation layer and
refinement network on top of the frozen extractor, with synthetic edit masks
generated on the fly from the extractor's own errors.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .masks import MaskingFunctionSpec, apply_masking_function
from .audio import AudioSignal
from .mixer import CorpusIndex, make_mixture
from .models import (HitlTseModel, TseModelConfig, load_checkpoint,
                     negative_si_sdr_loss, save_checkpoint)

logger = logging.getLogger(__name__)

MIN_DELTA = 1e-4  # "no improvement" means val loss >= best - MIN_DELTA


@dataclass
class TrainConfig:
    stage: str  # "tse" or "refine"
    lr0: float | None = None           # defaults: tse 0.002, refine 0.001
    plateau_patience: int | None = None  # defaults: tse 4, refine 6
    lr_decay: float = 0.5
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    epochs: int = 300
    mixtures_per_epoch: int = 20000
    batch_size: int = 8
    val_count: int = 64
    k_speakers: int = 2
    with_noise: bool = False
    duration_s: float = 5.0
    snr_range: tuple[float, float] = (-10.0, 10.0)
    sample_rate: int = 16000
    masking: MaskingFunctionSpec | None = None
    seed: int = 0
    model: TseModelConfig = field(default_factory=TseModelConfig)
    tse_checkpoint: str | None = None  # required for stage="refine"

    def __post_init__(self):
        if self.stage not in ("tse", "refine"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.lr0 is None:
            self.lr0 = 0.002 if self.stage == "tse" else 0.001
        if self.plateau_patience is None:
            self.plateau_patience = 4 if self.stage == "tse" else 6
        if self.stage == "refine" and self.masking is None:
            self.masking = MaskingFunctionSpec(kind="dbfs_prob")


def plateau_multiplier(history: list[float], patience: int, factor: float = 0.5,
                       min_delta: float = MIN_DELTA) -> float:
    """LR multiplier implied by a validation-loss history.

    Halves (by `factor`) each time the running best fails to improve for
    `patience` consecutive epochs; an improvement resets the stagnation
    counter. Pure function of the history.
    """
    multiplier = 1.0
    best = np.inf
    stagnant = 0
    for loss in history:
        if loss < best - min_delta:
            best = loss
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= patience:
                multiplier *= factor
                stagnant = 0
    return multiplier


def _batch_seeds(config: TrainConfig, epoch: int, start_index: int, n: int) -> list[int]:
    # Per-item seed stream: distinct across epochs and items, stable per run.
    return [(config.seed * 1_000_003 + epoch * 1_000_000 + start_index + j) & 0x7FFFFFFF
            for j in range(n)]


def _load_batch(index: CorpusIndex, config: TrainConfig, seeds: list[int]):
    mixtures, targets, enrollments = [], [], []
    for s in seeds:
        sample = make_mixture(index, config.k_speakers, config.with_noise,
                              config.duration_s, config.snr_range, s,
                              config.sample_rate)
        mixtures.append(sample.mixture.samples)
        targets.append(sample.target_clean.samples)
        enrollments.append(sample.enrollment.samples)
    to_tensor = lambda arrs: torch.as_tensor(np.stack(arrs), dtype=torch.float32)
    return to_tensor(mixtures), to_tensor(targets), to_tensor(enrollments)


class _JsonlLogger:
    def __init__(self, path):
        self.path = Path(path)

    def log(self, **fields):
        fields.setdefault("wall_time", time.time())
        with open(self.path, "a") as f:
            f.write(json.dumps(fields) + "\n")


def _apply_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _synthesize_masks(y_tse: torch.Tensor, targets: torch.Tensor,
                      config: TrainConfig, epoch: int, seeds: list[int]) -> torch.Tensor:
    """Per-item synthetic edit masks from extractor output vs clean target."""
    spec = config.masking
    masks = []
    for i in range(y_tse.shape[0]):
        item_spec = spec
        if spec.kind == "dbfs_prob":
            # fresh threshold draws each epoch act as data augmentation
            item_spec = MaskingFunctionSpec(
                kind=spec.kind, threshold=spec.threshold,
                threshold_sigma=spec.threshold_sigma, window_len=spec.window_len,
                rng_seed=(spec.rng_seed ^ seeds[i] ^ (epoch << 20)) & 0x7FFFFFFF)
        mask = apply_masking_function(
            AudioSignal(y_tse[i].numpy().astype(np.float64), config.sample_rate),
            AudioSignal(targets[i].numpy().astype(np.float64), config.sample_rate),
            item_spec)
        masks.append(mask.values.astype(np.float32))
    return torch.as_tensor(np.stack(masks))


def _run_training(config: TrainConfig, index: CorpusIndex, work_dir,
                  model: HitlTseModel, trainable_params, forward_loss) -> Path:
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    ckpt_path = work / f"{config.stage}_best.pt"
    log = _JsonlLogger(work / f"{config.stage}_train_log.jsonl")
    with open(work / f"{config.stage}_config.json", "w") as f:
        json.dump(_config_snapshot(config), f, indent=2)

    optimizer = torch.optim.AdamW(trainable_params, lr=config.lr0,
                                  weight_decay=config.weight_decay)
    val_seeds = [(config.seed * 7_777_777 + j) & 0x7FFFFFFF
                 for j in range(config.val_count)]
    val_history: list[float] = []
    best_val = np.inf
    steps = max(1, config.mixtures_per_epoch // config.batch_size)

    for epoch in range(config.epochs):
        lr = config.lr0 * plateau_multiplier(val_history, config.plateau_patience,
                                             config.lr_decay)
        _apply_lr(optimizer, lr)
        model.train()
        train_losses = []
        for step in range(steps):
            seeds = _batch_seeds(config, epoch, step * config.batch_size,
                                 config.batch_size)
            batch = _load_batch(index, config, seeds)
            loss = forward_loss(batch, epoch, seeds)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"divergence: non-finite loss at epoch {epoch} step {step}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable_params, config.grad_clip_norm)
            optimizer.step()
            train_losses.append(float(loss.detach()))
        train_loss = float(np.mean(train_losses))
        log.log(epoch=epoch, split="train", loss=train_loss, lr=lr)

        model.eval()
        val_losses = []
        with torch.no_grad():
            for start in range(0, config.val_count, config.batch_size):
                seeds = val_seeds[start:start + config.batch_size]
                batch = _load_batch(index, config, seeds)
                val_losses.append(float(forward_loss(batch, -1, seeds)))
        val_loss = float(np.mean(val_losses))
        val_history.append(val_loss)
        log.log(epoch=epoch, split="val", loss=val_loss, lr=lr)
        logger.info("stage=%s epoch=%d train=%.3f val=%.3f lr=%.2e",
                    config.stage, epoch, train_loss, val_loss, lr)

        if val_loss < best_val:
            best_val = val_loss
            save_checkpoint(ckpt_path, model,
                            extra={"stage": config.stage, "epoch": epoch,
                                   "val_loss": val_loss,
                                   "train_config": _config_snapshot(config)})
    return ckpt_path


def _config_snapshot(config: TrainConfig) -> dict:
    snap = asdict(config)
    snap["snr_range"] = list(config.snr_range)
    return snap


def train_tse(config: TrainConfig, index: CorpusIndex, work_dir) -> Path:
    """Stage 1: train extractor and speaker encoder jointly on negative SI-SDR."""
    if config.stage != "tse":
        raise ValueError("train_tse requires stage='tse'")
    torch.manual_seed(config.seed)
    model = HitlTseModel(config.model)
    params = list(model.tse.parameters()) + list(model.speaker_encoder.parameters())

    def forward_loss(batch, epoch, seeds):
        mixtures, targets, enrollments = batch
        emb = model.speaker_encoder(enrollments)
        y_tse, _, _ = model.tse(mixtures, emb)
        return negative_si_sdr_loss(y_tse, targets)

    return _run_training(config, index, work_dir, model, params, forward_loss)


def train_refinement(config: TrainConfig, index: CorpusIndex, work_dir) -> Path:
    """Stage 2: freeze the extractor; train adaptation layer + refiner together.

    Loss is negative SI-SDR of y_refine against the clean target; synthetic
    masks come from the configured masking function applied to the frozen
    extractor's output.
    """
    if config.stage != "refine":
        raise ValueError("train_refinement requires stage='refine'")
    if not config.tse_checkpoint:
        raise ValueError("stage='refine' requires tse_checkpoint")
    torch.manual_seed(config.seed + 1)
    model, _ = load_checkpoint(config.tse_checkpoint)
    for p in model.tse.parameters():
        p.requires_grad_(False)
    for p in model.speaker_encoder.parameters():
        p.requires_grad_(False)
    params = list(model.adaptation.parameters()) + list(model.refiner.parameters())

    def forward_loss(batch, epoch, seeds):
        mixtures, targets, enrollments = batch
        with torch.no_grad():
            emb = model.speaker_encoder(enrollments)
            y_tse, tse_mask, _ = model.tse(mixtures, emb)
            edit_masks = _synthesize_masks(y_tse, targets, config, epoch, seeds)
        state = model.adaptation(tse_mask)
        y_refine = model.refiner(mixtures, emb, state, edit_masks)
        return negative_si_sdr_loss(y_refine, targets)

    return _run_training(config, index, work_dir, model, params, forward_loss)
