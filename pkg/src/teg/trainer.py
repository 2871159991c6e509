# src/teg/trainer.py
"""Bucle de entrenamiento: un batch 64+64 por época, Adam, checkpoints y AUC de validación."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import Batch, Dataset, sample_batch
from .errors import CheckpointError, ConfigError, NonFiniteLossError
from .loss import LossBreakdown, LossConfig, total_loss
from .metrics import frame_level_auc, score_dataset
from .model import TeGConfig, TeGParams, forward, init_params
from .optim import AdamState, adam_step
from .tensor import backward
from .utils import write_jsonl

logger = logging.getLogger(__name__)

FINAL_CHECKPOINT = "final.tegw"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    decoupled_weight_decay: bool = False
    batch_per_class: int = 64
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be non-negative")
        if self.batch_per_class < 1:
            raise ConfigError(f"batch_per_class must be >= 1, got {self.batch_per_class}")
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ConfigError("checkpoint_every and eval_every must be >= 0 (0 disables)")


@dataclass
class EpochRecord:
    epoch: int
    total: float
    bce: float
    fm: float
    sparsity: float
    smoothness: float
    seconds: float
    val_auc: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def val_auc_trace(self) -> list[tuple[int, float]]:
        return [(e.epoch, e.val_auc) for e in self.epochs if e.val_auc is not None]

    def write(self, path: str | os.PathLike) -> None:
        write_jsonl(path, (asdict(e) for e in self.epochs))


def _restrict(batch_records, ablation: str | None):
    return [r.volume.restrict_to(ablation) if ablation else r.volume for r in batch_records]


def train_step(
    params: TeGParams,
    batch: Batch,
    loss_cfg: LossConfig,
    state: AdamState,
    model_cfg: TeGConfig,
    rng: np.random.Generator | None = None,
    ablation: str | None = None,
) -> tuple[TeGParams, AdamState, LossBreakdown]:
    training = model_cfg.dropout_rate > 0.0
    abnormal = [forward(v, params, model_cfg, training, rng) for v in _restrict(batch.abnormal, ablation)]
    normal = [forward(v, params, model_cfg, training, rng) for v in _restrict(batch.normal, ablation)]
    loss, parts = total_loss(abnormal, normal, loss_cfg)
    for name, value in parts.as_dict().items():
        if not math.isfinite(value):
            raise NonFiniteLossError(f"non-finite {name} loss ({value}) at optimizer step {state.step_count + 1}")
    grads = backward(loss, params.parameters())
    adam_step(params.parameters(), grads, state)
    return params, state, parts


def validation_auc(dataset: Dataset, params: TeGParams, model_cfg: TeGConfig, ablation: str | None = None) -> float:
    if ablation:
        dataset = dataset.restrict_to(ablation)
    return frame_level_auc(score_dataset(dataset, params, model_cfg))


def fit(
    dataset: Dataset,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    model_cfg: TeGConfig,
    validation: Dataset | None = None,
    checkpoint_dir: str | os.PathLike | None = None,
    report_path: str | os.PathLike | None = None,
    ablation: str | None = None,
) -> tuple[TeGParams, TrainReport]:
    """Train from scratch; (seed, configs, dataset) fully determine the result."""
    params = init_params(model_cfg, train_cfg.seed)
    state = AdamState.create(
        params.parameters(),
        learning_rate=train_cfg.learning_rate,
        weight_decay=train_cfg.weight_decay,
        decoupled=train_cfg.decoupled_weight_decay,
    )
    rng = np.random.default_rng(train_cfg.seed)
    report = TrainReport()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    def flush() -> None:
        if report_path is not None:
            report.write(report_path)

    def checkpoint(name: str) -> None:
        try:
            save_checkpoint(ckpt_dir / name, params, model_cfg)
        except OSError as exc:
            flush()
            raise CheckpointError(f"could not write checkpoint {ckpt_dir / name}: {exc}") from exc

    logger.info("training start epochs=%d lr=%g wd=%g dim=%d heads=%d ablation=%s",
                train_cfg.epochs, train_cfg.learning_rate, train_cfg.weight_decay,
                model_cfg.dim, model_cfg.heads, ablation or "none")
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        batch = sample_batch(dataset, rng, train_cfg.batch_per_class)
        try:
            _, _, parts = train_step(params, batch, loss_cfg, state, model_cfg, rng, ablation)
        except NonFiniteLossError:
            flush()
            raise
        rec = EpochRecord(epoch, parts.total, parts.bce, parts.fm, parts.sparsity, parts.smoothness,
                          time.perf_counter() - t0)
        if validation is not None and train_cfg.eval_every and epoch % train_cfg.eval_every == 0:
            rec.val_auc = validation_auc(validation, params, model_cfg, ablation)
        report.epochs.append(rec)
        logger.info("epoch=%d total=%.6f bce=%.6f fm=%.6f sparsity=%.6f smoothness=%.6f val_auc=%s",
                    epoch, parts.total, parts.bce, parts.fm, parts.sparsity, parts.smoothness,
                    "-" if rec.val_auc is None else f"{rec.val_auc:.4f}")
        if ckpt_dir is not None and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            checkpoint(f"checkpoint-epoch{epoch:05d}.tegw")

    if ckpt_dir is not None:
        checkpoint(FINAL_CHECKPOINT)
    flush()
    logger.info("training done epochs=%d", len(report))
    return params, report
