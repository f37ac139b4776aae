"""Epoch/batch training loop with resumable checkpoints.

Every random draw is keyed by ``(seed, purpose, epoch)``, so an interrupted
run resumed from a checkpoint replays exactly the same stream as an
uninterrupted one.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError
from .models import (
    LossBreakdown,
    ModelConfig,
    ModelParams,
    dump_model,
    init_model,
    load_model,
    training_step,
)
from .nn import AdamConfig, adam_step
from .tensor import SeededRng, as_matrix

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,total,primary,kl,seconds"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 512
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    log_every: int = 0
    checkpoint_path: str | Path | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return self.records[-1].seconds if self.records else 0.0

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        rows = [LOG_HEADER]
        for r in self.records:
            rows.append(f"{r.epoch},{r.loss.total!r},{r.loss.primary_term!r},{r.loss.kl_term!r},{r.seconds!r}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_rows(cls, rows: list[str]) -> "TrainLog":
        """Parse ``epoch,total,primary,kl[,seconds]`` rows; missing seconds read as 0."""
        out = cls()
        for row in rows:
            try:
                fields = row.split(",")
                if len(fields) == 4:
                    fields.append("0")
                epoch, total, primary, kl, seconds = fields
                out.records.append(
                    EpochRecord(int(epoch), LossBreakdown(float(total), float(primary), float(kl)), float(seconds))
                )
            except ValueError as exc:
                raise FormatError(f"malformed log row {row!r}") from exc
        return out


def batch_slices(rows: int, batch_size: int, min_batch: int) -> list[slice]:
    """Batch boundaries for one epoch; a short tail is kept only if >= min_batch."""
    slices = [slice(s, s + batch_size) for s in range(0, rows - batch_size + 1, batch_size)]
    tail_start = (rows // batch_size) * batch_size
    if rows - tail_start >= max(min_batch, 1) and tail_start < rows:
        slices.append(slice(tail_start, rows))
    return slices


def steps_per_epoch(rows: int, batch_size: int, min_batch: int) -> int:
    return len(batch_slices(rows, batch_size, min_batch))


def _run_epochs(model_config: ModelConfig, train_config: TrainConfig, data: np.ndarray, params: ModelParams,
                start_epoch: int, history: TrainLog) -> TrainLog:
    rows = data.shape[0]
    slices = batch_slices(rows, train_config.batch_size, model_config.min_batch)
    if not slices:
        raise ConfigError(f"{rows} rows cannot form a batch of at least {model_config.min_batch}")
    seed = train_config.seed
    elapsed = history.total_seconds
    for epoch in range(start_epoch, train_config.epochs):
        t0 = time.perf_counter()
        order = SeededRng(seed, "shuffle", epoch).generator.permutation(rows)
        group_rng = SeededRng(seed, "groups", epoch)
        noise_rng = SeededRng(seed, "noise", epoch)
        sums = np.zeros(3)
        degenerate = 0
        for b, sl in enumerate(slices):
            batch = data[order[sl]]
            loss, grads = training_step(params, batch, model_config, noise_rng=noise_rng, group_rng=group_rng)
            if not math.isfinite(loss.total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            try:
                for net, g in zip(params.networks(), grads.networks()):
                    adam_step(net, g, train_config.adam)
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, batch {b}") from exc
            sums += (loss.total, loss.primary_term, loss.kl_term)
            degenerate += loss.degenerate_groups
        mean = sums / len(slices)
        elapsed += time.perf_counter() - t0
        record = EpochRecord(epoch, LossBreakdown(*map(float, mean), degenerate_groups=degenerate), elapsed)
        history.records.append(record)
        if degenerate:
            log.warning("epoch %d: %d degenerate groups", epoch, degenerate)
        if train_config.log_every and (epoch + 1) % train_config.log_every == 0:
            log.info("epoch %d total=%.6g primary=%.6g kl=%.6g", epoch, *mean)
    return history


def _checkpoint_text(train_config: TrainConfig, history: TrainLog) -> str:
    lines = [
        f"epochs_done={len(history)}",
        f"seed={train_config.seed}",
        f"batch_size={train_config.batch_size}",
    ]
    # wall-clock time is left out so that identical runs give identical files
    for r in history.records:
        lines.append(f"log={r.epoch},{r.loss.total!r},{r.loss.primary_term!r},{r.loss.kl_term!r}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path, model_config: ModelConfig, params: ModelParams, train_config: TrainConfig,
                    history: TrainLog) -> None:
    Path(path).write_bytes(dump_model(model_config, params, _checkpoint_text(train_config, history)))


def load_checkpoint(path):
    """Returns ``(model_config, params, epochs_done, history, header)``."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    config, params, kv, log_rows = load_model(blob)
    try:
        epochs_done = int(kv.get("epochs_done", "0"))
    except ValueError as exc:
        raise FormatError("bad epochs_done in checkpoint") from exc
    return config, params, epochs_done, TrainLog.from_rows(log_rows), kv


def train(model_config: ModelConfig, train_config: TrainConfig, data) -> tuple[ModelParams, TrainLog]:
    """Train from scratch; ``epochs * steps_per_epoch`` optimiser steps."""
    x = as_matrix(data, "data")
    if x.shape[1] != model_config.input_dim:
        raise ConfigError(f"data has {x.shape[1]} columns, model expects {model_config.input_dim}")
    if x.shape[0] < model_config.min_batch:
        raise ConfigError(f"need at least {model_config.min_batch} rows, got {x.shape[0]}")
    params = init_model(model_config, SeededRng(train_config.seed, "init"))
    history = _run_epochs(model_config, train_config, x, params, 0, TrainLog())
    if train_config.checkpoint_path is not None:
        save_checkpoint(train_config.checkpoint_path, model_config, params, train_config, history)
    return params, history


def resume(checkpoint, train_config: TrainConfig, data) -> tuple[ModelParams, TrainLog]:
    """Continue training from a checkpoint up to ``train_config.epochs``.

    ``checkpoint`` is a path or the tuple returned by :func:`load_checkpoint`.
    The returned log holds all epochs, stored ones included. Checkpoints do
    not store wall-clock time, so restored epochs report 0 seconds and the
    clock restarts at the resume point.
    """
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    model_config, params, epochs_done, history, header = checkpoint
    x = as_matrix(data, "data")
    if x.shape[1] != model_config.input_dim:
        raise FormatError(f"checkpoint expects {model_config.input_dim} columns, data has {x.shape[1]}")
    if "seed" in header and int(header["seed"]) != train_config.seed:
        log.warning("resuming with seed %d, checkpoint was trained with %s", train_config.seed, header["seed"])
    if epochs_done >= train_config.epochs:
        return params, history
    history = _run_epochs(model_config, train_config, x, params, epochs_done, history)
    if train_config.checkpoint_path is not None:
        save_checkpoint(train_config.checkpoint_path, model_config, params, train_config, history)
    return params, history
