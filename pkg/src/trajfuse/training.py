"""Training loop, evaluation and the learning-curve log."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import numeric as nx
from .metrics import MetricsReport, all_metrics
from .model import ModelConfig, TrajectoryModel
from .scene import (
    DEFAULT_K,
    DEFAULT_M,
    DEFAULT_T_FUT,
    DEFAULT_T_HIST,
    PredictionInstance,
    Scene,
    build_batch,
    extract_instances,
    iter_batches,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "val_ade")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    batch_size: int = 256
    max_epochs: int = 60
    patience: int = 15
    min_delta: float = 1e-3
    seed: int = 0
    head: str = "l2"
    fusion: str = "scnn"
    encoder: str = "vlstm"
    attention: bool = True
    teacher_forcing: bool = True
    t_h: int = DEFAULT_T_HIST
    t_f: int = DEFAULT_T_FUT
    m: float = DEFAULT_M
    k: int = DEFAULT_K
    n_max: int = 8
    lambda_z: float = 1.0
    frame: str = "target"
    input_scale: float | None = None

    def __post_init__(self):
        if min(self.lr, self.lr_decay_every, self.lr_decay_factor, self.batch_size, self.max_epochs) <= 0:
            raise ValueError("lr, decay schedule, batch size and max_epochs must be positive")
        self.model_config()  # validates the enumerations

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def lr_at(self, epoch: int) -> float:
        return nx.staircase_lr(self.lr, epoch, self.lr_decay_every, self.lr_decay_factor)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: TrajectoryModel
    log: list[dict]
    best_epoch: int
    best_val_ade: float

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            w.writeheader()
            for row in self.log:
                w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_COLUMNS})


def predict_instances(predictor, instances: Sequence[PredictionInstance], batch_size: int = 512) -> np.ndarray:
    out = [predictor.predict(build_batch(instances[lo:lo + batch_size])) for lo in range(0, len(instances), batch_size)]
    return np.concatenate(out, axis=0)


def _val_pass(model: TrajectoryModel, instances, batch_size: int) -> tuple[float, float]:
    losses, n = 0.0, 0
    preds = []
    with nx.no_grad():
        for lo in range(0, len(instances), batch_size):
            batch = build_batch(instances[lo:lo + batch_size])
            losses += model.loss(batch, teacher=False).item() * batch.size
            n += batch.size
            preds.append(model.predict(batch))
    gts = np.stack([i.ground_truth for i in instances])
    return losses / n, all_metrics(np.concatenate(preds), gts)["ADE"]


def train_instances(config: TrainConfig, train_set: Sequence[PredictionInstance],
                    val_set: Sequence[PredictionInstance] | None = None) -> TrainResult:
    """Fit a model; the checkpoint with the best validation ADE is returned.

    Without a validation set the training set is used for model selection.
    """
    if not train_set:
        raise ValueError("train: empty training set")
    val_set = list(val_set) if val_set else list(train_set)
    init_seq, data_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = TrajectoryModel(config.model_config(), int(init_seq.generate_state(1)[0]))
    params = model.params
    opt = nx.Adam(params, lr=config.lr)
    rng = np.random.default_rng(data_seq)
    rows: list[dict] = []
    best = (np.inf, -1, None)
    ref, stale = np.inf, 0
    for epoch in range(config.max_epochs):
        lr = config.lr_at(epoch)
        total, n = 0.0, 0
        for bi, batch in enumerate(iter_batches(train_set, config.batch_size, rng)):
            params.zero_grad()
            loss = model.loss(batch, teacher=config.teacher_forcing)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, bi, value)
            nx.backward(loss)
            params.fill_missing_grads()
            opt.step(lr)
            total += value * batch.size
            n += batch.size
        val_loss, val_ade = _val_pass(model, val_set, 512)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, -1, val_loss)
        rows.append({"epoch": epoch, "lr": lr, "train_loss": total / n, "val_loss": val_loss, "val_ade": val_ade})
        log.info("epoch %d lr %.2e train %.5f val %.5f ade %.4f", epoch, lr, total / n, val_loss, val_ade)
        if val_ade < best[0]:
            best = (val_ade, epoch, params.copy())
        # early stopping counts epochs without a min_delta improvement
        if val_ade < ref - config.min_delta:
            ref, stale = val_ade, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best_params = best[2]
    return TrainResult(TrajectoryModel(model.config, model.seed, best_params), rows, best[1], float(best[0]))


def train(config: TrainConfig, train_scenes: Sequence[Scene], val_scenes: Sequence[Scene] | None = None,
          stride: int = 1) -> TrainResult:
    """Extract instances from scenes at the configured horizons and train."""
    tr = instances_from_scenes(train_scenes, config, stride)
    va = instances_from_scenes(val_scenes, config, stride) if val_scenes else None
    return train_instances(config, tr, va)


def instances_from_scenes(scenes: Sequence[Scene], config, stride: int = 1) -> list[PredictionInstance]:
    out = []
    for s in scenes:
        out.extend(extract_instances(s, config.t_h, config.t_f, config.m, config.k, stride))
    return out


def measure_throughput(predictor, instances: Sequence[PredictionInstance], calls: int = 1000) -> float:
    """Single-stream predictions per second; each call packs one instance and runs the forward pass."""
    if not instances:
        return float("nan")
    start = time.perf_counter()
    for i in range(calls):
        predictor.predict(build_batch([instances[i % len(instances)]]))
    return calls / (time.perf_counter() - start)


def evaluate(predictor, instances: Sequence[PredictionInstance], throughput_calls: int = 1000) -> MetricsReport:
    """Per-class ADE/MDE/FDE plus single-stream throughput.

    ``predictor`` is anything with ``predict(SceneBatch) -> (b, t_f, 3)``.
    """
    if not instances:
        raise ValueError("evaluate: no instances")
    preds = predict_instances(predictor, instances)
    gts = np.stack([i.ground_truth for i in instances])
    tp = measure_throughput(predictor, instances, throughput_calls) if throughput_calls else None
    return MetricsReport.from_predictions(preds, gts, [i.cls for i in instances], tp)
