"""Loss, optimizer, schedules, class balancing, metrics and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import tensor as T
from .data import Dataset, format_float
from .model import (
    ConfigError,
    ModelConfig,
    ModelParams,
    forward_full,
    init_params,
    named_parameters,
    restore,
    snapshot,
)
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-5
    max_epochs: int = 20
    early_stop_patience: int = 3
    scheduler_factor: float = 0.5
    scheduler_patience: int = 2
    scheduler_threshold: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.1
    balance: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.early_stop_patience < 1 or self.scheduler_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 < self.scheduler_factor <= 1.0:
            raise ConfigError(f"scheduler_factor must lie in (0, 1], got {self.scheduler_factor}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood via log-softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(B), labels]
    return T.mul(T.sum_(picked), -1.0 / B)


class AdamW:
    """Adam with decoupled weight decay, applied in place to tensor data."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = p.data - self.lr * self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss is below the best so far by more than
    ``threshold``. The counter resets after each reduction.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 2, threshold: float = 1e-4):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class EarlyStopping:
    def __init__(self, patience: int = 3, threshold: float = 1e-4):
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def upsample_balance(dataset: Dataset, rng: np.random.Generator) -> Dataset:
    """Duplicate minority-class records until every class matches the majority count.

    Originals keep their order; duplicates (drawn with replacement from the
    same class) are appended class by class.
    """
    by_class: list[list[int]] = [[] for _ in range(dataset.num_classes)]
    for k, r in enumerate(dataset.records):
        by_class[r.label].append(k)
    empty = [c for c, idx in enumerate(by_class) if not idx]
    if empty:
        raise ValueError(f"cannot balance: classes {empty} have no samples")
    target = max(len(idx) for idx in by_class)
    records = list(dataset.records)
    for idx in by_class:
        short = target - len(idx)
        if short:
            records.extend(dataset.records[i] for i in rng.choice(idx, size=short, replace=True))
    return dataset.with_records(records)


@dataclass
class ClassCounts:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class: list[ClassCounts]
    n: int

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": [
                {
                    "class": c,
                    "tn": k.tn,
                    "fp": k.fp,
                    "fn": k.fn,
                    "tp": k.tp,
                    "precision": k.precision,
                    "recall": k.recall,
                    "f1": k.f1,
                }
                for c, k in enumerate(self.per_class)
            ],
        }


def metrics_from_predictions(labels, preds, num_classes: int) -> Metrics:
    """One-vs-rest confusion counts, accuracy and macro-F1 (0/0 counts as F1 = 0)."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    n = labels.size
    per_class = []
    for c in range(num_classes):
        t, p = labels == c, preds == c
        per_class.append(
            ClassCounts(
                tn=int(np.sum(~t & ~p)),
                fp=int(np.sum(~t & p)),
                fn=int(np.sum(t & ~p)),
                tp=int(np.sum(t & p)),
            )
        )
    accuracy = sum(k.tp for k in per_class) / n if n else 0.0
    macro_f1 = float(np.mean([k.f1 for k in per_class])) if per_class else 0.0
    return Metrics(accuracy, macro_f1, per_class, n)


def predict_dataset(
    params: ModelParams, cfg: ModelConfig, dataset: Dataset, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode logits and argmax predictions for every record."""
    text, img, _ = dataset.arrays()
    out = []
    for s in range(0, len(dataset), batch_size):
        out.append(forward_full(params, cfg, text[s : s + batch_size], img[s : s + batch_size]).logits.data)
    logits = np.concatenate(out) if out else np.empty((0, cfg.num_classes))
    return logits, np.argmax(logits, axis=-1)


def dataset_loss(params: ModelParams, cfg: ModelConfig, dataset: Dataset, batch_size: int = 256) -> float:
    logits, _ = predict_dataset(params, cfg, dataset, batch_size)
    _, _, labels = dataset.arrays()
    return cross_entropy(Tensor(logits), labels).item()


def evaluate(params: ModelParams, cfg: ModelConfig, dataset: Dataset) -> Metrics:
    _, preds = predict_dataset(params, cfg, dataset)
    _, _, labels = dataset.arrays()
    return metrics_from_predictions(labels, preds, cfg.num_classes)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: Optional[float]
    val_accuracy: Optional[float]
    val_macro_f1: Optional[float]

    def to_json(self) -> str:
        def fmt(v):
            if v is None:
                return "null"
            if isinstance(v, float):
                return format_float(v)
            return json.dumps(v)

        return "{" + ", ".join(f'"{k}": {fmt(v)}' for k, v in self.__dict__.items()) + "}"


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Dataset,
    params: Optional[ModelParams] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Mini-batch AdamW training with plateau LR decay and early stopping.

    A seeded ``val_fraction`` of ``dataset`` is held out for scheduling,
    early stopping and best-parameter retention; with ``val_fraction=0`` the
    training loss drives scheduling and the final parameters are kept.
    """
    if dataset.D_text != model_cfg.D_text or dataset.D_img != model_cfg.D_img:
        raise ConfigError(
            f"dataset dims ({dataset.D_text}, {dataset.D_img}) do not match model "
            f"config ({model_cfg.D_text}, {model_cfg.D_img})"
        )
    if dataset.num_classes != model_cfg.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, model config {model_cfg.num_classes}"
        )
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg) if params is None else params
    tensors = [t for _, t in named_parameters(params)]
    for t in tensors:
        t.requires_grad = True

    n_val = int(math.floor(train_cfg.val_fraction * len(dataset)))
    order = rng.permutation(len(dataset))
    val_set = dataset.subset(order[:n_val]) if n_val else None
    train_set = dataset.subset(np.sort(order[n_val:]))
    if train_cfg.balance and len(train_set):
        train_set = upsample_balance(train_set, rng)
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    text, img, labels = train_set.arrays()

    opt = AdamW(tensors, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    sched = PlateauScheduler(
        train_cfg.lr, train_cfg.scheduler_factor, train_cfg.scheduler_patience, train_cfg.scheduler_threshold
    )
    stopper = EarlyStopping(train_cfg.early_stop_patience, train_cfg.scheduler_threshold)
    result = TrainResult(params)
    best_loss, best_state = math.inf, None

    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = rng.permutation(len(train_set))
        losses, weights = [], []
        for s in range(0, len(perm), train_cfg.batch_size):
            idx = perm[s : s + train_cfg.batch_size]
            with Tape() as tape:
                out = forward_full(params, model_cfg, text[idx], img[idx], train=True, rng=rng)
                loss = cross_entropy(out.logits, labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            T.backward(loss, tape, leaves=tensors)
            opt.step()
            losses.append(value)
            weights.append(len(idx))
            result.step_losses.append(value)
        train_loss = float(np.average(losses, weights=weights))

        if val_set is not None:
            logits, preds = predict_dataset(params, model_cfg, val_set)
            _, _, val_labels = val_set.arrays()
            val_loss = cross_entropy(Tensor(logits), val_labels).item()
            m = metrics_from_predictions(val_labels, preds, model_cfg.num_classes)
            record = EpochRecord(epoch, opt.lr, train_loss, val_loss, m.accuracy, m.macro_f1)
            monitor = val_loss
        else:
            record = EpochRecord(epoch, opt.lr, train_loss, None, None, None)
            monitor = train_loss
        result.log.append(record)
        logger.info(record.to_json())
        if on_epoch is not None:
            on_epoch(record)

        if val_set is not None and monitor < best_loss:
            best_loss, best_state, result.best_epoch = monitor, snapshot(params), epoch
        opt.lr = sched.step(monitor)
        if val_set is not None and stopper.step(monitor):
            result.stopped_early = True
            break

    if best_state is not None:
        restore(params, best_state)
    return result
