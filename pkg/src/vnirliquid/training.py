"""Mini-batch Adam training, multi-seed model selection and evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dataset import AugmentationPolicy, DatasetSplit, LabeledSample, augment, stack
from .labels import CONTAINER_CLASSES, CONTENT_CLASSES, N_CONTAINER, N_CONTENT
from .model import DEFAULT_DROPOUT, DEFAULT_HIDDEN, Adam, HierarchicalModel, Link, Mode, loss

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """Training produced a non-finite loss."""


LR_SCHEDULES = ("constant", "exponential", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seeds: tuple[int, ...] = tuple(range(10))
    mode: Mode = Mode.HIERARCHICAL
    link: Link = Link.PROBS
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    dropout_rate: float = DEFAULT_DROPOUT
    # "constant", "exponential" (times lr_decay each epoch) or "cosine" (to zero at the last epoch)
    lr_schedule: str = "constant"
    lr_decay: float = 1.0
    # linear ramp from learning_rate / warmup_epochs up to learning_rate
    warmup_epochs: int = 0
    dtype: str = "float32"
    # z-score inputs with training-set statistics before the first layer
    standardize: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "link", Link(self.link))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.lr_decay <= 0:
            raise ValueError("learning_rate must be >= 0 and lr_decay > 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        np.dtype(self.dtype)


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    lr = config.learning_rate
    if config.lr_schedule == "exponential":
        lr *= config.lr_decay**epoch
    elif config.lr_schedule == "cosine":
        lr *= 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))
    if epoch < config.warmup_epochs:
        lr *= (epoch + 1) / config.warmup_epochs
    return float(lr)


@dataclass
class Metrics:
    container_acc: float
    content_acc: float
    joint_acc: float
    container_confusion: np.ndarray
    content_confusion: np.ndarray
    n: int

    @staticmethod
    def row_normalize(counts: np.ndarray) -> np.ndarray:
        sums = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, sums, out=np.zeros(counts.shape, dtype=float), where=sums > 0)

    def per_container_accuracy(self) -> dict[str, float | None]:
        """Recall of each true container class (None if absent from the set)."""
        out = {}
        for i, name in enumerate(CONTAINER_CLASSES):
            total = self.container_confusion[i].sum()
            out[name] = float(self.container_confusion[i, i] / total) if total else None
        return out

    def per_content_accuracy(self) -> dict[str, float | None]:
        out = {}
        for i, name in enumerate(CONTENT_CLASSES):
            total = self.content_confusion[i].sum()
            out[name] = float(self.content_confusion[i, i] / total) if total else None
        return out

    def summary(self) -> dict[str, float]:
        return {
            "container_acc": self.container_acc,
            "content_acc": self.content_acc,
            "joint_acc": self.joint_acc,
        }


def confusion(true: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return counts


def metrics_from_predictions(
    yc: np.ndarray, yb: np.ndarray, pc: np.ndarray, pb: np.ndarray
) -> Metrics:
    if len(yc) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    ok_c = pc == yc
    ok_b = pb == yb
    return Metrics(
        container_acc=float(ok_c.mean()),
        content_acc=float(ok_b.mean()),
        joint_acc=float((ok_c & ok_b).mean()),
        container_confusion=confusion(yc, pc, N_CONTAINER),
        content_confusion=confusion(yb, pb, N_CONTENT),
        n=int(len(yc)),
    )


def evaluate(model: HierarchicalModel, samples: Sequence[LabeledSample] | tuple) -> Metrics:
    """Accuracy of both heads, joint accuracy and confusion counts.

    ``samples`` is a list of LabeledSample or an already stacked (X, yc, yb).
    """
    if isinstance(samples, tuple):
        X, yc, yb = samples
    else:
        if not samples:
            raise ValueError("cannot evaluate on an empty sample set")
        X, yc, yb = stack(samples, dtype=model.dtype)
    pred = model.predict(X.astype(model.dtype, copy=False))
    return metrics_from_predictions(yc, yb, pred.container_argmax, pred.content_argmax)


def selection_score(metrics: Metrics, mode: Mode) -> float:
    # naive branches are independent, so their joint accuracy is not a target
    if mode is Mode.NAIVE:
        return (metrics.container_acc + metrics.content_acc) / 2
    return metrics.joint_acc


@dataclass
class EpochRecord:
    seed: int
    epoch: int
    loss: float
    container_loss: float
    content_loss: float
    val_container_acc: float
    val_content_acc: float
    val_joint_acc: float


@dataclass
class SeedRun:
    seed: int
    model: HierarchicalModel
    validation: Metrics
    trace: list[EpochRecord] = field(default_factory=list)


@dataclass
class TrainResult:
    best: HierarchicalModel
    best_seed: int
    runs: list[SeedRun]

    @property
    def trace(self) -> list[EpochRecord]:
        return [rec for run in self.runs for rec in run.trace]


def _seed_streams(seed: int, policy_seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    init_ss, aug_ss, loop_ss = np.random.SeedSequence([seed, policy_seed]).spawn(3)
    aug_seed = int(aug_ss.generate_state(1)[0])
    return aug_seed, np.random.default_rng(init_ss), np.random.default_rng(loop_ss)


def train_one(
    split: DatasetSplit,
    policy: AugmentationPolicy,
    config: TrainConfig,
    seed: int,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> SeedRun:
    """Train a single model from ``seed`` and score it on the validation partition."""
    if not split.train:
        raise ValueError("training partition is empty")
    dtype = np.dtype(config.dtype)
    aug_seed, init_rng, loop_rng = _seed_streams(seed, policy.seed)
    train_set = augment(split.train, replace(policy, seed=aug_seed))
    X, yc, yb = stack(train_set, dtype=dtype)
    val = stack(split.validation, dtype=dtype) if split.validation else None

    feature_config = split.train[0].features.config.value
    model = HierarchicalModel.init(
        X.shape[1],
        init_rng,
        hidden=config.hidden,
        mode=config.mode,
        link=config.link,
        dropout_rate=config.dropout_rate,
        feature_config=feature_config,
        dtype=dtype,
    )
    if config.standardize:
        model.fit_standardization(X)
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps)
    n = X.shape[0]
    trace = []
    for epoch in range(config.epochs):
        opt.lr = learning_rate_at(config, epoch)
        perm = loop_rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            cache = model.forward(X[idx], loop_rng)
            total, lc, lb = loss(cache.prediction, yc[idx], yb[idx])
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss at seed {seed}, epoch {epoch}, batch {b}")
            sums += np.array([total, lc, lb]) * len(idx)
            opt.step(model.backward(cache, yc[idx], yb[idx]))
        sums /= n
        if val is not None:
            vm = evaluate(model, val)
            accs = (vm.container_acc, vm.content_acc, vm.joint_acc)
        else:
            accs = (float("nan"),) * 3
        rec = EpochRecord(seed, epoch, *map(float, sums), *accs)
        trace.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    log.debug("seed %d done: loss %.4f", seed, trace[-1].loss)
    validation = evaluate(model, val) if val is not None else None
    return SeedRun(seed, model, validation, trace)


def train(
    split: DatasetSplit,
    policy: AugmentationPolicy,
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train one model per seed; keep the one scoring highest on validation.

    Ties go to the earlier seed in ``config.seeds``.
    """
    if not split.validation:
        raise ValueError("validation partition is empty; model selection needs it")
    runs = []
    best = None
    for seed in config.seeds:
        run = train_one(split, policy, config, seed, on_epoch)
        runs.append(run)
        score = selection_score(run.validation, config.mode)
        log.info("seed %d validation score %.4f", seed, score)
        if best is None or score > selection_score(best.validation, config.mode):
            best = run
    return TrainResult(best.model, best.seed, runs)
