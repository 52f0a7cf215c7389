"""Outer-minimization driver: SGD with momentum, step schedules, epochs and checkpoint selection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, example_streams, inner_max
from .data import AugmentConfig, Dataset, augment, batches
from .distill import ConfigurationError, DefenseConfig, ParameterError, reference_labels, outer_loss
from .eval import accuracy, robust_accuracy
from .nn import Checkpoint, ModelSpec, ParameterSet, build_model, forward, save_checkpoint
from .tensor import ContractError, NonFiniteError, Tape, Tensor, no_grad

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class OptimizerState:
    buffers: dict[str, np.ndarray]
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4

    @classmethod
    def for_params(cls, params: ParameterSet, **kw) -> "OptimizerState":
        return cls({k: np.zeros_like(t.data) for k, t in params.items()}, **kw)


def sgd_step(params: ParameterSet, grads: dict[str, np.ndarray], state: OptimizerState):
    """Classic SGD: weight decay folded into the gradient, then heavy-ball momentum."""
    for name, t in params.items():
        g = grads[name]
        buf = state.buffers[name]
        if g.shape != t.shape or buf.shape != t.shape:
            raise ContractError(f"{name}: parameter {t.shape}, grad {g.shape}, buffer {buf.shape}")
        g = g + state.weight_decay * t.data
        buf = state.momentum * buf + g
        state.buffers[name] = buf.astype(t.dtype, copy=False)
        t.data = (t.data - state.lr * buf).astype(t.dtype, copy=False)
    return params, state


@dataclass(frozen=True)
class Schedule:
    total_epochs: int = 60
    decay_epochs: tuple = (43, 52, 57)
    decay_factor: float = 0.1
    initial_lr: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        d = self.decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ParameterError(f"decay epochs must be strictly increasing, got {d}")
        if d and (d[0] < 1 or d[-1] > self.total_epochs):
            raise ParameterError(f"decay epochs must lie in [1, {self.total_epochs}], got {d}")

    @classmethod
    def rslad(cls) -> "Schedule":
        return cls(300, (215, 260, 285))

    @classmethod
    def natural(cls) -> "Schedule":
        return cls(100, (75, 90))


def lr_at(schedule: Schedule, epoch: int) -> float:
    """Learning rate for a 1-indexed epoch; a decay listed at epoch N applies from N on."""
    if not 1 <= epoch <= schedule.total_epochs:
        raise ParameterError(f"epoch {epoch} outside [1, {schedule.total_epochs}]")
    k = sum(1 for e in schedule.decay_epochs if e <= epoch)
    return schedule.initial_lr * schedule.decay_factor ** k


@dataclass
class TrainRunConfig:
    defense: DefenseConfig
    attack: AttackConfig
    schedule: Schedule
    student_spec: ModelSpec
    batch_size: int = 128
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 2e-4
    selection_attack: AttackConfig | None = None  # None -> PGD_TRADES flavor at the training radius
    val_fraction: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    deterministic: bool = False  # omit wall-clock fields from the history

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.selection_attack is None:
            self.selection_attack = AttackConfig.pgd_trades(self.attack.epsilon)


def _names_grads(params: ParameterSet, tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    names = list(params.tensors)
    grads = tape.gradient(loss, [params.tensors[n] for n in names])
    return dict(zip(names, grads))


def _train_step(cfg, student, teacher, epoch, data, idx, aug_rng, inner_method, state) -> tuple[float, int]:
    defense = cfg.defense
    x = data.images[idx]
    if cfg.augment.crop or cfg.augment.horizontal_flip_prob > 0:
        x = augment(x, cfg.augment, aug_rng)
    y = data.labels[idx]
    targets = None
    if defense.method == "RSLAD" or inner_method == "RSLAD":
        if defense.soft_label == "smooth" or teacher is not None:
            targets = reference_labels(defense, teacher, x, y, student.spec.num_classes)
    if defense.method == "NAT":
        x_adv = x
    else:
        fixed = inner_method == "RSLAD" and (defense.soft_label == "smooth" or defense.rsl_source == "natural")
        x_adv = inner_max(inner_method, student, teacher, x, y, cfg.attack, example_streams(cfg.seed, idx, 1, epoch),
                          targets=targets if fixed else None, rsl_source=defense.rsl_source).data
    with Tape() as tape:
        loss = outer_loss(defense, student, teacher, x, x_adv, y, targets=targets)
    value = float(loss.data)
    if np.isfinite(value):
        sgd_step(student, _names_grads(student, tape, loss), state)
    with no_grad():
        hits = int(np.sum(np.argmax(forward(student, Tensor(x)).data, axis=1) == y))
    return value, hits


def train_epoch(cfg: TrainRunConfig, student: ParameterSet, teacher: ParameterSet | None, epoch: int,
                data: Dataset, state: OptimizerState) -> dict:
    """One pass over ``data``; returns mean loss, clean train accuracy and timing."""
    defense = cfg.defense
    if defense.needs_teacher and teacher is None:
        raise ConfigurationError(f"{defense.method} requires a teacher network")
    state.lr = lr_at(cfg.schedule, epoch)
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 0, epoch])
    aug_rng = np.random.default_rng([cfg.seed, 2, epoch])
    inner_method = defense.inner_method or defense.method
    total_loss = 0.0
    correct = 0
    for step, idx in enumerate(batches(len(data), cfg.batch_size, rng)):
        try:
            value, hits = _train_step(cfg, student, teacher, epoch, data, idx, aug_rng, inner_method, state)
        except NonFiniteError as err:
            raise TrainingDiverged(f"epoch {epoch} step {step}: {err}") from err
        if not np.isfinite(value):
            raise TrainingDiverged(f"epoch {epoch} step {step}: loss {value}")
        total_loss += value * len(idx)
        correct += hits
    return {
        "epoch": epoch,
        "lr": state.lr,
        "train_loss": total_loss / len(data),
        "train_acc": correct / len(data),
        "wall_ms": None if cfg.deterministic else round((time.perf_counter() - t0) * 1e3, 1),
    }


@dataclass
class RunResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict]
    validation: Dataset


def _snapshot(student: ParameterSet, state: OptimizerState, epoch: int, history: list[dict], tag: str) -> Checkpoint:
    return Checkpoint(student.copy(), epoch, {k: v.copy() for k, v in state.buffers.items()},
                      [dict(h) for h in history], tag)


def run_training(cfg: TrainRunConfig, data: Dataset, teacher: ParameterSet | None = None,
                 out_dir=None, metrics_sink=None, student: ParameterSet | None = None) -> RunResult:
    """Train for ``cfg.schedule.total_epochs`` and keep the best and last checkpoints.

    The selection metric is robust accuracy under ``cfg.selection_attack`` on a
    seeded validation slice (clean accuracy for NAT).  Ties go to the later epoch.
    """
    if cfg.defense.needs_teacher and teacher is None:
        raise ConfigurationError(f"{cfg.defense.method} requires a teacher network")
    train_set, val_set = data.split_off(cfg.val_fraction, cfg.seed) if cfg.val_fraction > 0 else (data, data)
    if student is None:
        student = build_model(cfg.student_spec, cfg.seed)
    teacher_digest = teacher.digest() if teacher is not None else None
    state = OptimizerState.for_params(student, lr=cfg.schedule.initial_lr, momentum=cfg.momentum,
                                      weight_decay=cfg.weight_decay)
    history: list[dict] = []
    best, best_score = None, -np.inf
    for epoch in range(1, cfg.schedule.total_epochs + 1):
        record = train_epoch(cfg, student, teacher, epoch, train_set, state)
        record["val_clean_acc"] = accuracy(student, val_set)
        if cfg.defense.method == "NAT":
            record["val_robust_acc"] = None
            score = record["val_clean_acc"]
        else:
            record["val_robust_acc"] = robust_accuracy(student, val_set, cfg.selection_attack, "PGD_TRADES",
                                                       seed=cfg.seed)
            score = record["val_robust_acc"]
        history.append(record)
        if metrics_sink is not None:
            metrics_sink(record)
        log.info("epoch %d lr %.4g loss %.4f train_acc %.3f val_clean %.3f val_robust %s", epoch, record["lr"],
                 record["train_loss"], record["train_acc"], record["val_clean_acc"], record["val_robust_acc"])
        if score >= best_score:
            best_score = score
            best = _snapshot(student, state, epoch, history, "best")
    last = _snapshot(student, state, cfg.schedule.total_epochs, history, "last")
    best.metric_history = [dict(h) for h in history]
    if teacher is not None and teacher.digest() != teacher_digest:
        raise RuntimeError("teacher parameters changed during training")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(best, out / "best.ckpt")
        save_checkpoint(last, out / "last.ckpt")
    return RunResult(best, last, history, val_set)
