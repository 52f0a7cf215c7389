"""Loss primitives, soft-label generators and the outer objectives of every defense.

KL convention: ``kl_loss(p_model, p_ref)`` is ``sum(p_ref * (log p_ref - log p_model))``,
i.e. the second argument is the reference distribution.  With a one-hot
reference this is exactly cross-entropy.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .nn import ParameterSet, predict_probs
from .tensor import ContractError, Tensor, no_grad

METHODS = ("NAT", "SAT", "TRADES", "MART", "ARD", "IAD", "RSLAD")
TEACHER_METHODS = frozenset({"ARD", "IAD", "RSLAD"})
INNER_LOSS = {
    "NAT": None,
    "SAT": "CE",
    "TRADES": "KL_to_natural",
    "MART": "CE",
    "ARD": "CE",
    "IAD": "CE",
    "RSLAD": "KL_to_teacher_natural",
}
EPS = 1e-12

# number of probability entries lifted to EPS before a log, by loss name
clip_events: Counter = Counter()


class ParameterError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class DefenseConfig:
    method: str = "RSLAD"
    lam: float = 6.0
    alpha: float | None = None  # None -> 5/6 for RSLAD, 1.0 for ARD
    tau: float = 1.0
    beta: float = 1.0
    rsl_source: str = "natural"
    soft_label: str = "teacher"  # teacher predictions, or "smooth" one-hot (SSL)
    smoothing: float = 0.1
    inner_method: str | None = None  # inner loss taken from another method (ablations)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.inner_method is not None and self.inner_method not in METHODS:
            raise ParameterError(f"unknown inner_method {self.inner_method!r}; valid: {', '.join(METHODS)}")
        if self.alpha is None:
            self.alpha = 1.0 if self.method == "ARD" else 5.0 / 6.0
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be > 0, got {self.beta}")
        if self.rsl_source not in ("natural", "adversarial"):
            raise ParameterError(f"rsl_source must be natural or adversarial, got {self.rsl_source!r}")
        if self.soft_label not in ("teacher", "smooth"):
            raise ParameterError(f"soft_label must be teacher or smooth, got {self.soft_label!r}")
        if not 0.0 <= self.smoothing < 1.0:
            raise ParameterError(f"smoothing must lie in [0, 1), got {self.smoothing}")

    @property
    def needs_teacher(self) -> bool:
        if self.method == "RSLAD" and self.soft_label == "smooth":
            return self.inner_method in TEACHER_METHODS - {"RSLAD"}
        return self.method in TEACHER_METHODS or self.inner_method in TEACHER_METHODS

    @property
    def inner_loss(self) -> str | None:
        return INNER_LOSS[self.inner_method or self.method]


@dataclass
class SoftLabelBatch:
    rows: np.ndarray
    kind: str


# ---------------------------------------------------------------------------
# loss primitives

def one_hot(y, num_classes: int, dtype=np.float32) -> np.ndarray:
    y = np.asarray(y, dtype=np.intp)
    out = np.zeros((y.shape[0], num_classes), dtype=dtype)
    out[np.arange(y.shape[0]), y] = 1
    return out


def _clip(p, tag: str):
    p = p if isinstance(p, Tensor) else Tensor(p)
    clip_events[tag] += int(np.count_nonzero(p.data < EPS))
    return p.clamp(EPS, None)


def ce_rows(probs: Tensor, y) -> Tensor:
    """Per-example ``-log p_y``."""
    return -_clip(probs, "ce").gather(y).log()


def ce_loss(probs: Tensor, y) -> Tensor:
    return ce_rows(probs, y).mean()


def kl_rows(p_model: Tensor, p_ref) -> Tensor:
    """Per-example KL(p_ref || p_model); differentiable through both when both are on the tape."""
    log_model = _clip(p_model, "kl").log()
    if isinstance(p_ref, Tensor) and p_ref.requires_grad:
        log_ref = _clip(p_ref, "kl").log()
        return (p_ref * (log_ref - log_model)).sum(axis=-1)
    ref = p_ref.data if isinstance(p_ref, Tensor) else np.asarray(p_ref, dtype=p_model.dtype)
    ref = ref.astype(p_model.dtype, copy=False)
    entropy_term = (ref * np.log(np.maximum(ref, EPS))).sum(axis=-1)
    return entropy_term - (log_model * ref).sum(axis=-1)


def kl_loss(p_model: Tensor, p_ref) -> Tensor:
    return kl_rows(p_model, p_ref).mean()


def bce_mart_rows(probs: Tensor, y) -> Tensor:
    """``-log p_y - log(1 - max_{k != y} p_k)`` per example."""
    mask = one_hot(y, probs.shape[-1], probs.dtype)
    # true class pushed below every valid probability so max picks a wrong class
    wrong_max = (probs - mask * 2.0).max(axis=-1)
    return ce_rows(probs, y) - _clip(1.0 - wrong_max, "bce").log()


def bce_mart(probs: Tensor, y) -> Tensor:
    return bce_mart_rows(probs, y).mean()


# ---------------------------------------------------------------------------
# soft labels

def make_soft_labels(kind: str, teacher: ParameterSet | None, x, x_adv, y, smoothing: float = 0.1,
                     rsl_source: str = "natural", num_classes: int | None = None) -> SoftLabelBatch:
    """SSL: smoothed one-hot.  NSL/RSL: teacher probabilities (natural or robust teacher)."""
    if kind == "SSL":
        if not 0.0 <= smoothing < 1.0:
            raise ParameterError(f"smoothing must lie in [0, 1), got {smoothing}")
        if num_classes is None:
            if teacher is None:
                raise ConfigurationError("SSL needs num_classes or a model spec")
            num_classes = teacher.spec.num_classes
        rows = (1.0 - smoothing) * one_hot(y, num_classes) + smoothing / num_classes
        return SoftLabelBatch(rows.astype(np.float32), kind)
    if kind not in ("NSL", "RSL"):
        raise ParameterError(f"unknown soft label kind {kind!r}; valid: SSL, NSL, RSL")
    if teacher is None:
        raise ConfigurationError(f"{kind} soft labels need a teacher")
    source = x_adv if (kind == "RSL" and rsl_source == "adversarial") else x
    with no_grad():
        rows = predict_probs(teacher, Tensor(_data(source)), 1.0).data
    return SoftLabelBatch(rows, kind)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def teacher_probs(teacher: ParameterSet, x, tau: float = 1.0) -> np.ndarray:
    """Teacher predictions as constants: never recorded, so the teacher gets no gradient."""
    with no_grad():
        return predict_probs(teacher, Tensor(_data(x)), tau).data


def reference_labels(cfg: DefenseConfig, teacher: ParameterSet | None, x, y, num_classes: int) -> np.ndarray:
    """The RSLAD target rows built from natural inputs: T(x) or smoothed one-hot."""
    if cfg.soft_label == "smooth":
        return make_soft_labels("SSL", None, x, None, y, cfg.smoothing, num_classes=num_classes).rows
    return teacher_probs(teacher, x)


# ---------------------------------------------------------------------------
# outer objectives

def outer_loss(cfg: DefenseConfig, student: ParameterSet, teacher: ParameterSet | None, x, x_adv, y,
               targets: np.ndarray | None = None) -> Tensor:
    """Scalar outer-minimization loss of ``cfg.method``.

    ``targets`` optionally supplies precomputed RSLAD reference rows for the
    natural inputs, so the teacher need not be run twice per batch.
    """
    method = cfg.method
    needs_teacher = method in TEACHER_METHODS and not (method == "RSLAD" and cfg.soft_label == "smooth")
    if needs_teacher and teacher is None:
        raise ConfigurationError(f"{method} requires a teacher network")
    x = x if isinstance(x, Tensor) else Tensor(x)
    num_classes = student.spec.num_classes
    if method == "NAT":
        return ce_loss(predict_probs(student, x), y)
    x_adv = x_adv if isinstance(x_adv, Tensor) else Tensor(x_adv)
    if method == "SAT":
        return ce_loss(predict_probs(student, x_adv), y)
    if method == "TRADES":
        p_nat = predict_probs(student, x)
        return ce_loss(p_nat, y) + cfg.lam * kl_loss(predict_probs(student, x_adv), p_nat)
    if method == "MART":
        p_nat = predict_probs(student, x)
        p_adv = predict_probs(student, x_adv)
        weight = 1.0 - p_nat.gather(y)
        return bce_mart(p_adv, y) + cfg.lam * (kl_rows(p_adv, p_nat) * weight).mean()
    if method == "ARD":
        tau = cfg.tau
        t_nat = teacher_probs(teacher, x, tau)
        return ((1 - cfg.alpha) * ce_loss(predict_probs(student, x, tau), y)
                + cfg.alpha * tau * tau * kl_loss(predict_probs(student, x_adv, tau), t_nat))
    if method == "IAD":
        tau = cfg.tau
        t_nat = teacher_probs(teacher, x, tau)
        w = teacher_probs(teacher, x_adv)[np.arange(len(y)), np.asarray(y)] ** cfg.beta
        s_adv = predict_probs(student, x_adv, tau)
        s_nat = predict_probs(student, x, tau)
        return (kl_rows(s_adv, t_nat) * w + kl_rows(s_adv, s_nat) * (1.0 - w)).mean()
    # RSLAD
    if cfg.soft_label == "teacher" and cfg.rsl_source == "adversarial":
        ref = teacher_probs(teacher, x_adv)
    elif targets is not None:
        ref = targets
    else:
        ref = reference_labels(cfg, teacher, x, y, num_classes)
    a = cfg.alpha
    nat_term = kl_loss(predict_probs(student, x), ref)
    adv_term = kl_loss(predict_probs(student, x_adv), ref)
    return (1 - a) * nat_term + a * adv_term
