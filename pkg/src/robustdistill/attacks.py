"""L-infinity attacks: FGSM, PGD (SAT/TRADES flavors), CW-inf via PGD, and per-method inner maximization."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .distill import (
    TEACHER_METHODS,
    INNER_LOSS,
    ConfigurationError,
    ParameterError,
    ce_rows,
    kl_rows,
    one_hot,
    teacher_probs,
)
from .nn import ParameterSet, forward
from .tensor import ContractError, Tape, Tensor, softmax_t

CIFAR_EPS = 8 / 255
INNER_LOSSES = ("CE", "KL_to_natural", "KL_to_teacher_natural", "CW_margin")
START_KINDS = ("none", "uniform", "gaussian")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = CIFAR_EPS
    steps: int = 10
    step_size: float = 2 / 255
    random_start: str = "gaussian"
    start_scale: float = 0.001  # uniform half-width or gaussian std; uniform with scale<=0 means epsilon
    inner_loss: str = "CE"
    clamp: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ParameterError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if self.step_size < 0 or (self.steps > 0 and self.epsilon > 0 and not self.step_size > 0):
            raise ParameterError(f"step_size must be > 0, got {self.step_size}")
        if self.random_start not in START_KINDS:
            raise ParameterError(f"random_start must be one of {START_KINDS}, got {self.random_start!r}")
        if self.inner_loss not in INNER_LOSSES:
            raise ParameterError(f"inner_loss must be one of {INNER_LOSSES}, got {self.inner_loss!r}")
        object.__setattr__(self, "clamp", tuple(float(c) for c in self.clamp))

    def replace(self, **changes) -> "AttackConfig":
        return AttackConfig(**{**asdict(self), **changes})

    # Step sizes are quoted for eps=8/255 and rescaled proportionally for other radii.

    @classmethod
    def fgsm(cls, eps: float = CIFAR_EPS) -> "AttackConfig":
        return cls(eps, 1, eps, "none", 0.0, "CE")

    @classmethod
    def pgd_sat(cls, eps: float = CIFAR_EPS, steps: int = 20) -> "AttackConfig":
        return cls(eps, steps, eps / 4, "uniform", eps, "CE")

    @classmethod
    def pgd_trades(cls, eps: float = CIFAR_EPS, steps: int = 20) -> "AttackConfig":
        return cls(eps, steps, 0.003 * eps / CIFAR_EPS, "gaussian", 0.001, "CE")

    @classmethod
    def cw(cls, eps: float = CIFAR_EPS, steps: int = 20) -> "AttackConfig":
        return cls(eps, steps, eps / 4, "uniform", eps, "CW_margin")

    @classmethod
    def train_inner(cls, eps: float = CIFAR_EPS, steps: int = 10, inner_loss: str = "CE") -> "AttackConfig":
        return cls(eps, steps, eps / 4, "gaussian", 0.001, inner_loss)


def example_streams(seed: int, ids, *tags: int) -> list[np.random.Generator]:
    """One independent generator per example, keyed by (seed, tags..., example id)."""
    return [np.random.default_rng([int(seed), *map(int, tags), int(i)]) for i in ids]


def num_threads() -> int:
    try:
        return max(1, int(os.environ.get("ROBUSTDISTILL_THREADS", "1")))
    except ValueError:
        return 1


def _start_noise(cfg: AttackConfig, shape, rng) -> np.ndarray | None:
    if cfg.random_start == "none":
        return None
    if rng is None:
        raise ContractError(f"random_start={cfg.random_start!r} needs an rng")
    per_row = shape[1:]

    def draw(gen, sz):
        if cfg.random_start == "uniform":
            scale = cfg.start_scale if cfg.start_scale > 0 else cfg.epsilon
            return gen.uniform(-scale, scale, size=sz)
        return gen.normal(0.0, cfg.start_scale, size=sz)

    if isinstance(rng, np.random.Generator):
        return draw(rng, shape)
    if len(rng) != shape[0]:
        raise ContractError(f"{len(rng)} rng streams for a batch of {shape[0]}")
    return np.stack([draw(g, per_row) for g in rng]) if len(rng) else np.zeros(shape)


def _frozen(params: ParameterSet) -> ParameterSet:
    return ParameterSet(params.spec, {k: Tensor(v.data, dtype=v.dtype) for k, v in params.tensors.items()}, params.role)


def attack_loss_rows(kind: str, logits: Tensor, reference) -> Tensor:
    """Per-example inner-maximization objective; ``reference`` is labels or constant probability rows."""
    if kind == "CE":
        return ce_rows(softmax_t(logits), reference)
    if kind == "CW_margin":
        y = np.asarray(reference)
        mask = one_hot(y, logits.shape[-1], logits.dtype)
        best_other = (logits - mask * 1e4).max(axis=-1)
        return best_other - logits.gather(y)
    return kl_rows(softmax_t(logits), reference)


def _check_reference(kind: str, reference) -> None:
    ref = np.asarray(reference)
    if kind.startswith("KL"):
        if ref.ndim != 2:
            raise ContractError(f"{kind} needs probability rows as reference, got labels of shape {ref.shape}")
        if not np.allclose(ref.sum(axis=1), 1.0, atol=1e-4):
            raise ContractError(f"{kind} reference rows must sum to 1")
    elif ref.ndim != 1:
        raise ContractError(f"{kind} needs integer labels as reference, got shape {ref.shape}")


def _pgd_core(params: ParameterSet, x: np.ndarray, reference, cfg: AttackConfig, rng,
              reference_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    lo, hi = cfg.clamp
    eps = np.asarray(cfg.epsilon, dtype=x.dtype)
    lower, upper = x - eps, x + eps
    x_adv = x.copy()
    noise = _start_noise(cfg, x.shape, rng)
    if noise is not None:
        x_adv = np.clip(np.minimum(np.maximum(x_adv + noise.astype(x.dtype), lower), upper), lo, hi)
    if cfg.steps == 0 or cfg.epsilon == 0:
        return x_adv
    model = _frozen(params)
    step = np.asarray(cfg.step_size, dtype=x.dtype)
    for _ in range(cfg.steps):
        ref = reference_fn(x_adv) if reference_fn is not None else reference
        xt = Tensor(x_adv, requires_grad=True)
        with Tape() as tape:
            loss = attack_loss_rows(cfg.inner_loss, forward(model, xt), ref).sum()
        (grad,) = tape.gradient(loss, [xt])
        x_adv = x_adv + step * np.sign(grad)
        x_adv = np.clip(np.minimum(np.maximum(x_adv, lower), upper), lo, hi)
    return x_adv


def _run(params, x, reference, cfg, rng, reference_fn=None) -> Tensor:
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x.dtype.kind != "f":
        x = x.astype(np.float32)
    if reference_fn is None:
        _check_reference(cfg.inner_loss, reference)
    threads = num_threads()
    per_row = rng is not None and not isinstance(rng, np.random.Generator)
    if threads == 1 or len(x) < 2 or not (per_row or cfg.random_start == "none"):
        return Tensor(_pgd_core(params, x, reference, cfg, rng, reference_fn), dtype=x.dtype)
    bounds = np.linspace(0, len(x), min(threads, len(x)) + 1).astype(int)
    ref = np.asarray(reference) if reference is not None else None

    def chunk(i):
        a, b = bounds[i], bounds[i + 1]
        sub_rng = rng[a:b] if per_row else None
        sub_ref = ref[a:b] if ref is not None else None
        sub_fn = None if reference_fn is None else (lambda xa, a=a, b=b: reference_fn(xa, slice(a, b)))
        return _pgd_core(params, x[a:b], sub_ref, cfg, sub_rng, sub_fn)

    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(chunk, range(len(bounds) - 1)))
    return Tensor(np.concatenate(parts), dtype=x.dtype)


def pgd(params: ParameterSet, x, reference, cfg: AttackConfig, rng=None) -> Tensor:
    """Projected sign-gradient ascent on ``cfg.inner_loss`` inside the eps-ball, clamped to ``cfg.clamp``.

    ``reference`` holds integer labels (CE, CW_margin) or probability rows held
    constant (KL kinds).  ``rng`` is a Generator or one Generator per row.
    """
    return _run(params, x, reference, cfg, rng)


def fgsm(params: ParameterSet, x, y, epsilon: float) -> Tensor:
    return pgd(params, x, y, AttackConfig.fgsm(epsilon))


def cw_inf(params: ParameterSet, x, y, cfg: AttackConfig, rng=None) -> Tensor:
    """PGD on the untargeted zero-confidence margin ``max_{i != y} z_i - z_y``."""
    return pgd(params, x, y, cfg.replace(inner_loss="CW_margin"), rng)


def inner_max(method: str, student: ParameterSet, teacher: ParameterSet | None, x, y, cfg: AttackConfig,
              rng=None, targets: np.ndarray | None = None, rsl_source: str = "natural") -> Tensor:
    """Adversarial examples for ``method`` using its inner-maximization loss.

    ``targets`` overrides the reference rows of the RSLAD branch (e.g. smoothed
    labels); when absent the teacher's natural predictions are used.
    """
    kind = INNER_LOSS.get(method)
    if method not in INNER_LOSS:
        raise ParameterError(f"unknown method {method!r}")
    if kind is None:
        return Tensor(np.asarray(x.data if isinstance(x, Tensor) else x))
    cfg = cfg.replace(inner_loss=kind)
    xd = np.asarray(x.data if isinstance(x, Tensor) else x)
    if method == "TRADES":
        ref = teacher_probs(student, xd)
        return _run(student, xd, ref, cfg, rng)
    if method == "RSLAD":
        if targets is None and teacher is None:
            raise ConfigurationError("RSLAD inner maximization requires a teacher network")
        if rsl_source == "adversarial" and targets is None:
            if teacher is None:
                raise ConfigurationError("adversarial RSLs require a teacher network")

            def ref_fn(xa, rows=None):
                return teacher_probs(teacher, xa)

            return _run(student, xd, None, cfg, rng, reference_fn=ref_fn)
        ref = targets if targets is not None else teacher_probs(teacher, xd)
        return _run(student, xd, ref, cfg, rng)
    if method in TEACHER_METHODS and teacher is None:
        raise ConfigurationError(f"{method} requires a teacher network")
    return _run(student, xd, np.asarray(y), cfg, rng)
