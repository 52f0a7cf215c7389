"""White-box and transfer robustness evaluation, and report assembly."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import AttackConfig, example_streams, pgd
from .data import Dataset
from .distill import ConfigurationError, ParameterError
from .nn import ParameterSet, forward
from .tensor import Tensor, no_grad

ATTACK_KINDS = ("FGSM", "PGD_SAT", "PGD_TRADES", "CW")
REPORT_KEYS = ("clean",) + ATTACK_KINDS
EVAL_BATCH = 256

# Full-scale published numbers for orientation only; never compared against desk-scale runs.
FULL_SCALE_REFERENCE = {
    "setting": "RSLAD, ResNet-18 student, WideResNet-34-10 teacher, CIFAR-10, eps=8/255, best checkpoint",
    "clean": 0.8338,
    "AA": 0.5149,
    "reproducible_here": False,
}


def config_digest(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def default_attack(kind: str, eps: float) -> AttackConfig:
    if kind == "FGSM":
        return AttackConfig.fgsm(eps)
    if kind == "PGD_SAT":
        return AttackConfig.pgd_sat(eps)
    if kind == "PGD_TRADES":
        return AttackConfig.pgd_trades(eps)
    if kind == "CW":
        return AttackConfig.cw(eps)
    raise ParameterError(f"unknown attack kind {kind!r}; valid: {', '.join(ATTACK_KINDS)}")


def predict_labels(params: ParameterSet, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Argmax predictions; ties resolve to the lowest class index."""
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = forward(params, Tensor(images[start:start + batch_size])).data
            out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(params: ParameterSet, dataset: Dataset, batch_size: int = EVAL_BATCH) -> float:
    if len(dataset) == 0:
        raise ParameterError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict_labels(params, dataset.images, batch_size) == dataset.labels))


def adversarial_examples(params: ParameterSet, dataset: Dataset, attack_cfg: AttackConfig, attack_kind: str,
                         seed: int = 0, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Per-example attack images; example ``i`` always draws from stream ``(seed, i)``."""
    if attack_kind not in ATTACK_KINDS:
        raise ParameterError(f"unknown attack kind {attack_kind!r}; valid: {', '.join(ATTACK_KINDS)}")
    if attack_kind == "CW":
        attack_cfg = attack_cfg.replace(inner_loss="CW_margin")
    elif attack_kind == "FGSM":
        attack_cfg = attack_cfg.replace(steps=1, step_size=attack_cfg.epsilon or 1.0, random_start="none")
    out = np.empty_like(dataset.images)
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        ids = np.arange(len(dataset))[sl]
        rng = example_streams(seed, ids, 3) if attack_cfg.random_start != "none" else None
        out[sl] = pgd(params, dataset.images[sl], dataset.labels[sl], attack_cfg, rng).data
    return out


def robust_accuracy(params: ParameterSet, dataset: Dataset, attack_cfg: AttackConfig, attack_kind: str,
                    seed: int = 0, batch_size: int = EVAL_BATCH) -> float:
    if len(dataset) == 0:
        raise ParameterError("accuracy of an empty dataset is undefined")
    x_adv = adversarial_examples(params, dataset, attack_cfg, attack_kind, seed, batch_size)
    return float(np.mean(predict_labels(params, x_adv, batch_size) == dataset.labels))


@dataclass
class EvalReport:
    model_id: str
    checkpoint_tag: str
    rows: dict[str, float]
    attacks: dict[str, dict]
    seed: int
    config_digests: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def clean(self) -> float:
        return self.rows["clean"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["AA"] = "n/a (out of scope)"
        d["full_scale_reference"] = FULL_SCALE_REFERENCE
        return d


def white_box_suite(params: ParameterSet, dataset: Dataset, eps: float, seed: int = 0,
                    configs: dict[str, AttackConfig] | None = None, model_id: str = "model",
                    checkpoint_tag: str = "last") -> EvalReport:
    configs = {k: (configs or {}).get(k) or default_attack(k, eps) for k in ATTACK_KINDS}
    rows = {"clean": accuracy(params, dataset)}
    for kind in ATTACK_KINDS:
        rows[kind] = robust_accuracy(params, dataset, configs[kind], kind, seed)
    attacks = {k: asdict(v) for k, v in configs.items()}
    digests = {k: config_digest(v) for k, v in attacks.items()}
    digests["parameters"] = params.digest()[:16]
    return EvalReport(model_id, checkpoint_tag, rows, attacks, seed, digests)


def transfer_attack_eval(target: ParameterSet, surrogate: ParameterSet, dataset: Dataset,
                         attack_cfg: AttackConfig, attack_kind: str = "PGD_SAT", seed: int = 0) -> float:
    """Accuracy of ``target`` on examples crafted against ``surrogate``."""
    if target.spec.num_classes != surrogate.spec.num_classes:
        raise ConfigurationError(
            f"class count mismatch: target {target.spec.num_classes} vs surrogate {surrogate.spec.num_classes}"
        )
    if target.spec.input_shape != surrogate.spec.input_shape:
        raise ConfigurationError(
            f"input shape mismatch: target {target.spec.input_shape} vs surrogate {surrogate.spec.input_shape}"
        )
    x_adv = adversarial_examples(surrogate, dataset, attack_cfg, attack_kind, seed)
    return float(np.mean(predict_labels(target, x_adv) == dataset.labels))


def reports_to_csv(reports: list[EvalReport], extra_columns: tuple = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model_id", "checkpoint", *REPORT_KEYS, "AA", *extra_columns, "seed"])
    for r in reports:
        writer.writerow([r.model_id, r.checkpoint_tag, *(f"{r.rows[k]:.6f}" for k in REPORT_KEYS), "n/a",
                         *(r.extra.get(c, "") for c in extra_columns), r.seed])
    return buf.getvalue()
