"""Command line: declarative INI configs, training/eval verbs, ablations and comparisons.

Usage::

    robustdistill train --config run.ini --out runs/rslad
    robustdistill eval --config run.ini --checkpoint runs/rslad/best.ckpt [--surrogate other.ckpt]
    robustdistill attack --config run.ini --checkpoint runs/rslad/best.ckpt --out adv/
    robustdistill ablate | compare-soft-labels | teacher-sweep --config run.ini
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, START_KINDS
from .data import AugmentConfig, Dataset, FormatError, gen_synthetic, load_cifar_binary, load_idx, write_idx
from .distill import METHODS, ConfigurationError, DefenseConfig, ParameterError
from .eval import (
    ATTACK_KINDS,
    EvalReport,
    adversarial_examples,
    default_attack,
    reports_to_csv,
    robust_accuracy,
    transfer_attack_eval,
    white_box_suite,
)
from .nn import (
    TEACHER_SIZES,
    ParameterSet,
    ModelSpec,
    load_checkpoint,
    mlp,
    save_checkpoint,
    student_cnn,
    teacher_resnet,
)
from .tensor import DimensionError
from .train import RunResult, Schedule, TrainRunConfig, TrainingDiverged, run_training

log = logging.getLogger("robustdistill")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema: section -> key -> (parser, default).  ``None`` defaults are
# resolved from other fields in ``_resolve``.

def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text
    return parse


def _int_range(lo: int, hi: int | None = None):
    def parse(text: str) -> int:
        v = int(text)
        if v < lo or (hi is not None and v > hi):
            raise ValueError(f"must lie in [{lo}, {hi if hi is not None else 'inf'}]")
        return v
    return parse


def _float_range(lo: float, hi: float | None = None, open_lo: bool = False):
    def parse(text: str) -> float:
        v = float(text)
        if not np.isfinite(v) or v < lo or (open_lo and v == lo) or (hi is not None and v > hi):
            bracket = "(" if open_lo else "["
            raise ValueError(f"must lie in {bracket}{lo}, {hi if hi is not None else 'inf'}]")
        return v
    return parse


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be true or false")


def _text(text: str) -> str:
    return text


def _int_list(text: str) -> tuple:
    if text.lower() == "none":
        return ()
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _str_list(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


SCHEMA: dict[str, dict[str, tuple]] = {
    "dataset": {
        "id": (_choice("synthetic", "idx", "cifar"), "synthetic"),
        "path": (_text, ""),  # idx: directory with {train,test}-{images,labels}.idx; cifar: batch directory
        "kind": (_choice("gaussians", "rings"), "gaussians"),
        "n": (_int_range(10), 6000),
        "test_size": (_int_range(1), 2000),
        "num_classes": (_int_range(2), 5),
        "image_size": (_int_range(2), 8),
        "channels": (_int_range(1), 1),
        "margin": (_float_range(0.0), 1.0),
        "mixing": (_float_range(0.0), 0.35),
        "noise": (_float_range(0.0), 0.1),
        "data_seed": (_int_range(0), 0),
        "subset": (_int_range(0), 0),  # 0 keeps every training example
        "augment": (_bool, False),
    },
    "student": {
        "arch": (_choice("cnn", "mlp", "resnet"), "cnn"),
        "width": (_int_range(1), 8),
        "hidden": (_int_range(1), 64),
        "size": (_choice(*TEACHER_SIZES), "large"),  # resnet only
    },
    "teacher": {
        "checkpoint": (_text, ""),
        "natural_checkpoint": (_text, ""),
        "size": (_choice(*TEACHER_SIZES), "large"),
        "method": (_choice("TRADES", "SAT", "MART"), "TRADES"),
        "sweep": (_str_list, ()),  # checkpoint paths; empty -> train one teacher per sweep_sizes entry
        "sweep_sizes": (_str_list, ("small", "large")),
    },
    "defense": {
        "method": (_choice(*METHODS), "RSLAD"),
        "lambda": (_float_range(0.0), 6.0),
        "alpha": (_float_range(0.0, 1.0), None),
        "tau": (_float_range(0.0, open_lo=True), 1.0),
        "beta": (_float_range(0.0, open_lo=True), 1.0),
        "rsl_source": (_choice("natural", "adversarial"), "natural"),
        "soft_label": (_choice("teacher", "smooth"), "teacher"),
        "smoothing": (_float_range(0.0, 0.999), 0.1),
        "inner_method": (_choice("", *METHODS), ""),
    },
    "attack_train": {
        "epsilon": (_float_range(0.0, 1.0), 0.1),
        "steps": (_int_range(0), 10),
        "step_size": (_float_range(0.0), None),  # eps / 4
        "random_start": (_choice(*START_KINDS), "gaussian"),
        "start_scale": (_float_range(0.0), 0.001),
    },
    "attack_eval": {
        "epsilon": (_float_range(0.0, 1.0), None),  # attack_train.epsilon
        "steps": (_int_range(1), 20),
        "pgd_sat_step_size": (_float_range(0.0), None),
        "pgd_trades_step_size": (_float_range(0.0), None),
        "cw_step_size": (_float_range(0.0), None),
        "transfer_kind": (_choice(*ATTACK_KINDS), "PGD_SAT"),
        "selection": (_choice(*ATTACK_KINDS), "PGD_TRADES"),
    },
    "schedule": {
        "epochs": (_int_range(1), 60),
        "decays": (_int_list, None),  # proportional to 215/260/285 of 300
        "factor": (_float_range(0.0, 1.0), 0.1),
    },
    "optimizer": {
        "lr": (_float_range(0.0, open_lo=True), 0.05),
        "momentum": (_float_range(0.0, 1.0), 0.9),
        "weight_decay": (_float_range(0.0), 2e-4),
        "batch_size": (_int_range(1), 128),
    },
    "run": {
        "seed": (_int_range(0), 0),
        "output_dir": (_text, "runs/default"),
        "deterministic": (_bool, False),
        "val_fraction": (_float_range(0.0, 0.9), 0.1),
    },
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def proportional_decays(epochs: int) -> tuple:
    decays = []
    for frac in (215 / 300, 260 / 300, 285 / 300):
        e = min(epochs, max(1, round(epochs * frac)))
        if not decays or e > decays[-1]:
            decays.append(e)
    return tuple(decays)


@dataclass
class RunConfig:
    sections: dict[str, dict]

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def emit(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in SCHEMA.items():
            parser[section] = {k: _fmt(self.sections[section][k]) for k in keys}
        if not self["schedule"]["decays"]:
            parser["schedule"]["decays"] = "none"
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        payload = json.dumps(self.sections, sort_keys=True, default=list).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def with_changes(self, **changes: dict) -> "RunConfig":
        """Copy with ``section={key: value}`` overrides, re-resolved."""
        raw = {s: {k: _fmt(v) for k, v in keys.items()} for s, keys in self.sections.items()}
        for section, kv in changes.items():
            for k, v in kv.items():
                raw[section][k] = _fmt(v)
        new_method = changes.get("defense", {}).get("method", self["defense"]["method"])
        if new_method != self["defense"]["method"] and "alpha" not in changes.get("defense", {}):
            raw["defense"]["alpha"] = ""  # back to the new method's default
        return _resolve(raw)

    # -- builders ----------------------------------------------------------

    def defense(self) -> DefenseConfig:
        d = self["defense"]
        return DefenseConfig(d["method"], d["lambda"], d["alpha"], d["tau"], d["beta"], d["rsl_source"],
                             d["soft_label"], d["smoothing"], d["inner_method"] or None)

    def train_attack(self) -> AttackConfig:
        a = self["attack_train"]
        return AttackConfig(a["epsilon"], a["steps"], a["step_size"], a["random_start"], a["start_scale"], "CE")

    def eval_attacks(self) -> dict[str, AttackConfig]:
        a = self["attack_eval"]
        eps, steps = a["epsilon"], a["steps"]
        return {
            "FGSM": AttackConfig.fgsm(eps),
            "PGD_SAT": AttackConfig.pgd_sat(eps, steps).replace(step_size=a["pgd_sat_step_size"]),
            "PGD_TRADES": AttackConfig.pgd_trades(eps, steps).replace(step_size=a["pgd_trades_step_size"]),
            "CW": AttackConfig.cw(eps, steps).replace(step_size=a["cw_step_size"]),
        }

    def schedule(self) -> Schedule:
        s = self["schedule"]
        return Schedule(s["epochs"], s["decays"], s["factor"], self["optimizer"]["lr"])

    def student_spec(self, input_shape, num_classes) -> ModelSpec:
        s = self["student"]
        if s["arch"] == "mlp":
            return mlp(input_shape, [s["hidden"]], num_classes)
        if s["arch"] == "resnet":
            return teacher_resnet(input_shape, num_classes, s["size"])
        return student_cnn(input_shape, num_classes, s["width"], s["hidden"])

    def train_config(self, input_shape, num_classes, defense: DefenseConfig | None = None,
                     spec: ModelSpec | None = None) -> TrainRunConfig:
        o, r = self["optimizer"], self["run"]
        sel = self.eval_attacks()[self["attack_eval"]["selection"]].replace(steps=min(10, self["attack_eval"]["steps"]))
        return TrainRunConfig(
            defense=defense or self.defense(),
            attack=self.train_attack(),
            schedule=self.schedule(),
            student_spec=spec or self.student_spec(input_shape, num_classes),
            batch_size=o["batch_size"],
            seed=r["seed"],
            momentum=o["momentum"],
            weight_decay=o["weight_decay"],
            selection_attack=sel,
            val_fraction=r["val_fraction"],
            augment=AugmentConfig.standard() if self["dataset"]["augment"] else AugmentConfig(),
            deterministic=r["deterministic"],
        )


def _resolve(raw: dict[str, dict[str, str]]) -> RunConfig:
    out: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        out[section] = {}
        for key, (parse, default) in keys.items():
            text = given.get(key, "")
            if text == "":
                out[section][key] = default
                continue
            try:
                out[section][key] = parse(text)
            except ValueError as err:
                raise ConfigError(f"[{section}] {key} = {text!r}: {err}") from None
    d = out["defense"]
    if d["alpha"] is None:
        d["alpha"] = DefenseConfig(d["method"]).alpha
    a = out["attack_train"]
    if a["step_size"] is None:
        a["step_size"] = a["epsilon"] / 4
    e = out["attack_eval"]
    if e["epsilon"] is None:
        e["epsilon"] = a["epsilon"]
    for kind in ("pgd_sat", "pgd_trades", "cw"):
        if e[f"{kind}_step_size"] is None:
            e[f"{kind}_step_size"] = default_attack(kind.upper(), e["epsilon"]).step_size
    s = out["schedule"]
    if s["decays"] is None:
        s["decays"] = proportional_decays(s["epochs"])
    try:
        Schedule(s["epochs"], s["decays"], s["factor"], out["optimizer"]["lr"])
        DefenseConfig(d["method"], d["lambda"], d["alpha"], d["tau"], d["beta"], d["rsl_source"], d["soft_label"],
                      d["smoothing"], d["inner_method"] or None)
    except ParameterError as err:
        raise ConfigError(str(err)) from None
    return RunConfig(out)


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"unreadable config: {err}") from None
    raw = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; valid: {', '.join(SCHEMA)}")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]; valid: {', '.join(SCHEMA[section])}")
        raw[section] = dict(parser[section])
    return _resolve(raw)


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text() if path else "")


# ---------------------------------------------------------------------------
# data and models

def load_data(rc: RunConfig) -> tuple[Dataset, Dataset]:
    d = rc["dataset"]
    if d["id"] == "synthetic":
        full = gen_synthetic(d["kind"], d["n"], d["num_classes"], d["data_seed"], d["image_size"], d["margin"],
                             d["noise"], d["channels"], d["mixing"])
        if d["test_size"] >= len(full):
            raise ConfigError(f"[dataset] test_size must be < n={len(full)}")
        cut = len(full) - d["test_size"]
        train, test = full.subset(np.arange(cut), "train"), full.subset(np.arange(cut, len(full)), "test")
    elif d["id"] == "idx":
        root = Path(d["path"])
        train = load_idx(root / "train-images.idx", root / "train-labels.idx", d["num_classes"])
        test = load_idx(root / "test-images.idx", root / "test-labels.idx", d["num_classes"])
    else:
        root = Path(d["path"])
        train = load_cifar_binary(sorted(root.glob("data_batch_*.bin")), d["num_classes"])
        test = load_cifar_binary([root / "test_batch.bin"], d["num_classes"])
    if d["subset"]:
        train = train.subset(np.arange(min(d["subset"], len(train))))
    return train, test


def load_teacher(path) -> ParameterSet:
    if not path:
        raise ConfigurationError("no teacher checkpoint given ([teacher] checkpoint)")
    if not Path(path).exists():
        raise ConfigurationError(f"teacher checkpoint {path} does not exist")
    teacher = load_checkpoint(path).parameters
    teacher.role = "teacher"
    return teacher.trainable(False)


# ---------------------------------------------------------------------------
# commands

def _write_reports(out: Path, reports: list[EvalReport], rc: RunConfig, extra_columns: tuple = (), **extra) -> None:
    payload = {"config_digest": rc.digest(), "seed": rc["run"]["seed"], **extra,
               "reports": [r.to_dict() for r in reports]}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "report.csv").write_text(reports_to_csv(reports, extra_columns))


def _evaluate(rc: RunConfig, params: ParameterSet, test: Dataset, model_id: str, tag: str) -> EvalReport:
    report = white_box_suite(params, test, rc["attack_eval"]["epsilon"], rc["run"]["seed"], rc.eval_attacks(),
                             model_id, tag)
    report.config_digests["run"] = rc.digest()
    return report


def train_one(rc: RunConfig, out: Path, train: Dataset, test: Dataset, teacher: ParameterSet | None,
              model_id: str, defense: DefenseConfig | None = None, spec: ModelSpec | None = None
              ) -> tuple[RunResult, list[EvalReport]]:
    """One training run with every artifact written under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    cfg = rc.train_config(train.input_shape, train.num_classes, defense, spec)
    if cfg.defense.needs_teacher and teacher is None:
        raise ConfigurationError(f"{cfg.defense.method} requires a teacher checkpoint ([teacher] checkpoint)")
    (out / "config.resolved").write_text(rc.with_changes(run={"output_dir": str(out)}).emit())
    with open(out / "metrics.jsonl", "w") as fh:
        def sink(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
        result = run_training(cfg, train, teacher, out_dir=out, metrics_sink=sink)
    reports = [_evaluate(rc, ck.parameters, test, model_id, ck.selection_tag) for ck in (result.best, result.last)]
    for r, ck in zip(reports, (result.best, result.last)):
        r.extra["epoch"] = ck.epoch
    _write_reports(out, reports, rc, ("epoch",))
    return result, reports


def cmd_train(rc: RunConfig, out: Path) -> int:
    train, test = load_data(rc)
    teacher = load_teacher(rc["teacher"]["checkpoint"]) if rc.defense().needs_teacher else None
    train_one(rc, out, train, test, teacher, rc["defense"]["method"])
    return 0


def _load_model(path) -> ParameterSet:
    return load_checkpoint(path).parameters


def cmd_eval(rc: RunConfig, out: Path, checkpoint, surrogate=None) -> int:
    _, test = load_data(rc)
    params = _load_model(checkpoint)
    report = _evaluate(rc, params, test, Path(checkpoint).stem, Path(checkpoint).stem)
    if surrogate:
        kind = rc["attack_eval"]["transfer_kind"]
        cfg = rc.eval_attacks()[kind]
        report.extra["transfer_kind"] = kind
        report.extra["transfer_surrogate"] = str(surrogate)
        report.extra["transfer_acc"] = transfer_attack_eval(params, _load_model(surrogate), test, cfg, kind,
                                                            rc["run"]["seed"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(rc.emit())
    _write_reports(out, [report], rc, ("transfer_acc",) if surrogate else ())
    return 0


def cmd_attack(rc: RunConfig, out: Path, checkpoint) -> int:
    _, test = load_data(rc)
    params = _load_model(checkpoint)
    kind = rc["attack_eval"]["transfer_kind"]
    x_adv = adversarial_examples(params, test, rc.eval_attacks()[kind], kind, rc["run"]["seed"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(rc.emit())
    write_idx(out / "adv-images.idx", out / "adv-labels.idx", x_adv, test.labels)
    return 0


ABLATION_ROWS = {
    "ARD": ("ARD", "ARD"),
    "ARD_min+RSLAD_max": ("ARD", "RSLAD"),
    "RSLAD_min+ARD_max": ("RSLAD", "ARD"),
    "RSLAD": ("RSLAD", "RSLAD"),
}


def ablation_defense(rc: RunConfig, row: str) -> DefenseConfig:
    """Outer loss of the first method with the inner maximization of the second; alpha is the outer's default."""
    outer, inner = ABLATION_ROWS[row]
    d = rc["defense"]
    return DefenseConfig(outer, d["lambda"], None, d["tau"], d["beta"], d["rsl_source"],
                         inner_method=None if inner == outer else inner)


def cmd_ablate(rc: RunConfig, out: Path) -> int:
    train, test = load_data(rc)
    teacher = load_teacher(rc["teacher"]["checkpoint"])
    reports = []
    for row in ABLATION_ROWS:
        _, (best, _) = train_one(rc, out / row.replace("+", "_"), train, test, teacher, row, ablation_defense(rc, row))
        reports.append(best)
    _write_reports(out, reports, rc, ("epoch",))
    return 0


def train_teacher(rc: RunConfig, out: Path, train: Dataset, test: Dataset, method: str, size: str) -> Path:
    """Train a teacher of the configured architecture and return its best-checkpoint path."""
    spec = teacher_resnet(train.input_shape, train.num_classes, size)
    train_one(rc, out, train, test, None, f"teacher-{method}-{size}", DefenseConfig(method), spec)
    return out / "best.ckpt"


def cmd_compare_soft_labels(rc: RunConfig, out: Path) -> int:
    train, test = load_data(rc)
    t = rc["teacher"]
    robust_path = t["checkpoint"] or str(train_teacher(rc, out / "teacher-robust", train, test, t["method"], t["size"]))
    natural_path = t["natural_checkpoint"] or str(train_teacher(rc, out / "teacher-natural", train, test, "NAT",
                                                                t["size"]))
    rows = {
        "SSL": rc.with_changes(defense={"method": "RSLAD", "soft_label": "smooth"}, teacher={"checkpoint": ""}),
        "NSL": rc.with_changes(defense={"method": "RSLAD", "soft_label": "teacher"},
                               teacher={"checkpoint": natural_path}),
        "RSL": rc.with_changes(defense={"method": "RSLAD", "soft_label": "teacher"},
                               teacher={"checkpoint": robust_path}),
    }
    reports = []
    for name, row_rc in rows.items():
        path = row_rc["teacher"]["checkpoint"]
        teacher = load_teacher(path) if path else None
        _, (best, _) = train_one(row_rc, out / name, train, test, teacher, name)
        best.extra["row_config_digest"] = row_rc.digest()
        reports.append(best)
    r = {x.model_id: x for x in reports}
    robust_kind = rc["attack_eval"]["selection"]
    trend = r["RSL"].rows[robust_kind] > r["NSL"].rows[robust_kind]
    log.info("soft-label trend RSL > NSL under %s: %s", robust_kind, "yes" if trend else "no")
    _write_reports(out, reports, rc, ("epoch", "row_config_digest"), rsl_beats_nsl=bool(trend))
    return 0


def cmd_teacher_sweep(rc: RunConfig, out: Path) -> int:
    train, test = load_data(rc)
    t = rc["teacher"]
    paths = list(t["sweep"])
    if not paths:
        paths = [str(train_teacher(rc, out / f"teacher-{size}", train, test, t["method"], size))
                 for size in t["sweep_sizes"]]
    if len(paths) < 2:
        raise ConfigurationError("teacher sweep needs at least two teachers")
    teachers = sorted(((load_teacher(p), p) for p in paths), key=lambda tp: tp[0].num_parameters())
    selection = rc["attack_eval"]["selection"]
    reports = []
    for i, (teacher, path) in enumerate(teachers):
        name = f"teacher{i}-{teacher.num_parameters()}"
        _, (best, _) = train_one(rc, out / name, train, test, teacher, name)
        best.extra["teacher_params"] = teacher.num_parameters()
        best.extra["teacher_checkpoint"] = path
        best.extra["teacher_robust_acc"] = robust_accuracy(teacher, test, rc.eval_attacks()[selection], selection,
                                                           rc["run"]["seed"])
        reports.append(best)
    _write_reports(out, reports, rc, ("teacher_params", "teacher_robust_acc", "epoch"))
    return 0


# ---------------------------------------------------------------------------
# entry point

VERBS = ("train", "eval", "attack", "ablate", "compare-soft-labels", "teacher-sweep")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustdistill", description="Adversarial training and robust distillation.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="INI run config (omitted keys take defaults)")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out", help="output directory (default: [run] output_dir)")
    p.add_argument("--checkpoint", help="model checkpoint for eval/attack")
    p.add_argument("--surrogate", help="surrogate checkpoint for a transfer row in eval")
    p.add_argument("--deterministic", action="store_true", help="drop wall-clock fields from metrics")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        rc = parse_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.deterministic:
            overrides["deterministic"] = True
        if args.out:
            overrides["output_dir"] = args.out
        if overrides:
            rc = rc.with_changes(run=overrides)
        out = Path(rc["run"]["output_dir"])
        if args.verb in ("eval", "attack") and not args.checkpoint:
            raise ConfigurationError(f"{args.verb} needs --checkpoint")
        if args.verb == "train":
            return cmd_train(rc, out)
        if args.verb == "eval":
            return cmd_eval(rc, out, args.checkpoint, args.surrogate)
        if args.verb == "attack":
            return cmd_attack(rc, out, args.checkpoint)
        if args.verb == "ablate":
            return cmd_ablate(rc, out)
        if args.verb == "compare-soft-labels":
            return cmd_compare_soft_labels(rc, out)
        return cmd_teacher_sweep(rc, out)
    except (ConfigError, ConfigurationError, ParameterError, FormatError, DimensionError, TrainingDiverged,
            OSError, ValueError) as err:
        print(f"robustdistill {args.verb}: error: {err}", file=sys.stderr)
        return 2 if isinstance(err, (ConfigError, ConfigurationError, ParameterError)) else 1


if __name__ == "__main__":
    sys.exit(main())
