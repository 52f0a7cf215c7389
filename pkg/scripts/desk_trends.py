"""Desk-scale comparison of SAT, ARD and RSLAD students plus the soft-label and ablation rows.

    python scripts/desk_trends.py --seeds 0 1 2 --out runs/trends.json

One TRADES teacher (and one naturally trained teacher for the NSL row) is
shared by every seed; the test split is scored with 20-step PGD_TRADES.
"""

import argparse
import json
import logging
import time

import numpy as np

from robustdistill import cli
from robustdistill.distill import DefenseConfig
from robustdistill.eval import accuracy, robust_accuracy
from robustdistill.nn import teacher_resnet
from robustdistill.train import run_training

ROWS = ("SAT", "ARD", "RSLAD", "NSL", "ARD_min+RSLAD_max", "RSLAD_min+ARD_max")


def fit(rc, train, defense, seed, teacher=None, spec=None):
    rc = rc.with_changes(run={"seed": seed})
    return run_training(rc.train_config(train.input_shape, train.num_classes, defense, spec), train, teacher)


def frozen(params):
    params.role = "teacher"
    return params.trainable(False)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI config; defaults when omitted")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--rows", nargs="+", default=list(ROWS), choices=ROWS)
    p.add_argument("--out", default="trends.json")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rc = cli.parse_config(args.config).with_changes(run={"deterministic": True})
    train, test = cli.load_data(rc)
    attack = rc.eval_attacks()["PGD_TRADES"]

    def score(params):
        return {"clean": accuracy(params, test), "robust": robust_accuracy(params, test, attack, "PGD_TRADES")}

    tspec = teacher_resnet(train.input_shape, train.num_classes, rc["teacher"]["size"])
    t0 = time.perf_counter()
    teacher = frozen(fit(rc, train, DefenseConfig(rc["teacher"]["method"]), 0, spec=tspec).best.parameters)
    results = {"teacher": score(teacher)}
    natural = None
    if "NSL" in args.rows:
        natural = frozen(fit(rc, train, DefenseConfig("NAT"), 0, spec=tspec).best.parameters)
        results["natural_teacher"] = score(natural)
    for seed in args.seeds:
        for row in args.rows:
            if row == "NSL":
                defense, t = DefenseConfig("RSLAD"), natural
            elif "+" in row:
                defense, t = cli.ablation_defense(rc, row), teacher
            else:
                defense, t = DefenseConfig(row), teacher
            results[f"{row}/{seed}"] = score(fit(rc, train, defense, seed, t).best.parameters)
            logging.info("%s seed %d: %s", row, seed, results[f"{row}/{seed}"])
    summary = {row: {k: float(np.mean([results[f"{row}/{s}"][k] for s in args.seeds])) for k in ("clean", "robust")}
               for row in args.rows}
    out = {"runs": results, "mean": summary, "seeds": args.seeds, "minutes": (time.perf_counter() - t0) / 60}
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    for row, v in summary.items():
        print(f"{row:20s} clean {v['clean']:.4f}  PGD_TRADES-20 {v['robust']:.4f}")


if __name__ == "__main__":
    main()
