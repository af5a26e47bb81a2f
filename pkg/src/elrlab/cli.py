"""Command-line entry point: train, sweep, diagnose, report."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_experiment_config, load_sweep_spec
from .exceptions import ConfigError, ContractError, FormatError, NumericsError, StateError
from .harness import _eval_split, build_dataset, run_experiment, run_sweep
from .losses import TargetStore
from .metrics import CSV_HEADER, MetricsRow, memorization_fractions
from .models import load_checkpoint
from .plots import render_run_figures

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def _cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    result = run_experiment(config)
    final = result.rows[-1]
    print(
        f"run complete: {config.epochs} epochs, "
        f"top1={final.top1:.4f} top5={final.top5:.4f}"
        + (f", outputs in {result.out_dir}" if result.out_dir else "")
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = load_sweep_spec(args.spec)
    if args.out is not None:
        spec.out_dir = args.out
    best_config, results = run_sweep(spec, refit=args.refit)
    n_ok = sum(1 for _, r in results if not isinstance(r, Exception))
    print(f"sweep complete: {n_ok}/{len(results)} runs succeeded")
    print(f"best config hash: {best_config.config_hash()}")
    for key, value in sorted(best_config.to_dict().items()):
        if key in ("dataset", "model", "out_dir"):
            continue
        print(f"  {key}: {value}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    config = load_experiment_config(args.dataset)
    full = build_dataset(config)
    if config.noise.rate > 0:
        from .data import inject_symmetric_noise

        full = inject_symmetric_noise(full, config.noise)
    from .data import split_train_test

    train_ds, test_ds = split_train_test(full, tuple(config.split_ratio), config.split_seed)
    aug_spec = config.augment.resolve(train_ds.images)
    store = TargetStore.from_state_arrays(extra) if "targets/values" in extra else None

    train_ce, train_elr, train_total, _, train_preds = _eval_split(
        model, train_ds, aug_spec, store, config.lam, config.batch_size
    )
    test_ce, _, test_total, test_logits, _ = _eval_split(
        model, test_ds, aug_spec, store, config.lam, config.batch_size
    )
    from .metrics import topk_accuracy

    mem = memorization_fractions(train_preds, train_ds)
    report = {
        "train_ce": train_ce,
        "train_elr": train_elr,
        "train_total": train_total,
        "test_ce": test_ce,
        "test_total": test_total,
        "top1": topk_accuracy(test_logits, test_ds.given_labels, 1),
        "top5": topk_accuracy(test_logits, test_ds.given_labels, min(5, test_ds.num_classes)),
        "mem_correct": mem.frac_correct,
        "mem_memorized": mem.frac_memorized,
        "mem_other": mem.frac_other,
        "mem_empty": mem.empty,
    }
    print(json.dumps(report, indent=2))
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "diagnose.json"), "w") as f:
            json.dump(report, f, indent=2)
    return EXIT_OK


def _cmd_report(args) -> int:
    path = os.path.join(args.run, "metrics.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no metrics.csv in {args.run}")
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            rows.append(MetricsRow.from_dict(rec))
    written = render_run_figures(rows, args.run)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elrlab",
        description="Noisy-label training experiments with early-learning regularization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one experiment from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a hyperparameter sweep")
    p_sweep.add_argument("--spec", required=True)
    p_sweep.add_argument("--refit", action="store_true", help="retrain the best config at full budget")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_diag = sub.add_parser("diagnose", help="recompute metrics from a checkpoint")
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--dataset", required=True, help="experiment config describing the dataset")
    p_diag.add_argument("--out", default=None)
    p_diag.set_defaults(func=_cmd_diagnose)

    p_report = sub.add_parser("report", help="re-render figures from a run directory")
    p_report.add_argument("--run", required=True)
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, StateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
