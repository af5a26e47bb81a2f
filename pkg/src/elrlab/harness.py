"""Experiment runner and hyperparameter sweep driver."""

from __future__ import annotations

import itertools
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as datamod
from .autodiff import Tensor, backward, no_grad
from .config import ExperimentConfig, SweepSpec, apply_override
from .exceptions import ConfigError, ElrlabError, NumericsError
from .losses import TargetStore, cross_entropy, elr_loss, update_targets
from .metrics import CSV_HEADER, MemorizationRecord, MetricsRow, memorization_fractions, topk_accuracy
from .models import Model, build_model, save_checkpoint
from .optim import SGD, schedule_lr


@dataclass
class RunResult:
    config: dict
    rows: list = field(default_factory=list)
    final_top1: float = 0.0
    final_top5: float = 0.0
    checkpoint_path: str | None = None
    out_dir: str | None = None
    epoch_seconds: list = field(default_factory=list)


def build_dataset(config: ExperimentConfig) -> datamod.LabeledDataset:
    spec = config.dataset
    if spec.kind == "synthetic":
        return datamod.generate_synthetic(
            spec.classes, spec.per_class, tuple(spec.image_size), spec.sigma, config.split_seed
        )
    return datamod.load_cifar_binary(spec.paths, spec.kind)


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _eval_split(
    model: Model,
    ds: datamod.LabeledDataset,
    aug_spec,
    store: TargetStore | None,
    lam: float,
    batch_size: int,
):
    """Eval-mode pass: mean CE, mean ELR penalty, logits and predictions."""
    model.eval()
    n = len(ds)
    logits_all = np.empty((n, ds.num_classes))
    with no_grad():
        for start in range(0, n, batch_size):
            idx = slice(start, min(start + batch_size, n))
            x = datamod.normalize_batch(ds.images[idx], aug_spec)
            logits_all[idx] = model(Tensor(x)).data
    z = logits_all - logits_all.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ce = float(-log_p[np.arange(n), ds.given_labels].mean())
    elr_part = 0.0
    if store is not None:
        p = np.exp(log_p)
        inner = np.clip((p * store.lookup(ds.sample_ids)).sum(axis=1), 0.0, 1.0 - 1e-4)
        elr_part = float(np.log(1.0 - inner).mean())
    total = ce + lam * elr_part
    preds = logits_all.argmax(axis=1)
    return ce, elr_part, total, logits_all, preds


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> RunResult:
    """Train one configuration end to end.

    Writes metrics.csv (row per epoch, flushed as it goes), metrics.json,
    summary.json, a final checkpoint, and report figures into the run
    directory when one is configured.
    """
    config.validate()
    out_dir = out_dir or config.out_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    full = build_dataset(config)
    if config.noise.rate > 0:
        full = datamod.inject_symmetric_noise(full, config.noise)
    train_ds, test_ds = datamod.split_train_test(
        full, tuple(config.split_ratio), config.split_seed
    )
    aug_spec = config.augment.resolve(train_ds.images)

    model = build_model(config.model, config.seed)
    opt = SGD(
        model.params,
        momentum=config.optimizer.momentum,
        weight_decay=config.optimizer.weight_decay,
        sam_rho=config.optimizer.sam_rho,
    )
    store = None
    if config.loss == "elr":
        store = TargetStore(len(full), full.num_classes, config.beta)

    rng = np.random.default_rng(config.seed)
    result = RunResult(config=config.to_dict(), out_dir=out_dir)

    csv_file = None
    if out_dir is not None:
        csv_file = open(os.path.join(out_dir, "metrics.csv"), "w")
        csv_file.write(",".join(CSV_HEADER) + "\n")
        csv_file.flush()

    def record_epoch(epoch: int, lr: float, seconds: float):
        train_ce, train_elr, train_total, _, train_preds = _eval_split(
            model, train_ds, aug_spec, store, config.lam, config.batch_size
        )
        test_ce, test_elr, test_total, test_logits, _ = _eval_split(
            model, test_ds, aug_spec, store, config.lam, config.batch_size
        )
        k5 = min(5, test_ds.num_classes)
        row = MetricsRow(
            epoch=epoch,
            lr=lr,
            train_ce=train_ce,
            train_elr=train_elr,
            train_total=train_total,
            test_ce=test_ce,
            test_total=test_total,
            top1=topk_accuracy(test_logits, test_ds.given_labels, 1),
            top5=topk_accuracy(test_logits, test_ds.given_labels, k5),
            memorization=memorization_fractions(train_preds, train_ds, epoch),
            seconds=0.0,  # wall time lives in summary.json; CSV stays deterministic
        )
        result.rows.append(row)
        result.epoch_seconds.append(seconds)
        if csv_file is not None:
            csv_file.write(",".join(row.to_csv_fields()) + "\n")
            csv_file.flush()

    try:
        # prime batch-norm running stats with one train-mode forward pass so
        # the epoch-0 baseline can run in eval mode
        if model._bn_layers and len(train_ds) > 0:
            with no_grad():
                model.train()
                x0 = datamod.normalize_batch(train_ds.images[: config.batch_size], aug_spec)
                model(Tensor(x0))

        record_epoch(0, schedule_lr(config.schedule, 0), 0.0)

        n_train = len(train_ds)
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            lr = schedule_lr(config.schedule, epoch - 1)
            order = rng.permutation(n_train)
            model.train()
            for step, start in enumerate(range(0, n_train, config.batch_size)):
                idx = order[start : start + config.batch_size]
                xb = datamod.augment_batch(train_ds.images[idx], aug_spec, rng)
                yb = train_ds.given_labels[idx]
                ids = train_ds.sample_ids[idx]
                try:
                    if config.optimizer.sam_rho > 0:
                        first_pass = [True]

                        def loss_fn():
                            logits = model(Tensor(xb))
                            if store is not None:
                                if first_pass[0]:
                                    update_targets(store, ids, _softmax_np(logits.data))
                                    first_pass[0] = False
                                return elr_loss(logits, yb, store, ids, config.lam).total
                            return cross_entropy(logits, yb)

                        opt.sam_step(loss_fn, lr)
                    else:
                        logits = model(Tensor(xb))
                        if store is not None:
                            update_targets(store, ids, _softmax_np(logits.data))
                            loss = elr_loss(logits, yb, store, ids, config.lam).total
                        else:
                            loss = cross_entropy(logits, yb)
                        opt.zero_grad()
                        backward(loss)
                        opt.step(lr)
                except NumericsError as exc:
                    raise NumericsError(
                        f"non-finite value at epoch {epoch}, step {step}: {exc}"
                    ) from exc
            record_epoch(epoch, lr, time.perf_counter() - t0)
    finally:
        if csv_file is not None:
            csv_file.close()

    final = result.rows[-1]
    result.final_top1 = final.top1
    result.final_top5 = final.top5

    if out_dir is not None:
        ckpt = os.path.join(out_dir, "checkpoint.npz")
        extra = store.state_arrays() if store is not None else None
        save_checkpoint(ckpt, model, extra)
        result.checkpoint_path = ckpt
        emit_metrics(result, "json")
        _write_summary(result, config)
        from .plots import render_run_figures

        render_run_figures(result.rows, out_dir)
    return result


def _write_summary(result: RunResult, config: ExperimentConfig):
    summary = {
        "config_hash": config.config_hash(),
        "final_top1": result.final_top1,
        "final_top5": result.final_top5,
        "epochs": config.epochs,
        "loss": config.loss,
        "lam": config.lam,
        "beta": config.beta,
        "momentum": config.optimizer.momentum,
        "weight_decay": config.optimizer.weight_decay,
        "sam_rho": config.optimizer.sam_rho,
        "batch_size": config.batch_size,
        "noise_rate": config.noise.rate,
        "epoch_seconds": result.epoch_seconds,
        "total_seconds": float(sum(result.epoch_seconds)),
    }
    with open(os.path.join(result.out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)


def emit_metrics(result: RunResult, fmt: str = "csv", out_dir: str | None = None):
    """Write the metrics table as CSV or JSON into the run directory."""
    out_dir = out_dir or result.out_dir
    if out_dir is None:
        raise ConfigError("emit_metrics needs an output directory")
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "csv":
        path = os.path.join(out_dir, "metrics.csv")
        with open(path, "w") as f:
            f.write(",".join(CSV_HEADER) + "\n")
            for row in result.rows:
                f.write(",".join(row.to_csv_fields()) + "\n")
    elif fmt == "json":
        path = os.path.join(out_dir, "metrics.json")
        with open(path, "w") as f:
            json.dump({"config": result.config, "rows": [r.to_dict() for r in result.rows]}, f)
    else:
        raise ConfigError(f"unknown metrics format {fmt!r}")
    return path


# ---------------------------------------------------------------------------
# sweeps


def _enumerate_grid(spec: SweepSpec):
    names = list(spec.parameters)
    for values in names:
        if isinstance(spec.parameters[values], dict):
            raise ConfigError(f"grid mode needs value lists, got a range spec for {values!r}")
    combos = itertools.product(*(spec.parameters[n] for n in names))
    for combo in itertools.islice(combos, spec.max_runs):
        yield dict(zip(names, combo))


def _sample_random(spec: SweepSpec):
    rng = np.random.default_rng(spec.sweep_seed)
    for _ in range(spec.max_runs):
        combo = {}
        for name, values in spec.parameters.items():
            if isinstance(values, list):
                combo[name] = values[int(rng.integers(len(values)))]
            else:
                low, high = values["low"], values["high"]
                if values.get("log"):
                    v = float(np.exp(rng.uniform(np.log(low), np.log(high))))
                else:
                    v = float(rng.uniform(low, high))
                combo[name] = int(round(v)) if values.get("int") else v
        yield combo


def run_sweep(spec: SweepSpec, refit: bool = False):
    """Run every candidate at the short sweep budget and rank by final top-1.

    Returns (best config, list of (overrides, RunResult-or-error)). With
    refit=True the best configuration is retrained at the full budget.
    """
    spec.validate()
    combos = list(_enumerate_grid(spec) if spec.mode == "grid" else _sample_random(spec))

    results = []
    for i, overrides in enumerate(combos):
        cfg_dict = spec.base.to_dict()
        for path, value in overrides.items():
            apply_override(cfg_dict, path, value)
        cfg_dict["epochs"] = spec.sweep_epochs
        run_dir = None
        try:
            config = ExperimentConfig.from_dict(cfg_dict)
            if spec.out_dir is not None:
                run_dir = os.path.join(spec.out_dir, f"run_{i:03d}_{config.config_hash()}")
            cfg_dict["out_dir"] = run_dir
            config.out_dir = run_dir
            results.append((overrides, run_experiment(config)))
        except ElrlabError as exc:
            results.append((overrides, exc))

    completed = [(o, r) for o, r in results if isinstance(r, RunResult)]
    if not completed:
        raise ElrlabError("all sweep runs failed")
    best_overrides, best_result = max(
        enumerate(completed), key=lambda ir: (ir[1][1].final_top1, -ir[0])
    )[1]

    best_dict = spec.base.to_dict()
    for path, value in best_overrides.items():
        apply_override(best_dict, path, value)
    best_config = ExperimentConfig.from_dict(best_dict)

    if refit:
        refit_dict = dict(best_dict)
        refit_dict["epochs"] = (
            spec.refit_epochs if spec.refit_epochs is not None else spec.base.epochs
        )
        if spec.out_dir is not None:
            refit_dict["out_dir"] = os.path.join(spec.out_dir, "refit_best")
        refit_config = ExperimentConfig.from_dict(refit_dict)
        results.append(({"refit": True, **best_overrides}, run_experiment(refit_config)))

    if spec.out_dir is not None:
        os.makedirs(spec.out_dir, exist_ok=True)
        report = {
            "mode": spec.mode,
            "runs": [
                {
                    "overrides": o,
                    "ok": isinstance(r, RunResult),
                    "final_top1": r.final_top1 if isinstance(r, RunResult) else None,
                    "error": None if isinstance(r, RunResult) else str(r),
                }
                for o, r in results
            ],
            "best_overrides": best_overrides,
        }
        with open(os.path.join(spec.out_dir, "sweep.json"), "w") as f:
            json.dump(report, f, indent=2)

    return best_config, results
