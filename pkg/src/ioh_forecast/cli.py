"""Command-line surface: synth, prepare, train, evaluate, gradcheck.

Exit codes: 0 success, 1 verification or training failure, 2 invalid
configuration, 3 I/O failure. All commands are deterministic given the
same inputs and seeds; outputs are byte-identical across reruns.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys

import click

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_run_config
from .evaluation import evaluate_model, evaluate_persistence, report_json
from .gradcheck import format_results, run_all
from .network import init_params
from .training import TrainingDivergedError, train
from .vitals import VitalsParseError, clean_artifacts, ingest_csv, synth_cohort, write_cohort_csv
from .windows import load_window_dataset, make_windows, save_window_dataset, split_dataset

EXIT_VERIFICATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path, paper_protocol: bool = False):
    try:
        cfg = load_run_config(path)
        if paper_protocol:
            cfg.apply_paper_protocol()
        cfg.validate(paper_protocol=paper_protocol)
        return cfg
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))


@click.group()
def main():
    """Forecast intraoperative hypotension from MAP/SBP vital series."""


@main.command()
@click.option("--config", "config_path", envvar="IOH_FORECAST_CONFIG",
              default=None, help="Run-config JSON; defaults apply if omitted.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the cohort seed.")
def synth(config_path, out, seed):
    """Generate a synthetic cohort as a vitals CSV plus manifest."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg.cohort.seed = seed
    try:
        series = synth_cohort(cfg.cohort)
        os.makedirs(out, exist_ok=True)
        write_cohort_csv(series, os.path.join(out, "cohort.csv"))
        with open(os.path.join(out, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"wrote {len(series)} patients to {out}/cohort.csv")


@main.command()
@click.option("--data", required=True, type=click.Path(), help="Vitals CSV.")
@click.option("--config", "config_path", envvar="IOH_FORECAST_CONFIG",
              default=None)
@click.option("--out", required=True, type=click.Path(),
              help="Window-dataset directory.")
@click.option("--stride", type=int, default=None,
              help="Window stride; defaults to the target length.")
@click.option("--paper-protocol", is_flag=True,
              help="Pin the published protocol constants "
                   "(3 s, L=300, skip=40, t=20, 65 mmHg).")
def prepare(data, config_path, out, stride, paper_protocol):
    """Cut a vitals CSV into labeled context/skip/target windows."""
    cfg = _load_config(config_path, paper_protocol=paper_protocol)
    w = cfg.windowing
    if stride is not None:
        if stride < 1:
            _fail(EXIT_CONFIG, f"stride must be >= 1, got {stride}")
        w.stride = stride
    try:
        series = ingest_csv(data, w.interval_s)
    except VitalsParseError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    instances = []
    for s in series:
        cleaned = clean_artifacts(s, max_gap=w.max_gap)
        instances.extend(make_windows(
            cleaned, L=w.L, skip_len=w.skip_len, tau=w.target_len,
            stride=w.resolved_stride, theta_map=w.theta_map, t=w.t,
        ))
    if not instances:
        _fail(EXIT_CONFIG,
              "no window instances produced; series too short or invalid")
    train_split, val_split, test_split = split_dataset(instances)
    meta = {
        "L": w.L,
        "skip_len": w.skip_len,
        "target_len": w.target_len,
        "t": w.t,
        "theta_map": w.theta_map,
        "interval_s": w.interval_s,
    }
    try:
        save_window_dataset(
            {"train": train_split, "val": val_split, "test": test_split},
            out, meta,
        )
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"train: {len(train_split)}")
    click.echo(f"val:   {len(val_split)}")
    click.echo(f"test:  {len(test_split)}")


@main.command(name="train")
@click.option("--data", required=True, type=click.Path(),
              help="Window-dataset directory from `prepare`.")
@click.option("--config", "config_path", envvar="IOH_FORECAST_CONFIG",
              default=None)
@click.option("--out", required=True, type=click.Path(),
              help="Output directory for checkpoint and log.")
@click.option("--ablate-norm", is_flag=True,
              help="Disable instance normalization (raw windows in).")
@click.option("--ablate-decomp", is_flag=True,
              help="Disable decomposition (single encoder on the raw series).")
@click.option("--seed", type=int, default=None,
              help="Override both init and training seeds.")
def train_cmd(data, config_path, out, ablate_norm, ablate_decomp, seed):
    """Train a model on a prepared window dataset."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg.model.seed = seed
        cfg.training.seed = seed
    try:
        splits, meta = load_window_dataset(data)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_IO, f"cannot load window dataset: {exc}")
    cfg.windowing.L = int(meta["L"])
    cfg.windowing.skip_len = int(meta["skip_len"])
    cfg.windowing.target_len = int(meta["target_len"])
    cfg.windowing.interval_s = float(meta["interval_s"])
    model_config = cfg.model_config(use_norm=not ablate_norm,
                                    use_decomp=not ablate_decomp)
    try:
        model_config.validate()
        cfg.training.validate()
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    if not splits["train"] or not splits["val"]:
        _fail(EXIT_CONFIG, "dataset has an empty train or val split")
    params = init_params(model_config)
    try:
        best_params, log = train(params, model_config, splits["train"],
                                 splits["val"], cfg.training)
    except TrainingDivergedError as exc:
        _fail(EXIT_VERIFICATION, str(exc))
    try:
        os.makedirs(out, exist_ok=True)
        save_checkpoint(best_params, model_config,
                        os.path.join(out, "model.ckpt"))
        log.write_jsonl(os.path.join(out, "trainlog.jsonl"))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"best validation loss: {log.best_val_loss:.6f} "
               f"(epoch {log.best_epoch})")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(),
              help="Checkpoint written by `train`.")
@click.option("--data", required=True, type=click.Path(),
              help="Window-dataset directory.")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="Where to write the metrics JSON.")
@click.option("--baseline", is_flag=True,
              help="Also evaluate the persistence baseline.")
def evaluate(model_path, data, report_path, baseline):
    """Evaluate a checkpoint on the test split of a window dataset."""
    try:
        params, model_config = load_checkpoint(model_path)
    except CheckpointError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    try:
        splits, meta = load_window_dataset(data)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_IO, f"cannot load window dataset: {exc}")
    test_split = splits["test"]
    if not test_split:
        _fail(EXIT_CONFIG, "dataset has an empty test split")
    expected_horizon = int(meta["skip_len"]) + int(meta["target_len"])
    if model_config.horizon != expected_horizon or \
            model_config.context_len != int(meta["L"]):
        _fail(EXIT_CONFIG,
              f"checkpoint geometry (L={model_config.context_len}, "
              f"horizon={model_config.horizon}) does not match dataset "
              f"(L={meta['L']}, horizon={expected_horizon})")
    report = evaluate_model(params, model_config, test_split, t=int(meta["t"]))
    extra = {"dataset": meta}
    base = None
    if baseline:
        base = evaluate_persistence(test_split, t=int(meta["t"]))
        extra["baseline"] = dataclasses.asdict(base)
    try:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report_json(report, model_config, extra))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))

    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    click.echo(f"MSE:      {fmt(report.mse_overall)}")
    click.echo(f"MAE:      {fmt(report.mae_overall)}")
    click.echo(f"AUC:      {fmt(report.auc)}")
    click.echo(f"Accuracy: {fmt(report.accuracy_pct)}%")
    click.echo(f"Recall:   {fmt(report.recall_pct)}"
               f"{'' if report.recall_pct is None else '%'}")
    if base is not None:
        click.echo(f"baseline MSE: {fmt(base.mse_overall)}  "
                   f"MAE: {fmt(base.mae_overall)}  AUC: {fmt(base.auc)}")


@main.command()
@click.option("--seeds", type=int, default=20,
              help="Random cases per op check.")
def gradcheck(seeds):
    """Run the finite-difference verification suite."""
    results, ok = run_all(n_seeds=seeds)
    click.echo(format_results(results))
    if not ok:
        _fail(EXIT_VERIFICATION, "gradient checks failed")
    click.echo("all gradient checks passed")


if __name__ == "__main__":
    main()
