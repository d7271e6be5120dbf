"""Command-line entry point: simulate -> fit -> predict -> evaluate.

Every command is deterministic under a fixed seed and configuration. Exit
codes: 0 success, 2 usage or configuration error, 3 data error, 4 numerical
divergence. Timing is printed to stderr so file outputs stay byte-identical
across repeated runs.

Option precedence for ``fit``: built-in defaults, then the ``--config``
JSON file, then explicit command-line flags.
"""
from __future__ import annotations

import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import click
import numpy as np

from .metrics import evaluate_predictions
from .model import DncModel, SpatialDataset
from .networks import ShapeError
from .posterior import predict as posterior_predict
from .simulate import simulate_deepgp, simulate_stationary
from .storage import (
    DataFormatError,
    load_checkpoint,
    load_predictions,
    read_dataset,
    save_checkpoint,
    save_dataset,
    save_manifest,
    save_metrics,
    save_predictions,
    save_truth,
)
from .training import TrainConfig, TrainingDivergedError, fit as train_fit

EXIT_DATA = 3
EXIT_DIVERGED = 4

CONFIG_KEYS = {
    "hidden_layers", "keep_prob_h", "keep_prob_psi", "lambda_w", "lambda_b",
    "learning_rate", "batch_size", "max_epochs", "patience", "optimizer",
    "adam_beta1", "adam_beta2", "adam_eps", "seed", "n_draws",
    "train", "val", "model_out",
}


def _thread_limit():
    value = os.environ.get("DEEPCOREG_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise click.UsageError(f"DEEPCOREG_THREADS must be an integer, got {value!r}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(limits=n)


@click.group()
def main():
    """Multivariate spatial regression with neural coregionalization."""


def _run(fn, *args, **kwargs):
    try:
        with _thread_limit():
            return fn(*args, **kwargs)
    except TrainingDivergedError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    except (DataFormatError, ShapeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DATA)


@main.command()
@click.option("--design", type=click.Choice(["stationary", "deepgp"]), required=True)
@click.option("--n", default=2500, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--train-size", default=None, type=int,
              help="Training rows; val/test split the remainder evenly.")
def simulate(design, n, seed, out_dir, train_size):
    """Generate a synthetic dataset with its ground-truth sidecar."""

    def body():
        if train_size is None:
            if n == 2500:
                split = (1500, 500, 500)
            else:
                n_tr = int(round(0.6 * n))
                rest = n - n_tr
                split = (n_tr, rest // 2, rest - rest // 2)
        else:
            rest = n - train_size
            if rest < 2:
                raise click.UsageError("train size leaves no validation/test rows")
            split = (train_size, rest // 2, rest - rest // 2)
        if design == "stationary":
            sim = simulate_stationary(n=n, seed=seed, split=split)
        else:
            sim = simulate_deepgp(n=n, seed=seed, split=split)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mode = sim.params["design_mode"]
        for name in ("train", "val", "test"):
            save_dataset(sim.split(name), out / f"{name}.csv", design_mode=mode)
        save_truth(out / "truth.csv", sim)
        save_manifest(out / "manifest.json", sim.params)
        click.echo(f"wrote train/val/test/truth to {out}", err=True)

    _run(body)


def _load_fit_options(config_path, overrides):
    settings = {
        "hidden_layers": [64, 64], "keep_prob_h": 0.95, "keep_prob_psi": 0.95,
        "lambda_w": 1e-4, "lambda_b": 1e-4, "learning_rate": 1e-2,
        "batch_size": 64, "max_epochs": 1000, "patience": 150,
        "optimizer": "adam", "adam_beta1": 0.9, "adam_beta2": 0.999,
        "adam_eps": 1e-8, "seed": 0, "n_draws": 200,
        "train": None, "val": None, "model_out": None,
    }
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config {config_path}: {exc}")
        if not isinstance(doc, dict):
            raise click.UsageError("config must be a JSON object")
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(doc)
    for key, value in overrides.items():
        if value is not None:
            settings[key] = value
    return settings


@main.command(name="fit")
@click.option("--train", "train_path", type=click.Path(), default=None)
@click.option("--val", "val_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--model", "model_out", type=click.Path(), default=None,
              help="Checkpoint output path.")
@click.option("--max-epochs", type=int, default=None)
@click.option("--keep-prob", type=float, default=None)
@click.option("--lr", "learning_rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--patience", type=int, default=None)
def fit_cmd(train_path, val_path, config_path, model_out, max_epochs,
            keep_prob, learning_rate, batch_size, seed, patience):
    """Train a model on a train/validation dataset pair."""
    overrides = {
        "train": train_path, "val": val_path, "model_out": model_out,
        "max_epochs": max_epochs, "learning_rate": learning_rate,
        "batch_size": batch_size, "seed": seed, "patience": patience,
    }
    if keep_prob is not None:
        overrides["keep_prob_h"] = keep_prob
        overrides["keep_prob_psi"] = keep_prob
    settings = _load_fit_options(config_path, overrides)
    for key in ("train", "val", "model_out"):
        if settings[key] is None:
            raise click.UsageError(f"missing required option --{key.replace('_out', '')}")

    def body():
        train_ds, info = read_dataset(settings["train"])
        val_ds, _ = read_dataset(settings["val"], design_mode=info["design_mode"])
        cfg = TrainConfig(
            learning_rate=settings["learning_rate"],
            batch_size=settings["batch_size"],
            max_epochs=settings["max_epochs"],
            patience=settings["patience"],
            optimizer=settings["optimizer"],
            adam_beta1=settings["adam_beta1"],
            adam_beta2=settings["adam_beta2"],
            adam_eps=settings["adam_eps"],
            seed=settings["seed"],
            keep_prob_h=settings["keep_prob_h"],
            keep_prob_psi=settings["keep_prob_psi"],
            lambda_w=settings["lambda_w"],
            lambda_b=settings["lambda_b"],
        )
        rng = np.random.default_rng(cfg.seed)
        model = DncModel.initialize(
            train_ds.n_outcomes, train_ds.n_covariates,
            hidden=tuple(settings["hidden_layers"]),
            keep_prob_h=cfg.keep_prob_h, keep_prob_psi=cfg.keep_prob_psi,
            lambda_w=cfg.lambda_w, lambda_b=cfg.lambda_b, rng=rng,
        )
        trained, report = train_fit(model, train_ds, val_ds, cfg)
        out = Path(settings["model_out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(trained, out, seed=cfg.seed,
                        extra={"design_mode": info["design_mode"]})
        report_doc = {
            "epochs_run": report.epochs_run,
            "best_epoch": report.best_epoch,
            "train_loss": report.train_loss,
            "val_rmspe": report.val_rmspe,
            "beta": report.beta.tolist(),
            "sigma2": report.sigma2,
        }
        out.with_suffix(".report.json").write_text(json.dumps(report_doc))
        click.echo(
            f"fit: {report.epochs_run} epochs (best {report.best_epoch}), "
            f"val RMSPE {min(report.val_rmspe):.4f}, {report.seconds:.1f}s",
            err=True,
        )

    _run(body)


@main.command(name="predict")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--test", "data_path", type=click.Path(), required=True,
              help="Dataset CSV providing locations (and designs).")
@click.option("--samples", "-M", "n_draws", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--keep-prob", type=float, default=None,
              help="Override the checkpoint keep probabilities at sampling time.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def predict_cmd(model_path, data_path, n_draws, seed, keep_prob, out_path):
    """Write posterior predictive means, intervals and correlations."""

    def body():
        model = load_checkpoint(model_path)
        mode = None
        extra = json.loads(Path(model_path).read_text()).get("extra") or {}
        mode = extra.get("design_mode")
        data, _ = read_dataset(data_path, design_mode=mode)
        if data.n_outcomes != model.J or data.n_covariates != model.p:
            raise DataFormatError(
                f"dataset (J={data.n_outcomes}, p={data.n_covariates}) does not "
                f"match checkpoint (J={model.J}, p={model.p})", data_path,
            )
        if keep_prob is not None:
            model.keep_prob_h = keep_prob
            model.keep_prob_psi = keep_prob
        summary = posterior_predict(model, data.locations, data.designs,
                                    M=n_draws, seed=seed)
        save_predictions(out_path, data.locations, summary)
        click.echo(f"wrote predictions for {data.n} locations to {out_path}", err=True)

    _run(body)


@main.command(name="evaluate")
@click.option("--pred", "pred_path", type=click.Path(), required=True)
@click.option("--test", "--truth", "truth_path", type=click.Path(), required=True,
              help="Dataset CSV holding the observed outcomes.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def evaluate_cmd(pred_path, truth_path, out_path):
    """Score a prediction file against observed outcomes."""

    def body():
        S_pred, mu, lo, hi, _ = load_predictions(pred_path)
        data, _ = read_dataset(truth_path)
        if data.n != mu.shape[0]:
            raise DataFormatError(
                f"prediction rows ({mu.shape[0]}) do not match dataset rows "
                f"({data.n})", pred_path,
            )
        if data.n_outcomes != mu.shape[1]:
            raise DataFormatError(
                f"prediction outcomes ({mu.shape[1]}) do not match dataset "
                f"outcomes ({data.n_outcomes})", pred_path,
            )
        report = evaluate_predictions(data.outcomes, mu, lo, hi)
        save_metrics(out_path, report)
        click.echo(f"wrote metrics to {out_path}", err=True)

    _run(body)


if __name__ == "__main__":
    main()
