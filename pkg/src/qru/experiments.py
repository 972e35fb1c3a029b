"""Experiment configs and the three end-to-end protocols.

A config is a YAML (or JSON) mapping. Only ``kind`` is required; every other
field falls back to a per-kind default, and the fully resolved config is
written into the results record so a run can be repeated exactly.

Outputs go to ``<output_dir>/<name>/``: ``results.json`` (nested record,
schema ``qru-results/1``) and one flat CSV series (schema ``qru-series/1``).
No timestamps or timings are written, so identical runs give identical files.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from .cell import PRESET_NAMES, QRUArchitecture, param_count, preset
from .data import (
    RESIZE_METHODS,
    OscillationSpec,
    compute_metrics,
    generate_oscillation,
    image_to_sequence,
    load_mnist_3v5,
    load_wdbc,
    loocv_splits,
    remove_outliers,
    stratified_7fold,
    stratified_subsample,
    summary_stats,
)
from .errors import ConfigError, QRUError
from .gradients import Batch, batch_loss
from .engine import compiled
from .losses import LossSpec, predict_proba
from .recurrent import self_feedback_rollout
from .training import TrainingConfig, train

RESULTS_SCHEMA = "qru-results/1"
SERIES_SCHEMA = "qru-series/1"
OUTPUT_DIR_ENV = "QRU_OUTPUT_DIR"
log = logging.getLogger(__name__)
EXPERIMENT_KINDS = ("oscillation", "wdbc", "mnist35")

_DEFAULTS = {
    "oscillation": {
        "architecture": "s1",
        "loss": "mse",
        "training": {
            "learning_rate": 0.03,
            "batch_size": 1,
            "record_interval": 100,
            "max_epochs": 10000,
            "early_stop_rule": {"kind": "relative_decrease", "threshold": 0.01, "window": 3},
        },
        "data": {
            "simple_harmonic": {"amplitude": 1.0, "angular_frequency": 0.16755160819145562, "phase": 0.0},
            "damped": {"amplitude": 1.0, "angular_frequency": 0.16755160819145562, "damping": 0.012, "phase": 0.0},
            "num_points": 150,
            "train_points": 100,
            "horizon": 50,
        },
    },
    "wdbc": {
        "architecture": "s2",
        "loss": "bce",
        "training": {
            "learning_rate": 0.01,
            "batch_size": 20,
            "record_interval": 10,
            "max_epochs": 3000,
            "early_stop_rule": {"kind": "relative_decrease", "threshold": 0.01, "window": 3},
        },
        "data": {"path": "data/wdbc.data", "fold_limit": None, "fold_seed": 0},
    },
    "mnist35": {
        "architecture": "s3",
        "loss": "ce",
        "training": {
            "learning_rate": 0.01,
            "batch_size": 50,
            "record_interval": 10,
            "max_epochs": 2000,
            "early_stop_rule": {"kind": "validation_plateau", "window": 10},
        },
        "data": {
            "path": "data/mnist",
            "mode": "idx",
            "resize": "bilinear_antialias",
            "subsample": 2000,
            "subsample_seed": 0,
            "split_seed": 0,
            "folds": [1],
        },
    },
}


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown field {where}.{key}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "early_stop_rule":
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    name: str = ""
    architecture: str | dict = ""
    loss: str = ""
    training: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = dict(raw)
        kind = raw.pop("kind", None)
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"config kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
        known = {"name", "architecture", "loss", "training", "data", "seeds", "output_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = _DEFAULTS[kind]
        training = _merge(base["training"], raw.get("training") or {}, "training")
        data = _merge(base["data"], raw.get("data") or {}, "data")
        seeds = raw.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        cfg = cls(
            kind=kind,
            name=raw.get("name") or kind,
            architecture=raw.get("architecture") or base["architecture"],
            loss=raw.get("loss") or base["loss"],
            training=training,
            data=data,
            seeds=tuple(seeds),
            output_dir=str(raw.get("output_dir") or "results"),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "architecture": copy.deepcopy(self.architecture),
            "loss": self.loss,
            "training": copy.deepcopy(self.training),
            "data": copy.deepcopy(self.data),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    # resolved objects -------------------------------------------------------
    def arch(self) -> QRUArchitecture:
        if isinstance(self.architecture, str):
            return preset(self.architecture)
        if isinstance(self.architecture, dict):
            return QRUArchitecture.from_dict(self.architecture)
        raise ConfigError("architecture must be a preset name or a mapping")

    def training_config(self, seed: int) -> TrainingConfig:
        return TrainingConfig.from_dict({**self.training, "seed": int(seed)})

    def loss_spec(self) -> LossSpec:
        return LossSpec(self.loss)

    def validate(self) -> None:
        """Check everything that can fail before any compute starts."""
        if isinstance(self.architecture, str) and self.architecture not in PRESET_NAMES:
            raise ConfigError(f"unknown architecture preset {self.architecture!r}; choose from {PRESET_NAMES}")
        arch = self.arch()
        arch.validate()
        self.training_config(self.seeds[0])
        spec = self.loss_spec()
        n_out = len(arch.output_qubits)
        if self.kind == "oscillation":
            if arch.input_dim != 1 or n_out != 1:
                raise ConfigError("oscillation needs a scalar-input, scalar-output architecture")
            if spec.kind != "mse":
                raise ConfigError("oscillation uses the mse loss")
            _oscillation_specs(self.data)
            if int(self.data["horizon"]) < 1:
                raise ConfigError("data.horizon must be >= 1")
        elif self.kind == "wdbc":
            if arch.input_dim != 1 or n_out != 1 or spec.kind != "bce":
                raise ConfigError("wdbc needs one input per step, one output and the bce loss")
            limit = self.data["fold_limit"]
            if limit is not None and not (isinstance(limit, int) and limit >= 1):
                raise ConfigError("data.fold_limit must be a positive integer or null")
        else:
            if arch.input_dim != 8 or n_out != 2 or spec.kind != "ce":
                raise ConfigError("mnist35 needs 8 inputs per step, two outputs and the ce loss")
            folds = self.data["folds"]
            if not folds or not all(isinstance(f, int) and 1 <= f <= 7 for f in folds):
                raise ConfigError("data.folds must list fold numbers in 1..7")
            if self.data["mode"] not in ("idx", "csv8"):
                raise ConfigError("data.mode must be idx or csv8")
            if self.data["resize"] not in RESIZE_METHODS:
                raise ConfigError(f"data.resize must be one of {RESIZE_METHODS}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Oscillation
# ---------------------------------------------------------------------------

def _oscillation_specs(data: dict) -> dict[str, OscillationSpec]:
    common = {"num_points": int(data["num_points"]), "train_points": int(data["train_points"])}
    return {
        "simple_harmonic": OscillationSpec(kind="simple_harmonic", **data["simple_harmonic"], **common),
        "damped": OscillationSpec(kind="damped", **data["damped"], **common),
    }


def _run_oscillation(cfg: ExperimentConfig):
    arch, spec = cfg.arch(), cfg.loss_spec()
    specs = _oscillation_specs(cfg.data)
    series = {k: generate_oscillation(s) for k, s in specs.items()}
    n_train = int(cfg.data["train_points"])
    horizon = int(cfg.data["horizon"])
    kinds = list(series)
    # teacher forcing: x_1..x_{n-1} in, x_2..x_n out
    inputs = np.stack([series[k][: n_train - 1] for k in kinds])[:, :, None]
    targets = np.stack([series[k][1:n_train] for k in kinds])[:, :, None]
    dataset = Batch(inputs, targets, readout="all")

    runs, rows = [], []
    for seed in cfg.seeds:
        params, trace = train(arch, dataset, spec, cfg.training_config(seed))
        fitted, _ = compiled(arch).forward(params.values, inputs)
        test_mse = {}
        for i, k in enumerate(kinds):
            x = series[k]
            stop = min(n_train + horizon, x.size)
            pred = self_feedback_rollout(arch, params, x[n_train - 1], stop - n_train, warmup=x[: n_train - 1, None])
            test_mse[k] = float(np.mean((pred - x[n_train:stop]) ** 2))
            for t in range(n_train - 1):
                rows.append([seed, k, t + 1, "train", x[t + 1], fitted[i, t, 0]])
            for j, t in enumerate(range(n_train, stop)):
                rows.append([seed, k, t, "test", x[t], pred[j]])
        log.info("oscillation seed %d: %d epochs, test mse %s", seed, trace.epochs_run, test_mse)
        runs.append({
            "seed": seed,
            "train_mse": float(batch_loss(arch, params, dataset, spec)),
            "test_mse": test_mse,
            "test_mse_combined": float(np.mean(list(test_mse.values()))),
            "epochs": trace.epochs_run,
            "stop_reason": trace.stop_reason.value,
            "trace": trace.to_dict(),
        })

    train_vals = [r["train_mse"] for r in runs]
    test_vals = [r["test_mse_combined"] for r in runs]
    summary = {
        "train_mse": _stats_with_outliers(train_vals),
        "test_mse": _stats_with_outliers(test_vals),
        "test_mse_by_kind": {k: _stats_with_outliers([r["test_mse"][k] for r in runs]) for k in kinds},
        "outlier_rule": "1.5 IQR fences",
    }
    header = ["seed", "kind", "t", "phase", "target", "prediction"]
    return runs, summary, header, rows


def _stats_with_outliers(values) -> dict:
    return {"all": summary_stats(values), "without_outliers": summary_stats(remove_outliers(values))}


# ---------------------------------------------------------------------------
# WDBC
# ---------------------------------------------------------------------------

def _resolve(path: str) -> Path:
    return Path(path).expanduser()


def _run_wdbc(cfg: ExperimentConfig):
    arch, spec = cfg.arch(), cfg.loss_spec()
    dataset = load_wdbc(_resolve(cfg.data["path"]))
    limit = cfg.data["fold_limit"]
    fold_seed = int(cfg.data["fold_seed"])
    runs, rows = [], []
    for seed in cfg.seeds:
        preds, labels, folds = [], [], []
        for split in loocv_splits(dataset, fold_limit=limit, seed=fold_seed):
            i = int(split.test_index[0])
            assert not np.isin(i, split.train_index)
            train_set = Batch(split.train_features[:, :, None], dataset.labels[split.train_index], "final")
            params, trace = train(arch, train_set, spec, cfg.training_config(_derived_seed(seed, i)))
            raw, _ = compiled(arch).forward(params.values, split.test_features[:, :, None])
            prob = float(predict_proba(spec, raw[:, -1], params.scale)[0])
            pred = int(prob >= 0.5)
            label = int(dataset.labels[i])
            preds.append(pred)
            labels.append(label)
            fold = {
                "sample": i,
                "label": label,
                "probability": prob,
                "prediction": pred,
                "train_loss": trace.best_loss,
                "epochs": trace.epochs_run,
                "stop_reason": trace.stop_reason.value,
            }
            folds.append(fold)
            log.info("wdbc fold %d/%s sample %d: p=%.3f label=%d epochs=%d",
                     len(folds), limit or len(dataset), i, prob, label, trace.epochs_run)
            rows.append([seed, i, label, prob, pred, trace.epochs_run])
        report = compute_metrics(preds, labels, "classification")
        epochs = [f["epochs"] for f in folds]
        runs.append({
            "seed": seed,
            "folds_run": len(folds),
            "full_loocv": limit is None,
            "confusion": report.confusion,
            "metrics": report.derived,
            "epochs": summary_stats(epochs),
            "per_fold": folds,
        })
    summary = {
        "accuracy": [r["metrics"]["accuracy"] for r in runs],
        "folds_run": runs[0]["folds_run"],
        "fold_limit": limit,
        "positive_class": "malignant",
    }
    header = ["seed", "sample", "label", "probability", "prediction", "epochs"]
    return runs, summary, header, rows


# ---------------------------------------------------------------------------
# MNIST 3 vs 5
# ---------------------------------------------------------------------------

def _image_batch(images, class_index) -> Batch:
    seqs = np.stack([image_to_sequence(img) for img in images])
    return Batch(seqs, np.eye(2)[class_index], "final")


def _predict_classes(arch, params, inputs, spec) -> np.ndarray:
    raw, _ = compiled(arch).forward(params.values, inputs)
    return np.argmax(predict_proba(spec, raw[:, -1], params.scale), axis=1)


def _accuracy(arch, params, batch: Batch, spec) -> float:
    pred = _predict_classes(arch, params, batch.inputs, spec)
    return float(np.mean(pred == np.argmax(batch.targets, axis=1)))


def _run_mnist(cfg: ExperimentConfig):
    arch, spec = cfg.arch(), cfg.loss_spec()
    full = load_mnist_3v5(_resolve(cfg.data["path"]), cfg.data["mode"], cfg.data["resize"])
    keep = stratified_subsample(full.labels, cfg.data["subsample"], int(cfg.data["subsample_seed"]))
    data = full.subset(keep)
    folds = stratified_7fold(data, int(cfg.data["split_seed"]))
    cls = data.class_index
    runs, rows = [], []
    for seed in cfg.seeds:
        per_fold = []
        for number in cfg.data["folds"]:
            fold = folds[number - 1]
            train_b = _image_batch(data.images[fold.train], cls[fold.train])
            val_b = _image_batch(data.images[fold.validation], cls[fold.validation])
            test_b = _image_batch(data.images[fold.test], cls[fold.test])
            params, trace = train(arch, train_b, spec, cfg.training_config(_derived_seed(seed, number)), validation=val_b)
            pred = _predict_classes(arch, params, test_b.inputs, spec)
            report = compute_metrics(pred, cls[fold.test], "classification")
            log.info("mnist35 fold %d: test accuracy %.4f after %d epochs",
                     number, report.derived["accuracy"], trace.epochs_run)
            per_fold.append({
                "fold": number,
                "sizes": {"train": len(fold.train), "validation": len(fold.validation), "test": len(fold.test)},
                "train_accuracy": _accuracy(arch, params, train_b, spec),
                "validation_accuracy": _accuracy(arch, params, val_b, spec),
                "test_accuracy": report.derived["accuracy"],
                "confusion": report.confusion,
                "epochs": trace.epochs_run,
                "stop_reason": trace.stop_reason.value,
                "trace": trace.to_dict(),
            })
            val = dict(trace.validation_losses)
            for epoch, loss in trace.recorded_losses:
                rows.append([seed, number, epoch, loss, val.get(epoch)])
        accs = [f["test_accuracy"] for f in per_fold]
        runs.append({"seed": seed, "per_fold": per_fold, "test_accuracy": summary_stats(accs)})
    summary = {
        "dataset_size": len(full),
        "subsample": len(data),
        "class_counts": {"3": int(np.sum(data.labels == 3)), "5": int(np.sum(data.labels == 5))},
        "positive_class": "digit 5",
        "provenance": full.provenance,
        "mean_test_accuracy": [r["test_accuracy"]["mean"] for r in runs],
    }
    header = ["seed", "fold", "epoch", "train_loss", "validation_loss"]
    return runs, summary, header, rows


_RUNNERS = {"oscillation": _run_oscillation, "wdbc": _run_wdbc, "mnist35": _run_mnist}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    record: dict
    results_path: Path
    series_path: Path


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """Precedence: explicit override, then $QRU_OUTPUT_DIR, then the config value."""
    return Path(override or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)


def results_json(record: dict) -> str:
    return json.dumps(record, indent=2, sort_keys=True, allow_nan=False) + "\n"


def series_csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {SERIES_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


def run_experiment(config, output_dir: str | None = None, seed: int | None = None) -> ExperimentResult:
    """Run a config (path, mapping or ExperimentConfig) and write its outputs."""
    if isinstance(config, ExperimentConfig):
        cfg = config
    elif isinstance(config, dict):
        cfg = ExperimentConfig.from_dict(config)
    else:
        cfg = load_config(config)
    if seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seeds": [int(seed)]})
    arch = cfg.arch()
    runs, summary, header, rows = _RUNNERS[cfg.kind](cfg)
    record = {
        "schema": RESULTS_SCHEMA,
        "code_version": code_version(),
        "experiment": cfg.kind,
        "config": cfg.to_dict(),
        "architecture": {"name": arch.name, "param_count": param_count(arch), "spec": arch.to_dict()},
        "seeds": list(cfg.seeds),
        "summary": summary,
        "runs": runs,
    }
    out = resolve_output_dir(cfg, output_dir) / cfg.name
    try:
        out.mkdir(parents=True, exist_ok=True)
        results_path = out / "results.json"
        series_path = out / "series.csv"
        results_path.write_text(results_json(record))
        series_path.write_text(series_csv(header, rows))
    except OSError as exc:
        raise QRUError(f"cannot write results to {out}: {exc}") from None
    return ExperimentResult(record, results_path, series_path)
