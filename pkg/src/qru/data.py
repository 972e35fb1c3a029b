"""Datasets, cross-validation splits and evaluation metrics for the three tasks."""

from __future__ import annotations

import csv
import gzip
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold, train_test_split
from sklearn.preprocessing import MinMaxScaler

from .errors import ConfigError, DataError, InputError

# ---------------------------------------------------------------------------
# Oscillations
# ---------------------------------------------------------------------------

OSCILLATION_KINDS = ("simple_harmonic", "damped")


@dataclass(frozen=True)
class OscillationSpec:
    kind: str = "simple_harmonic"
    amplitude: float = 1.0
    angular_frequency: float = 2 * math.pi * 4 / 150  # rad per step
    damping: float = 0.0  # per-step decay exponent
    phase: float = 0.0
    num_points: int = 150
    train_points: int = 100

    def __post_init__(self):
        if self.kind not in OSCILLATION_KINDS:
            raise ConfigError(f"unknown oscillation kind {self.kind!r}")
        if self.damping < 0:
            raise ConfigError("damping must be >= 0")
        if self.kind == "simple_harmonic" and self.damping != 0:
            raise ConfigError("a simple harmonic series has zero damping")
        if not 2 <= self.train_points < self.num_points:
            raise ConfigError("need 2 <= train_points < num_points")


def damped_spec(damping: float = 0.012, **kw) -> OscillationSpec:
    return OscillationSpec(kind="damped", damping=damping, **kw)


def generate_oscillation(spec: OscillationSpec, normalize: bool = True) -> np.ndarray:
    """A exp(-d t) sin(w t + phi) for t = 0..N-1, divided by its max |x| when ``normalize``.

    Dividing by the peak magnitude puts the series in [-1, 1] without moving
    zero, so the identity output-to-input map stays meaningful in rollouts.
    """
    t = np.arange(spec.num_points, dtype=float)
    x = spec.amplitude * np.exp(-spec.damping * t) * np.sin(spec.angular_frequency * t + spec.phase)
    if normalize:
        peak = np.max(np.abs(x))
        if peak > 0:
            x = x / peak
    return x


# ---------------------------------------------------------------------------
# Tabular (WDBC)
# ---------------------------------------------------------------------------

WDBC_ROWS = 569
WDBC_FEATURES = 30


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray  # (N, F) raw values
    labels: np.ndarray  # (N,) 1 = malignant, 0 = benign
    ids: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def load_wdbc(path, expected_rows: int | None = WDBC_ROWS) -> TabularDataset:
    """Parse the UCI layout ``id,diagnosis,30 floats``; diagnosis M maps to label 1."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"WDBC file not found: {path}")
    ids, labels, rows = [], [], []
    with path.open(newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 + WDBC_FEATURES:
                raise DataError(f"row {i}: expected {2 + WDBC_FEATURES} fields, got {len(row)}")
            diag = row[1].strip()
            if diag not in ("M", "B"):
                raise DataError(f"row {i}: diagnosis must be M or B, got {diag!r}")
            try:
                values = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise DataError(f"row {i}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"row {i}: non-finite feature value")
            ids.append(row[0].strip())
            labels.append(1 if diag == "M" else 0)
            rows.append(values)
    if expected_rows is not None and len(rows) != expected_rows:
        raise DataError(f"dataset integrity: expected {expected_rows} rows, found {len(rows)}")
    if not rows:
        raise DataError(f"no samples in {path}")
    return TabularDataset(np.array(rows), np.array(labels, dtype=int), np.array(ids))


@dataclass(frozen=True)
class NormalizedSplit:
    train_index: np.ndarray
    test_index: np.ndarray
    train_features: np.ndarray
    test_features: np.ndarray
    fit_min: np.ndarray
    fit_max: np.ndarray


def normalize_split(dataset: TabularDataset, train_index, test_index) -> NormalizedSplit:
    """Min-max scale to [0, 1] with statistics from the training rows only.

    Test rows may land outside [0, 1]; they are never used for fitting.
    """
    train_index = np.asarray(train_index)
    test_index = np.asarray(test_index)
    scaler = MinMaxScaler().fit(dataset.features[train_index])
    return NormalizedSplit(
        train_index,
        test_index,
        scaler.transform(dataset.features[train_index]),
        scaler.transform(dataset.features[test_index]),
        scaler.data_min_,
        scaler.data_max_,
    )


def loocv_splits(dataset: TabularDataset, fold_limit: int | None = None, seed: int = 0):
    """Leave-one-out splits, each renormalised on its own training rows.

    ``fold_limit`` keeps a seeded subset of the held-out samples (in ascending
    index order) for desk-scale runs; ``None`` yields every sample.
    """
    n = len(dataset)
    held_out = np.arange(n)
    if fold_limit is not None:
        if not 1 <= fold_limit <= n:
            raise ConfigError(f"fold_limit must be in [1, {n}]")
        held_out = np.sort(np.random.default_rng(seed).choice(n, size=fold_limit, replace=False))
    everything = np.arange(n)
    for i in held_out:
        yield normalize_split(dataset, everything[everything != i], np.array([i]))


# ---------------------------------------------------------------------------
# Images (MNIST 3 vs 5)
# ---------------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _open_maybe_gz(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return path.open("rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX image (magic 0x803) or label (0x801) file, gzipped or not."""
    path = Path(path)
    try:
        with _open_maybe_gz(path) as fh:
            raw = fh.read()
    except (OSError, EOFError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    magic = int.from_bytes(raw[:4], "big")
    if magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise DataError(f"{path}: truncated header")
        n, rows, cols = (int.from_bytes(raw[4 + 4 * k: 8 + 4 * k], "big") for k in range(3))
        shape, offset = (n, rows, cols), 16
    elif magic == IDX_LABELS_MAGIC:
        shape, offset = (int.from_bytes(raw[4:8], "big"),), 8
    else:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=offset)
    if body.size != int(np.prod(shape)):
        raise DataError(f"{path}: expected {int(np.prod(shape))} bytes of data, found {body.size}")
    return body.reshape(shape)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).is_file():
            return directory / name
    raise DataError(f"missing MNIST file {stem}[.gz] in {directory}")


RESIZE_METHODS = ("bilinear_antialias", "bilinear")


def bilinear_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """(n_out, n_in) weights for 1-D bilinear resampling with half-pixel centres.

    With ``antialias`` the triangle kernel is widened by the shrink factor when
    downsampling (the Pillow BILINEAR filter), so every input pixel contributes.
    Without it each output reads only its two nearest inputs.
    """
    scale = n_in / n_out
    support = max(scale, 1.0) if antialias else 1.0
    w = np.zeros((n_out, n_in))
    centres = np.arange(n_in) + 0.5
    for i in range(n_out):
        src = (i + 0.5) * scale
        if antialias:
            row = np.clip(1.0 - np.abs(centres - src) / support, 0.0, None)
        else:
            pos = min(max(src - 0.5, 0.0), n_in - 1.0)
            lo = int(math.floor(pos))
            row = np.zeros(n_in)
            row[lo] += 1.0 - (pos - lo)
            row[min(lo + 1, n_in - 1)] += pos - lo
        w[i] = row / row.sum()
    return w


def downsample(images, size: int = 8, method: str = "bilinear_antialias") -> np.ndarray:
    """Bilinear resize of (N, H, W) images to (N, size, size)."""
    if method not in RESIZE_METHODS:
        raise ConfigError(f"unknown resize method {method!r}; choose from {RESIZE_METHODS}")
    images = np.asarray(images, dtype=float)
    antialias = method == "bilinear_antialias"
    wr = bilinear_matrix(images.shape[1], size, antialias)
    wc = bilinear_matrix(images.shape[2], size, antialias)
    return np.einsum("ih,nhw,jw->nij", wr, images, wc)


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # (N, 8, 8) in [0, 1]
    labels: np.ndarray  # digit labels, 3 or 5
    provenance: str

    def __len__(self):
        return self.labels.shape[0]

    @property
    def class_index(self) -> np.ndarray:
        """0 for digit 3, 1 for digit 5."""
        return (self.labels == 5).astype(int)

    def subset(self, index) -> "ImageDataset":
        return ImageDataset(self.images[index], self.labels[index], self.provenance)


def load_mnist_3v5(path, mode: str = "idx", resize: str = "bilinear_antialias") -> ImageDataset:
    """Threes and fives from MNIST as 8x8 images scaled to [0, 1].

    ``mode="idx"``: ``path`` is a directory with the four standard IDX files
    (train and t10k, optionally gzipped); both sets are pooled and each 28x28
    image is resized to 8x8 with ``resize`` (see ``downsample``). ``mode="csv8"``: ``path`` is a CSV with
    64 pixel columns (0..255) followed by the digit label.
    """
    path = Path(path)
    if mode == "idx":
        images, labels = [], []
        for img_stem, lbl_stem in MNIST_FILES.values():
            imgs = read_idx(_find(path, img_stem))
            lbls = read_idx(_find(path, lbl_stem))
            if imgs.ndim != 3 or lbls.ndim != 1 or imgs.shape[0] != lbls.shape[0]:
                raise DataError(f"image/label count mismatch in {path}")
            keep = (lbls == 3) | (lbls == 5)
            images.append(downsample(imgs[keep] / 255.0, 8, resize))
            labels.append(lbls[keep].astype(int))
        return ImageDataset(np.concatenate(images), np.concatenate(labels), f"downsampled-28x28-{resize}")
    if mode == "csv8":
        if not path.is_file():
            raise DataError(f"CSV file not found: {path}")
        try:
            table = np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        if table.shape[1] != 65:
            raise DataError(f"{path}: expected 65 columns, got {table.shape[1]}")
        labels = table[:, 64].astype(int)
        keep = (labels == 3) | (labels == 5)
        pixels = table[keep, :64]
        if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
            raise DataError(f"{path}: pixel values outside 0..255")
        return ImageDataset(pixels.reshape(-1, 8, 8) / 255.0, labels[keep], "preloaded-8x8")
    raise ConfigError(f"unknown MNIST mode {mode!r}")


def stratified_subsample(labels, size: int | None, seed: int) -> np.ndarray:
    """Sorted indices of a seeded class-stratified subsample (all indices if size is None)."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if size is None or size >= n:
        return np.arange(n)
    if size < 2:
        raise ConfigError("subsample size must be >= 2")
    idx, _ = train_test_split(np.arange(n), train_size=size, stratify=labels, random_state=seed)
    return np.sort(idx)


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def stratified_kfold(labels, k: int = 7, seed: int = 0, validation_fraction: float = 1 / 6) -> list[Fold]:
    """Stratified k folds; each training part loses a stratified ``validation_fraction``.

    With k = 7 and 1/6 this gives the 5:1:1 train/validation/test ratio.
    """
    labels = np.asarray(labels)
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = []
    for i, (train, test) in enumerate(skf.split(np.zeros(len(labels)), labels)):
        tr, val = train_test_split(
            train, test_size=validation_fraction, stratify=labels[train], random_state=seed + 1000 * (i + 1)
        )
        folds.append(Fold(np.sort(tr), np.sort(val), np.sort(test)))
    return folds


def stratified_7fold(dataset: ImageDataset, seed: int = 0) -> list[Fold]:
    return stratified_kfold(dataset.labels, 7, seed)


def image_to_sequence(image) -> np.ndarray:
    """Rows top to bottom: an 8x8 image becomes 8 steps of 8 values."""
    image = np.asarray(image, dtype=float)
    if image.shape != (8, 8):
        raise InputError(f"expected an 8x8 image, got shape {image.shape}")
    return image.copy()


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def remove_outliers(values) -> np.ndarray:
    """Drop values outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] (linear-interpolated quartiles)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InputError("no values to filter")
    q1, q3 = np.percentile(values, [25, 75])
    iqr = q3 - q1
    keep = (values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)
    return values[keep]


def summary_stats(values) -> dict:
    """Mean, median and sample standard deviation (ddof=1; 0 for a single value)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InputError("no values to summarise")
    return {
        "count": int(values.size),
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "stddev": float(np.std(values, ddof=1)) if values.size > 1 else 0.0,
    }


def _ratio(num, den):
    return num / den if den else None


@dataclass
class MetricsReport:
    task: str
    mse_stats: dict | None = None
    confusion: dict | None = None
    derived: dict | None = None
    per_fold: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "mse_stats": self.mse_stats,
            "confusion": self.confusion,
            "derived": self.derived,
            "per_fold": self.per_fold,
        }


def classification_metrics(tp: int, tn: int, fp: int, fn: int) -> dict:
    precision = _ratio(tp, tp + fp)
    sensitivity = _ratio(tp, tp + fn)
    f1 = None
    if precision is not None and sensitivity is not None and precision + sensitivity > 0:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    return {
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "sensitivity": sensitivity,
        "specificity": _ratio(tn, tn + fp),
        "precision": precision,
        "f1": f1,
    }


def compute_metrics(predictions, labels, task: str) -> MetricsReport:
    """Regression: rows are runs, MSE per row summarised with and without outliers.
    Classification: binary predictions vs labels with 1 as the positive class."""
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if predictions.size == 0:
        raise InputError("no predictions to score")
    if predictions.shape != labels.shape:
        raise InputError(f"predictions {predictions.shape} and labels {labels.shape} differ in shape")
    if task == "regression":
        p2 = predictions.reshape(predictions.shape[0], -1)
        mse = np.mean((p2 - labels.reshape(p2.shape)) ** 2, axis=1)
        return MetricsReport(
            task,
            mse_stats={"all": summary_stats(mse), "without_outliers": summary_stats(remove_outliers(mse))},
        )
    if task == "classification":
        p = predictions.reshape(-1).astype(int)
        y = labels.reshape(-1).astype(int)
        if not set(np.unique(np.concatenate([p, y]))) <= {0, 1}:
            raise InputError("classification metrics expect binary 0/1 predictions and labels")
        conf = {
            "tp": int(np.sum((p == 1) & (y == 1))),
            "tn": int(np.sum((p == 0) & (y == 0))),
            "fp": int(np.sum((p == 1) & (y == 0))),
            "fn": int(np.sum((p == 0) & (y == 1))),
        }
        return MetricsReport(task, confusion=conf, derived=classification_metrics(**conf))
    raise ConfigError(f"unknown metrics task {task!r}")
