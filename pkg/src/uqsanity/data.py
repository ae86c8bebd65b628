"""Dataset ingestion: CIFAR-10 binary batches, tabular CSV, synthetic data.

No downloading happens here. For offline work two generators write files in
the exact on-disk formats the loaders read: a CIFAR-10-format shapes dataset
and a housing-style 8-feature regression CSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_bytes, atomic_write_text

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
HOUSING_COLUMNS = ["MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population",
                   "AveOccup", "Latitude", "Longitude", "MedHouseVal"]


class DataFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------


def parse_cifar_records(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode 3073-byte records: one label byte then 3072 channel-planar pixels."""
    if len(data) % CIFAR_RECORD:
        raise DataFormatError(
            f"truncated record: {len(data)} bytes is not a multiple of {CIFAR_RECORD}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if (labels > 9).any():
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(f"record {bad}: label byte {labels[bad]} > 9")
    return raw[:, 1:].reshape((-1,) + CIFAR_SHAPE).copy(), labels


def encode_cifar_records(images: np.ndarray, labels: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 3072)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    if len(images) != len(labels):
        raise ValueError("images and labels differ in count")
    if (labels > 9).any():
        raise ValueError("CIFAR labels must be in 0..9")
    return np.concatenate([labels, images], axis=1).tobytes()


def write_cifar10(directory, images, labels, test_images, test_labels, n_train_batches: int = 5):
    """Write a directory laid out like the official binary release."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for b, idx in enumerate(np.array_split(np.arange(len(images)), n_train_batches), start=1):
        atomic_write_bytes(directory / f"data_batch_{b}.bin",
                           encode_cifar_records(images[idx], labels[idx]))
    atomic_write_bytes(directory / "test_batch.bin", encode_cifar_records(test_images, test_labels))
    atomic_write_text(directory / "batches.meta.txt",
                      "\n".join(f"class_{k}" for k in range(10)) + "\n")


def stratified_subset(labels: np.ndarray, size: int, rng: np.random.Generator,
                      n_classes: int = 10) -> np.ndarray:
    """Indices of a class-balanced subset (remainder spread over the first classes)."""
    base, extra = divmod(size, n_classes)
    picks = []
    for c in range(n_classes):
        want = base + (1 if c < extra else 0)
        pool = np.flatnonzero(labels == c)
        if len(pool) < want:
            raise ValueError(f"class {c} has {len(pool)} examples, {want} requested")
        picks.append(rng.choice(pool, size=want, replace=False))
    idx = np.concatenate(picks)
    return np.sort(idx)


@dataclass
class ImageSplits:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    channel_mean: np.ndarray
    channel_std: np.ndarray


def load_cifar10(path, subset_train: int | None = None, subset_eval: int | None = None,
                 seed: int = 0) -> ImageSplits:
    """Load ``data_batch_*.bin`` and ``test_batch.bin`` from ``path``.

    Pixels go to [0, 1] and are standardized per channel with train-split
    statistics. Optional subsets are stratified by class.
    """
    path = Path(path)
    if path.is_file():
        X, y = parse_cifar_records(path.read_bytes())
        X_test, y_test = X[:0], y[:0]
    else:
        train_files = sorted(path.glob("data_batch_*.bin"))
        if not train_files:
            raise FileNotFoundError(f"no data_batch_*.bin files in {path}")
        parts = [parse_cifar_records(f.read_bytes()) for f in train_files]
        X = np.concatenate([p[0] for p in parts])
        y = np.concatenate([p[1] for p in parts])
        test_file = path / "test_batch.bin"
        X_test, y_test = parse_cifar_records(test_file.read_bytes()) if test_file.exists() \
            else (X[:0], y[:0])
    rng = np.random.default_rng(seed)
    if subset_train is not None:
        idx = stratified_subset(y, subset_train, rng)
        X, y = X[idx], y[idx]
    if subset_eval is not None and len(X_test):
        idx = stratified_subset(y_test, subset_eval, rng)
        X_test, y_test = X_test[idx], y_test[idx]
    Xf = X.astype(np.float32) / 255.0
    mean = Xf.mean(axis=(0, 2, 3), dtype=np.float64)
    std = Xf.std(axis=(0, 2, 3), dtype=np.float64)
    std = np.where(std > 0, std, 1.0)

    def standardize(a):
        a = a.astype(np.float32) / 255.0
        return ((a - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)

    return ImageSplits(standardize(X), y, standardize(X_test), y_test, mean, std)


def _draw_shape(canvas: np.ndarray, cls: int, cy: int, cx: int, r: int, color: np.ndarray):
    h, w = canvas.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    t = max(1, r // 4)
    inside = np.abs(dy) <= r
    inside &= np.abs(dx) <= r
    if cls == 0:
        m = inside & (np.abs(dy) <= t)
    elif cls == 1:
        m = inside & (np.abs(dx) <= t)
    elif cls == 2:
        m = inside & (np.abs(dy - dx) <= t)
    elif cls == 3:
        m = inside & (np.abs(dy + dx) <= t)
    elif cls == 4:
        m = dy ** 2 + dx ** 2 <= r ** 2
    elif cls == 5:
        d = np.sqrt(dy ** 2 + dx ** 2)
        m = (d <= r) & (d >= r - 1.5 * t)
    elif cls == 6:
        m = (np.abs(dy) <= r * 0.8) & (np.abs(dx) <= r * 0.8)
    elif cls == 7:
        m = inside & ((np.abs(dy) >= r - t) | (np.abs(dx) >= r - t))
    elif cls == 8:
        m = inside & ((np.abs(dy) <= t) | (np.abs(dx) <= t))
    else:
        m = inside & ((np.abs(dy - dx) <= t) | (np.abs(dy + dx) <= t))
    canvas[:, m] = color[:, None]


def synthetic_shapes(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Balanced 10-class 32x32 RGB uint8 images: one shape per class on a noisy background."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    images = np.empty((n, 3, 32, 32), dtype=np.uint8)
    yy, xx = np.mgrid[0:32, 0:32] / 31.0
    for i, cls in enumerate(labels):
        a, b, c = rng.uniform(-60, 60, size=(3, 3))
        base = rng.uniform(40, 110, size=3)
        bg = base[:, None, None] + a[:, None, None] * yy + b[:, None, None] * xx
        bg = bg + rng.normal(0, 12, size=(3, 32, 32))
        r = int(rng.integers(6, 10))
        cy, cx = rng.integers(r + 1, 31 - r, size=2)
        color = rng.uniform(150, 255, size=3)
        canvas = bg.copy()
        _draw_shape(canvas, int(cls), int(cy), int(cx), r, color)
        images[i] = np.clip(np.round(canvas), 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


def make_synthetic_cifar(directory, n_train: int = 5000, n_test: int = 1000, seed: int = 0) -> Path:
    X, y = synthetic_shapes(n_train, seed)
    Xt, yt = synthetic_shapes(n_test, seed + 7919)
    write_cifar10(directory, X, y, Xt, yt)
    return Path(directory)


# ---------------------------------------------------------------------------
# Tabular CSV
# ---------------------------------------------------------------------------


@dataclass
class TabularSplits:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    feature_names: list[str]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float
    train_index: np.ndarray = field(repr=False, default=None)
    test_index: np.ndarray = field(repr=False, default=None)


def read_numeric_csv(path, target_column: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty CSV") from None
        if target_column not in header:
            raise DataFormatError(f"{path}: missing column {target_column!r}")
        rows = []
        for r, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric cell in data row {r}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    t = header.index(target_column)
    features = [h for k, h in enumerate(header) if k != t]
    return np.delete(table, t, axis=1), table[:, t], features


def load_tabular_csv(path, target_column: str = "MedHouseVal", test_fraction: float = 0.2,
                     seed: int = 0) -> TabularSplits:
    """Seeded shuffled train/test split; features and target standardized on train."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    X, y, names = read_numeric_csv(path, target_column)
    n = len(X)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    if n_test >= n:
        raise ValueError("not enough rows for a train/test split")
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    ty_mu = float(y[train_idx].mean())
    ty_sd = float(y[train_idx].std()) or 1.0

    def fx(a):
        return ((a - mu) / sd).astype(np.float32)

    def fy(a):
        return ((a - ty_mu) / ty_sd).astype(np.float32).reshape(-1, 1)

    return TabularSplits(fx(X[train_idx]), fy(y[train_idx]), fx(X[test_idx]), fy(y[test_idx]),
                         names, mu, sd, ty_mu, ty_sd, train_idx, test_idx)


def synthetic_housing(n: int = 20640, seed: int = 0) -> np.ndarray:
    """Housing-style table: 8 features plus a nonlinear median-value target."""
    rng = np.random.default_rng(seed)
    inc = np.clip(rng.lognormal(1.25, 0.45, n), 0.5, 15.0)
    age = rng.integers(1, 53, n).astype(float)
    rooms = np.clip(rng.normal(4.5 + 0.35 * inc, 1.0), 1.0, None)
    bedrms = np.clip(rng.normal(1.05, 0.12, n), 0.5, None) * (1 + 0.02 * (rooms - 5))
    pop = np.round(np.clip(rng.lognormal(7.0, 0.7, n), 3, 35000))
    occup = np.clip(rng.lognormal(1.05, 0.25, n), 0.7, 12.0)
    coastal = rng.random(n) < 0.55
    lat = np.where(coastal, rng.uniform(32.5, 38.5, n), rng.uniform(34.0, 41.9, n))
    lon = np.where(coastal, -117.0 - 1.05 * (lat - 32.5) + rng.normal(0, 0.35, n),
                   rng.uniform(-122.0, -114.5, n))
    coast_dist = np.abs(lon - (-117.0 - 1.05 * (lat - 32.5)))
    value = (0.45 * inc + 0.9 * np.exp(-coast_dist / 1.2) + 0.006 * age
             - 0.25 * np.log(occup) + 0.08 * (rooms - bedrms * 4.0)
             + 0.35 * np.tanh(inc - 4.0) * np.exp(-coast_dist / 2.0)
             + rng.normal(0, 0.35, n))
    value = np.clip(value, 0.15, 5.0)
    return np.column_stack([inc, age, rooms, bedrms, pop, occup, lat, lon, value])


def write_housing_csv(path, n: int = 20640, seed: int = 0) -> Path:
    table = synthetic_housing(n, seed)
    lines = [",".join(HOUSING_COLUMNS)]
    lines += [",".join(f"{v:.6g}" for v in row) for row in table]
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def synthetic_linear(n: int = 100, weights=(2.0,), noise: float = 0.0, seed: int = 0):
    """``y = X @ w + noise`` with standard-normal features."""
    rng = np.random.default_rng(seed)
    w = np.asarray(weights, dtype=np.float64)
    X = rng.standard_normal((n, len(w)))
    y = X @ w + noise * rng.standard_normal(n)
    return X.astype(np.float32), y.astype(np.float32).reshape(-1, 1)
