"""Small classification datasets: Gaussian blobs and bundled 8x8 digits."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..data import Dataset

DIGITS_FILE = "digits8x8.npz"


@dataclass(frozen=True)
class ClassificationSuite:
    train: Dataset
    val: Dataset
    num_classes: int


def load_digits(path=None) -> Dataset:
    """Bundled 8x8 handwritten digits (1797 images), pixels scaled to [0, 1]."""
    if path is None:
        ref = resources.files("meshlearn.problems") / "data" / DIGITS_FILE
        with resources.as_file(ref) as p:
            if not p.exists():
                raise FileNotFoundError(f"bundled digit file missing: {p}")
            raw = np.load(p)
            images, labels = raw["images"], raw["labels"]
    else:
        raw = np.load(path)
        images, labels = raw["images"], raw["labels"]
    return Dataset(images.astype(np.float64) / 16.0, labels.astype(np.int64))


def gaussian_blobs(num_classes: int, samples_per_class: int, input_dim: int, rng, noise: float = 0.3,
                   radius: float = 3.0) -> Dataset:
    means = rng.normal(size=(num_classes, input_dim))
    means = radius * means / np.linalg.norm(means, axis=1, keepdims=True)
    x = np.concatenate([means[c] + noise * rng.normal(size=(samples_per_class, input_dim)) for c in range(num_classes)])
    y = np.repeat(np.arange(num_classes), samples_per_class)
    return Dataset(x, y)


def stratified_split(data: Dataset, val_fraction: float, rng) -> tuple[Dataset, Dataset]:
    train_idx, val_idx = [], []
    for c in np.unique(data.y):
        idx = np.flatnonzero(data.y == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(val_fraction * idx.size))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return data.take(train_idx), data.take(val_idx)


def make_classification_suite(num_classes: int = 10, samples_per_class: int | None = None, input_dim: int = 64,
                              seed: int = 0, source: str = "digits_subset", noise: float = 0.3,
                              val_fraction: float = 0.2, path=None) -> ClassificationSuite:
    rng = np.random.default_rng(seed)
    if source == "gaussian_blobs":
        data = gaussian_blobs(num_classes, samples_per_class or 100, input_dim, rng, noise)
    elif source == "digits_subset":
        data = load_digits(path)
        if input_dim != data.x.shape[1]:
            raise ValueError(f"digit images have {data.x.shape[1]} pixels, not {input_dim}")
        keep = []
        for c in range(num_classes):
            idx = np.flatnonzero(data.y == c)
            keep.append(idx[:samples_per_class] if samples_per_class else idx)
        data = data.take(np.sort(np.concatenate(keep)))
    else:
        raise ValueError(f"unknown classification source {source!r}")
    train, val = stratified_split(data, val_fraction, rng)
    return ClassificationSuite(train, val, num_classes)
