"""Dataset loaders: IDX image sets and small synthetic generators."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from cafcor.errors import IdxFormatError
from cafcor.idx import IMAGES_MAGIC, LABELS_MAGIC, hflip, normalize_mnist, read_idx
from cafcor.training.tasks import Dataset

IMAGE_DATASETS = ("mnist", "fashion_mnist")


def bundled_mnist_dir() -> Path:
    """Directory of the 2,000/1,000-image MNIST subset shipped with the package."""
    return Path(str(resources.files("cafcor") / "data" / "mnist"))


def _find(directory: Path, stem: str) -> Path:
    for suffix in ("", ".gz"):
        p = directory / f"{stem}{suffix}"
        if p.exists():
            return p
    raise IdxFormatError(f"no {stem}[.gz] in {directory}")


def load_split(directory, split: str) -> tuple[np.ndarray, np.ndarray]:
    directory = Path(directory)
    images = read_idx(_find(directory, f"{split}-images-idx3-ubyte"), IMAGES_MAGIC)
    labels = read_idx(_find(directory, f"{split}-labels-idx1-ubyte"), LABELS_MAGIC)
    if len(images) != len(labels):
        raise IdxFormatError(f"{directory}: {len(images)} images but {len(labels)} labels")
    return images, labels


def load_image_dataset(
    kind: str = "mnist",
    data_dir=None,
    train_size: int | None = 2000,
    test_size: int | None = 1000,
    flip: bool = False,
) -> tuple[Dataset, Dataset]:
    """Load flattened, preprocessed train and test sets.

    MNIST is standardised with mean 0.1307 and std 0.3081. Fashion-MNIST is
    scaled to [0, 1]; with ``flip`` every odd-indexed image is mirrored
    left-right once, so the augmentation is deterministic.
    """
    if data_dir is None:
        if kind != "mnist":
            raise IdxFormatError(f"no bundled copy of {kind}; pass a data directory")
        data_dir = bundled_mnist_dir()
    out = []
    for split, size in (("train", train_size), ("t10k", test_size)):
        images, labels = load_split(data_dir, split)
        if size is not None:
            images, labels = images[:size], labels[:size]
        if kind == "mnist":
            X = normalize_mnist(images)
        else:
            X = images.astype(np.float64) / 255.0
            if flip:
                X[1::2] = hflip(X[1::2])
        out.append(Dataset(X.reshape(len(X), -1), labels.astype(np.int64)))
    return out[0], out[1]


def gaussian_blobs(rng: np.random.Generator, size: int, d: int, num_classes: int, separation: float = 3.0) -> Dataset:
    centers = rng.normal(0.0, separation / np.sqrt(d), (num_classes, d))
    y = rng.integers(0, num_classes, size)
    X = centers[y] + rng.normal(0.0, 1.0 / np.sqrt(d), (size, d))
    return Dataset(X, y)


def quadratic_points(
    rng: np.random.Generator,
    size: int,
    d: int,
    clusters: int,
    heterogeneity: float,
    spread: float,
    offset: float,
) -> Dataset:
    """Points for the quadratic task, grouped into labelled clusters.

    Cluster labels let the label-based partition schemes control how far
    apart the workers' optima are.
    """
    shift = np.full(d, offset / np.sqrt(d))
    centers = shift + rng.normal(0.0, heterogeneity, (clusters, d))
    y = np.arange(size) % clusters
    X = centers[y] + rng.normal(0.0, spread, (size, d))
    return Dataset(X, y)
