"""Random honest/adversarial update batches for benchmarks and fuzzing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cafcor.aggregation import check_f
from cafcor.errors import InvalidParameterError

HONEST_KINDS = ("gaussian", "heavy_tailed", "identical")
ADVERSARY_KINDS = ("shift", "huge", "cluster", "alie", "inlier", "random")

#: Scale applied by the ``huge`` adversary; squared it still fits a float64.
HUGE_SCALE = 1e12


@dataclass
class SyntheticBatch:
    """A stacked batch; honest rows come first unless ``shuffle`` was requested."""

    batch: np.ndarray
    honest_indices: np.ndarray
    f: int
    honest_kind: str
    adversary_kind: str


def honest_vectors(rng: np.random.Generator, h: int, d: int, kind: str) -> np.ndarray:
    center = rng.normal(0.0, 3.0, d)
    if kind == "gaussian":
        scales = rng.uniform(0.1, 3.0, d)
        return center + rng.normal(size=(h, d)) * scales
    if kind == "heavy_tailed":
        return center + rng.standard_t(df=2.5, size=(h, d))
    if kind == "identical":
        return np.tile(center, (h, 1))
    raise InvalidParameterError(f"unknown honest kind {kind!r}; choose from {HONEST_KINDS}")


def adversarial_vectors(rng: np.random.Generator, honest: np.ndarray, f: int, kind: str) -> np.ndarray:
    h, d = honest.shape
    mu = honest.mean(axis=0)
    sd = honest.std(axis=0)
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    spread = float(np.sqrt(np.sum(sd**2))) + 1.0
    if kind == "shift":
        return mu + rng.uniform(1.0, 20.0) * spread * direction + 0.1 * rng.normal(size=(f, d))
    if kind == "huge":
        return mu + HUGE_SCALE * rng.choice([-1.0, 1.0], size=(f, 1)) * direction
    if kind == "cluster":
        return np.tile(mu + rng.uniform(0.5, 5.0) * spread * direction, (f, 1))
    if kind == "alie":
        return np.tile(mu + rng.uniform(0.5, 3.0) * sd, (f, 1))
    if kind == "inlier":
        return honest[rng.integers(h, size=f)] + 0.01 * rng.normal(size=(f, d))
    if kind == "random":
        return rng.normal(0.0, rng.uniform(0.1, 100.0), size=(f, d))
    raise InvalidParameterError(f"unknown adversary kind {kind!r}; choose from {ADVERSARY_KINDS}")


def make_batch(
    rng: np.random.Generator,
    n: int,
    f: int,
    d: int,
    honest_kind: str = "gaussian",
    adversary_kind: str = "shift",
    shuffle: bool = False,
) -> SyntheticBatch:
    check_f(n, f)
    if d < 1:
        raise InvalidParameterError(f"dimension must be >= 1, got {d}")
    honest = honest_vectors(rng, n - f, d, honest_kind)
    bad = adversarial_vectors(rng, honest, f, adversary_kind) if f else np.empty((0, d))
    batch = np.vstack([honest, bad])
    idx = np.arange(n - f)
    if shuffle:
        perm = rng.permutation(n)
        batch = batch[perm]
        idx = np.sort(np.argsort(perm)[: n - f])
    return SyntheticBatch(batch, idx, f, honest_kind, adversary_kind)


def fuzz_corpus(seed: int, count: int, n_range=(3, 20), d_range=(1, 10)):
    """Yield ``count`` random instances covering every honest/adversary kind."""
    rng = np.random.default_rng(seed)
    for k in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        f = int(rng.integers(0, (n - 1) // 2 + 1))
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        honest_kind = HONEST_KINDS[k % 2] if k % 17 else "identical"
        adversary_kind = ADVERSARY_KINDS[k % len(ADVERSARY_KINDS)]
        yield make_batch(rng, n, f, d, honest_kind, adversary_kind, shuffle=True)
