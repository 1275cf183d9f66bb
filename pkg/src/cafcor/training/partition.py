"""Splitting a labelled dataset across honest workers."""

from __future__ import annotations

import numpy as np

from cafcor.errors import InvalidParameterError
from cafcor.training.tasks import Dataset

SCHEMES = ("iid", "dirichlet", "extreme")


def partition(
    data: Dataset,
    n_honest: int,
    scheme: str = "iid",
    rng: np.random.Generator | None = None,
    alpha: float = 1.0,
) -> list[Dataset]:
    """Split ``data`` into ``n_honest`` shards.

    ``iid`` shuffles and cuts into near-equal parts. ``dirichlet`` draws, for
    every class, worker proportions from ``Dir(alpha)``; each worker gets the
    floor of its share and the leftover points of the class are dealt
    round-robin, continuing from where the previous class stopped.
    ``extreme`` sorts by label and hands out contiguous blocks.
    """
    N = len(data)
    if N == 0:
        raise InvalidParameterError("cannot partition an empty dataset")
    if n_honest < 1 or n_honest > N:
        raise InvalidParameterError(f"cannot split {N} points over {n_honest} workers")
    rng = rng if rng is not None else np.random.default_rng(0)

    if scheme == "iid":
        parts = np.array_split(rng.permutation(N), n_honest)
    elif scheme == "extreme":
        order = np.argsort(data.y, kind="stable")
        parts = np.array_split(order, n_honest)
    elif scheme == "dirichlet":
        if not alpha > 0:
            raise InvalidParameterError(f"dirichlet alpha must be > 0, got {alpha}")
        buckets: list[list[int]] = [[] for _ in range(n_honest)]
        cursor = 0
        for label in np.unique(data.y):
            idx = rng.permutation(np.flatnonzero(data.y == label))
            props = rng.dirichlet(np.full(n_honest, alpha))
            counts = np.floor(props * len(idx)).astype(int)
            start = 0
            for w, k in enumerate(counts):
                buckets[w].extend(idx[start : start + k])
                start += k
            for point in idx[start:]:
                buckets[cursor].append(point)
                cursor = (cursor + 1) % n_honest
        parts = [np.array(sorted(b), dtype=int) for b in buckets]
    else:
        raise InvalidParameterError(f"unknown partition scheme {scheme!r}; choose from {SCHEMES}")
    return [data.subset(p) for p in parts]
