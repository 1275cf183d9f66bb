"""Robust aggregation of worker vectors.

The centrepiece is CAF, an iterative spectral filter that only needs an
upper bound ``f`` on the number of corrupt inputs. It repeatedly finds the
direction of largest weighted variance, downweights every input by its
squared projection on that direction, and remembers the weighted mean seen
with the smallest top eigenvalue. Coordinate-wise and distance-based
baselines live alongside it so they can be swapped into the same training
loop.

All functions take an ``(n, d)`` float array (one row per worker) and are
pure; the only randomness is the power-iteration start vector, drawn from an
explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from cafcor.errors import DegenerateWeightsError, InvalidParameterError

#: Weights below this value are snapped to zero so the iteration bound holds.
WEIGHT_FLOOR = 1e-15

#: Largest dimension handled by a dense d x d eigensolve in exact mode.
DENSE_EIGEN_MAX_DIM = 128

#: Relative accuracy the power method must reach on the top eigenvalue.
POWER_ETA = 1e-3

BASELINES = ("cwtm", "cwmed", "gm", "multikrum", "meamed")
AGGREGATORS = ("caf", "mean") + BASELINES


def as_batch(vectors) -> np.ndarray:
    """Validate ``vectors`` as an update batch and return it as an (n, d) array."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise InvalidParameterError(f"expected a non-empty (n, d) batch, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("batch contains non-finite entries")
    return x


def check_f(n: int, f: int) -> None:
    if f < 0 or 2 * f >= n:
        raise InvalidParameterError(f"need 0 <= f < n/2, got n={n}, f={f}")


def kappa(n: int, f: int) -> float:
    """Robustness constant ``(6f/(n-f)) * (1 + f/(n-2f))**2``."""
    check_f(n, f)
    return 6.0 * f / (n - f) * (1.0 + f / (n - 2 * f)) ** 2


def weighted_mean(batch, c) -> np.ndarray:
    x = as_batch(batch)
    c = np.asarray(c, dtype=np.float64)
    total = c.sum()
    if not total > 0:
        raise DegenerateWeightsError("sum of weights must be positive")
    return c @ x / total


def _centered(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = weighted_mean(x, c)
    # Rows scaled so that Y.T @ Y is the weighted covariance.
    y = np.sqrt(c / c.sum())[:, None] * (x - mu)
    return y, mu


def _unit(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


def _exact_top(y: np.ndarray) -> tuple[float, np.ndarray]:
    n, d = y.shape
    if d <= DENSE_EIGEN_MAX_DIM or d <= n:
        vals, vecs = np.linalg.eigh(y.T @ y)
        lam, v = vals[-1], vecs[:, -1]
    else:
        # Same non-zero spectrum as the d x d covariance, at O(n^2 d) cost.
        vals, vecs = np.linalg.eigh(y @ y.T)
        lam = vals[-1]
        v = y.T @ vecs[:, -1]
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0.0, _unit(d)
        v = v / norm
    if lam <= 0.0:
        return 0.0, _unit(d)
    return float(lam), v


def power_top(
    y: np.ndarray,
    rng: np.random.Generator,
    max_iter: int | None = None,
    rtol: float = 1e-10,
) -> tuple[float, np.ndarray]:
    """Top eigenpair of ``y.T @ y`` by matrix-free power iteration."""
    d = y.shape[1]
    if max_iter is None:
        max_iter = int(math.ceil(math.log(d + 1) / POWER_ETA))
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = y.T @ (y @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, _unit(d)
        v = w / norm
        yv = y @ v
        new = float(yv @ yv)
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return lam, v


def weighted_cov_top_eigen(
    batch, c, mode: str = "exact", rng: np.random.Generator | None = None
) -> tuple[float, np.ndarray, np.ndarray]:
    """Top eigenvalue and unit eigenvector of the weighted covariance.

    Returns ``(lam, v, mu)`` where ``mu`` is the weighted mean. The power mode
    never forms the d x d matrix.
    """
    x = as_batch(batch)
    c = np.asarray(c, dtype=np.float64)
    y, mu = _centered(x, c)
    if mode == "exact":
        lam, v = _exact_top(y)
    elif mode == "power":
        lam, v = power_top(y, rng if rng is not None else np.random.default_rng(0))
    else:
        raise InvalidParameterError(f"unknown eigen mode {mode!r}")
    return lam, v, mu


@dataclass
class CafState:
    """Snapshot of the filter after one loop iteration."""

    weights: np.ndarray
    best_mean: np.ndarray
    best_sigma: float
    iterations_used: int
    sigma: float = math.inf
    tau_max: float = 0.0

    def to_json(self) -> dict:
        return {
            "iteration": self.iterations_used,
            "weights": self.weights.tolist(),
            "sigma": self.sigma,
            "best_sigma": self.best_sigma,
            "best_mean": self.best_mean.tolist(),
            "tau_max": self.tau_max,
        }


@dataclass
class CafResult:
    output: np.ndarray
    state: CafState
    history: list[CafState] = field(default_factory=list)


def caf_run(
    batch,
    f: int,
    mode: str = "exact",
    rng: np.random.Generator | None = None,
    keep_history: bool = False,
) -> CafResult:
    """Run the covariance-agnostic filter and return its output and final state."""
    x = as_batch(batch)
    n, _ = x.shape
    check_f(n, f)
    if rng is None:
        rng = np.random.default_rng(0)

    c = np.ones(n)
    best_mean = x.mean(axis=0)
    best_sigma = math.inf
    history: list[CafState] = []
    it = 0
    sigma, tau_max = math.inf, 0.0
    while c.sum() >= n - 2 * f:
        it += 1
        lam, v, mu = weighted_cov_top_eigen(x, c, mode, rng)
        sigma = math.sqrt(max(lam, 0.0))
        if sigma <= best_sigma:
            best_mean, best_sigma = mu, sigma
        tau = ((x - mu) @ v) ** 2
        active = c > 0
        tau_max = float(tau[active].max())
        if keep_history:
            history.append(CafState(c.copy(), best_mean.copy(), best_sigma, it, sigma, tau_max))
        if tau_max == 0.0:
            break
        c = c * (1.0 - np.minimum(tau / tau_max, 1.0))
        c[c < WEIGHT_FLOOR] = 0.0
    state = CafState(c, best_mean, best_sigma, it, sigma, tau_max)
    return CafResult(best_mean, state, history)


def caf(batch, f: int, mode: str = "exact", rng: np.random.Generator | None = None) -> np.ndarray:
    return caf_run(batch, f, mode, rng).output


@dataclass(frozen=True)
class RobustnessCertificate:
    lhs: float
    rhs: float
    kappa: float
    holds: bool


def honest_top_eigenvalue(batch, honest_indices: Sequence[int]) -> float:
    x = as_batch(batch)[np.asarray(honest_indices, dtype=int)]
    lam, _, _ = weighted_cov_top_eigen(x, np.ones(len(x)), "exact")
    return lam


def certify(batch, honest_indices: Sequence[int], output, slack: float = 1.0) -> RobustnessCertificate:
    """Check ``||output - mean_S||^2 <= slack * kappa * lambda_max(cov_S)``.

    ``slack`` is 1 for the exact filter; the power-method variant is held to 4.
    """
    x = as_batch(batch)
    n = x.shape[0]
    idx = np.asarray(honest_indices, dtype=int)
    f = n - len(idx)
    if len(set(idx.tolist())) != len(idx):
        raise InvalidParameterError("honest indices must be distinct")
    k = kappa(n, f)
    honest = x[idx]
    diff = np.asarray(output, dtype=np.float64) - honest.mean(axis=0)
    lhs = float(diff @ diff)
    rhs = slack * k * honest_top_eigenvalue(x, idx)
    return RobustnessCertificate(lhs, rhs, k, lhs <= rhs * (1 + 1e-9) + 1e-12)


# ---------------------------------------------------------------- baselines


def cwtm(x: np.ndarray, f: int) -> np.ndarray:
    s = np.sort(x, axis=0)
    return s[f : x.shape[0] - f].mean(axis=0)


def cwmed(x: np.ndarray, f: int = 0) -> np.ndarray:
    return np.median(x, axis=0)


def geometric_median(x: np.ndarray, f: int = 0, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Weiszfeld iteration started from the arithmetic mean."""
    z = x.mean(axis=0)
    for _ in range(max_iter):
        dist = np.linalg.norm(x - z, axis=1)
        w = 1.0 / np.maximum(dist, 1e-12)
        new = w @ x / w.sum()
        step = np.linalg.norm(new - z)
        z = new
        if step <= tol:
            break
    return z


def multikrum(x: np.ndarray, f: int) -> np.ndarray:
    n = x.shape[0]
    sq = np.sum(x * x, axis=1)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(dist, np.inf)
    k = n - f - 1
    scores = np.sort(dist, axis=1)[:, :k].sum(axis=1)
    chosen = np.argsort(scores, kind="stable")[: n - f]
    return x[chosen].mean(axis=0)


def meamed(x: np.ndarray, f: int) -> np.ndarray:
    n = x.shape[0]
    med = np.median(x, axis=0)
    order = np.argsort(np.abs(x - med), axis=0, kind="stable")[: n - f]
    return np.take_along_axis(x, order, axis=0).mean(axis=0)


_BASELINE_FUNCS: dict[str, Callable[[np.ndarray, int], np.ndarray]] = {
    "cwtm": cwtm,
    "cwmed": cwmed,
    "gm": geometric_median,
    "multikrum": multikrum,
    "meamed": meamed,
}


def baseline(name: str, batch, f: int) -> np.ndarray:
    x = as_batch(batch)
    check_f(x.shape[0], f)
    try:
        func = _BASELINE_FUNCS[name]
    except KeyError:
        raise InvalidParameterError(f"unknown baseline {name!r}; choose from {BASELINES}") from None
    return func(x, f)


def aggregate(
    name: str,
    batch,
    f: int,
    mode: str = "power",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Dispatch to any aggregator known to the training loop."""
    if name == "caf":
        return caf(batch, f, mode, rng)
    if name == "mean":
        x = as_batch(batch)
        check_f(x.shape[0], f)
        return x.mean(axis=0)
    return baseline(name, batch, f)
