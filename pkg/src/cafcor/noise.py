"""Pairwise-cancelling correlated noise and independent Gaussian noise.

Before training every pair of workers agrees on a shared 64-bit seed. Here
that one-round exchange is simulated by :class:`SecretRegistry`, a trusted
in-process table derived from a master seed with a keyed hash.

Each noise vector is drawn from a Philox counter-mode stream keyed by
``(seed, t)``, so both endpoints of a pair regenerate the same sample
independently, in any order and on any thread. The worker with the smaller
id adds the sample and the other subtracts it, so ``v(i, j, t)`` is the bitwise
negation of ``v(j, i, t)``.

Correlated samples are rounded to a dyadic grid of step ``2**-32`` times
their scale. Sums of grid values stay exact in float64, so the pairwise terms
of a full cohort add up to exactly zero whatever the summation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from cafcor.errors import InvalidParameterError

_MASK64 = (1 << 64) - 1
GRID_BITS = 32


def _derive(master_seed: int, *words: int) -> int:
    key = (master_seed & _MASK64).to_bytes(8, "little")
    h = hashlib.blake2b(digest_size=8, key=key)
    for w in words:
        h.update(int(w).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SecretRegistry:
    """Symmetric table of pairwise seeds for ``n`` workers."""

    n: int
    master_seed: int
    seed_table: np.ndarray

    def seed(self, i: int, j: int) -> int:
        if i == j:
            raise InvalidParameterError("a worker shares no secret with itself")
        return int(self.seed_table[i, j])


def establish(n: int, master_seed: int) -> SecretRegistry:
    """Simulate the one-time pairwise seed agreement among ``n`` workers."""
    if n < 2:
        raise InvalidParameterError(f"need at least two workers, got n={n}")
    table = np.zeros((n, n), dtype=np.uint64)
    for i in range(n):
        for j in range(i + 1, n):
            # Tag 0 separates pair seeds from the independent-noise keys.
            s = _derive(master_seed, 0, i, j)
            table[i, j] = table[j, i] = s
    table.setflags(write=False)
    return SecretRegistry(n, master_seed, table)


@dataclass(frozen=True)
class NoisePlan:
    """Per-coordinate variances of the correlated and independent noise."""

    sigma_cor_sq: float
    sigma_ind_sq: float
    d: int

    def __post_init__(self):
        for name in ("sigma_cor_sq", "sigma_ind_sq"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidParameterError(f"{name} must be finite and >= 0, got {value}")
        if self.d < 1:
            raise InvalidParameterError(f"dimension must be >= 1, got {self.d}")

    @property
    def enabled(self) -> bool:
        return self.sigma_cor_sq > 0 or self.sigma_ind_sq > 0


def _gaussian(key: int, t: int, d: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=np.array([key, t & _MASK64], dtype=np.uint64)))
    return gen.standard_normal(d)


def pairwise_noise(reg: SecretRegistry, i: int, j: int, t: int, plan: NoisePlan) -> np.ndarray:
    """Correlated noise worker ``i`` adds for its pair with ``j`` at step ``t``."""
    if i == j:
        raise InvalidParameterError("pairwise noise needs two distinct workers")
    if plan.sigma_cor_sq == 0:
        return np.zeros(plan.d)
    sigma = np.sqrt(plan.sigma_cor_sq)
    step = 2.0 ** (np.floor(np.log2(sigma)) - GRID_BITS)
    sample = np.round(sigma * _gaussian(reg.seed(i, j), t, plan.d) / step) * step
    return sample if i < j else -sample


def independent_noise(reg: SecretRegistry, i: int, t: int, plan: NoisePlan) -> np.ndarray:
    if plan.sigma_ind_sq == 0:
        return np.zeros(plan.d)
    key = _derive(reg.master_seed, 1, i)
    return np.sqrt(plan.sigma_ind_sq) * _gaussian(key, t, plan.d)


def perturb(
    g, i: int, t: int, reg: SecretRegistry, plan: NoisePlan, correlated: np.ndarray | None = None
) -> np.ndarray:
    """Add independent noise and every pairwise term of worker ``i`` to ``g``.

    ``correlated`` may carry a precomputed :func:`correlated_sum` (for
    instance a row of :func:`correlated_sums`); the result is identical.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (plan.d,):
        raise InvalidParameterError(f"gradient has shape {g.shape}, plan expects ({plan.d},)")
    if correlated is None:
        correlated = correlated_sum(reg, i, t, plan)
    return g + independent_noise(reg, i, t, plan) + correlated


def correlated_sum(reg: SecretRegistry, i: int, t: int, plan: NoisePlan) -> np.ndarray:
    """Sum of worker ``i``'s pairwise terms with every other registered worker."""
    total = np.zeros(plan.d)
    if plan.sigma_cor_sq > 0:
        for j in range(reg.n):
            if j != i:
                total += pairwise_noise(reg, i, j, t, plan)
    return total


def correlated_sums(reg: SecretRegistry, t: int, plan: NoisePlan) -> np.ndarray:
    """All workers' pairwise sums at step ``t`` as an ``(n, d)`` array.

    Draws each pair once. Grid-aligned samples add exactly, so every row
    equals the matching :func:`correlated_sum` bit for bit.
    """
    out = np.zeros((reg.n, plan.d))
    if plan.sigma_cor_sq > 0:
        for i in range(reg.n):
            for j in range(i + 1, reg.n):
                sample = pairwise_noise(reg, i, j, t, plan)
                out[i] += sample
                out[j] -= sample
    return out
