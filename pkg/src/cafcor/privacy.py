"""Renyi accountant for the correlated-noise scheme.

One training step, seen by a server that learned the pairwise secrets of
``q`` colluding workers, is a Gaussian mechanism whose covariance over the
honest messages is ``((n-q) s_cor + s_ind) I - s_cor 11^T`` (``s_*`` are
per-coordinate variances). Its Renyi divergence for a change of one clipped
input has the closed form in :func:`per_step_epsilon`. Steps compose
additively and convert to (epsilon, delta)-DP with the usual
``log(1/delta) / (alpha - 1)`` term, at the order ``alpha`` minimising the
bound.

Everything is expressed in variance units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from cafcor.errors import (
    InfeasibleNoiseError,
    InfeasibleRegimeError,
    InvalidParameterError,
)

REGIMES = ("equal", "ldp", "no_independent")
ACCOUNTING_LEVELS = ("user", "example")


@dataclass(frozen=True)
class PrivacyParams:
    """Threat model and budget.

    ``epsilon`` may be ``None`` when only computing the spent budget.

    ``level="user"`` treats a change of one worker's whole dataset as the
    neighbouring relation and uses ``C`` as is. ``level="example"`` reads ``C``
    as a per-example bound, so one example moves a size-``batch_size``
    mini-batch mean by at most ``C / batch_size``; the formulas are then
    evaluated with that smaller bound. This is a heuristic: the training loop
    clips the batch mean, not each example.
    """

    delta: float
    T: int
    C: float
    n: int
    f: int
    q: int
    epsilon: float | None = None
    level: str = "user"
    batch_size: int = 1

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if self.T < 1:
            raise InvalidParameterError(f"T must be >= 1, got {self.T}")
        if not self.C > 0:
            raise InvalidParameterError(f"C must be > 0, got {self.C}")
        if not 0 <= self.q <= self.f or 2 * self.f >= self.n:
            raise InvalidParameterError(
                f"need 0 <= q <= f < n/2, got n={self.n}, f={self.f}, q={self.q}"
            )
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if self.level not in ACCOUNTING_LEVELS:
            raise InvalidParameterError(f"level must be one of {ACCOUNTING_LEVELS}")
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def bound(self) -> float:
        """Per-step contribution bound entering the formulas."""
        return self.C if self.level == "user" else self.C / self.batch_size

    @property
    def log_inv_delta(self) -> float:
        return math.log(1.0 / self.delta)

    def require_epsilon(self) -> float:
        if self.epsilon is None:
            raise InvalidParameterError("a target epsilon is required")
        if not self.epsilon < self.log_inv_delta:
            raise InvalidParameterError(
                f"epsilon must lie in (0, log(1/delta)) = (0, {self.log_inv_delta:.6g}), "
                f"got {self.epsilon}"
            )
        return self.epsilon


@dataclass(frozen=True)
class NoiseAssignment:
    sigma_cor_sq: float
    sigma_ind_sq: float
    regime: str = "equal"

    def __post_init__(self):
        if self.sigma_cor_sq < 0 or self.sigma_ind_sq < 0:
            raise InvalidParameterError("noise variances must be nonnegative")
        if self.regime not in REGIMES:
            raise InvalidParameterError(f"regime must be one of {REGIMES}, got {self.regime!r}")


def _denominators(p: PrivacyParams, a: NoiseAssignment) -> tuple[float, float]:
    total = (p.n - p.q) * a.sigma_cor_sq + a.sigma_ind_sq
    hidden = (p.f - p.q) * a.sigma_cor_sq + a.sigma_ind_sq
    if not (total > 0 and hidden > 0):
        raise InfeasibleNoiseError(
            "noise covariance is singular: need (f-q)*sigma_cor^2 + sigma_ind^2 > 0"
        )
    return total, hidden


def per_step_epsilon(p: PrivacyParams, a: NoiseAssignment) -> float:
    """Renyi divergence of one step divided by its order ``alpha``."""
    total, hidden = _denominators(p, a)
    return 2.0 * p.bound**2 / total * (1.0 + a.sigma_cor_sq / hidden)


def per_step_rdp(alpha: float, p: PrivacyParams, a: NoiseAssignment) -> float:
    if not alpha > 1:
        raise InvalidParameterError(f"alpha must be > 1, got {alpha}")
    return alpha * per_step_epsilon(p, a)


def composed_rdp(alpha: float, p: PrivacyParams, a: NoiseAssignment, steps: int | None = None) -> float:
    steps = p.T if steps is None else steps
    return steps * per_step_rdp(alpha, p, a)


def rdp_to_dp(rdp: float, alpha: float, delta: float) -> float:
    return rdp + math.log(1.0 / delta) / (alpha - 1.0)


def optimal_alpha(p: PrivacyParams, a: NoiseAssignment, steps: int | None = None) -> float:
    steps = p.T if steps is None else steps
    total, hidden = _denominators(p, a)
    ratio = 1.0 + a.sigma_cor_sq / hidden
    return 1.0 + math.sqrt(p.log_inv_delta * total) / (p.bound * math.sqrt(2.0 * steps * ratio))


def secldp_epsilon(p: PrivacyParams, a: NoiseAssignment, steps: int | None = None) -> tuple[float, float]:
    """Spent ``(epsilon, alpha)`` after ``steps`` iterations (default ``p.T``)."""
    steps = p.T if steps is None else steps
    alpha = optimal_alpha(p, a, steps)
    eps = rdp_to_dp(composed_rdp(alpha, p, a, steps), alpha, p.delta)
    return eps, alpha


def noise_condition_sides(p: PrivacyParams, a: NoiseAssignment) -> tuple[float, float]:
    """Both sides of the sufficient noise condition, ``(lhs, rhs)``."""
    eps = p.require_epsilon()
    total = (p.n - p.q) * a.sigma_cor_sq + a.sigma_ind_sq
    hidden = (p.f - p.q) * a.sigma_cor_sq + a.sigma_ind_sq
    if hidden > 0:
        lhs = total / (1.0 + a.sigma_cor_sq / hidden)
    else:
        lhs = 0.0
    rhs = 16.0 * p.bound**2 * p.T * p.log_inv_delta / eps**2
    return lhs, rhs


def check_theorem1(p: PrivacyParams, a: NoiseAssignment) -> bool:
    lhs, rhs = noise_condition_sides(p, a)
    return lhs >= rhs


def _smallest_feasible(p: PrivacyParams, make: callable) -> float:
    scale = p.bound**2 * p.T
    lo, hi = 1e-12 * scale, 1e12 * scale
    if not check_theorem1(p, make(hi)):
        raise InfeasibleRegimeError("no feasible variance inside the search bracket")
    while hi - lo > 1e-6 * hi:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if check_theorem1(p, make(mid)):
            hi = mid
        else:
            lo = mid
    return hi


def calibrate(p: PrivacyParams, regime: str = "equal") -> NoiseAssignment:
    """Smallest noise meeting the sufficient condition for ``regime``.

    ``equal`` uses the closed form for equal variances under full collusion.
    ``ldp`` drops the correlated noise and ``no_independent`` drops the
    independent noise; both are solved numerically. ``no_independent`` only
    exists when at least one malicious worker keeps its secrets (``q < f``).
    """
    eps = p.require_epsilon()
    if regime == "equal":
        s = 32.0 * p.bound**2 * p.T * p.log_inv_delta / (eps**2 * (p.n - p.f))
        a = NoiseAssignment(s, s, "equal")
        if not check_theorem1(replace(p, q=p.f), a):
            raise InfeasibleRegimeError("closed-form calibration failed the noise condition")
        return a
    if regime == "ldp":
        full = replace(p, q=p.f)
        s = _smallest_feasible(full, lambda v: NoiseAssignment(0.0, v, "ldp"))
        return NoiseAssignment(0.0, s, "ldp")
    if regime == "no_independent":
        if p.q >= p.f:
            raise InfeasibleRegimeError(
                "dropping independent noise needs a non-colluding malicious worker (q < f)"
            )
        s = _smallest_feasible(p, lambda v: NoiseAssignment(v, 0.0, "no_independent"))
        return NoiseAssignment(s, 0.0, "no_independent")
    raise InvalidParameterError(f"unknown regime {regime!r}; choose from {REGIMES}")


def gaussian_rdp(alpha: float, sensitivity: float, variance: float) -> float:
    """Textbook Renyi divergence of the Gaussian mechanism."""
    return alpha * sensitivity**2 / (2.0 * variance)
