"""Learning-rate and momentum schedules."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from cafcor.errors import InvalidParameterError

SCHEDULES = ("strongly_convex", "nonconvex", "constant")


@dataclass(frozen=True)
class Schedule:
    """Step size ``gamma_t`` and momentum ``beta_t`` as a function of ``t``.

    ``strongly_convex`` uses ``gamma_t = 10 / (mu (t + 240 L / mu))``;
    ``nonconvex`` a constant ``min(1/(24L), sqrt(3 L0) / (16 sigma_bar sqrt(L T)))``.
    Both tie momentum to the step with ``beta_t = 1 - 24 L gamma_t``.
    ``constant`` takes ``gamma`` and ``beta`` verbatim. Setting ``gamma`` on
    the other two kinds overrides their step size but keeps the momentum
    rule, which may then need clamping to ``[0, 1]``.
    """

    kind: str = "constant"
    mu: float | None = None
    L: float | None = None
    T: int | None = None
    loss_gap: float | None = None
    sigma_bar: float | None = None
    gamma: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise InvalidParameterError(f"unknown schedule {self.kind!r}; choose from {SCHEDULES}")
        if self.kind == "strongly_convex":
            if self.mu is None or self.L is None or not self.mu > 0:
                raise InvalidParameterError("strongly convex schedule needs mu > 0 and L")
            if self.mu > self.L:
                raise InvalidParameterError(f"need mu <= L, got mu={self.mu}, L={self.L}")
        elif self.kind == "nonconvex":
            for name in ("L", "T", "loss_gap", "sigma_bar"):
                if getattr(self, name) is None:
                    raise InvalidParameterError(f"nonconvex schedule needs {name}")
            if not (self.L > 0 and self.T >= 1 and self.loss_gap >= 0 and self.sigma_bar >= 0):
                raise InvalidParameterError("nonconvex schedule needs L > 0, T >= 1, loss_gap >= 0, sigma_bar >= 0")
        if self.gamma is not None and not self.gamma > 0:
            raise InvalidParameterError(f"gamma must be > 0, got {self.gamma}")
        if self.kind == "constant":
            if self.gamma is None or self.beta is None:
                raise InvalidParameterError("constant schedule needs gamma and beta")
            if not self.gamma > 0 or not 0 <= self.beta <= 1:
                raise InvalidParameterError("constant schedule needs gamma > 0 and beta in [0, 1]")

    def gamma_at(self, t: int) -> float:
        if self.gamma is not None:
            return self.gamma
        if self.kind == "strongly_convex":
            return 10.0 / (self.mu * (t + 240.0 * self.L / self.mu))
        if self.kind == "nonconvex":
            first = 1.0 / (24.0 * self.L)
            if self.sigma_bar == 0:
                return first
            second = math.sqrt(3.0 * self.loss_gap) / (16.0 * self.sigma_bar * math.sqrt(self.L * self.T))
            return min(first, second) if second > 0 else first

    def at(self, t: int) -> tuple[float, float]:
        gamma = self.gamma_at(t)
        if self.kind == "constant":
            return gamma, self.beta
        beta = 1.0 - 24.0 * self.L * gamma
        if not -1e-12 <= beta <= 1.0 + 1e-12:
            warnings.warn(f"momentum {beta:.4g} at t={t} clamped to [0, 1]", RuntimeWarning, stacklevel=2)
        beta = min(max(beta, 0.0), 1.0)
        return gamma, beta


def schedule_at(s: Schedule, t: int) -> tuple[float, float]:
    return s.at(t)


def default_sigma_bar(sigma_b_sq: float, d: int, n: int, f: int, sigma_cor_sq: float, sigma_ind_sq: float) -> float:
    """Simplified noise scale for the nonconvex step size.

    Keeps the mini-batch and DP-noise part of the averaged-momentum variance
    and drops the filter's constant-factor term.
    """
    return math.sqrt(sigma_b_sq + d * (f * sigma_cor_sq + sigma_ind_sq) / (n - f))
