"""Messages sent by malicious workers.

ALIE and FOE are omniscient message-level attacks: they read the honest
momentums of the current iteration and place every malicious vector at the
same crafted point. Sign flipping and label flipping act earlier, inside the
worker pipeline (see :mod:`cafcor.training.simulator`); for them
:func:`craft` is never consulted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cafcor.errors import InvalidParameterError

ATTACKS = ("none", "alie", "foe", "lf", "sf")
MESSAGE_ATTACKS = ("none", "alie", "foe")

DEFAULT_STRENGTH = {"none": 0.0, "alie": 1.06, "foe": 1.0, "lf": 0.0, "sf": 1.0}


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    strength: float | None = None
    num_classes: int = 10

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise InvalidParameterError(f"unknown attack {self.kind!r}; choose from {ATTACKS}")
        if self.strength is not None and not math.isfinite(self.strength):
            raise InvalidParameterError("attack strength must be finite")

    @property
    def z(self) -> float:
        return DEFAULT_STRENGTH[self.kind] if self.strength is None else self.strength

    def flip_labels(self, y: np.ndarray) -> np.ndarray:
        """Label map ``y -> K-1-y`` used by label flipping."""
        return (self.num_classes - 1) - np.asarray(y)


def craft(spec: AttackSpec, honest_momentums, f: int) -> np.ndarray:
    """Return the ``(f, d)`` block of malicious vectors for a message-level attack."""
    h = np.asarray(honest_momentums, dtype=np.float64)
    if f < 0:
        raise InvalidParameterError("f must be nonnegative")
    if h.ndim != 2 or h.shape[0] == 0:
        raise InvalidParameterError(f"attack {spec.kind!r} needs at least one honest vector")
    if f == 0:
        return np.empty((0, h.shape[1]))
    mu = h.mean(axis=0)
    if spec.kind == "alie":
        target = mu + spec.z * h.std(axis=0)
    elif spec.kind == "foe":
        target = -spec.z * mu
    elif spec.kind == "none":
        target = mu
    else:
        raise InvalidParameterError(f"attack {spec.kind!r} is applied inside the worker pipeline")
    return np.tile(target, (f, 1))


def sign_flip(g) -> np.ndarray:
    return -np.asarray(g, dtype=np.float64)
