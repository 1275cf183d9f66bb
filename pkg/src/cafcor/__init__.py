"""Robust and private distributed learning with correlated noise and the CAF filter."""

from cafcor.aggregation import aggregate, baseline, caf, certify, kappa
from cafcor.attacks import AttackSpec, craft
from cafcor.noise import NoisePlan, SecretRegistry, establish, pairwise_noise, perturb
from cafcor.privacy import (
    NoiseAssignment,
    PrivacyParams,
    calibrate,
    check_theorem1,
    per_step_rdp,
    secldp_epsilon,
)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "NoiseAssignment",
    "NoisePlan",
    "PrivacyParams",
    "SecretRegistry",
    "aggregate",
    "baseline",
    "caf",
    "calibrate",
    "certify",
    "check_theorem1",
    "craft",
    "establish",
    "kappa",
    "pairwise_noise",
    "per_step_rdp",
    "perturb",
    "secldp_epsilon",
]
