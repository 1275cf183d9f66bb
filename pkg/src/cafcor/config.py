"""Experiment configuration.

Files are flat ``key = value`` text with dotted section names (``attack.kind
= alie``), ``#`` comments and blank lines allowed. JSON files with either the
same dotted keys or nested objects are accepted too. Every value is checked
against :data:`SCHEMA`; errors name the offending key.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from cafcor.aggregation import AGGREGATORS
from cafcor.attacks import ATTACKS
from cafcor.datasets import IMAGE_DATASETS
from cafcor.errors import ConfigError
from cafcor.privacy import ACCOUNTING_LEVELS, REGIMES
from cafcor.training.partition import SCHEMES
from cafcor.training.schedules import SCHEDULES

CONFIG_VERSION = 1

TASKS = ("quadratic", "logistic", "mlp")
DATASETS = ("synthetic",) + IMAGE_DATASETS
PRIVACY_MODES = ("none", "explicit", "target")
NOISE_UNITS = ("variance", "std")
EIGEN_MODES = ("exact", "power")


@dataclass
class TaskConfig:
    kind: str = "quadratic"
    dataset: str = "synthetic"
    d: int = 10
    num_classes: int = 10
    mu: float = 1.0
    L: float = 1.0
    heterogeneity: float = 1.0
    spread: float = 1.0
    offset: float = 10.0
    reg: float = 1e-4
    hidden: int = 32
    train_size: int = 2000
    test_size: int = 1000
    data_dir: str | None = None
    flip: bool = False


@dataclass
class PartitionConfig:
    scheme: str = "iid"
    alpha: float = 1.0


@dataclass
class AggregatorConfig:
    name: str = "caf"
    mode: str = "power"


@dataclass
class AttackConfig:
    kind: str = "none"
    strength: float | None = None


@dataclass
class PrivacyConfig:
    mode: str = "none"
    units: str = "variance"
    sigma_cor: float = 0.0
    sigma_ind: float = 0.0
    epsilon: float | None = None
    delta: float = 1e-4
    regime: str = "equal"
    level: str = "user"

    @property
    def sigma_cor_sq(self) -> float:
        return self.sigma_cor**2 if self.units == "std" else self.sigma_cor

    @property
    def sigma_ind_sq(self) -> float:
        return self.sigma_ind**2 if self.units == "std" else self.sigma_ind


@dataclass
class ScheduleConfig:
    kind: str = "constant"
    gamma: float | None = 0.1
    beta: float | None = 0.9
    mu: float | None = None
    L: float | None = None
    loss_gap: float | None = None
    sigma_bar: float | None = None


@dataclass
class MetricsConfig:
    gap: bool = True
    accuracy: bool = True


@dataclass
class ExperimentConfig:
    config_version: int = CONFIG_VERSION
    seed: int = 0
    n: int = 10
    f: int = 0
    q: int = 0
    b: int = 10
    m: int = 100
    C: float = 1.0
    T: int = 100
    output: str | None = None
    task: TaskConfig = field(default_factory=TaskConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @property
    def n_honest(self) -> int:
        return self.n - self.f

    def validate(self) -> "ExperimentConfig":
        validate(self)
        return self

    def flat(self) -> dict[str, Any]:
        return to_flat(self)

    def replace(self, **updates) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``cfg.replace(**{"attack.kind": "sf"})``."""
        data = to_flat(self)
        for key, value in updates.items():
            data[key.replace("__", ".")] = value
        return from_flat(data)


_SECTIONS = {
    "task": TaskConfig,
    "partition": PartitionConfig,
    "aggregator": AggregatorConfig,
    "attack": AttackConfig,
    "privacy": PrivacyConfig,
    "schedule": ScheduleConfig,
    "metrics": MetricsConfig,
}

CHOICES = {
    "task.kind": TASKS,
    "task.dataset": DATASETS,
    "partition.scheme": SCHEMES,
    "aggregator.name": AGGREGATORS,
    "aggregator.mode": EIGEN_MODES,
    "attack.kind": ATTACKS,
    "privacy.mode": PRIVACY_MODES,
    "privacy.units": NOISE_UNITS,
    "privacy.regime": REGIMES,
    "privacy.level": ACCOUNTING_LEVELS,
    "schedule.kind": SCHEDULES,
}


def _schema() -> dict[str, tuple[str, Any]]:
    out: dict[str, tuple[str, Any]] = {}
    for f in fields(ExperimentConfig):
        if f.name in _SECTIONS:
            for sub in fields(_SECTIONS[f.name]):
                out[f"{f.name}.{sub.name}"] = (str(sub.type), sub.default)
        else:
            out[f.name] = (str(f.type), f.default)
    return out


SCHEMA = _schema()


def _coerce(key: str, annotation: str, value: Any) -> Any:
    optional = "None" in annotation
    blank = isinstance(value, str) and not value.strip()
    null_word = isinstance(value, str) and value.strip().lower() in ("none", "null")
    if value is None or blank or (optional and null_word):
        if optional:
            return None
        raise ConfigError(key, "a value is required")
    base = annotation.split("|")[0].strip()
    try:
        if base == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("true", "yes", "1", "on"):
                return True
            if text in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if base == "int":
            if isinstance(value, bool):
                raise ValueError(value)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(value)
                return int(value)
            return int(str(value).strip(), 0)
        if base == "float":
            result = float(value)
            if math.isnan(result):
                raise ValueError(value)
            return result
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {base}, got {value!r}") from None


def from_flat(data: dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config from a dotted-key mapping."""
    sections: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    top: dict[str, Any] = {}
    for key, value in data.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        annotation, _ = SCHEMA[key]
        coerced = _coerce(key, annotation, value)
        if "." in key:
            section, name = key.split(".", 1)
            sections[section][name] = coerced
        else:
            top[key] = coerced
    cfg = ExperimentConfig(**top, **{name: cls(**sections[name]) for name, cls in _SECTIONS.items()})
    return validate(cfg)


def to_flat(cfg: ExperimentConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sub in fields(value):
                out[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
        else:
            out[f.name] = value
    return out


def _flatten_json(obj: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, value in obj.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten_json(value, f"{full}."))
        else:
            out[full] = value
    return out


def parse_text(text: str) -> dict[str, Any]:
    data: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = value
    return data


def load(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        return from_flat(_flatten_json(raw))
    return from_flat(parse_text(text))


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: ExperimentConfig) -> str:
    return "".join(f"{key} = {_format(value)}\n" for key, value in to_flat(cfg).items())


def dump_json(cfg: ExperimentConfig) -> str:
    return json.dumps(to_flat(cfg), indent=2, sort_keys=False) + "\n"


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.config_version != CONFIG_VERSION:
        raise ConfigError("config_version", f"unsupported version {cfg.config_version}")
    flat = to_flat(cfg)
    for key, options in CHOICES.items():
        if flat[key] not in options:
            raise ConfigError(key, f"unknown value {flat[key]!r}; choose from {', '.join(options)}")
    if cfg.n < 1:
        raise ConfigError("n", "need at least one worker")
    if cfg.f < 0 or 2 * cfg.f >= cfg.n:
        raise ConfigError("f", f"need 0 <= f < n/2, got f={cfg.f}, n={cfg.n}")
    if cfg.q < 0 or cfg.q > cfg.f:
        raise ConfigError("q", f"need 0 <= q <= f, got q={cfg.q}, f={cfg.f}")
    if cfg.b < 1:
        raise ConfigError("b", "batch size must be >= 1")
    if cfg.task.dataset == "synthetic" and cfg.b > cfg.m:
        raise ConfigError("b", f"batch size {cfg.b} exceeds per-worker dataset size m={cfg.m}")
    if not cfg.C > 0:
        raise ConfigError("C", "clipping threshold must be > 0")
    if cfg.T < 1:
        raise ConfigError("T", "need at least one iteration")
    if cfg.task.kind == "quadratic":
        if cfg.task.dataset != "synthetic":
            raise ConfigError("task.dataset", "the quadratic task only supports synthetic data")
        if not 0 < cfg.task.mu <= cfg.task.L:
            raise ConfigError("task.mu", "need 0 < mu <= L")
    if cfg.task.d < 1:
        raise ConfigError("task.d", "dimension must be >= 1")
    if cfg.partition.scheme == "dirichlet" and not cfg.partition.alpha > 0:
        raise ConfigError("partition.alpha", "dirichlet alpha must be > 0")
    p = cfg.privacy
    if p.mode == "explicit" and (p.sigma_cor < 0 or p.sigma_ind < 0):
        raise ConfigError("privacy.sigma_cor", "noise levels must be nonnegative")
    if p.mode != "none" and not 0 < p.delta < 1:
        raise ConfigError("privacy.delta", "delta must lie in (0, 1)")
    if p.mode == "target":
        if p.epsilon is None or not 0 < p.epsilon < math.log(1 / p.delta):
            raise ConfigError("privacy.epsilon", "target epsilon must lie in (0, log(1/delta))")
        if p.regime == "no_independent" and cfg.q >= cfg.f:
            raise ConfigError("privacy.regime", "no_independent needs q < f")
    s = cfg.schedule
    if s.kind == "constant":
        if s.gamma is None or not s.gamma > 0:
            raise ConfigError("schedule.gamma", "constant schedule needs gamma > 0")
        if s.beta is None or not 0 <= s.beta <= 1:
            raise ConfigError("schedule.beta", "constant schedule needs beta in [0, 1]")
    return cfg
