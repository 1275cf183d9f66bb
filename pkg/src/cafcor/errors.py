"""Exception hierarchy shared by the library and the CLI."""


class CafcorError(ValueError):
    """Base class for every error raised by cafcor."""


class InvalidParameterError(CafcorError):
    """A parameter lies outside the domain an operation is defined on."""


class DegenerateWeightsError(CafcorError):
    """All aggregation weights are zero."""


class InfeasibleNoiseError(CafcorError):
    """Noise variances give a singular covariance for the accountant."""


class InfeasibleRegimeError(CafcorError):
    """A noise regime cannot be used with the requested collusion level."""


class UnsupportedMetricError(CafcorError):
    """The task cannot provide the requested metric."""


class IdxFormatError(CafcorError):
    """An IDX file is malformed or truncated."""


class ConfigError(CafcorError):
    """Configuration validation failure, tagged with the offending key path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
