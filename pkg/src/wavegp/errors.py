"""Exception hierarchy.

Every exception carries a ``category`` string used by the command line
driver to pick an exit status and a machine-readable error tag.
"""

from __future__ import annotations


class WaveGPError(Exception):
    category = "error"


class ConfigError(WaveGPError, ValueError):
    category = "config-error"


class InvalidResolution(WaveGPError, ValueError):
    category = "config-error"


class UnsupportedDerivative(WaveGPError):
    """Raised when a derivative is requested from a kernel that has none
    (Matern 1/2, truncated kernels)."""

    category = "unsupported-derivative"


class MissingCoefficientDerivative(WaveGPError):
    category = "config-error"


class NumericFailure(WaveGPError):
    category = "numeric-failure"


class SingularGram(NumericFailure):
    def __init__(self, message: str, smallest_pivot: float):
        super().__init__(f"{message} (smallest pivot {smallest_pivot:.3e})")
        self.smallest_pivot = smallest_pivot


class CholeskyFailure(NumericFailure):
    def __init__(self, message: str, required_jitter: float):
        super().__init__(f"{message} (required jitter ~{required_jitter:.3e})")
        self.required_jitter = required_jitter
