"""Subject-independent EEG workload classification with i-vectors.

Pipeline: channel pooling -> frame features + deltas -> diagonal GMM-UBM
-> Baum-Welch statistics -> total-variability i-vectors -> SMA/GMVN ->
small MLP -> 7-system vote.
"""

from .errors import (
    CogloadError,
    ConfigError,
    CorruptionError,
    DataError,
    FormatError,
    NumericalError,
    ValidationError,
)
from .labels import LABELS, Label

__version__ = "0.1.0"

__all__ = [
    "CogloadError",
    "ConfigError",
    "CorruptionError",
    "DataError",
    "FormatError",
    "NumericalError",
    "ValidationError",
    "LABELS",
    "Label",
]
