"""CDMA-spread OTFS integrated sensing and communication simulator."""

from cdma_otfs.constants import SPEED_OF_LIGHT
from cdma_otfs.errors import (
    CapacityError,
    ConfigError,
    DomainError,
    FramingError,
    InvalidParameterError,
    NumericFailure,
)

__version__ = "0.1.0"

__all__ = [
    "SPEED_OF_LIGHT",
    "CapacityError",
    "ConfigError",
    "DomainError",
    "FramingError",
    "InvalidParameterError",
    "NumericFailure",
    "__version__",
]
