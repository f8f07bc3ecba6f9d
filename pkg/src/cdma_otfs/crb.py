"""
Average Cramer-Rao bounds on range and velocity estimation.

These are *average* bounds used as reference curves. They are not true
lower bounds, and a grid-search estimator may dip below them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from cdma_otfs.constants import SPEED_OF_LIGHT
from cdma_otfs.errors import DomainError
from cdma_otfs.frame import GridConfig


@dataclass(frozen=True)
class CrbInputs:
    N0: float
    P_avg: float
    gain2: float
    config: GridConfig

    def __post_init__(self):
        for name in ("N0", "P_avg", "gain2"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value}")


def _snr_term(inputs, axis_len):
    c = inputs.config
    return inputs.N0 / (inputs.P_avg * inputs.gain2 * math.pi**2 * c.M * c.N * (axis_len - 1) ** 2)


def crb_range(inputs):
    """Range standard-deviation bound in metres."""
    c = inputs.config
    return math.sqrt(_snr_term(inputs, c.M)) * SPEED_OF_LIGHT / (2.0 * c.delta_f)


def crb_velocity(inputs):
    """Velocity standard-deviation bound in m/s."""
    c = inputs.config
    return math.sqrt(_snr_term(inputs, c.N)) * SPEED_OF_LIGHT * c.delta_f / (2.0 * c.f_c)
