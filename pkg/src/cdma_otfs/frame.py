"""
QPSK mapping, spreading operators and the delay-Doppler transmit frame.

The DD grid ``X`` is ``M x N`` (rows are delay bins, columns Doppler bins);
its vector form stacks columns, so ``vec[n*M + m] == grid[m, n]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from cdma_otfs.errors import FramingError, InvalidParameterError
from cdma_otfs.sequences import SequenceMatrix, build_sequence_matrix

_SQRT_HALF = 1.0 / math.sqrt(2.0)


class Scheme(str, enum.Enum):
    PURE_OTFS = "PureOTFS"
    DELAY = "DelayCDMA"
    DOPPLER = "DopplerCDMA"
    DELAY_DOPPLER = "DelayDopplerCDMA"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "").replace("_", "").lower()
        aliases = {
            "pureotfs": cls.PURE_OTFS, "otfs": cls.PURE_OTFS,
            "delaycdma": cls.DELAY, "dl": cls.DELAY, "dlcdma": cls.DELAY,
            "dopplercdma": cls.DOPPLER, "dp": cls.DOPPLER, "dpcdma": cls.DOPPLER,
            "delaydopplercdma": cls.DELAY_DOPPLER, "dd": cls.DELAY_DOPPLER,
            "ddcdma": cls.DELAY_DOPPLER,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidParameterError(f"unknown scheme {name!r}") from None


@dataclass(frozen=True)
class GridConfig:
    M: int = 64
    N: int = 64
    delta_f: float = 120e3
    f_c: float = 40e9
    beta: int = 2

    def __post_init__(self):
        problems = []
        if self.M < 2:
            problems.append(f"M must be >= 2, got {self.M}")
        if self.N < 2:
            problems.append(f"N must be >= 2, got {self.N}")
        if not self.delta_f > 0:
            problems.append(f"delta_f must be positive, got {self.delta_f}")
        if not self.f_c > 0:
            problems.append(f"f_c must be positive, got {self.f_c}")
        if self.beta != 2:
            problems.append(f"only QPSK (beta=2) is supported, got beta={self.beta}")
        if problems:
            raise InvalidParameterError("; ".join(problems))

    @property
    def size(self):
        return self.M * self.N


@dataclass(frozen=True, eq=False)
class SpreadingPlan:
    scheme: Scheme
    seq_matrix: SequenceMatrix | None
    n_mult: int
    n_s: int
    expanded: np.ndarray

    @property
    def is_unit_columns(self):
        norms = np.linalg.norm(self.expanded, axis=0)
        return bool(np.allclose(norms, 1.0, atol=1e-12))


@dataclass(frozen=True, eq=False)
class DDFrame:
    grid: np.ndarray
    vec: np.ndarray

    @classmethod
    def from_vec(cls, vec, M, N):
        vec = np.asarray(vec)
        if vec.size != M * N:
            raise FramingError(f"vector of length {vec.size} does not fill a {M}x{N} grid")
        return cls(devectorize(vec, M, N), vec)

    @classmethod
    def from_grid(cls, grid):
        grid = np.asarray(grid)
        return cls(grid, vectorize(grid))

    @property
    def energy(self):
        return float(np.vdot(self.vec, self.vec).real)


def vectorize(grid):
    """Column-stack an ``M x N`` grid."""
    return np.asarray(grid).reshape(-1, order="F")


def devectorize(vec, M, N):
    return np.asarray(vec).reshape((M, N), order="F")


# ---------------------------------------------------------------------------
# QPSK
# ---------------------------------------------------------------------------

def map_bits_qpsk(bits):
    """Gray-mapped unit-energy QPSK; first bit sets the real sign, second the imaginary."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 2:
        raise FramingError(f"QPSK needs an even number of bits, got {bits.size}")
    pairs = bits.reshape(-1, 2)
    re = 1.0 - 2.0 * pairs[:, 0]
    im = 1.0 - 2.0 * pairs[:, 1]
    return (re + 1j * im) * _SQRT_HALF


def hard_decide_qpsk(symbols):
    """Nearest QPSK point; zero components go to the positive half-plane."""
    symbols = np.asarray(symbols)
    re = np.where(symbols.real >= 0, 1.0, -1.0)
    im = np.where(symbols.imag >= 0, 1.0, -1.0)
    return (re + 1j * im) * _SQRT_HALF


def demap_qpsk(symbols):
    symbols = np.asarray(symbols)
    bits = np.empty((symbols.size, 2), dtype=np.uint8)
    bits[:, 0] = symbols.real < 0
    bits[:, 1] = symbols.imag < 0
    return bits.reshape(-1)


# ---------------------------------------------------------------------------
# Spreading
# ---------------------------------------------------------------------------

def _sequence_length(scheme, config):
    return {Scheme.DELAY: config.M, Scheme.DOPPLER: config.N,
            Scheme.DELAY_DOPPLER: config.M * config.N}[scheme]


def build_spreading_plan(config, scheme, seq_matrix=None, n_mult=None):
    """Assemble the ``MN x n_s`` spreading operator for ``scheme``.

    Delay spreading places ``C`` block-diagonally (one copy per time slot);
    Doppler spreading puts row ``n`` of ``C`` at rows ``n*M + m`` and column
    block ``m``; delay-Doppler spreading uses ``C`` directly.
    """
    scheme = Scheme.parse(scheme)
    M, N = config.M, config.N
    if scheme is Scheme.PURE_OTFS:
        return SpreadingPlan(scheme, None, M * N, M * N, np.eye(M * N, dtype=complex))

    if seq_matrix is None:
        raise InvalidParameterError(f"{scheme.value} needs a sequence matrix")
    if n_mult is None:
        n_mult = seq_matrix.n_mult
    if n_mult != seq_matrix.n_mult:
        raise InvalidParameterError(
            f"n_mult={n_mult} but the sequence matrix holds {seq_matrix.n_mult} sequences")
    want = _sequence_length(scheme, config)
    if seq_matrix.length != want:
        raise InvalidParameterError(
            f"{scheme.value} on a {M}x{N} grid needs sequences of length {want}, "
            f"got {seq_matrix.length}")

    C = seq_matrix.as_array()
    if scheme is Scheme.DELAY:
        expanded = block_diag(*([C] * N))
        n_s = n_mult * N
    elif scheme is Scheme.DOPPLER:
        n_s = n_mult * M
        expanded = np.zeros((M * N, n_s), dtype=complex)
        for n in range(N):
            for m in range(M):
                expanded[n * M + m, m * n_mult:(m + 1) * n_mult] = C[n, :]
    else:
        expanded = C.copy()
        n_s = n_mult
    return SpreadingPlan(scheme, seq_matrix, n_mult, n_s, expanded)


def make_plan(config, scheme, family=None, n_mult=None):
    """Convenience wrapper: build the sequence matrix and the plan together.

    ``n_mult=None`` means full load for the scheme.
    """
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.PURE_OTFS:
        return build_spreading_plan(config, scheme)
    length = _sequence_length(scheme, config)
    if n_mult is None:
        n_mult = length
    if family is None:
        raise InvalidParameterError(f"{scheme.value} needs a sequence family")
    seqs = build_sequence_matrix(family, length, n_mult)
    return build_spreading_plan(config, scheme, seqs, n_mult)


def full_load(scheme, config):
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.PURE_OTFS:
        return config.M * config.N
    return _sequence_length(scheme, config)


def spread(plan, symbols, config):
    """``x = C_expanded @ s`` as a DD frame."""
    symbols = np.asarray(symbols)
    if symbols.size != plan.n_s:
        raise FramingError(f"plan expects {plan.n_s} symbols, got {symbols.size}")
    return DDFrame.from_vec(plan.expanded @ symbols, config.M, config.N)


def throughput(plan, config):
    """Bits per channel use, ``beta * n_s / (M N)``."""
    return config.beta * plan.n_s / (config.M * config.N)
