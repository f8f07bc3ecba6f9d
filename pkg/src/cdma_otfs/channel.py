"""
Doubly-selective channel: path samplers and the exact DD channel operator.

Each path has a complex gain, a delay index ``tau`` (grid units of
``1/(M*delta_f)``) and a Doppler index ``nu`` (grid units of
``delta_f/N``). In the time domain the path contributes
``h[m, n] = gain * exp(j*2*pi*nu*(n*M + m - tau)/(M*N))`` at sample ``m`` of
slot ``n``, applied to the slot delayed by ``tau`` (cyclically, the CP is
assumed long enough and removed). Every DFT here is unitary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from cdma_otfs.constants import SPEED_OF_LIGHT
from cdma_otfs.errors import DomainError, InvalidParameterError
from cdma_otfs.frame import DDFrame, GridConfig


class PathKind(str, enum.Enum):
    COMMUNICATION = "Communication"
    SENSING = "Sensing"


class DopplerRounding(str, enum.Enum):
    LITERAL = "literal"
    FRACTIONAL = "fractional"


@dataclass(frozen=True)
class Path:
    gain: complex
    delay_idx: float
    doppler_idx: float


@dataclass(frozen=True, eq=False)
class PathSet:
    paths: tuple
    config: GridConfig
    kind: PathKind = PathKind.COMMUNICATION
    # Sensing only: (range m, velocity m/s) per target, in target order.
    truth: tuple = ()

    def __post_init__(self):
        if not self.paths:
            raise InvalidParameterError("a PathSet needs at least one path")

    @property
    def gains(self):
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def delays(self):
        return np.array([p.delay_idx for p in self.paths], dtype=float)

    @property
    def dopplers(self):
        return np.array([p.doppler_idx for p in self.paths], dtype=float)

    def to_text(self):
        """Line-based record: a header, then ``gain_re gain_im tau nu`` per path."""
        c = self.config
        lines = [f"# kind={self.kind.value} M={c.M} N={c.N} delta_f={c.delta_f!r} f_c={c.f_c!r}"]
        for R, V in self.truth:
            lines.append(f"# target R={R!r} V={V!r}")
        for p in self.paths:
            g = complex(p.gain)
            lines.append(f"{g.real!r} {g.imag!r} {float(p.delay_idx)!r} {float(p.doppler_idx)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        header = {}
        truth = []
        paths = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("# target"):
                kv = dict(tok.split("=") for tok in line[len("# target"):].split())
                truth.append((float(kv["R"]), float(kv["V"])))
            elif line.startswith("#"):
                header = dict(tok.split("=") for tok in line[1:].split())
            else:
                re, im, tau, nu = (float(v) for v in line.split())
                paths.append(Path(complex(re, im), tau, nu))
        config = GridConfig(int(header["M"]), int(header["N"]),
                            float(header["delta_f"]), float(header["f_c"]))
        return cls(tuple(paths), config, PathKind(header["kind"]), tuple(truth))


@dataclass(frozen=True)
class CommChannelParams:
    P_com: int = 3
    L_com: int = 3
    kappa_com: float = 1.0  # linear Rician K
    V_com: float = 200.0    # m/s

    def __post_init__(self):
        if self.P_com < 1 or self.L_com < 1:
            raise InvalidParameterError("P_com and L_com must be >= 1")
        if self.kappa_com < 0:
            raise InvalidParameterError("kappa_com must be non-negative")


@dataclass(frozen=True)
class Target:
    R: float          # m
    V: float          # m/s
    rcs: float = 1.0  # m^2


@dataclass(frozen=True)
class SenChannelParams:
    targets: tuple = field(default_factory=lambda: (Target(500.0, 200.0),))
    P_n: int = 0
    kappa_sen: float = 10.0  # linear

    def __post_init__(self):
        if len(self.targets) < 1:
            raise InvalidParameterError("at least one sensing target is required")
        if self.P_n < 0:
            raise InvalidParameterError("P_n must be non-negative")
        if self.kappa_sen < 0:
            raise InvalidParameterError("kappa_sen must be non-negative")
        for t in self.targets:
            if not t.R > 0:
                raise InvalidParameterError(f"target range must be positive, got {t.R}")

    @property
    def P_t(self):
        return len(self.targets)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


# ---------------------------------------------------------------------------
# Physical <-> index conversions
# ---------------------------------------------------------------------------

def doppler_index_max(config, velocity):
    """Largest integer Doppler index seen by a receiver moving at ``velocity``."""
    return math.ceil(config.f_c * config.N * velocity / (config.delta_f * SPEED_OF_LIGHT))


def range_to_delay_index(R, config):
    """Round-trip delay index of a reflector at range ``R``."""
    return 2.0 * config.delta_f * config.M * R / SPEED_OF_LIGHT


def velocity_to_doppler_index(V, config):
    return 2.0 * config.f_c * config.N * V / (config.delta_f * SPEED_OF_LIGHT)


def delay_index_to_range(tau, config):
    return tau * SPEED_OF_LIGHT / (2.0 * config.M * config.delta_f)


def doppler_index_to_velocity(nu, config):
    return nu * config.delta_f * SPEED_OF_LIGHT / (2.0 * config.N * config.f_c)


def radar_power_gain(R, rcs, f_c):
    """Monostatic radar-equation power gain."""
    return SPEED_OF_LIGHT**2 * rcs / ((4.0 * math.pi) ** 3 * f_c**2 * R**4)


def complex_gaussian(rng, size=None, var=1.0):
    """Circularly-symmetric complex Gaussian draws with total variance ``var``."""
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def sample_comm_channel(params, config, rng, doppler_rounding=DopplerRounding.FRACTIONAL):
    """Rician multipath with one LOS path at delay 0 and ``P_com - 1`` NLOS paths."""
    doppler_rounding = DopplerRounding(doppler_rounding)
    P, L, kappa = params.P_com, params.L_com, params.kappa_com
    nu_max = doppler_index_max(config, params.V_com)

    if math.isinf(kappa) or P == 1:
        los_gain = 1.0 if math.isinf(kappa) else math.sqrt(kappa / (kappa + 1.0))
        return PathSet((Path(complex(los_gain), 0.0, float(nu_max)),), config)

    los_gain = math.sqrt(kappa / (kappa + 1.0))
    nlos_scale = math.sqrt(1.0 / ((kappa + 1.0) * (P - 1)))
    gains = nlos_scale * complex_gaussian(rng, P - 1)

    delays = [0]
    for p in range(1, P):
        if P >= L:
            delays.append(p % L)
        else:
            # Rejection keeps every delay distinct, including from the LOS tap.
            while True:
                d = int(np.rint(L * rng.uniform()))
                if d not in delays:
                    break
            delays.append(d)

    eta = rng.uniform(size=P - 1)
    nlos_nu = 2.0 * nu_max * (eta - 0.5)
    if doppler_rounding is DopplerRounding.LITERAL:
        nlos_nu = np.rint(nlos_nu)

    paths = [Path(complex(los_gain), 0.0, float(nu_max))]
    paths += [Path(complex(g), float(d), float(v)) for g, d, v in zip(gains, delays[1:], nlos_nu)]
    return PathSet(tuple(paths), config)


def sample_sensing_channel(params, config, rng):
    """Monostatic sensing paths: ``P_t`` target echoes followed by ``P_n`` clutter paths."""
    kappa = params.kappa_sen
    alphas = [radar_power_gain(t.R, t.rcs, config.f_c) for t in params.targets]
    los_factor = 1.0 if math.isinf(kappa) else math.sqrt(kappa / (kappa + 1.0))

    paths = []
    for t, alpha in zip(params.targets, alphas):
        tau = range_to_delay_index(t.R, config)
        if not 0 <= tau < config.M:
            raise DomainError(f"target at {t.R} m maps to delay index {tau:.3f}, outside [0, {config.M})")
        paths.append(Path(complex(los_factor * math.sqrt(alpha)), tau,
                          velocity_to_doppler_index(t.V, config)))

    if params.P_n and not math.isinf(kappa):
        scale = math.sqrt(1.0 / (params.P_n * (kappa + 1.0))) * min(math.sqrt(a) for a in alphas)
        R_max = kappa ** 0.25 * max(t.R for t in params.targets)
        V_max = config.delta_f * SPEED_OF_LIGHT / (4.0 * config.f_c)
        for _ in range(params.P_n):
            gain = scale * complex_gaussian(rng)
            # Ranges beyond the unambiguous delay window are redrawn.
            while True:
                tau = range_to_delay_index(R_max * rng.uniform(), config)
                if tau < config.M:
                    break
            V = 2.0 * V_max * (rng.uniform() - 0.5)
            paths.append(Path(complex(gain), tau, velocity_to_doppler_index(V, config)))

    truth = tuple((t.R, t.V) for t in params.targets)
    return PathSet(tuple(paths), config, PathKind.SENSING, truth)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def dft_matrix(n):
    """Unitary DFT matrix with entries ``exp(-j*2*pi*k*l/n)/sqrt(n)``."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def _check_delays(delays, M):
    bad = (delays < 0) | (delays >= M)
    if np.any(bad):
        raise DomainError(f"delay indices {delays[bad].tolist()} outside [0, {M})")


def td_gains(paths, config=None):
    """Per-path time-domain coefficients, shape ``(P, N, M)``."""
    config = config or paths.config
    M, N = config.M, config.N
    n = np.arange(N)[:, None]
    m = np.arange(M)[None, :]
    tau = paths.delays[:, None, None]
    nu = paths.dopplers[:, None, None]
    phase = np.exp(2j * np.pi * nu * (n * M + m - tau) / (M * N))
    return paths.gains[:, None, None] * phase


def _is_integer_delay(delays):
    return bool(np.all(delays == np.round(delays)))


def td_slot_matrices(paths, mode=None):
    """Per-slot time-domain operators acting on the M time samples of each slot.

    ``mode='integer'`` places the coefficients on cyclically shifted diagonals;
    ``mode='fractional'`` goes through the frequency domain so non-integer
    delays become a periodic-sinc interpolation. ``None`` chooses by the delays.
    Returns an array of shape ``(N, M, M)``.
    """
    config = paths.config
    M, N = config.M, config.N
    delays = paths.delays
    _check_delays(delays, M)
    if mode is None:
        mode = "integer" if _is_integer_delay(delays) else "fractional"
    h = td_gains(paths)
    m = np.arange(M)

    if mode == "integer":
        if not _is_integer_delay(delays):
            raise DomainError("integer-mode construction needs integer delay indices")
        H = np.zeros((N, M, M), dtype=complex)
        for p, tau in enumerate(delays.astype(int)):
            H[:, m, (m - tau) % M] += h[p]
        return H

    if mode != "fractional":
        raise InvalidParameterError(f"unknown construction mode {mode!r}")
    # B_n[m, mb] = (1/sqrt(M)) sum_p h[p, n, m] exp(j*2*pi*(m - tau_p)*mb/M)
    kernel = np.exp(2j * np.pi * (m[None, :, None] - delays[:, None, None]) * m[None, None, :] / M)
    B = np.einsum("pnm,pmk->nmk", h, kernel) / math.sqrt(M)
    return B @ dft_matrix(M)


def tfd_slot_matrices(paths, mode=None):
    """Time-frequency per-slot matrices ``F_M T_n F_M^H``, shape ``(N, M, M)``."""
    F = dft_matrix(paths.config.M)
    return F @ td_slot_matrices(paths, mode) @ F.conj().T


def build_dd_channel(paths, mode=None):
    """Dense ``MN x MN`` delay-Doppler channel matrix.

    Evaluates ``(F_N kron F_M^H) blkdiag(Hbar_n) (F_N^H kron F_M)`` without
    forming the Kronecker factors: the delay-axis transforms cancel against
    the per-slot TF matrices, leaving a Doppler-axis DFT sandwich of the
    per-slot time-domain operators.
    """
    M, N = paths.config.M, paths.config.N
    T = td_slot_matrices(paths, mode)
    F = dft_matrix(N)
    H = np.einsum("nk,nab,nj->kajb", F, T, F.conj(), optimize=True)
    return H.reshape(M * N, M * N)


def apply_paths(paths, grid, config=None, check=True):
    """Apply the channel of ``paths`` to an ``M x N`` DD grid without building the matrix.

    Supports a batch of path sets through the leading axis of the arrays in
    :func:`apply_unit_paths`; this function handles one path set.
    """
    config = config or paths.config
    if check:
        _check_delays(paths.delays, config.M)
    x_td = np.fft.ifft(grid, axis=1, norm="ortho")
    x_tf = np.fft.fft(x_td, axis=0, norm="ortho")
    h = td_gains(paths, config)  # (P, N, M)
    mb = np.arange(config.M)
    y_td = np.zeros_like(x_td)
    for p, tau in enumerate(paths.delays):
        ramp = np.exp(-2j * np.pi * tau * mb / config.M)
        shifted = np.fft.ifft(x_tf * ramp[:, None], axis=0, norm="ortho")
        y_td += h[p].T * shifted
    return np.fft.fft(y_td, axis=1, norm="ortho")


def apply_unit_paths(grid, taus, nus):
    """Batch-apply unit-gain single-path channels to one DD grid.

    ``taus`` and ``nus`` are 1-D arrays of equal length K; returns ``(K, M, N)``.
    """
    M, N = grid.shape
    taus = np.asarray(taus, dtype=float)[:, None, None]
    nus = np.asarray(nus, dtype=float)[:, None, None]
    x_td = np.fft.ifft(grid, axis=1, norm="ortho")
    x_tf = np.fft.fft(x_td, axis=0, norm="ortho")
    mb = np.arange(M)[None, :, None]
    shifted = np.fft.ifft(x_tf[None] * np.exp(-2j * np.pi * taus * mb / M), axis=1, norm="ortho")
    m = np.arange(M)[None, :, None]
    n = np.arange(N)[None, None, :]
    phase = np.exp(2j * np.pi * nus * (n * M + m - taus) / (M * N))
    return np.fft.fft(phase * shifted, axis=2, norm="ortho")


def apply_channel(H, frame, N0, rng):
    """``y = H x + z`` with complex AWGN of variance ``N0`` per DD sample."""
    if N0 < 0:
        raise InvalidParameterError(f"N0 must be non-negative, got {N0}")
    M, N = frame.grid.shape
    y = H @ frame.vec
    if N0 > 0:
        y = y + complex_gaussian(rng, y.size, N0)
    return DDFrame.from_vec(y, M, N)
