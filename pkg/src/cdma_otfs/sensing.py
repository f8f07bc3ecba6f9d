"""
Monostatic target estimation from a known transmit frame.

Step one correlates the received DD vector against every integer
delay-Doppler shift of the transmit frame and keeps the strongest peaks.
Step two searches a ``(2*N_ML + 1)^2`` sub-bin grid around each peak,
maximising ``|<H x, y>|^2 / ||H x||^2`` over unit-gain single-path channels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from cdma_otfs.channel import (
    Path,
    PathSet,
    apply_unit_paths,
    build_dd_channel,
    delay_index_to_range,
    doppler_index_to_velocity,
)
from cdma_otfs.errors import DomainError, InvalidParameterError


@dataclass(frozen=True, eq=False)
class ExpandedTx:
    matrix: np.ndarray
    M: int
    N: int


@dataclass(frozen=True)
class IntegerEstimate:
    delays: tuple
    dopplers: tuple
    peaks: tuple

    def __len__(self):
        return len(self.delays)


@dataclass(frozen=True)
class RefinedEstimate:
    delays: tuple
    dopplers: tuple
    ranges: tuple
    velocities: tuple
    metrics: tuple
    coarse_metrics: tuple

    def __len__(self):
        return len(self.delays)


def build_expanded_tx(frame):
    """Matrix whose column ``tau2 + M*nu2`` is the frame shifted by (tau2, nu2).

    Entry ``(tau1 + M*nu1, tau2 + M*nu2)`` equals
    ``X[(tau1 - tau2) % M, (nu1 - nu2) % N] * exp(j*2*pi*nu2*(tau1 - tau2)/(M*N))``,
    which is exactly what a unit-gain integer path at (tau2, nu2) produces.
    """
    X = frame.grid
    M, N = X.shape
    tau = np.arange(M)
    nu = np.arange(N)
    dt = tau[:, None] - tau[None, :]                        # (tau1, tau2)
    dn = nu[:, None] - nu[None, :]                          # (nu1, nu2)
    vals = X[(dt % M)[:, None, :, None], (dn % N)[None, :, None, :]]
    phase = np.exp(2j * np.pi * nu[None, None, None, :] * dt[:, None, :, None] / (M * N))
    # axes (tau1, nu1, tau2, nu2) -> row index tau1 + M*nu1, column tau2 + M*nu2
    mat = (vals * phase).transpose(1, 0, 3, 2).reshape(M * N, M * N)
    return ExpandedTx(mat, M, N)


def correlation_surface(xx, y):
    """``|X_X^H y|^2`` reshaped to an ``M x N`` (delay x Doppler) image."""
    h = xx.matrix.conj().T @ np.asarray(y).reshape(-1, order="F")
    return (np.abs(h) ** 2).reshape((xx.M, xx.N), order="F")


def data_cancellation_estimate(xx, y, P_t, exclusion_radius=0):
    """Integer (delay, Doppler) pairs at the ``P_t`` largest correlation peaks.

    Peaks are picked greedily in descending power; ties go to the lowest
    vector index. ``exclusion_radius`` blanks a (cyclic) square neighbourhood
    around each picked peak before the next pick.
    """
    if P_t < 1:
        raise InvalidParameterError(f"P_t must be >= 1, got {P_t}")
    power = correlation_surface(xx, y).reshape(-1, order="F")
    M, N = xx.M, xx.N
    available = np.ones(power.size, dtype=bool)
    delays, dopplers, peaks = [], [], []
    for _ in range(min(P_t, power.size)):
        masked = np.where(available, power, -np.inf)
        idx = int(np.argmax(masked))
        tau, nu = idx % M, idx // M
        delays.append(tau)
        dopplers.append(nu)
        peaks.append(float(power[idx]))
        r = exclusion_radius
        for dt in range(-r, r + 1):
            for dn in range(-r, r + 1):
                available[(tau + dt) % M + M * ((nu + dn) % N)] = False
    return IntegerEstimate(tuple(delays), tuple(dopplers), tuple(peaks))


def build_unit_channel(tau, nu, config):
    """Dense DD operator of a single unit-gain path."""
    if not 0 <= tau < config.M:
        raise DomainError(f"delay index {tau} outside [0, {config.M})")
    return build_dd_channel(PathSet((Path(1.0 + 0j, float(tau), float(nu)),), config))


def ml_metric(grid, y_grid, taus, nus):
    """Normalised correlation ``|x^H H^H y|^2 / (x^H H^H H x)`` per candidate.

    Reference implementation: applies every candidate channel to the frame.
    """
    shifted = apply_unit_paths(grid, taus, nus)
    num = np.abs(np.einsum("kmn,mn->k", shifted.conj(), y_grid)) ** 2
    den = np.einsum("kmn,kmn->k", shifted.conj(), shifted).real
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, 0.0)


def ml_metric_grid(grid, y_grid, taus, nus):
    """Same metric over the outer product ``taus x nus``, shape ``(len(taus), len(nus))``.

    The Doppler-axis DFT is unitary, so inner products are taken in the time
    domain; there the Doppler hypothesis is a unit-modulus phase ramp, which
    leaves the denominator independent of ``nu``.
    """
    M, N = grid.shape
    taus = np.asarray(taus, dtype=float)
    nus = np.asarray(nus, dtype=float)
    x_tf = np.fft.fft(np.fft.ifft(grid, axis=1, norm="ortho"), axis=0, norm="ortho")
    y_td = np.fft.ifft(y_grid, axis=1, norm="ortho")
    mb = np.arange(M)
    ramps = np.exp(-2j * np.pi * taus[:, None] * mb[None, :] / M)          # (T, M)
    shifted = np.fft.ifft(x_tf[None] * ramps[:, :, None], axis=1, norm="ortho")
    den = np.sum(np.abs(shifted) ** 2, axis=(1, 2))
    # w[t, n*M + m] = conj(shifted) * y in column-stacked sample order
    w = (shifted.conj() * y_td[None]).transpose(0, 2, 1).reshape(taus.size, M * N)
    t = np.arange(M * N)
    steer = np.exp(-2j * np.pi * np.outer(nus, t) / (M * N))               # (V, MN)
    num = np.abs(w @ steer.T) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den[:, None] > 0, num / den[:, None], 0.0)


def candidate_axes(tau_c, nu_c, N_ML, M):
    """Delay and Doppler candidates around an integer pair.

    Delay candidates outside ``[0, M)`` are dropped.
    """
    offsets = np.arange(-N_ML, N_ML + 1) / N_ML
    taus = tau_c + offsets
    return taus[(taus >= 0) & (taus < M)], nu_c + offsets


def ml_refine(frame, y, coarse, N_ML, config):
    """Sub-bin refinement of each coarse pair and conversion to range/velocity.

    The first maximum in (delay, Doppler) order wins ties.
    """
    if N_ML < 1:
        raise InvalidParameterError(f"N_ML must be >= 1, got {N_ML}")
    y_grid = np.asarray(y).reshape((config.M, config.N), order="F")
    out = {k: [] for k in ("delays", "dopplers", "ranges", "velocities", "metrics", "coarse")}
    for tau_c, nu_c in zip(coarse.delays, coarse.dopplers):
        taus, nus = candidate_axes(tau_c, nu_c, N_ML, config.M)
        metric = ml_metric_grid(frame.grid, y_grid, taus, nus)
        i, j = np.unravel_index(int(np.argmax(metric)), metric.shape)
        tau_hat, nu_hat = float(taus[i]), float(nus[j])
        # offset 0 sits in the middle of the Doppler axis
        coarse_metric = metric[int(np.flatnonzero(taus == tau_c)[0]), N_ML]
        out["delays"].append(tau_hat)
        out["dopplers"].append(nu_hat)
        out["ranges"].append(delay_index_to_range(tau_hat, config))
        out["velocities"].append(doppler_index_to_velocity(nu_hat, config))
        out["metrics"].append(float(metric[i, j]))
        out["coarse"].append(float(coarse_metric))
    return RefinedEstimate(tuple(out["delays"]), tuple(out["dopplers"]), tuple(out["ranges"]),
                           tuple(out["velocities"]), tuple(out["metrics"]), tuple(out["coarse"]))


def estimate_targets(frame, y, P_t, N_ML, config, exclusion_radius=0):
    """Run both estimation steps on one received frame."""
    xx = build_expanded_tx(frame)
    coarse = data_cancellation_estimate(xx, y, P_t, exclusion_radius)
    return coarse, ml_refine(frame, y, coarse, N_ML, config)


def match_to_truth(estimates, truths):
    """Pair each true target with the unused estimate closest in range."""
    remaining = list(range(len(estimates)))
    pairs = []
    for R, V in truths:
        if not remaining:
            break
        j = min(remaining, key=lambda k: (abs(estimates[k][0] - R), k))
        remaining.remove(j)
        pairs.append((estimates[j], (R, V)))
    return pairs


def rmse(estimates, truths):
    """Range and velocity RMSE over matched (estimate, truth) pairs.

    ``estimates`` and ``truths`` are sequences of ``(R, V)`` tuples; each truth
    is matched to the nearest-range estimate.
    """
    if len(estimates) == 0 or len(truths) == 0:
        raise InvalidParameterError("RMSE needs at least one estimate and one truth")
    if len(estimates) != len(truths):
        raise InvalidParameterError(
            f"{len(estimates)} estimates for {len(truths)} truths")
    pairs = match_to_truth(list(estimates), list(truths))
    err = np.array([(e[0] - t[0], e[1] - t[1]) for e, t in pairs], dtype=float)
    return tuple(float(v) for v in np.sqrt(np.mean(err**2, axis=0)))


def write_imaging_csv(surface, path):
    """``|h|^2`` image as CSV, M rows (delay) by N columns (Doppler)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in surface:
            writer.writerow([repr(float(v)) for v in row])
