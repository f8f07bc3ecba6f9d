import math

import numpy as np
import pytest

from cdma_otfs.channel import Path, PathSet, apply_paths
from cdma_otfs.constants import SPEED_OF_LIGHT
from cdma_otfs.errors import DomainError, InvalidParameterError
from cdma_otfs.frame import DDFrame, GridConfig, Scheme, make_plan, map_bits_qpsk, spread
from cdma_otfs.sensing import (
    IntegerEstimate,
    build_expanded_tx,
    build_unit_channel,
    candidate_axes,
    correlation_surface,
    data_cancellation_estimate,
    estimate_targets,
    ml_metric,
    ml_metric_grid,
    ml_refine,
    rmse,
    write_imaging_csv,
)
from cdma_otfs.sequences import Family

CFG4 = GridConfig(M=4, N=4)
CFG8 = GridConfig(M=8, N=8)


def qpsk_frame(cfg, rng):
    bits = rng.integers(0, 2, 2 * cfg.size)
    return DDFrame.from_vec(map_bits_qpsk(bits), cfg.M, cfg.N)


def echo(frame, cfg, tau, nu, gain=1.0):
    paths = PathSet((Path(complex(gain), float(tau), float(nu)),), cfg)
    return apply_paths(paths, frame.grid).reshape(-1, order="F")


def dense_metric(frame, y, tau, nu, cfg):
    """Normalised correlation through the dense unit-gain operator."""
    hx = build_unit_channel(tau, nu, cfg) @ frame.vec
    return abs(np.vdot(hx, y)) ** 2 / np.vdot(hx, hx).real


# --- expanded transmit matrix -------------------------------------------------

def test_expanded_tx_scalar_entry():
    frame = qpsk_frame(CFG4, np.random.default_rng(0))
    X = frame.grid
    xx = build_expanded_tx(frame).matrix
    t1, n1, t2, n2 = 1, 2, 3, 1
    expected = X[(t1 - t2) % 4, (n1 - n2) % 4] * np.exp(2j * np.pi * n2 * (t1 - t2) / 16)
    assert abs(xx[t1 + 4 * n1, t2 + 4 * n2] - expected) < 1e-14


def test_expanded_tx_zero_shift_column_and_norms():
    frame = qpsk_frame(CFG4, np.random.default_rng(1))
    xx = build_expanded_tx(frame).matrix
    assert np.allclose(xx[:, 0], frame.vec)
    assert np.allclose(np.linalg.norm(xx, axis=0), np.linalg.norm(frame.vec), atol=1e-10)


def test_expanded_tx_columns_are_unit_channels():
    frame = qpsk_frame(CFG4, np.random.default_rng(2))
    xx = build_expanded_tx(frame).matrix
    for tau in range(4):
        for nu in range(4):
            col = build_unit_channel(tau, nu, CFG4) @ frame.vec
            assert np.max(np.abs(xx[:, tau + 4 * nu] - col)) < 1e-12


# --- integer step --------------------------------------------------------------

def test_integer_target_found_and_brute_force_agrees():
    rng = np.random.default_rng(3)
    frame = qpsk_frame(CFG8, rng)
    y = echo(frame, CFG8, 3, 2)
    est = data_cancellation_estimate(build_expanded_tx(frame), y, 1)
    assert (est.delays[0], est.dopplers[0]) == (3, 2)
    scores = {(t, n): abs(np.vdot(build_unit_channel(t, n, CFG8) @ frame.vec, y)) ** 2
              for t in range(8) for n in range(8)}
    assert max(scores, key=scores.get) == (3, 2)


def test_integer_identifiability_100_frames():
    rng = np.random.default_rng(4)
    for _ in range(100):
        frame = qpsk_frame(CFG8, rng)
        tau, nu = rng.integers(0, 8, 2)
        est = data_cancellation_estimate(build_expanded_tx(frame), echo(frame, CFG8, tau, nu), 1)
        assert (est.delays[0], est.dopplers[0]) == (tau, nu)


def test_fractional_target_coarse_neighbourhood():
    rng = np.random.default_rng(5)
    hits = 0
    for _ in range(100):
        frame = qpsk_frame(CFG8, rng)
        est = data_cancellation_estimate(build_expanded_tx(frame), echo(frame, CFG8, 3.4, 2.5), 1)
        hits += abs(est.delays[0] - 3) <= 1 and 1 <= est.dopplers[0] <= 4
    assert hits >= 95


def test_zero_input_picks_lowest_index():
    frame = qpsk_frame(CFG8, np.random.default_rng(6))
    est = data_cancellation_estimate(build_expanded_tx(frame), np.zeros(64, complex), 2)
    assert (est.delays, est.dopplers) == ((0, 1), (0, 0))
    assert est.peaks == (0.0, 0.0)


def test_two_targets_descending_peaks():
    rng = np.random.default_rng(7)
    frame = qpsk_frame(CFG8, rng)
    y = echo(frame, CFG8, 1, 5, 1.0) + echo(frame, CFG8, 6, 2, 0.5)
    est = data_cancellation_estimate(build_expanded_tx(frame), y, 2)
    assert list(zip(est.delays, est.dopplers)) == [(1, 5), (6, 2)]
    assert est.peaks[0] >= est.peaks[1]


def test_p_t_must_be_positive():
    frame = qpsk_frame(CFG4, np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        data_cancellation_estimate(build_expanded_tx(frame), frame.vec, 0)


def test_imaging_csv(tmp_path):
    frame = qpsk_frame(CFG4, np.random.default_rng(8))
    surf = correlation_surface(build_expanded_tx(frame), frame.vec)
    write_imaging_csv(surf, tmp_path / "img.csv")
    back = np.loadtxt(tmp_path / "img.csv", delimiter=",")
    assert back.shape == (4, 4)
    assert np.array_equal(back, surf)
    assert np.unravel_index(np.argmax(back), back.shape) == (0, 0)


# --- unit channel --------------------------------------------------------------

def test_unit_channel_identity_and_trace():
    assert np.max(np.abs(build_unit_channel(0, 0, CFG8) - np.eye(64))) < 1e-10
    H = build_unit_channel(1.3, -0.6, CFG4)
    assert abs(np.trace(H.conj().T @ H).real - 16) < 1e-8


def test_unit_channel_domain():
    with pytest.raises(DomainError):
        build_unit_channel(8.0, 0.0, CFG8)


# --- refinement ----------------------------------------------------------------

def test_fast_metric_matches_dense_operator():
    rng = np.random.default_rng(9)
    frame = qpsk_frame(CFG8, rng)
    y = echo(frame, CFG8, 2.3, 1.7) + 0.1 * rng.standard_normal(64)
    taus, nus = candidate_axes(2, 2, 2, 8)
    grid = ml_metric_grid(frame.grid, y.reshape(8, 8, order="F"), taus, nus)
    ref = ml_metric(frame.grid, y.reshape(8, 8, order="F"),
                    np.repeat(taus, nus.size), np.tile(nus, taus.size)).reshape(grid.shape)
    assert np.allclose(grid, ref, rtol=1e-10, atol=1e-12)
    for i, t in enumerate(taus):
        for j, n in enumerate(nus):
            assert math.isclose(grid[i, j], dense_metric(frame, y, t, n, CFG8), rel_tol=1e-9)


def test_candidate_axes():
    taus, nus = candidate_axes(3, 2, 1, 8)
    assert taus.tolist() == [2, 3, 4] and nus.tolist() == [1, 2, 3]
    taus, _ = candidate_axes(0, 0, 2, 8)
    assert taus.tolist() == [0, 0.5, 1]


def test_refine_exact_on_grid_point():
    rng = np.random.default_rng(10)
    frame = qpsk_frame(CFG8, rng)
    y = echo(frame, CFG8, 3.5, 2.25)
    coarse, fine = estimate_targets(frame, y, 1, 4, CFG8)
    assert abs(fine.delays[0] - 3.5) < 1e-12
    assert abs(fine.dopplers[0] - 2.25) < 1e-12
    # the exhaustive oracle: no candidate scores higher than the truth
    best = max((dense_metric(frame, y, t, n, CFG8), t, n)
               for t in candidate_axes(coarse.delays[0], coarse.dopplers[0], 4, 8)[0]
               for n in candidate_axes(coarse.delays[0], coarse.dopplers[0], 4, 8)[1])
    assert (best[1], best[2]) == (3.5, 2.25)


def test_refine_window_and_metric_never_degrades():
    rng = np.random.default_rng(11)
    for _ in range(30):
        frame = qpsk_frame(CFG8, rng)
        tau, nu = rng.uniform(0.5, 7), rng.uniform(-3, 3)
        y = echo(frame, CFG8, tau, nu) + 0.3 * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
        coarse, fine = estimate_targets(frame, y, 1, 4, CFG8)
        assert abs(fine.delays[0] - coarse.delays[0]) <= 1
        assert abs(fine.dopplers[0] - coarse.dopplers[0]) <= 1
        assert fine.metrics[0] >= fine.coarse_metrics[0]


def test_range_velocity_conversion():
    cfg = GridConfig(M=64, N=64)
    coarse = IntegerEstimate((25,), (0,), (1.0,))
    frame = qpsk_frame(cfg, np.random.default_rng(12))
    y = echo(frame, cfg, 25.6, 0.0)
    fine = ml_refine(frame, y, coarse, 5, cfg)
    assert abs(fine.delays[0] - 25.6) < 1e-12
    R = 25.6 * SPEED_OF_LIGHT / (2 * 64 * 120e3)
    assert math.isclose(fine.ranges[0], R, rel_tol=1e-12)
    assert abs(R - 499.7) < 0.1
    V = 3.0 * 120e3 * SPEED_OF_LIGHT / (2 * 64 * 40e9)
    fine_v = ml_refine(frame, echo(frame, cfg, 25.0, 3.0), IntegerEstimate((25,), (3,), (1.0,)), 1, cfg)
    assert math.isclose(fine_v.velocities[0], V, rel_tol=1e-12)


def test_finer_refinement_lowers_noiseless_error():
    rng = np.random.default_rng(13)
    err = {1: [], 4: []}
    for _ in range(100):
        frame = qpsk_frame(CFG8, rng)
        tau = rng.uniform(1, 6)
        nu = rng.uniform(-2, 2)
        y = echo(frame, CFG8, tau, nu)
        for n_ml in err:
            _, fine = estimate_targets(frame, y, 1, n_ml, CFG8)
            err[n_ml].append(abs(fine.delays[0] - tau))
    assert np.mean(err[4]) <= np.mean(err[1])


def test_estimator_runs_unchanged_on_spread_frames():
    cfg = CFG8
    rng = np.random.default_rng(14)
    plan = make_plan(cfg, Scheme.DELAY, Family.ZADOFF_CHU)
    frame = spread(plan, map_bits_qpsk(rng.integers(0, 2, 2 * plan.n_s)), cfg)
    coarse, fine = estimate_targets(frame, echo(frame, cfg, 4, 3), 1, 2, cfg)
    assert (coarse.delays[0], coarse.dopplers[0]) == (4, 3)
    assert (fine.delays[0], fine.dopplers[0]) == (4.0, 3.0)


def test_refine_rejects_bad_n_ml():
    frame = qpsk_frame(CFG4, np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        ml_refine(frame, frame.vec, IntegerEstimate((0,), (0,), (1.0,)), 0, CFG4)


# --- RMSE ----------------------------------------------------------------------

def test_rmse_examples():
    assert rmse([(500.0, 200.0)], [(500.0, 200.0)]) == (0.0, 0.0)
    assert rmse([(503.0, 200.0)], [(500.0, 200.0)])[0] == 3.0
    r, _ = rmse([(503.0, 0.0), (204.0, 0.0)], [(200.0, 0.0), (500.0, 0.0)])
    assert math.isclose(r, math.sqrt(12.5))


def test_rmse_errors():
    with pytest.raises(InvalidParameterError):
        rmse([], [])
    with pytest.raises(InvalidParameterError):
        rmse([(1.0, 0.0)], [(1.0, 0.0), (2.0, 0.0)])
