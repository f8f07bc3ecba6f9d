"""Linear MMSE detection of spread symbols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from cdma_otfs.errors import FramingError, NumericFailure
from cdma_otfs.frame import demap_qpsk, hard_decide_qpsk


@dataclass(frozen=True, eq=False)
class DetectionResult:
    s_hat: np.ndarray
    hard_symbols: np.ndarray
    bits_hat: np.ndarray


def ebno_to_n0(ebno_db, beta=2):
    """Noise power per DD sample for unit-energy symbols.

    With unit-energy symbols the energy per bit is ``1/beta`` irrespective of
    the load, so ``N0 = 1 / (beta * Eb/N0)``. ``+inf`` dB maps to zero noise.
    """
    if np.isposinf(ebno_db):
        return 0.0
    return 1.0 / (beta * 10.0 ** (ebno_db / 10.0))


def mmse_matrix(H, plan, N0):
    """``G = (A A^H + N0 I)^-1 A`` with ``A = H @ C_expanded``.

    The Hermitian system is solved through a Cholesky factorisation; a
    non positive-definite system raises :class:`NumericFailure`.
    """
    A = H @ plan.expanded
    R = A @ A.conj().T
    R[np.diag_indices_from(R)] += N0
    try:
        factor = linalg.cho_factor(R, lower=True, check_finite=True)
        return linalg.cho_solve(factor, A)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericFailure(f"MMSE system is not positive definite at N0={N0}: {exc}") from exc


def detect(G, y):
    if G.shape[0] != np.size(y):
        raise FramingError(f"detector expects {G.shape[0]} samples, got {np.size(y)}")
    s_hat = G.conj().T @ y
    hard = hard_decide_qpsk(s_hat)
    return DetectionResult(s_hat, hard, demap_qpsk(hard))


def count_bit_errors(bits_hat, bits):
    bits_hat = np.asarray(bits_hat)
    bits = np.asarray(bits)
    if bits_hat.shape != bits.shape:
        raise FramingError(f"bit vectors differ in length: {bits_hat.size} vs {bits.size}")
    return int(np.count_nonzero(bits_hat != bits))
