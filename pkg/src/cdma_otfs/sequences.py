"""
Spreading sequences: Gold, Hadamard and Zadoff-Chu families.

Every generated sequence is power-normalised (``c^H c = 1``). Member
selection is deterministic so that a ``(family, length, n_mult)`` triple
always yields the same sequence matrix.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from cdma_otfs.errors import CapacityError, InvalidParameterError


class Family(str, enum.Enum):
    GOLD = "Gold"
    HADAMARD = "Hadamard"
    ZADOFF_CHU = "ZadoffChu"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "").replace("_", "").lower()
        aliases = {"gold": cls.GOLD, "hadamard": cls.HADAMARD, "had": cls.HADAMARD,
                   "zadoffchu": cls.ZADOFF_CHU, "zc": cls.ZADOFF_CHU}
        try:
            return aliases[key]
        except KeyError:
            raise InvalidParameterError(f"unknown sequence family {name!r}") from None


@dataclass(frozen=True, eq=False)
class Sequence:
    values: np.ndarray
    family: Family
    family_index: int

    @property
    def length(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class SequenceMatrix:
    columns: tuple
    family: Family
    # Gold-only bookkeeping: register degree and polynomial pair used.
    meta: dict = field(default_factory=dict)

    @property
    def n_mult(self):
        return len(self.columns)

    @property
    def length(self):
        return self.columns[0].length

    def as_array(self):
        """Columns stacked into a ``length x n_mult`` complex matrix."""
        return np.stack([c.values for c in self.columns], axis=1)


def _normalise(values):
    values = np.asarray(values, dtype=complex)
    return values / np.sqrt(np.vdot(values, values).real)


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# Hadamard
# ---------------------------------------------------------------------------

def gen_hadamard(order, index):
    """Row ``index`` of the Sylvester-Hadamard matrix, scaled by 1/sqrt(order).

    Row 0 is the all-ones sequence.
    """
    if not _is_power_of_two(order):
        raise InvalidParameterError(f"Hadamard order must be a power of two, got {order}")
    if not 0 <= index < order:
        raise InvalidParameterError(f"Hadamard index {index} outside [0, {order})")
    row = hadamard(order)[index]
    return Sequence(row.astype(complex) / math.sqrt(order), Family.HADAMARD, index)


# ---------------------------------------------------------------------------
# Zadoff-Chu
# ---------------------------------------------------------------------------

def gen_zadoff_chu(length, root=1, shift=0):
    """Zadoff-Chu sequence of the given root, cyclically shifted by ``shift``.

    Chip ``n`` of the unshifted sequence is
    ``exp(-j*pi*root*n*(n + d)/length) / sqrt(length)`` with ``d = length % 2``.
    The shifted sequence is ``z[(n + shift) % length]``.
    """
    if length < 1:
        raise InvalidParameterError(f"Zadoff-Chu length must be positive, got {length}")
    if math.gcd(root, length) != 1:
        raise InvalidParameterError(
            f"Zadoff-Chu root {root} is not coprime with length {length}")
    if not 0 <= shift < length:
        raise InvalidParameterError(f"cyclic shift {shift} outside [0, {length})")
    n = np.arange(length)
    # n*(n+d) is computed in integers modulo 2*length to keep the phase exact
    # for long sequences.
    q = (root * n * (n + length % 2)) % (2 * length)
    z = np.exp(-1j * np.pi * q / length) / math.sqrt(length)
    return Sequence(np.roll(z, -shift), Family.ZADOFF_CHU, shift)


# ---------------------------------------------------------------------------
# Gold
# ---------------------------------------------------------------------------

# Feedback taps per register degree. A tap tuple ``t`` denotes the recurrence
# a[i+n] = a[i] ^ XOR_{k in t} a[i+k], i.e. the polynomial x^n + sum x^k + 1.
# Degrees 4, 8 and 12 have no preferred pair; the entries there are the
# m-sequence pairs with the smallest peak cross-correlation found by search.
GOLD_PAIRS = {
    3: ((1,), (2,)),
    4: ((1,), (3,)),
    5: ((2,), (1, 2, 3)),
    6: ((1,), (1, 2, 5)),
    7: ((1,), (3,)),
    8: ((1, 2, 7), (1, 5, 6)),
    9: ((4,), (1, 3, 4)),
    10: ((3,), (1, 3, 7)),
    11: ((2,), (1, 3, 5)),
    12: ((1, 2, 8), (4, 10, 11)),
}
PREFERRED_DEGREES = frozenset({3, 5, 6, 7, 9, 10, 11})


def lfsr_period(degree, taps):
    """Number of steps before the all-ones register state recurs."""
    taps = tuple(taps)
    state = (1 << degree) - 1
    start = state
    for step in range(1, 1 << degree):
        bit = state & 1
        for k in taps:
            bit ^= (state >> k) & 1
        state = (state >> 1) | (bit << (degree - 1))
        if state == start:
            return step
    return None


def is_maximal(degree, taps):
    return lfsr_period(degree, taps) == (1 << degree) - 1


def m_sequence(degree, taps):
    """Binary m-sequence of length 2^degree - 1 starting from the all-ones state."""
    if not is_maximal(degree, taps):
        raise InvalidParameterError(
            f"taps {tuple(taps)} do not give a maximal-length sequence at degree {degree}")
    length = (1 << degree) - 1
    a = np.zeros(length + degree, dtype=np.uint8)
    a[:degree] = 1
    for i in range(length):
        bit = a[i]
        for k in taps:
            bit ^= a[i + k]
        a[i + degree] = bit
    return a[:length]


def gold_family(degree, pair=None):
    """Full binary Gold family as a ``(2^degree + 1) x (2^degree - 1)`` array.

    Row 0 and 1 are the two m-sequences, row ``2 + k`` is their XOR with the
    second sequence advanced by ``k`` chips.
    """
    if pair is None:
        try:
            pair = GOLD_PAIRS[degree]
        except KeyError:
            raise InvalidParameterError(f"no Gold polynomial pair tabulated for degree {degree}") from None
    u = m_sequence(degree, pair[0])
    v = m_sequence(degree, pair[1])
    length = u.size
    shifts = (np.arange(length)[:, None] + np.arange(length)[None, :]) % length
    return np.vstack([u, v, u[None, :] ^ v[shifts]])


def gold_degree_for(length):
    """Largest register degree whose code length 2^k - 1 does not exceed ``length``."""
    degree = (length + 1).bit_length() - 1
    if degree < 3:
        raise InvalidParameterError(f"Gold codes need a spreading length >= 7, got {length}")
    return degree


def _pad_cyclic(chips, target):
    if target < chips.size:
        raise InvalidParameterError("target length shorter than the code")
    reps = -(-target // chips.size)
    return np.tile(chips, reps)[:target]


def gen_gold(degree, pair=None, index=0, length=None, _family=None):
    """Gold family member ``index`` mapped to +/-1, padded to ``length`` and normalised.

    Padding appends the leading chips again (cyclic extension).
    """
    if degree < 3:
        raise InvalidParameterError(f"Gold register degree must be >= 3, got {degree}")
    size = (1 << degree) + 1
    if not 0 <= index < size:
        raise InvalidParameterError(f"Gold index {index} outside [0, {size})")
    family = gold_family(degree, pair) if _family is None else _family
    chips = 1.0 - 2.0 * family[index]
    if length is not None:
        chips = _pad_cyclic(chips, length)
    return Sequence(_normalise(chips), Family.GOLD, index)


# ---------------------------------------------------------------------------
# Sequence matrix
# ---------------------------------------------------------------------------

def family_capacity(family, length):
    family = Family.parse(family)
    if family is Family.HADAMARD:
        if not _is_power_of_two(length):
            raise InvalidParameterError(f"Hadamard order must be a power of two, got {length}")
        return length
    if family is Family.ZADOFF_CHU:
        return length
    return (1 << gold_degree_for(length)) + 1


def build_sequence_matrix(family, length, n_mult):
    """Select members ``0..n_mult-1`` of ``family`` at spreading length ``length``."""
    family = Family.parse(family)
    capacity = family_capacity(family, length)
    if n_mult < 1:
        raise InvalidParameterError(f"n_mult must be >= 1, got {n_mult}")
    if n_mult > capacity:
        raise CapacityError(family.value, length, n_mult, capacity)

    meta = {}
    if family is Family.HADAMARD:
        cols = [gen_hadamard(length, i) for i in range(n_mult)]
    elif family is Family.ZADOFF_CHU:
        cols = [gen_zadoff_chu(length, 1, s) for s in range(n_mult)]
    else:
        degree = gold_degree_for(length)
        pair = GOLD_PAIRS[degree]
        fam = gold_family(degree, pair)
        cols = [gen_gold(degree, pair, i, length, _family=fam) for i in range(n_mult)]
        meta = {"gold_degree": degree, "gold_taps": [list(p) for p in pair],
                "gold_preferred_pair": degree in PREFERRED_DEGREES,
                "gold_padding": length - ((1 << degree) - 1)}
    return SequenceMatrix(tuple(cols), family, meta)


def write_sequence_csv(matrix, path):
    """One column per sequence, each cell ``"re,im"``."""
    arr = matrix.as_array()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"{matrix.family.value}_{c.family_index}" for c in matrix.columns])
        for row in arr:
            writer.writerow([f"{float(v.real)!r},{float(v.imag)!r}" for v in row])
