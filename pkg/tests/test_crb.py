import math

import pytest

from cdma_otfs.constants import SPEED_OF_LIGHT
from cdma_otfs.crb import CrbInputs, crb_range, crb_velocity
from cdma_otfs.errors import DomainError
from cdma_otfs.frame import GridConfig

C0 = SPEED_OF_LIGHT


def make(N0=1.0, P=1.0, g=1.0, M=64, N=64, f_c=40e9):
    return CrbInputs(N0, P, g, GridConfig(M=M, N=N, f_c=f_c))


def test_range_reference_value():
    # direct evaluation: sqrt(1/(pi^2 * 64 * 64 * 63^2)) * c0 / (2 * 120e3)
    expected = math.sqrt(1 / (math.pi**2 * 64 * 64 * 63**2)) * C0 / 2.4e5
    assert math.isclose(crb_range(make()), expected, rel_tol=1e-12)
    assert math.isclose(expected, 0.09857, rel_tol=1e-3)


def test_velocity_reference_value():
    expected = math.sqrt(1 / (math.pi**2 * 64 * 64 * 63**2)) * C0 * 120e3 / (2 * 40e9)
    assert math.isclose(crb_velocity(make()), expected, rel_tol=1e-12)


def test_sqrt_noise_scaling():
    assert math.isclose(crb_range(make(N0=2.0)) / crb_range(make()), math.sqrt(2), rel_tol=1e-12)


def test_velocity_inverse_in_carrier():
    assert math.isclose(crb_velocity(make(f_c=80e9)), crb_velocity(make()) / 2, rel_tol=1e-12)


def test_axis_swap_ratio():
    a = crb_velocity(make(M=32, N=64))
    b = crb_range(make(M=64, N=32))
    assert math.isclose(a / b, 120e3**2 / 40e9, rel_tol=1e-12)


def test_strictly_decreasing_in_grid_size():
    r = [crb_range(make(M=m)) for m in (8, 16, 32, 64)]
    v = [crb_velocity(make(N=n)) for n in (8, 16, 32, 64)]
    assert all(a > b for a, b in zip(r, r[1:]))
    assert all(a > b for a, b in zip(v, v[1:]))


@pytest.mark.parametrize("fn", [crb_range, crb_velocity])
def test_monotone_in_inputs(fn):
    base = fn(make(N0=1.0, P=1.0, g=1.0))
    assert fn(make(N0=1.5)) > base
    assert fn(make(P=1.5)) < base
    assert fn(make(g=1.5)) < base
    assert base > 0


@pytest.mark.parametrize("bad", [dict(N0=0.0), dict(P=-1.0), dict(g=float("inf")), dict(N0=float("nan"))])
def test_domain_errors(bad):
    with pytest.raises(DomainError):
        make(**bad)
