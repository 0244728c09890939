import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoon_mrac.barrier import (
    BarrierSpec,
    BarrierViolation,
    check_blf_conditions,
    psi,
    psi_prime,
    weighted_norm,
)


def test_psi_values():
    assert psi(0.0, 1.0) == 0.0
    assert psi(0.5, 1.0) == pytest.approx(0.5)
    assert psi(1.0, 4.0) == pytest.approx(1.0 / 3.0)


def test_psi_prime_values():
    # derivative with respect to r^2
    assert psi_prime(0.0, 2.0) == 0.5
    assert psi_prime(0.5, 1.0) == pytest.approx(3.0)
    assert psi_prime(0.25, 1.0) == pytest.approx(1.75 / (2 * 0.75 ** 2))


@given(st.floats(0.1, 10.0), st.floats(0.01, 0.99))
def test_psi_prime_is_derivative_in_r_squared(c, frac):
    r = frac * c
    q = r * r
    dq = 1e-6 * q
    fd = (psi(math.sqrt(q + dq), c) - psi(math.sqrt(q - dq), c)) / (2 * dq)
    assert psi_prime(r, c) == pytest.approx(fd, rel=1e-5)


@given(st.floats(0.1, 10.0), st.floats(0.0, 0.999))
def test_psi_prime_lower_bound(c, frac):
    assert psi_prime(frac * c, c) >= 1.0 / c


@given(st.floats(0.1, 10.0), st.floats(1e-6, 0.999))
def test_growth_condition(c, frac):
    r = frac * c
    assert 2 * psi_prime(r, c) * r * r - psi(r, c) > 0


def test_domain_errors():
    with pytest.raises(BarrierViolation) as exc:
        psi(1.0, 1.0)
    assert exc.value.r == 1.0 and exc.value.c == 1.0
    with pytest.raises(BarrierViolation):
        psi_prime(1.5, 1.0)
    with pytest.raises(ValueError):
        psi(-0.1, 1.0)
    with pytest.raises(ValueError):
        psi(0.1, 0.0)


def test_near_barrier_is_infinite():
    c = 1.0
    assert psi(c * (1 - 1e-13), c) == math.inf
    assert psi_prime(c * (1 - 1e-13), c) == math.inf
    assert math.isfinite(psi(c * (1 - 1e-9), c))


def test_weighted_norm():
    M = np.diag([4.0, 1.0])
    assert weighted_norm([1.0, 0.0], M) == 2.0
    with pytest.raises(ValueError, match="dimension"):
        weighted_norm([1.0, 0.0, 0.0], M)
    with pytest.raises(ValueError, match="positive definite"):
        weighted_norm([1.0, 0.0], np.diag([1.0, -1.0]))


def test_barrier_spec():
    spec = BarrierSpec(2.0, np.eye(2))
    assert spec.norm([0.6, 0.8]) == pytest.approx(1.0)
    assert spec.psi([0.6, 0.8]) == pytest.approx(1.0)
    assert spec.psi_prime([0.6, 0.8]) == pytest.approx(3.0 / 2.0)
    with pytest.raises(ValueError):
        BarrierSpec(0.0, np.eye(2))
    with pytest.raises(ValueError):
        BarrierSpec(1.0, np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("c", [0.5, 1.0, 5.0])
def test_blf_conditions_hold(c):
    rep = check_blf_conditions(c, np.linspace(0, 0.999 * c, 1000))
    assert rep.passed, rep.conditions
    assert rep.n_points == 1000
    assert rep.details["min_psi_prime"] == pytest.approx(1.0 / c)


def test_blf_conditions_detect_bounded_candidate():
    # a plain quadratic is not a barrier: it stays bounded at r -> c
    rep = check_blf_conditions(1.0, np.linspace(0, 0.99, 100),
                               psi_fn=lambda r, c: r * r, psi_prime_fn=lambda r, c: 1.0)
    assert not rep.conditions["iii_unbounded_at_barrier"]
    assert not rep.passed


def test_blf_grid_must_lie_inside():
    with pytest.raises(ValueError):
        check_blf_conditions(1.0, [0.0, 1.0])
