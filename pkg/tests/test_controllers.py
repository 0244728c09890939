import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoon_mrac.barrier import BarrierViolation
from platoon_mrac.controllers import (
    LeaderAdaptiveState,
    baseline_follower_dudt,
    baseline_leader_dudt,
    follower_adaptive_input,
    follower_gain_update,
    ideal_follower_gain,
    ideal_leader_gains,
    leader_adaptive_input,
    leader_gain_updates,
    spacing_error_rate,
)
from platoon_mrac.matrices import B_U, B_U_LEADER, a_c, a_follower, a_leader, a_m, a_m0_reduced
from platoon_mrac.model import ControllerGains, VehicleParams

E = np.eye(4)


def test_ideal_follower_gain_examples():
    assert np.array_equal(ideal_follower_gain(0.1, 1.0, 0.1), np.zeros(4))
    assert np.allclose(ideal_follower_gain(0.2, 1.0, 0.1), [0, 0, -1, 1])
    assert np.allclose(ideal_follower_gain(0.2, 2.0, 0.1), [0, 0, -0.5, 0])
    with pytest.raises(ValueError):
        ideal_follower_gain(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        ideal_follower_gain(0.1, -1.0, 0.1)


def test_ideal_leader_gain_examples():
    kx, _ = ideal_leader_gains(0.1, 1.0, 0.1, -1.0, -2.0, 0.0)
    assert np.array_equal(kx, np.zeros(3))
    kx, _ = ideal_leader_gains(0.2, 2.0, 0.1, -1.0, -2.0, 0.0)
    assert np.allclose(kx, [0, -0.5, 0])
    # the value that zeroes the residual of the error-matrix matching condition
    _, kxt = ideal_leader_gains(0.1, 1.0, 0.1, -1.0, -10.0, 0.0)
    assert np.allclose(kxt, [-0.1, 0.0, -1.0])
    with pytest.raises(ValueError):
        ideal_leader_gains(0.1, 0.0, 0.1, -1.0, -2.0, 0.0)


@given(st.floats(0.05, 0.5), st.floats(0.5, 2.0), st.floats(0.05, 0.5),
       st.floats(-5, -0.1), st.floats(-20, -0.1), st.floats(-2, 2))
def test_matching_residuals(tau, lam, tau_bar, acv, aca, acu):
    g = ControllerGains(tau_bar=tau_bar, k_d=1.0, a_c_v=acv, a_c_a=aca, a_c_u=acu)
    p = VehicleParams(tau, lam)
    k = ideal_follower_gain(tau, lam, tau_bar)
    assert np.abs(a_follower(p, g) + p.theta * np.outer(B_U, k) - a_m(g)).max() < 1e-10
    kx, kxt = ideal_leader_gains(tau, lam, tau_bar, acv, aca, acu)
    assert np.abs(a_leader(p, g) + p.theta * np.outer(B_U_LEADER, kx) - a_m0_reduced(g)).max() < 1e-10
    assert np.abs(a_m0_reduced(g) + p.theta * np.outer(B_U_LEADER, kxt) - a_c(g)).max() < 1e-10


def test_baseline_laws():
    g = ControllerGains()
    assert baseline_follower_dudt(0, 0, 0, 0, g) == 0
    assert baseline_follower_dudt(0.0, 0.0, 0.0, 1.0, ControllerGains(h=1.0)) == 1.0
    assert baseline_leader_dudt(0.3, 0.3, g) == 0
    assert baseline_leader_dudt(0.0, 1.0, ControllerGains(h=0.5)) == 2.0
    assert baseline_leader_dudt(1.0, 0.0, ControllerGains(h=1.0)) == -1.0
    assert spacing_error_rate(20.0, 19.0, 1.0, 0.5) == 0.5


def test_baseline_matches_matrix_row():
    g = ControllerGains()
    x = np.array([0.3, 19.0, 0.2, -0.1])
    w = np.array([20.0, 0.4])  # (v_prev, u_prev)
    e_dot = spacing_error_rate(w[0], x[1], x[2], g.h)
    row = a_m(g)[3] @ x + (g.k_d / g.h) * w[0] + w[1] / g.h
    assert baseline_follower_dudt(x[3], x[0], e_dot, w[1], g) == pytest.approx(row, rel=1e-14)


def test_adaptive_inputs():
    assert follower_adaptive_input(np.zeros(4), [1, 2, 3, 4]) == 0
    assert follower_adaptive_input([0, 0, -1, 1], [0, 10, 1, 2]) == 1
    assert follower_adaptive_input(E[2], [0, 0, 5, 0]) == 5
    st0 = LeaderAdaptiveState()
    assert leader_adaptive_input(st0, [1, 2, 3], [1, 1, 1]) == 0
    st1 = LeaderAdaptiveState(np.array([0.0, -0.5, 0.0]), np.zeros(3))
    assert leader_adaptive_input(st1, [10, 2, 0], np.zeros(3)) == -1
    st2 = LeaderAdaptiveState(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    assert leader_adaptive_input(st2, np.zeros(3), [0.2, 0, 0]) == pytest.approx(0.2)


def test_follower_update_examples():
    I = np.eye(4)
    assert np.array_equal(follower_gain_update(None, [1, 2, 3, 4], np.zeros(4), I, 1.0, I), np.zeros(4))
    assert np.array_equal(follower_gain_update(None, np.zeros(4), 0.5 * E[2], I, 1.0, I), np.zeros(4))
    got = follower_gain_update(None, E[0], 0.5 * E[2], I, 1.0, I)
    assert np.allclose(got, -1.5 * E[0])
    with pytest.raises(BarrierViolation):
        follower_gain_update(None, E[0], 1.2 * E[2], I, 1.0, I)


def test_leader_update_examples():
    I = np.eye(3)
    st0 = LeaderAdaptiveState()
    dk, dkt = leader_gain_updates(st0, [1, 2, 3], np.zeros(3), I, 1.0, I, I)
    assert not dk.any() and not dkt.any()
    e = np.eye(3)
    dk, dkt = leader_gain_updates(st0, e[0], 0.5 * e[1], I, 1.0, I, I)
    assert np.allclose(dk, -1.5 * e[0])
    assert np.allclose(dkt, -0.75 * e[1])
    dk, dkt = leader_gain_updates(st0, np.zeros(3), 0.5 * e[1], I, 1.0, I, I)
    assert not dk.any() and np.allclose(dkt, -0.75 * e[1])
    # the error-gain law uses its own adaptation matrix
    dk, dkt = leader_gain_updates(st0, e[0], 0.5 * e[1], I, 1.0, I, 2 * I)
    assert np.allclose(dkt, -1.5 * e[1])
    with pytest.raises(BarrierViolation):
        leader_gain_updates(st0, e[0], 2.0 * e[1], I, 1.0, I, I)
