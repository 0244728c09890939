"""State-space matrices of the actual, reference and virtual platoons.

Follower states are ``(e, v, a, u_bl)``; the predecessor signal is
``w = (v_prev, u_bl_prev)``. Leader matrices come in the full 4-state form
(with the fictitious zero spacing error) and the reduced ``(v, a, u_bl)`` form.
"""

import numpy as np

# adaptive input enters the acceleration row
B_U = np.array([0.0, 0.0, 1.0, 0.0])
B_U_LEADER = np.array([0.0, 1.0, 0.0])


def a_m(g):
    """Homogeneous closed-loop follower matrix (nominal ``tau_bar``, unit efficiency)."""
    h, kp, kd, tb = g.h, g.k_p, g.k_d, g.tau_bar
    return np.array([
        [0.0, -1.0, -h, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0 / tb, 1.0 / tb],
        [kp / h, -kd / h, -kd, -1.0 / h],
    ])


def b_w(g):
    return np.array([
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 0.0],
        [g.k_d / g.h, 1.0 / g.h],
    ])


def a_follower(params, g):
    """Actual follower matrix with the true engine lag and efficiency."""
    A = a_m(g)
    A[2, 2] = -1.0 / params.tau
    A[2, 3] = params.lam / params.tau
    return A


def a_m0(g):
    """Virtual/reference leader matrix in the full 4-state form."""
    tb = g.tau_bar
    return np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0 / tb, 1.0 / tb],
        [0.0, 0.0, 0.0, -1.0 / g.h],
    ])


def b_r(g):
    return np.array([0.0, 0.0, 0.0, 1.0 / g.h])


def a_m0_reduced(g):
    return a_m0(g)[1:, 1:]


def b_r_reduced(g):
    return b_r(g)[1:]


def a_leader(params, g):
    """Actual leader matrix, reduced form."""
    A = a_m0_reduced(g)
    A[1, 1] = -1.0 / params.tau
    A[1, 2] = params.lam / params.tau
    return A


def a_c(g):
    """Target matrix of the leader's tracking-error dynamics."""
    return np.array([
        [0.0, 1.0, 0.0],
        [g.a_c_v, g.a_c_a, g.a_c_u],
        [0.0, 0.0, -1.0 / g.h],
    ])


def b_w_bar(g):
    """``B_w`` columns spread over the 4-state predecessor vector."""
    B = b_w(g)
    out = np.zeros((4, 4))
    out[:, 1] = B[:, 0]
    out[:, 3] = B[:, 1]
    return out
