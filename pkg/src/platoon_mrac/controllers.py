"""Baseline CACC law and the barrier-weighted adaptive augmentations.

All functions return time derivatives or instantaneous inputs; the integrator
lives in :mod:`platoon_mrac.engine`.
"""

from dataclasses import dataclass, field

import numpy as np

from .barrier import BarrierViolation, psi_prime, weighted_norm
from .matrices import B_U, B_U_LEADER

__all__ = [
    "FollowerAdaptiveState",
    "LeaderAdaptiveState",
    "ideal_follower_gain",
    "ideal_leader_gains",
    "baseline_follower_dudt",
    "baseline_leader_dudt",
    "spacing_error_rate",
    "follower_adaptive_input",
    "follower_gain_update",
    "leader_adaptive_input",
    "leader_gain_updates",
]


@dataclass(frozen=True)
class FollowerAdaptiveState:
    k_hat: np.ndarray = field(default_factory=lambda: np.zeros(4))


@dataclass(frozen=True)
class LeaderAdaptiveState:
    k_hat_x0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k_hat_xt0: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _require_positive(**kw):
    for name, value in kw.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def ideal_follower_gain(tau_j, lambda_j, tau_bar):
    """Gain that makes the actual follower matrix equal the reference one."""
    _require_positive(tau_j=tau_j, lambda_j=lambda_j, tau_bar=tau_bar)
    d = lambda_j * tau_bar
    return np.array([0.0, 0.0, (tau_bar - tau_j) / d, (tau_j - lambda_j * tau_bar) / d])


def ideal_leader_gains(tau_0, lambda_0, tau_bar, a_c_v, a_c_a, a_c_u):
    """Ideal leader gains on the state and on the tracking error.

    The first places the actual leader on the reference leader dynamics; the
    second then shapes the tracking-error matrix into ``A_c``.
    """
    _require_positive(tau_0=tau_0, lambda_0=lambda_0, tau_bar=tau_bar)
    d = lambda_0 * tau_bar
    k_x = np.array([0.0, (tau_bar - tau_0) / d, (tau_0 - lambda_0 * tau_bar) / d])
    k_xt = np.array([
        tau_0 * a_c_v / lambda_0,
        (tau_bar * a_c_a + 1.0) * tau_0 / d,
        (tau_bar * a_c_u - 1.0) * tau_0 / d,
    ])
    return k_x, k_xt


def spacing_error_rate(v_prev, v_j, a_j, h):
    """``de/dt`` from the spacing kinematics (no numerical differentiation)."""
    return v_prev - v_j - h * a_j


def baseline_follower_dudt(u_bl_j, e_j, e_dot_j, u_bl_prev, gains):
    return (-u_bl_j + gains.k_p * e_j + gains.k_d * e_dot_j + u_bl_prev) / gains.h


def baseline_leader_dudt(u_bl_0, u_in, gains):
    return (-u_bl_0 + u_in) / gains.h


def follower_adaptive_input(k_hat, x_j):
    return float(np.dot(k_hat, x_j))


def _barrier_weight(x_tilde, P, c, who):
    r = weighted_norm(x_tilde, P, check=False)
    if r >= c:
        raise BarrierViolation(r, c, who)
    return psi_prime(r, c)


def follower_gain_update(k_hat, x_j, x_tilde_j, P_m, c, Gamma):
    """``dk_hat/dt = -Gamma psi'(||x~||_Pm) x (x~^T Pm B_u)``.

    ``k_hat`` does not enter the law; it is accepted so callers can pass the
    full adaptive state uniformly.
    """
    x_j = np.asarray(x_j, dtype=float)
    x_tilde_j = np.asarray(x_tilde_j, dtype=float)
    w = _barrier_weight(x_tilde_j, P_m, c, "follower")
    proj = float(x_tilde_j @ P_m @ B_U)
    return -np.asarray(Gamma) @ (w * proj * x_j)


def leader_adaptive_input(st, x0, x_tilde0):
    return float(np.dot(st.k_hat_x0, x0) + np.dot(st.k_hat_xt0, x_tilde0))


def leader_gain_updates(st, x0, x_tilde0, P_m0, c, Gamma_x0, Gamma_xt0):
    """Update laws for both leader gains; regressors are the state and the error.

    The error-gain law uses its own adaptation matrix ``Gamma_xt0``, which is
    what the matching Lyapunov function needs. Both default to the same value.
    """
    x0 = np.asarray(x0, dtype=float)
    x_tilde0 = np.asarray(x_tilde0, dtype=float)
    w = _barrier_weight(x_tilde0, P_m0, c, "leader")
    proj = float(x_tilde0 @ P_m0 @ B_U_LEADER)
    dk_x = -np.asarray(Gamma_x0) @ (w * proj * x0)
    dk_xt = -np.asarray(Gamma_xt0) @ (w * proj * x_tilde0)
    return dk_x, dk_xt
