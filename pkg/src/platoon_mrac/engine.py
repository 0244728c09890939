"""Coupled simulation of the actual (AP), reference (RP) and virtual (VP) platoons.

The AP is the heterogeneous vehicle string under baseline plus adaptive
control. The RP is the homogeneous model each adaptive law tracks; it is fed
the *actual* predecessor signals. The VP is homogeneous too but fed only by
its own predecessors and ``u_in``; it never touches the other two layers.

All layers and adaptive gains advance together in one RK4 step of the
stacked right-hand side, so every cross-coupling is evaluated at the same
stage values.
"""

import csv
import io
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernel
from .controllers import (
    LeaderAdaptiveState,
    follower_adaptive_input,
    follower_gain_update,
    ideal_follower_gain,
    ideal_leader_gains,
    leader_adaptive_input,
    leader_gain_updates,
)
from .matrices import (
    B_U,
    B_U_LEADER,
    a_c,
    a_follower,
    a_leader,
    a_m,
    a_m0,
    b_r,
    b_r_reduced,
    b_w,
    b_w_bar,
)
from .model import validate_scenario
from .numerics import NumericsError, is_hurwitz, solve_lyapunov

LOG = logging.getLogger(__name__)

__all__ = [
    "SimulationAbort",
    "SimState",
    "Trajectory",
    "LyapunovWeights",
    "lyapunov_weights",
    "vp_follower_derivative",
    "vp_leader_derivative",
    "rp_follower_derivative",
    "ap_follower_derivative",
    "ap_leader_derivative",
    "stacked_derivative",
    "initial_state",
    "initial_barrier_norms",
    "step",
    "run",
    "assemble_interconnected",
    "DEFAULT_DECIMATION",
]

DEFAULT_DECIMATION = 10


class SimulationAbort(RuntimeError):
    """A runtime monitor stopped the simulation.

    ``vehicle`` is the offending index (0 = leader), ``t`` the stage time and
    ``norm`` the weighted tracking-error norm that reached the barrier.
    ``trajectory`` holds the samples recorded before the abort.
    """

    def __init__(self, message, vehicle=None, t=None, norm=None, trajectory=None):
        super().__init__(message)
        self.vehicle = vehicle
        self.t = t
        self.norm = norm
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# Lyapunov weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LyapunovWeights:
    """Solutions ``P_m`` (follower, 4x4) and ``P_m0`` (leader, 3x3)."""

    p_m: np.ndarray
    p_m0: np.ndarray


@lru_cache(maxsize=64)
def _weights_cached(h, kp, kd, tb, acv, aca, acu, qm, qc):
    from .model import ControllerGains

    g = ControllerGains(h=h, k_p=kp, k_d=kd, tau_bar=tb, a_c_v=acv, a_c_a=aca, a_c_u=acu)
    qm = np.array(qm).reshape(4, 4)
    qc = np.array(qc).reshape(3, 3)
    return solve_lyapunov(a_m(g), qm), solve_lyapunov(a_c(g), qc)


def lyapunov_weights(gains):
    """Solve both design Lyapunov equations for ``gains`` (cached)."""
    pm, pm0 = _weights_cached(
        gains.h, gains.k_p, gains.k_d, gains.tau_bar, gains.a_c_v, gains.a_c_a, gains.a_c_u,
        tuple(gains.q_m.ravel()), tuple(gains.q_c.ravel()),
    )
    return LyapunovWeights(pm.copy(), pm0.copy())


# ---------------------------------------------------------------------------
# per-layer derivatives
# ---------------------------------------------------------------------------

def vp_follower_derivative(x_vj, w_prev, gains):
    """Virtual follower: ``A_m x + B_w w`` with the virtual predecessor signals."""
    return a_m(gains) @ np.asarray(x_vj, dtype=float) + b_w(gains) @ np.asarray(w_prev, dtype=float)


def vp_leader_derivative(x_v0, u_in, gains):
    return a_m0(gains) @ np.asarray(x_v0, dtype=float) + b_r(gains) * u_in


def rp_follower_derivative(x_rj, w_prev_actual, gains):
    """Reference follower: same matrices as the virtual one, actual predecessor input."""
    return vp_follower_derivative(x_rj, w_prev_actual, gains)


def ap_follower_derivative(x_j, w_prev, u_ad, params_j, gains):
    x_j = np.asarray(x_j, dtype=float)
    return (a_follower(params_j, gains) @ x_j + b_w(gains) @ np.asarray(w_prev, dtype=float)
            + B_U * params_j.theta * u_ad)


def ap_leader_derivative(x0_reduced, u_ad0, u_in, params_0, gains):
    x0 = np.asarray(x0_reduced, dtype=float)
    return (a_leader(params_0, gains) @ x0 + B_U_LEADER * params_0.theta * u_ad0
            + b_r_reduced(gains) * u_in)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimState:
    """Stacked state of all three platoons plus the adaptive gains at time ``t``.

    ``ap``, ``rp``, ``vp`` are ``(N+1, 4)``; leader rows carry ``e = 0`` and
    ``rp[0]`` always equals ``vp[0]``.
    """

    t: float
    ap: np.ndarray
    rp: np.ndarray
    vp: np.ndarray
    k_follower: np.ndarray
    k_leader_x: np.ndarray
    k_leader_xt: np.ndarray

    @property
    def n_followers(self):
        return self.ap.shape[0] - 1

    @property
    def leader_gains(self):
        return LeaderAdaptiveState(self.k_leader_x.copy(), self.k_leader_xt.copy())

    @property
    def x_tilde(self):
        """Follower tracking errors ``AP - RP`` as an ``(N, 4)`` array."""
        return self.ap[1:] - self.rp[1:]

    @property
    def x_tilde_leader(self):
        return self.ap[0, 1:] - self.vp[0, 1:]

    def to_vector(self):
        return np.concatenate([
            self.vp.ravel(), self.rp[1:].ravel(), self.ap.ravel(),
            self.k_follower.ravel(), self.k_leader_x, self.k_leader_xt,
        ]).astype(float)

    @classmethod
    def from_vector(cls, x, n, t):
        vp0, rp0, ap0, kf0, kl0, dim = _kernel.layout(n)
        x = np.asarray(x, dtype=float)
        if x.size != dim:
            raise ValueError(f"state vector for N={n} needs {dim} entries, got {x.size}")
        vp = x[vp0:rp0].reshape(n + 1, 4).copy()
        rp = np.vstack([vp[:1], x[rp0:ap0].reshape(n, 4)])
        ap = x[ap0:kf0].reshape(n + 1, 4).copy()
        return cls(t=float(t), ap=ap, rp=rp, vp=vp,
                   k_follower=x[kf0:kl0].reshape(n, 4).copy(),
                   k_leader_x=x[kl0:kl0 + 3].copy(), k_leader_xt=x[kl0 + 3:kl0 + 6].copy())


def initial_state(scenario):
    """Time-zero state: VP and RP from the reference initial states, zero gains."""
    n = scenario.n_followers
    xv = np.array(scenario.reference_initial_states, dtype=float)
    return SimState(
        t=0.0,
        ap=np.array(scenario.initial_states, dtype=float),
        rp=xv.copy(),
        vp=xv.copy(),
        k_follower=np.zeros((n, 4)),
        k_leader_x=np.zeros(3),
        k_leader_xt=np.zeros(3),
    )


def initial_barrier_norms(scenario):
    """Weighted norms of the initial follower and leader tracking errors."""
    w = lyapunov_weights(scenario.gains)
    xt = scenario.initial_tracking_errors
    fn = [float(np.sqrt(max(x @ w.p_m @ x, 0.0))) for x in xt[1:]]
    l0 = xt[0, 1:]
    return fn, float(np.sqrt(max(l0 @ w.p_m0 @ l0, 0.0)))


def stacked_derivative(t, x, scenario, weights=None):
    """Right-hand side of the whole stacked system, built from the per-layer
    functions above. Slow; the simulator uses the compiled equivalent."""
    n = scenario.n_followers
    g = scenario.gains
    w = weights or lyapunov_weights(g)
    s = SimState.from_vector(x, n, t)
    u_in = scenario.input_profile(t)
    d_vp = np.zeros((n + 1, 4))
    d_rp = np.zeros((n, 4))
    d_ap = np.zeros((n + 1, 4))
    d_kf = np.zeros((n, 4))

    d_vp[0] = vp_leader_derivative(s.vp[0], u_in, g)
    for j in range(1, n + 1):
        d_vp[j] = vp_follower_derivative(s.vp[j], s.vp[j - 1, [1, 3]], g)
        d_rp[j - 1] = rp_follower_derivative(s.rp[j], s.ap[j - 1, [1, 3]], g)

    lead = s.leader_gains
    x0 = s.ap[0, 1:]
    xt0 = s.x_tilde_leader
    u_ad0 = leader_adaptive_input(lead, x0, xt0)
    d_ap[0, 1:] = ap_leader_derivative(x0, u_ad0, u_in, scenario.vehicles[0], g)
    dkx, dkxt = leader_gain_updates(lead, x0, xt0, w.p_m0, g.c, g.gamma_leader_x, g.gamma_leader_xt)

    for j in range(1, n + 1):
        xj = s.ap[j]
        u_ad = follower_adaptive_input(s.k_follower[j - 1], xj)
        d_ap[j] = ap_follower_derivative(xj, s.ap[j - 1, [1, 3]], u_ad, scenario.vehicles[j], g)
        d_kf[j - 1] = follower_gain_update(
            s.k_follower[j - 1], xj, xj - s.rp[j], w.p_m, g.c, g.gamma_follower)

    return np.concatenate([d_vp.ravel(), d_rp.ravel(), d_ap.ravel(), d_kf.ravel(), dkx, dkxt])


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _kernel_args(scenario, weights):
    g = scenario.gains
    ts, us, mode = scenario.input_profile.arrays()
    tau = np.array([v.tau for v in scenario.vehicles], dtype=float)
    lam = np.array([v.lam for v in scenario.vehicles], dtype=float)
    return (
        scenario.n_followers, g.h, g.k_p, g.k_d, g.tau_bar, g.c, tau, lam,
        np.ascontiguousarray(weights.p_m), np.ascontiguousarray(weights.p_m0),
        np.ascontiguousarray(g.gamma_follower), np.ascontiguousarray(g.gamma_leader_x),
        np.ascontiguousarray(g.gamma_leader_xt), ts, us, mode,
    )


def _abort_message(status, info, n):
    if status == _kernel.NONFINITE:
        return f"non-finite derivative at state index {int(info[0])} (t={info[1]:.6g})"
    who = "leader" if status == 0 else f"follower {status}"
    norm = "P_m0" if status == 0 else "P_m"
    return (f"barrier breach at {who}, t={info[1]:.6g}: "
            f"||x~||_{norm} = {info[0]:.9g}")


def step(s, scenario, weights=None):
    """Advance ``s`` by one ``scenario.dt`` RK4 step.

    Raises
    ------
    SimulationAbort
        If a tracking error reaches its barrier at any stage.
    """
    w = weights or lyapunov_weights(scenario.gains)
    n = scenario.n_followers
    x0 = s.to_vector()
    out = np.empty((2, x0.size))
    info = np.zeros(2)
    status, _, _ = _kernel.integrate(x0, s.t, scenario.dt, 1, 1, out, info, *_kernel_args(scenario, w))
    if status != _kernel.OK:
        raise SimulationAbort(_abort_message(status, info, n),
                              vehicle=None if status < 0 else int(status), t=float(info[1]),
                              norm=float(info[0]) if status >= 0 else None)
    return SimState.from_vector(out[1], n, s.t + scenario.dt)


def run(scenario, decimate=DEFAULT_DECIMATION, check=True):
    """Simulate ``scenario`` from ``t = 0`` to ``t_end``.

    Every ``decimate``-th step (and the final one) is recorded.

    Raises
    ------
    ValueError
        If ``check`` is set and the scenario has validation errors.
    SimulationAbort
        On a barrier breach; the partial trajectory is attached.
    """
    if check:
        errors = [v for v in validate_scenario(scenario) if v.severity == "error"]
        if errors:
            raise ValueError("invalid scenario: " + "; ".join(str(v) for v in errors))
    decimate = int(decimate)
    if decimate < 1:
        raise ValueError("decimate must be >= 1")
    w = lyapunov_weights(scenario.gains)
    n = scenario.n_followers
    x0 = initial_state(scenario).to_vector()
    n_steps = scenario.n_steps
    n_samples = n_steps // decimate + 1 + (1 if n_steps % decimate else 0)
    samples = np.zeros((n_samples, x0.size))
    info = np.zeros(2)
    status, fail_step, written = _kernel.integrate(
        x0, 0.0, scenario.dt, n_steps, decimate, samples, info, *_kernel_args(scenario, w))
    steps = np.arange(n_samples) * decimate
    steps[-1] = min(steps[-1], n_steps)
    times = steps[:written] * scenario.dt
    traj = Trajectory.from_samples(scenario, times, samples[:written], w)
    if status != _kernel.OK:
        raise SimulationAbort(_abort_message(status, info, n),
                              vehicle=None if status < 0 else int(status), t=float(info[1]),
                              norm=float(info[0]) if status >= 0 else None, trajectory=traj)
    return traj


# ---------------------------------------------------------------------------
# trajectory
# ---------------------------------------------------------------------------

def _psi_vec(r, c):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r < c, r * r / (c - r), np.inf)
    return out


@dataclass(eq=False)
class Trajectory:
    """Uniformly sampled simulation output plus derived series.

    Arrays are indexed ``[sample, vehicle, ...]`` with vehicle 0 the leader.
    Leader entries use the ``P_m0``-weighted reduced error; ``spacing[:, 0]`` is
    NaN because the leader has no predecessor.
    """

    scenario: object
    t: np.ndarray
    ap: np.ndarray
    rp: np.ndarray
    vp: np.ndarray
    k_follower: np.ndarray
    k_leader: np.ndarray
    u_ad: np.ndarray
    spacing: np.ndarray
    xtilde_pm_norm: np.ndarray
    xtilde_norm: np.ndarray
    V: np.ndarray
    e_v: np.ndarray
    zbar_norm: np.ndarray

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else self.scenario.dt

    def state(self, k):
        """The ``SimState`` stored at sample ``k``."""
        return SimState(t=float(self.t[k]), ap=self.ap[k].copy(), rp=self.rp[k].copy(),
                        vp=self.vp[k].copy(), k_follower=self.k_follower[k].copy(),
                        k_leader_x=self.k_leader[k, :3].copy(), k_leader_xt=self.k_leader[k, 3:].copy())

    @property
    def final_vector(self):
        return self.state(-1).to_vector()

    @classmethod
    def from_samples(cls, scenario, times, samples, weights):
        n = scenario.n_followers
        g = scenario.gains
        vp0, rp0, ap0, kf0, kl0, _ = _kernel.layout(n)
        K = samples.shape[0]
        vp = samples[:, vp0:rp0].reshape(K, n + 1, 4)
        rp = np.concatenate([vp[:, :1], samples[:, rp0:ap0].reshape(K, n, 4)], axis=1)
        ap = samples[:, ap0:kf0].reshape(K, n + 1, 4)
        kf = samples[:, kf0:kl0].reshape(K, n, 4)
        kl = samples[:, kl0:kl0 + 6]

        xt = ap - rp
        xt_f = xt[:, 1:]
        xt_l = xt[:, 0, 1:]
        pm_norm = np.empty((K, n + 1))
        pm_norm[:, 0] = np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", xt_l, weights.p_m0, xt_l), 0.0))
        pm_norm[:, 1:] = np.sqrt(np.maximum(np.einsum("kni,ij,knj->kn", xt_f, weights.p_m, xt_f), 0.0))
        eu_norm = np.linalg.norm(xt, axis=2)

        u_ad = np.empty((K, n + 1))
        u_ad[:, 0] = np.einsum("ki,ki->k", kl[:, :3], ap[:, 0, 1:]) + np.einsum("ki,ki->k", kl[:, 3:], xt_l)
        u_ad[:, 1:] = np.einsum("kni,kni->kn", kf, ap[:, 1:])

        r = np.array([v.standstill for v in scenario.vehicles])
        spacing = np.full((K, n + 1), np.nan)
        spacing[:, 1:] = ap[:, 1:, 0] + r[1:] + g.h * ap[:, 1:, 1]

        V = np.empty((K, n + 1))
        p0 = scenario.vehicles[0]
        kx, kxt = ideal_leader_gains(p0.tau, p0.lam, g.tau_bar, g.a_c_v, g.a_c_a, g.a_c_u)
        dx = kl[:, :3] - kx
        dxt = kl[:, 3:] - kxt
        gxi = np.linalg.inv(g.gamma_leader_x)
        gxti = np.linalg.inv(g.gamma_leader_xt)
        V[:, 0] = 0.5 * _psi_vec(pm_norm[:, 0], g.c) + 0.5 * p0.theta * (
            np.einsum("ki,ij,kj->k", dx, gxi, dx) + np.einsum("ki,ij,kj->k", dxt, gxti, dxt))
        gfi = np.linalg.inv(g.gamma_follower)
        for j in range(1, n + 1):
            pj = scenario.vehicles[j]
            dk = kf[:, j - 1] - ideal_follower_gain(pj.tau, pj.lam, g.tau_bar)
            V[:, j] = 0.5 * _psi_vec(pm_norm[:, j], g.c) + 0.5 * pj.theta * np.einsum(
                "ki,ij,kj->k", dk, gfi, dk)

        zbar = vp - rp
        return cls(
            scenario=scenario, t=np.asarray(times, dtype=float),
            ap=ap.copy(), rp=rp, vp=vp.copy(), k_follower=kf.copy(), k_leader=kl.copy(),
            u_ad=u_ad, spacing=spacing, xtilde_pm_norm=pm_norm, xtilde_norm=eu_norm, V=V,
            e_v=vp[:, :, 0].copy(), zbar_norm=np.linalg.norm(zbar.reshape(K, -1), axis=1),
        )

    # -- plain-array views used by the certificates ---------------------------------

    @property
    def pseudo_spacing(self):
        """``s - r = e + h v`` for the actual followers, shape ``(K, N)``."""
        h = self.scenario.gains.h
        return self.ap[:, 1:, 0] + h * self.ap[:, 1:, 1]

    @property
    def virtual_pseudo_spacing(self):
        h = self.scenario.gains.h
        return self.vp[:, 1:, 0] + h * self.vp[:, 1:, 1]

    # -- CSV -----------------------------------------------------------

    CSV_FIELDS = ("e", "v", "a", "u_bl", "u_ad", "s_prev", "xtilde_pm_norm", "V", "e_v")

    def csv_header(self):
        cols = ["t"]
        for j in range(self.ap.shape[1]):
            cols.extend(f"{name}_{j}" for name in self.CSV_FIELDS)
        return cols

    def write_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.csv_header())
        n1 = self.ap.shape[1]
        for k in range(self.t.size):
            row = [f"{self.t[k]:.9g}"]
            for j in range(n1):
                vals = (self.ap[k, j, 0], self.ap[k, j, 1], self.ap[k, j, 2], self.ap[k, j, 3],
                        self.u_ad[k, j], self.spacing[k, j], self.xtilde_pm_norm[k, j],
                        self.V[k, j], self.e_v[k, j])
                row.extend(f"{x:.9g}" for x in vals)
            writer.writerow(row)

    def to_csv(self):
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# interconnected matrices
# ---------------------------------------------------------------------------

def assemble_interconnected(gains, n):
    """Block matrices of the interconnected virtual platoon and of the
    reference-minus-virtual error system.

    Returns ``(A_bar, B_bar, B_wt, A_bar_p, B_wt_p)``: ``A_bar`` is
    ``4(N+1)`` square with the leader block top-left and ``B_w_bar``/``A_m`` on
    the sub/main diagonal, ``B_bar`` injects ``u_in``, ``B_wt`` maps the stacked
    predecessor errors into the followers, and the primed pair drops the leader
    block.

    Raises
    ------
    NumericsError
        If the follower block ``A_bar_p`` is not Hurwitz.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one follower")
    Am, Am0, Bwb, Bw = a_m(gains), a_m0(gains), b_w_bar(gains), b_w(gains)
    size = 4 * (n + 1)
    A = np.zeros((size, size))
    A[:4, :4] = Am0
    for j in range(1, n + 1):
        A[4 * j:4 * j + 4, 4 * j:4 * j + 4] = Am
        A[4 * j:4 * j + 4, 4 * (j - 1):4 * j] = Bwb
    B = np.zeros((size, 1))
    B[:4, 0] = b_r(gains)
    Bwt = np.zeros((size, 2 * n))
    for j in range(1, n + 1):
        Bwt[4 * j:4 * j + 4, 2 * (j - 1):2 * j] = Bw
    Ap = A[4:, 4:].copy()
    Bp = Bwt[4:, :].copy()
    if not is_hurwitz(Ap):
        raise NumericsError("interconnected follower matrix is not Hurwitz; check the gains")
    return A, B, Bwt, Ap, Bp
