"""Closed-form guarantees of the design and trajectory audits against them.

Static certificates depend only on the gains: the stability inequalities of
the baseline loop, external positivity and string stability of the virtual
platoon, the Lyapunov weights, and the constants ``Omega`` and ``Z_bar`` that
size the minimum standstill distance. Every numeric field is stored with the
tolerance it was judged under.
"""

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .engine import assemble_interconnected, lyapunov_weights
from .matrices import a_c, a_m, a_m0, b_r, b_w_bar
from .numerics import (
    NumericsError,
    frequency_gain,
    impulse_responses,
    integrate_norm_expm,
    is_spd,
    lyapunov_residual,
    matrix_exponential,
    solve_lyapunov,
)

__all__ = [
    "RouthHurwitzResult",
    "LyapunovResult",
    "PositivityReport",
    "StringStabilityReport",
    "TrajectoryAudit",
    "CertificateReport",
    "check_routh_hurwitz",
    "external_positivity_certificate",
    "string_stability_certificate",
    "default_omega_grid",
    "compute_zbar",
    "compute_omega",
    "min_standstill_distance",
    "audit_trajectory",
    "spacing_chain_margin",
    "certify",
    "ZBAR_MODES",
]

ZBAR_MODES = ("paper", "sound")
POSITIVITY_TOL = 1e-9
STRING_GAIN_TOL = 1e-12
LYAPUNOV_TOL = 1e-9
V_RELATIVE_TOL = 1e-6


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# stability inequalities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RouthHurwitzResult:
    """Margins of ``h > 0``, ``k_p > 0``, ``k_d > 0`` and ``k_d - tau_bar k_p > 0``."""

    margins: dict
    failed: tuple

    @property
    def passed(self):
        return not self.failed

    def describe(self):
        if self.passed:
            return "baseline stability inequalities hold"
        return "; ".join(f"{name} fails (margin {self.margins[name]:.6g})" for name in self.failed)

    def to_dict(self):
        return {"passed": self.passed, "margins": dict(self.margins), "failed": list(self.failed),
                "tol": 0.0}


def check_routh_hurwitz(gains):
    margins = {
        "h > 0": gains.h,
        "k_p > 0": gains.k_p,
        "k_d > 0": gains.k_d,
        "k_d > tau_bar*k_p": gains.k_d - gains.tau_bar * gains.k_p,
    }
    failed = tuple(name for name, m in margins.items() if not m > 0)
    return RouthHurwitzResult(margins, failed)


def characteristic_roots(gains):
    """Roots of ``(h s + 1)(tau_bar s^3 + s^2 + k_d s + k_p)``."""
    cubic = np.array([gains.tau_bar, 1.0, gains.k_d, gains.k_p])
    return np.roots(np.polymul([gains.h, 1.0], cubic))


# ---------------------------------------------------------------------------
# Lyapunov weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LyapunovResult:
    P: np.ndarray
    residual: float
    eig_min: float
    tol: float

    @property
    def passed(self):
        return self.residual <= self.tol and self.eig_min > 0

    def to_dict(self):
        return {"P": self.P, "residual": self.residual, "eig_min": self.eig_min,
                "tol": self.tol, "passed": self.passed}


def _lyapunov_result(A, Q):
    P = solve_lyapunov(A, Q)
    res = lyapunov_residual(A, P, Q)
    qn = float(np.linalg.norm(Q, "fro"))
    return LyapunovResult(P, res, float(np.min(np.linalg.eigvalsh(P))), LYAPUNOV_TOL * qn)


# ---------------------------------------------------------------------------
# external positivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PositivityReport:
    h: float
    t_max: float
    dt: float
    min_g: float
    min_f: float
    f0: float
    min_velocity: float
    min_pseudo_spacing: float
    tol: float = POSITIVITY_TOL

    @property
    def passed(self):
        return (self.min_g >= 0 and self.min_f >= 0 and self.min_velocity >= -self.tol
                and self.min_pseudo_spacing >= -self.tol)

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def _zoh_pair(A, B, dt):
    # exact discretisation of x' = A x + B u for piecewise-constant u
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = B
    E = matrix_exponential(M, dt)
    return E[:n, :n], E[:n, n]


def virtual_pulse_response(gains, n_followers=2, amplitude=1.0, width=2.0, t_max=None, dt=0.01):
    """Zero-initial-condition response of the virtual platoon to an
    accelerate-then-decelerate ``u_in`` pulse (velocity bump back to rest).

    Returns ``(t, x)`` with ``x`` of shape ``(K, N+1, 4)``.
    """
    n = int(n_followers)
    size = 4 * (n + 1)
    A = np.zeros((size, size))
    A[:4, :4] = a_m0(gains)
    Am, Bwb = a_m(gains), b_w_bar(gains)
    for j in range(1, n + 1):
        A[4 * j:4 * j + 4, 4 * j:4 * j + 4] = Am
        A[4 * j:4 * j + 4, 4 * (j - 1):4 * j] = Bwb
    B = np.zeros(size)
    B[:4] = b_r(gains)
    if t_max is None:
        t_max = 2.0 * width + 20.0 * max(gains.h, gains.tau_bar) * (n + 1)
    steps_w = max(1, int(round(width / dt)))
    K = int(math.ceil(t_max / dt))
    Ad, Bd = _zoh_pair(A, B, dt)
    x = np.zeros(size)
    out = np.empty((K + 1, size))
    out[0] = x
    for k in range(K):
        u = amplitude if k < steps_w else (-amplitude if k < 2 * steps_w else 0.0)
        x = Ad @ x + Bd * u
        out[k + 1] = x
    return dt * np.arange(K + 1), out.reshape(K + 1, n + 1, 4)


def external_positivity_certificate(h, t_max=None, dt=None, gains=None):
    """Sample the impulse responses on ``[0, t_max]`` and simulate a VP pulse.

    ``t_max`` defaults to ``10 h`` and ``dt`` to ``h / 100``. The pulse response
    uses ``gains`` (default gains with headway ``h``) and zero initial state.
    """
    if not h > 0:
        raise NumericsError(f"h must be positive, got {h}")
    t_max = 10.0 * h if t_max is None else float(t_max)
    dt = h / 100.0 if dt is None else float(dt)
    t = np.linspace(0.0, t_max, int(round(t_max / dt)) + 1)
    g, f = impulse_responses(h, t)
    if gains is None:
        from .model import ControllerGains
        gains = ControllerGains(h=h)
    _, x = virtual_pulse_response(gains, dt=min(dt, 0.01))
    vel = x[:, :, 1]
    pseudo = x[:, 1:, 0] + gains.h * x[:, 1:, 1]
    return PositivityReport(
        h=float(h), t_max=t_max, dt=dt, min_g=float(g.min()), min_f=float(f.min()),
        f0=float(f[0]), min_velocity=float(vel.min()), min_pseudo_spacing=float(pseudo.min()),
    )


# ---------------------------------------------------------------------------
# string stability
# ---------------------------------------------------------------------------

def default_omega_grid():
    """``omega = 0`` plus 400 log-spaced points on ``[1e-2, 1e3]`` rad/s."""
    return np.concatenate(([0.0], np.logspace(-2.0, 3.0, 400)))


@dataclass(frozen=True)
class StringStabilityReport:
    h: float
    n_points: int
    max_gain: float
    argmax_omega: float
    max_gain_off_zero: float
    monotone: bool
    tol: float = STRING_GAIN_TOL

    @property
    def passed(self):
        return (abs(self.max_gain - 1.0) <= self.tol and self.argmax_omega == 0.0
                and self.max_gain_off_zero < 1.0 and self.monotone)

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def string_stability_certificate(h, omega_grid=None):
    grid = default_omega_grid() if omega_grid is None else np.sort(np.asarray(omega_grid, dtype=float))
    if grid.size == 0 or grid[0] < 0:
        raise NumericsError("omega grid must be nonempty and nonnegative")
    gain = np.atleast_1d(frequency_gain(h, grid))
    k = int(np.argmax(gain))
    off = gain[grid > 0]
    return StringStabilityReport(
        h=float(h), n_points=int(grid.size), max_gain=float(gain[k]), argmax_omega=float(grid[k]),
        max_gain_off_zero=float(off.max()) if off.size else 0.0,
        monotone=bool(np.all(np.diff(gain) <= 0.0)),
    )


# ---------------------------------------------------------------------------
# Omega, Z_bar and the standstill distance
# ---------------------------------------------------------------------------

def compute_zbar(c, P_m, P_m0, mode="sound"):
    """Euclidean bound on the tracking errors implied by ``||x~||_P < c``.

    ``mode="sound"`` divides by ``sqrt(lambda_min)`` (norm equivalence);
    ``mode="paper"`` divides by ``lambda_min`` itself.
    """
    if mode not in ZBAR_MODES:
        raise ValueError(f"mode must be one of {ZBAR_MODES}, got {mode!r}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    lams = []
    for name, P in (("P_m", P_m), ("P_m0", P_m0)):
        if not is_spd(P):
            raise NumericsError(f"{name} is not symmetric positive definite")
        lams.append(float(np.min(np.linalg.eigvalsh(np.asarray(P, dtype=float)))))
    if mode == "sound":
        return max(c / math.sqrt(lam) for lam in lams)
    return max(c / lam for lam in lams)


@lru_cache(maxsize=32)
def _omega_cached(h, kp, kd, tb, n, dt_quad, tail_tol):
    from .model import ControllerGains

    g = ControllerGains(h=h, k_p=kp, k_d=kd, tau_bar=tb)
    _, _, _, Ap, Bp = assemble_interconnected(g, n)
    return integrate_norm_expm(Ap, Bp, dt_quad=dt_quad, tail_tol=tail_tol)


def compute_omega(gains, n_followers, dt_quad=0.01, tail_tol=1e-6):
    """``Omega = int_0^inf ||exp(A' s)|| ds ||B'||`` for the follower block.

    Returns an :class:`~platoon_mrac.numerics.ExpmIntegral`, whose
    ``diagnostics()`` carry the quadrature step and tail bound.
    """
    rh = check_routh_hurwitz(gains)
    if not rh.passed:
        raise NumericsError(rh.describe())
    return _omega_cached(gains.h, gains.k_p, gains.k_d, gains.tau_bar, int(n_followers),
                         float(dt_quad), float(tail_tol))


def min_standstill_distance(h, n_followers, zbar, omega):
    """``(1 + h)(1 + Omega sqrt(N)) Z_bar``; standstill gaps must exceed it."""
    for name, v in (("h", h), ("zbar", zbar), ("omega", omega)):
        if not v >= 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    if n_followers < 1:
        raise ValueError("need at least one follower")
    return (1.0 + h) * (1.0 + omega * math.sqrt(n_followers)) * zbar


# ---------------------------------------------------------------------------
# trajectory audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryAudit:
    max_ratio: np.ndarray          # max_t ||x~_j||_P / c, index 0 = leader
    min_spacing: np.ndarray        # min_t s_{j-1,j}, one per follower
    v_violations: np.ndarray       # V increases beyond tolerance, per vehicle
    final_abs_e: np.ndarray
    v_tol: float = V_RELATIVE_TOL

    @property
    def contained(self):
        return bool(np.all(self.max_ratio < 1.0))

    @property
    def collision_free(self):
        return bool(np.all(self.min_spacing > 0.0))

    @property
    def passed(self):
        return self.contained and self.collision_free and int(self.v_violations.sum()) == 0

    def to_dict(self):
        return {
            "max_xtilde_ratio": self.max_ratio, "min_spacing": self.min_spacing,
            "v_increase_steps": self.v_violations, "final_abs_e": self.final_abs_e,
            "v_tol": self.v_tol, "contained": self.contained,
            "collision_free": self.collision_free, "passed": self.passed,
        }


def _pm_norms(traj, P_m, P_m0):
    xt = traj.ap[:, 1:, :] - traj.rp[:, 1:, :]
    q = np.einsum("kji,il,kjl->kj", xt, P_m, xt)
    x0 = traj.ap[:, 0, 1:] - traj.vp[:, 0, 1:]
    q0 = np.einsum("ki,il,kl->k", x0, P_m0, x0)
    return np.sqrt(np.maximum(np.column_stack((q0, q)), 0.0))


def audit_trajectory(traj, gains=None, P_m=None, P_m0=None, c=None, v_tol=V_RELATIVE_TOL):
    """Check containment, spacing and Lyapunov monotonicity on a trajectory.

    A step counts as a Lyapunov violation when ``V[k+1] - V[k]`` exceeds
    ``v_tol * max(1, V[k])``.
    """
    if traj.t.size == 0:
        raise ValueError("empty trajectory")
    gains = traj.scenario.gains if gains is None else gains
    if P_m is None or P_m0 is None:
        w = lyapunov_weights(gains)
        P_m = w.p_m if P_m is None else P_m
        P_m0 = w.p_m0 if P_m0 is None else P_m0
    c = gains.c if c is None else c
    ratio = _pm_norms(traj, np.asarray(P_m), np.asarray(P_m0)).max(axis=0) / c
    dV = np.diff(traj.V, axis=0)
    eps = v_tol * np.maximum(1.0, traj.V[:-1])
    return TrajectoryAudit(
        max_ratio=ratio,
        min_spacing=np.nanmin(traj.spacing[:, 1:], axis=0),
        v_violations=np.sum(dV > eps, axis=0),
        final_abs_e=np.abs(traj.ap[-1, 1:, 0]),
        v_tol=v_tol,
    )


def spacing_chain_margin(traj):
    """``s_bar - (e~v + h v~v)`` per sample and follower.

    ``s_bar = e + h v`` is the actual pseudo-spacing and ``e~v``, ``v~v`` are
    the deviations of the actual platoon from the virtual one. The chain
    ``s_bar >= e~v + h v~v`` holds exactly when this margin is nonnegative.
    """
    h = traj.scenario.gains.h
    sbar = traj.pseudo_spacing
    de = traj.ap[:, 1:, 0] - traj.vp[:, 1:, 0]
    dv = traj.ap[:, 1:, 1] - traj.vp[:, 1:, 1]
    return sbar - (de + h * dv)


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CertificateReport:
    routh_hurwitz: RouthHurwitzResult
    mode: str = "sound"
    p_m: LyapunovResult = None
    p_m0: LyapunovResult = None
    positivity: PositivityReport = None
    string_gain: StringStabilityReport = None
    omega_bound: dict = None
    zbar_paper: float = None
    zbar_sound: float = None
    r_min: np.ndarray = None
    standstill: np.ndarray = None
    trajectory_audit: TrajectoryAudit = None
    errors: list = field(default_factory=list)

    @property
    def static_passed(self):
        parts = (self.p_m, self.p_m0, self.positivity, self.string_gain)
        return (self.routh_hurwitz.passed and not self.errors
                and all(p is not None and p.passed for p in parts))

    @property
    def standstill_passed(self):
        if self.r_min is None or self.standstill is None:
            return False
        return bool(np.all(self.standstill > self.r_min))

    @property
    def passed(self):
        return self.static_passed and self.standstill_passed

    def failure_reasons(self):
        out = []
        if not self.routh_hurwitz.passed:
            out.append("Routh-Hurwitz: " + self.routh_hurwitz.describe())
        out.extend(self.errors)
        for name in ("p_m", "p_m0", "positivity", "string_gain"):
            part = getattr(self, name)
            if part is not None and not part.passed:
                out.append(f"{name} certificate failed")
        if self.r_min is not None and not self.standstill_passed:
            bad = [int(j) + 1 for j in np.flatnonzero(self.standstill <= self.r_min)]
            out.append(f"standstill distance below the collision-avoidance bound for followers {bad}")
        return out

    def to_dict(self):
        def part(p):
            return None if p is None else p.to_dict()
        return _jsonable({
            "mode": self.mode,
            "passed": self.passed,
            "static_passed": self.static_passed,
            "standstill_passed": self.standstill_passed,
            "failures": self.failure_reasons(),
            "routh_hurwitz": self.routh_hurwitz.to_dict(),
            "p_m": part(self.p_m),
            "p_m0": part(self.p_m0),
            "positivity": part(self.positivity),
            "string_gain": part(self.string_gain),
            "omega_bound": self.omega_bound,
            "zbar_paper": self.zbar_paper,
            "zbar_sound": self.zbar_sound,
            "r_min": self.r_min,
            "standstill": self.standstill,
            "trajectory_audit": part(self.trajectory_audit),
        })

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_text(self):
        lines = [f"certificate report (Z_bar mode: {self.mode})"]
        rh = self.routh_hurwitz
        lines.append(f"  stability inequalities: {'pass' if rh.passed else 'FAIL'}"
                     + ("" if rh.passed else f"  [{rh.describe()}]"))
        for name in ("p_m", "p_m0"):
            p = getattr(self, name)
            if p is not None:
                lines.append(f"  {name}: residual {p.residual:.3e} (tol {p.tol:.1e}),"
                             f" lambda_min {p.eig_min:.6g}")
        if self.positivity is not None:
            p = self.positivity
            lines.append(f"  positivity: min g {p.min_g:.3e}, min f {p.min_f:.3e},"
                         f" pulse min v {p.min_velocity:.3e}, min s {p.min_pseudo_spacing:.3e}"
                         f" -> {'pass' if p.passed else 'FAIL'}")
        if self.string_gain is not None:
            s = self.string_gain
            lines.append(f"  string gain: max {s.max_gain:.15g} at omega={s.argmax_omega:g}"
                         f" -> {'pass' if s.passed else 'FAIL'}")
        if self.omega_bound is not None:
            lines.append(f"  Omega: {self.omega_bound['value']:.6g}"
                         f" (dt {self.omega_bound['dt_quad']:g}, tail {self.omega_bound['tail_bound']:.2e})")
        if self.zbar_sound is not None:
            lines.append(f"  Z_bar: sound {self.zbar_sound:.6g}, literal {self.zbar_paper:.6g}")
        if self.r_min is not None:
            lines.append(f"  r_min: {float(self.r_min[0]):.6g} m;"
                         f" configured standstill {np.array2string(self.standstill, precision=4)}")
        if self.trajectory_audit is not None:
            a = self.trajectory_audit
            lines.append(f"  audit: max ratio {a.max_ratio.max():.4g},"
                         f" min spacing {a.min_spacing.min():.4g}, V violations {int(a.v_violations.sum())}")
        for reason in self.failure_reasons():
            lines.append(f"  failure: {reason}")
        lines.append(f"  overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def certify(scenario, mode="sound"):
    """Evaluate every static certificate for ``scenario`` and size ``r_min``."""
    if mode not in ZBAR_MODES:
        raise ValueError(f"mode must be one of {ZBAR_MODES}, got {mode!r}")
    g = scenario.gains
    report = CertificateReport(routh_hurwitz=check_routh_hurwitz(g), mode=mode)
    report.standstill = np.array([v.standstill for v in scenario.vehicles[1:]])
    if g.h > 0:
        report.positivity = external_positivity_certificate(g.h, gains=g if report.routh_hurwitz.passed else None)
        report.string_gain = string_stability_certificate(g.h)
    if not report.routh_hurwitz.passed:
        return report
    try:
        report.p_m = _lyapunov_result(a_m(g), g.q_m)
        report.p_m0 = _lyapunov_result(a_c(g), g.q_c)
    except NumericsError as exc:
        report.errors.append(f"Lyapunov weights: {exc}")
        return report
    omega = compute_omega(g, scenario.n_followers)
    report.omega_bound = omega.diagnostics()
    report.zbar_paper = compute_zbar(g.c, report.p_m.P, report.p_m0.P, "paper")
    report.zbar_sound = compute_zbar(g.c, report.p_m.P, report.p_m0.P, "sound")
    zbar = report.zbar_sound if mode == "sound" else report.zbar_paper
    r = min_standstill_distance(g.h, scenario.n_followers, zbar, float(omega))
    report.r_min = np.full(scenario.n_followers, r)
    return report
