"""Domain types, scenario configuration and validation.

Vehicle index 0 is the leader; followers are ``1..N``. Units are SI
throughout (m, m/s, m/s^2, s).
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import is_spd

LOG = logging.getLogger(__name__)

__all__ = [
    "VehicleParams",
    "ControllerGains",
    "VehicleState",
    "InputProfile",
    "Scenario",
    "Violation",
    "ScenarioError",
    "validate_scenario",
    "spacing_from_state",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "DEFAULT_GAINS",
    "default_scenario",
]


class ScenarioError(ValueError):
    """Malformed scenario input (bad JSON, wrong shapes, unknown keys)."""


def _frozen_matrix(value, n, name):
    """Coerce a scalar ``g`` (meaning ``g * I``) or an ``n x n`` nested list."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(n)
    if arr.shape != (n, n):
        raise ScenarioError(f"{name} must be a scalar or a {n}x{n} matrix, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VehicleParams:
    """Physical truth for one vehicle. Only the plant dynamics may read it."""

    tau: float
    lam: float
    length: float = 4.5
    standstill: float = 5.0

    @property
    def theta(self):
        """Input effectiveness ``lam / tau``."""
        return self.lam / self.tau


@dataclass(frozen=True, eq=False)
class ControllerGains:
    """Design constants shared by every vehicle.

    ``gamma_*`` and ``q_*`` accept a scalar (scaled identity) or a matrix.
    ``a_c_v``, ``a_c_a``, ``a_c_u`` are the free second-row entries of the
    leader's closed-loop error matrix.
    """

    h: float = 0.5
    k_p: float = 0.2
    k_d: float = 0.7
    tau_bar: float = 0.1
    c: float = 1.0
    gamma_follower: np.ndarray = 10.0
    gamma_leader_x: np.ndarray = 10.0
    gamma_leader_xt: np.ndarray = 10.0
    q_m: np.ndarray = 1.0
    q_c: np.ndarray = 1.0
    a_c_v: float = -1.0
    a_c_a: float = -2.0
    a_c_u: float = 0.0

    def __post_init__(self):
        for name, n in (
            ("gamma_follower", 4),
            ("gamma_leader_x", 3),
            ("gamma_leader_xt", 3),
            ("q_m", 4),
            ("q_c", 3),
        ):
            object.__setattr__(self, name, _frozen_matrix(getattr(self, name), n, name))
        for name in ("h", "k_p", "k_d", "tau_bar", "c", "a_c_v", "a_c_a", "a_c_u"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def with_gamma(self, gamma):
        """Copy with every adaptation gain set to ``gamma * I``."""
        return replace(self, gamma_follower=gamma, gamma_leader_x=gamma, gamma_leader_xt=gamma)

    def to_dict(self):
        out = {}
        for name in ControllerGains.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


DEFAULT_GAINS = ControllerGains()


@dataclass(frozen=True)
class VehicleState:
    """``(e, v, a, u_bl)`` for one vehicle in one platoon layer."""

    e: float
    v: float
    a: float
    u_bl: float

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        if x.size == 3:
            return cls(0.0, *map(float, x))
        if x.size != 4:
            raise ValueError(f"vehicle state needs 3 or 4 entries, got {x.size}")
        return cls(*map(float, x))

    def as_array(self):
        return np.array([self.e, self.v, self.a, self.u_bl])

    def reduced(self):
        """Leader view ``(v, a, u_bl)``; the fictitious spacing error is dropped."""
        return np.array([self.v, self.a, self.u_bl])


_PROFILE_KINDS = ("step", "pulse", "piecewise_linear", "zero")


@dataclass(frozen=True)
class InputProfile:
    """Leader acceleration command ``u_in(t)``.

    ``times``/``values`` are breakpoints. ``hold`` ones are piecewise constant
    (value applies from its breakpoint until the next), ``linear`` ones are
    interpolated; in both cases the last value is held forever.
    """

    kind: str
    times: tuple
    values: tuple
    interpolation: str = "hold"
    spec: dict = field(default_factory=dict, compare=False)

    @classmethod
    def zero(cls):
        return cls("zero", (0.0,), (0.0,), "hold", {"kind": "zero"})

    @classmethod
    def step(cls, amplitude, start=0.0):
        return cls("step", (float(start),), (float(amplitude),), "hold",
                   {"kind": "step", "amplitude": amplitude, "start": start})

    @classmethod
    def pulse(cls, amplitude, start, duration):
        return cls.pulses([(amplitude, start, duration)])

    @classmethod
    def pulses(cls, pulses):
        """Sum of non-overlapping rectangular pulses ``(amplitude, start, duration)``."""
        edges = []
        for amp, start, dur in sorted(pulses, key=lambda p: p[1]):
            if dur <= 0:
                raise ScenarioError("pulse duration must be positive")
            if edges and start < edges[-1][0]:
                raise ScenarioError("pulses must not overlap")
            edges.append((float(start), float(amp)))
            edges.append((float(start) + float(dur), 0.0))
        times = tuple(t for t, _ in edges)
        values = tuple(v for _, v in edges)
        if len(pulses) == 1:
            amp, start, dur = pulses[0]
            spec = {"kind": "pulse", "amplitude": amp, "start": start, "duration": dur}
        else:
            spec = {"kind": "pulse", "pulses": [list(p) for p in pulses]}
        return cls("pulse", times, values, "hold", spec)

    @classmethod
    def piecewise_linear(cls, points):
        pts = sorted((float(t), float(u)) for t, u in points)
        if not pts:
            raise ScenarioError("piecewise_linear needs at least one point")
        return cls("piecewise_linear", tuple(p[0] for p in pts), tuple(p[1] for p in pts),
                   "linear", {"kind": "piecewise_linear", "points": [list(p) for p in pts]})

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        try:
            if kind == "zero":
                return cls.zero()
            if kind == "step":
                return cls.step(d["amplitude"], d.get("start", 0.0))
            if kind == "pulse":
                if "pulses" in d:
                    return cls.pulses([tuple(p) for p in d["pulses"]])
                return cls.pulse(d["amplitude"], d.get("start", 0.0), d["duration"])
            if kind == "piecewise_linear":
                return cls.piecewise_linear(d["points"])
        except KeyError as exc:
            raise ScenarioError(f"input_profile of kind {kind!r} is missing {exc}") from None
        raise ScenarioError(f"unknown input_profile kind {kind!r}; expected one of {_PROFILE_KINDS}")

    def to_dict(self):
        return dict(self.spec)

    def __call__(self, t):
        ts, vs = self.times, self.values
        if t < ts[0]:
            return 0.0 if self.interpolation == "hold" else vs[0]
        if self.interpolation == "hold":
            k = int(np.searchsorted(ts, t, side="right")) - 1
            return vs[k]
        return float(np.interp(t, ts, vs))

    @property
    def final_value(self):
        return self.values[-1]

    def arrays(self):
        mode = 0 if self.interpolation == "hold" else 1
        return np.array(self.times, dtype=float), np.array(self.values, dtype=float), mode


def _as_params(v):
    if isinstance(v, VehicleParams):
        return v
    v = dict(v)
    if "lambda" in v:
        v["lam"] = v.pop("lambda")
    unknown = set(v) - set(VehicleParams.__dataclass_fields__)
    if unknown:
        raise ScenarioError(f"unknown vehicle keys: {sorted(unknown)}")
    return VehicleParams(**v)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Complete simulation input.

    ``initial_states`` are the actual-platoon initial 4-vectors (leader row has
    ``e = 0``). The virtual and reference platoons start at
    ``initial_states - initial_tracking_errors``; the tracking errors default
    to zero.
    """

    n_followers: int
    vehicles: tuple
    gains: ControllerGains
    initial_states: np.ndarray
    input_profile: InputProfile
    t_end: float = 60.0
    dt: float = 1e-3
    initial_tracking_errors: np.ndarray = None

    def __post_init__(self):
        n = int(self.n_followers)
        object.__setattr__(self, "n_followers", n)
        object.__setattr__(self, "vehicles", tuple(_as_params(v) for v in self.vehicles))
        x0 = np.array(self.initial_states, dtype=float)
        if x0.shape != (n + 1, 4):
            raise ScenarioError(f"initial_states must be {n + 1} rows of 4 values, got {x0.shape}")
        x0.setflags(write=False)
        object.__setattr__(self, "initial_states", x0)
        if self.initial_tracking_errors is None:
            xt = np.zeros((n + 1, 4))
        else:
            xt = np.array(self.initial_tracking_errors, dtype=float)
            if xt.shape != (n + 1, 4):
                raise ScenarioError(
                    f"initial_tracking_errors must be {n + 1} rows of 4 values, got {xt.shape}")
        xt.setflags(write=False)
        object.__setattr__(self, "initial_tracking_errors", xt)
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def reference_initial_states(self):
        """Initial states shared by the virtual and reference platoons."""
        return self.initial_states - self.initial_tracking_errors

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class Violation:
    """One failed invariant. ``severity`` is ``"error"`` or ``"warning"``."""

    code: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"[{self.severity}] {self.code}: {self.message}"


def _gain_violations(g):
    out = []
    for name in ("h", "k_p", "k_d"):
        if not getattr(g, name) > 0:
            out.append(Violation("routh_hurwitz", f"{name} > 0 fails ({name} = {getattr(g, name)})"))
    if not g.tau_bar > 0:
        out.append(Violation("tau_bar", f"tau_bar > 0 fails (tau_bar = {g.tau_bar})"))
    if not g.k_d > g.tau_bar * g.k_p:
        out.append(Violation(
            "routh_hurwitz",
            f"k_d > tau_bar*k_p fails ({g.k_d} <= {g.tau_bar * g.k_p})"))
    if not g.a_c_v < 0:
        out.append(Violation("leader_a_c", f"a_c_v < 0 fails (a_c_v = {g.a_c_v})"))
    if not g.a_c_a < 0:
        out.append(Violation("leader_a_c", f"a_c_a < 0 fails (a_c_a = {g.a_c_a})"))
    if not math.isfinite(g.a_c_u):
        out.append(Violation("leader_a_c", "a_c_u must be finite"))
    if not g.c > 0:
        out.append(Violation("barrier", f"c > 0 fails (c = {g.c})"))
    for name in ("gamma_follower", "gamma_leader_x", "gamma_leader_xt", "q_m", "q_c"):
        if not is_spd(getattr(g, name)):
            out.append(Violation("spd", f"{name} must be symmetric positive definite"))
    return out


def validate_scenario(s):
    """Return every invariant violation of ``s`` (an empty list means valid).

    Errors make the scenario unusable. Warnings flag conditions the guarantees
    rely on but the simulator can still run with (non-vanishing input,
    nonpositive initial actual spacing).
    """
    out = []
    n = s.n_followers
    if n < 1:
        out.append(Violation("n_followers", f"n_followers >= 1 fails (n_followers = {n})"))
    if len(s.vehicles) != n + 1:
        out.append(Violation("vehicles", f"expected {n + 1} vehicles, got {len(s.vehicles)}"))
    for j, p in enumerate(s.vehicles):
        for name in ("tau", "lam", "length", "standstill"):
            value = getattr(p, name)
            if not (math.isfinite(value) and value > 0):
                out.append(Violation("vehicle_params", f"vehicle {j}: {name} > 0 fails ({name} = {value})"))
    out.extend(_gain_violations(s.gains))

    if not s.dt > 0:
        out.append(Violation("dt", f"dt > 0 fails (dt = {s.dt})"))
    if not s.t_end >= 0:
        out.append(Violation("t_end", f"t_end >= 0 fails (t_end = {s.t_end})"))
    if s.dt > 0 and s.t_end >= 0 and abs(s.n_steps * s.dt - s.t_end) > 1e-9 * max(1.0, s.t_end):
        out.append(Violation("t_end", f"t_end = {s.t_end} is not a whole number of dt = {s.dt} steps"))

    x0 = s.initial_states
    if not np.all(np.isfinite(x0)) or not np.all(np.isfinite(s.initial_tracking_errors)):
        out.append(Violation("initial_states", "initial states must be finite"))
        return out
    if x0[0, 0] != 0.0:
        out.append(Violation("initial_states", f"leader spacing error must be 0, got {x0[0, 0]}"))
    if s.initial_tracking_errors[0, 0] != 0.0:
        out.append(Violation("initial_tracking_errors", "leader spacing-error offset must be 0"))

    xv = s.reference_initial_states
    h = s.gains.h
    for j in range(1, min(n, len(s.vehicles) - 1) + 1):
        sbar = xv[j, 0] + h * xv[j, 1]
        if not sbar >= 0:
            out.append(Violation(
                "assumption_1", f"vehicle {j}: virtual pseudo-spacing e + h*v >= 0 fails ({sbar:.6g})"))
        if not xv[j, 1] >= 0:
            out.append(Violation(
                "assumption_1", f"vehicle {j}: virtual velocity >= 0 fails ({xv[j, 1]:.6g})"))
        if j < len(s.vehicles) and h > 0:
            sp = spacing_from_state(x0[j, 0], x0[j, 1], s.vehicles[j], s.gains)
            if not sp > 0:
                out.append(Violation(
                    "initial_spacing", f"vehicle {j}: initial actual spacing > 0 fails ({sp:.6g})",
                    "warning"))
    if np.any(s.initial_tracking_errors != 0.0) and not out:
        from .engine import initial_barrier_norms  # deferred: engine imports this module

        fn, ln = initial_barrier_norms(s)
        for j, r in enumerate(fn, start=1):
            if not r < s.gains.c:
                out.append(Violation("barrier_initial", f"vehicle {j}: ||x~(0)||_Pm < c fails ({r:.6g})"))
        if not ln < s.gains.c:
            out.append(Violation("barrier_initial", f"leader: ||x~(0)||_Pm0 < c fails ({ln:.6g})"))
    if s.input_profile.final_value != 0.0:
        out.append(Violation(
            "input_profile", "u_in does not vanish as t -> inf; convergence results do not apply",
            "warning"))
    return out


def spacing_from_state(e_j, v_j, params_j, gains):
    """Inter-vehicle spacing ``e + r + h v`` from the spacing error and velocity."""
    return e_j + params_j.standstill + gains.h * v_j


# ---------------------------------------------------------------------------
# defaults and JSON
# ---------------------------------------------------------------------------

DEFAULT_SPEED = 20.0

# cycled when a scenario asks for more vehicles than listed here
_DEFAULT_FLEET = (
    (0.20, 1.20),
    (0.30, 0.80),
    (0.08, 1.50),
    (0.45, 0.60),
)

SCENARIO_KEYS = ("n_followers", "vehicles", "gains", "initial_states", "input_profile", "t_end", "dt")
OPTIONAL_KEYS = ("initial_tracking_errors",)


def default_vehicles(n_followers, standstill=5.0):
    return tuple(
        VehicleParams(tau=_DEFAULT_FLEET[j % len(_DEFAULT_FLEET)][0],
                      lam=_DEFAULT_FLEET[j % len(_DEFAULT_FLEET)][1],
                      length=4.5, standstill=standstill)
        for j in range(n_followers + 1)
    )


def equilibrium_states(n_followers, speed=DEFAULT_SPEED):
    x = np.zeros((n_followers + 1, 4))
    x[:, 1] = speed
    return x


def default_input_profile():
    """Mild acceleration followed by hard braking, then zero."""
    return InputProfile.pulses([(1.0, 2.0, 3.0), (-5.0, 15.0, 2.0)])


def default_scenario(n_followers=3):
    return Scenario(
        n_followers=n_followers,
        vehicles=default_vehicles(n_followers),
        gains=DEFAULT_GAINS,
        initial_states=equilibrium_states(n_followers),
        input_profile=default_input_profile(),
        t_end=60.0,
        dt=1e-3,
    )


def scenario_from_dict(d):
    """Build a scenario from a JSON-like mapping; omitted keys take defaults."""
    if not isinstance(d, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(d) - set(SCENARIO_KEYS) - set(OPTIONAL_KEYS)
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        n = int(d.get("n_followers", 3))
        gains_d = d.get("gains", {})
        unknown_g = set(gains_d) - set(ControllerGains.__dataclass_fields__)
        if unknown_g:
            raise ScenarioError(f"unknown gain keys: {sorted(unknown_g)}")
        gains = ControllerGains(**gains_d)
        if "vehicles" in d:
            vehicles = tuple(_as_params(v) for v in d["vehicles"])
        else:
            vehicles = default_vehicles(n)
        x0 = d.get("initial_states")
        x0 = equilibrium_states(n) if x0 is None else np.array(x0, dtype=float)
        profile = d.get("input_profile")
        profile = default_input_profile() if profile is None else InputProfile.from_dict(profile)
        return Scenario(
            n_followers=n,
            vehicles=vehicles,
            gains=gains,
            initial_states=x0,
            input_profile=profile,
            t_end=float(d.get("t_end", 60.0)),
            dt=float(d.get("dt", 1e-3)),
            initial_tracking_errors=d.get("initial_tracking_errors"),
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_to_dict(s):
    out = {
        "n_followers": s.n_followers,
        "vehicles": [
            {"tau": v.tau, "lambda": v.lam, "length": v.length, "standstill": v.standstill}
            for v in s.vehicles
        ],
        "gains": s.gains.to_dict(),
        "initial_states": s.initial_states.tolist(),
        "input_profile": s.input_profile.to_dict(),
        "t_end": s.t_end,
        "dt": s.dt,
    }
    if np.any(s.initial_tracking_errors != 0.0):
        out["initial_tracking_errors"] = s.initial_tracking_errors.tolist()
    return out


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON in {path}: {exc}") from exc
    return scenario_from_dict(doc)
