"""Generalized barrier Lyapunov function ``psi(r) = r^2 / (c - r)``.

``r`` is always a weighted norm ``||eta||_M`` (not its square). The derivative
``psi_prime`` is taken with respect to ``r**2``, which is the form the adaptive
update laws use.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import is_spd

__all__ = [
    "BarrierViolation",
    "BarrierSpec",
    "weighted_norm",
    "psi",
    "psi_prime",
    "BLFReport",
    "check_blf_conditions",
]

# c - r below this fraction of c is treated as sitting on the barrier
NEAR_BARRIER = 1e-12


class BarrierViolation(ArithmeticError):
    """The weighted norm reached or exceeded the barrier bound ``c``."""

    def __init__(self, r, c, where=""):
        self.r = float(r)
        self.c = float(c)
        self.where = where
        loc = f" ({where})" if where else ""
        super().__init__(f"barrier violated{loc}: ||eta||_M = {self.r:.12g} >= c = {self.c:.12g}")


@dataclass(frozen=True, eq=False)
class BarrierSpec:
    """Barrier bound ``c`` together with the SPD weight of the norm."""

    c: float
    weight: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"barrier bound c must be positive, got {self.c}")
        W = np.array(self.weight, dtype=float)
        if not is_spd(W):
            raise ValueError("barrier weight must be symmetric positive definite")
        W.setflags(write=False)
        object.__setattr__(self, "weight", W)

    def norm(self, eta):
        return weighted_norm(eta, self.weight)

    def psi(self, eta):
        return psi(self.norm(eta), self.c)

    def psi_prime(self, eta):
        return psi_prime(self.norm(eta), self.c)


def weighted_norm(eta, M, check=True):
    """``sqrt(eta^T M eta)`` for symmetric positive definite ``M``."""
    eta = np.asarray(eta, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.shape != (eta.size, eta.size):
        raise ValueError(f"dimension mismatch: eta has {eta.size} entries, M is {M.shape}")
    if check and not is_spd(M):
        raise ValueError("weight matrix must be symmetric positive definite")
    q = float(eta @ M @ eta)
    return float(np.sqrt(max(q, 0.0)))


def _check_domain(r, c):
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    if r < 0:
        raise ValueError(f"r is a norm and must be nonnegative, got {r}")
    if r >= c:
        raise BarrierViolation(r, c)


def psi(r, c):
    """Barrier value ``r^2 / (c - r)`` on ``0 <= r < c``.

    Returns ``inf`` when ``c - r`` is below ``1e-12 * c``; raises
    :class:`BarrierViolation` for ``r >= c``.
    """
    _check_domain(r, c)
    gap = c - r
    if gap < NEAR_BARRIER * c:
        return float("inf")
    return r * r / gap


def psi_prime(r, c):
    """Derivative of ``psi`` with respect to ``r^2``: ``(2c - r) / (2 (c - r)^2)``."""
    _check_domain(r, c)
    gap = c - r
    if gap < NEAR_BARRIER * c:
        return float("inf")
    # (2c - r) / (2 gap^2) rearranged so that rounding keeps psi' >= 1/c
    return (1.0 + 0.5 * r / gap) / gap


@dataclass
class BLFReport:
    c: float
    n_points: int
    conditions: dict
    details: dict

    @property
    def passed(self):
        return all(self.conditions.values())


def check_blf_conditions(c, grid, psi_fn=psi, psi_prime_fn=psi_prime):
    """Check the six barrier-function conditions for ``psi_fn`` on ``grid``.

    The conditions are: zero at the origin, positive elsewhere, unbounded at
    the barrier (probed at ``r = c (1 - 1e-6)``), finite (continuous) on the
    grid, positive derivative, and ``2 psi' r^2 - psi > 0`` away from ``r = 0``.
    Violations are reported, not raised.
    """
    r = np.asarray(grid, dtype=float)
    if r.size == 0 or np.any(r < 0) or np.any(r >= c):
        raise ValueError("grid points must lie in [0, c)")
    vals = np.array([psi_fn(x, c) for x in r])
    ders = np.array([psi_prime_fn(x, c) for x in r])
    pos = r > 0
    near = c * (1.0 - 1e-6)
    near_val = psi_fn(near, c)
    cond_vi = 2.0 * ders * r * r - vals

    conditions = {
        "i_zero_at_origin": psi_fn(0.0, c) == 0.0,
        "ii_positive": bool(np.all(vals[pos] > 0)),
        "iii_unbounded_at_barrier": bool(near_val > 1e5 * c),
        "iv_continuous": bool(np.all(np.isfinite(vals)) and np.all(np.isfinite(ders))),
        "v_positive_derivative": bool(np.all(ders > 0)),
        "vi_growth": bool(np.all(cond_vi[pos] > 0)),
    }
    details = {
        "psi_near_barrier": near_val,
        "min_psi_positive": float(np.min(vals[pos])) if pos.any() else None,
        "min_psi_prime": float(np.min(ders)),
        "min_condition_vi": float(np.min(cond_vi[pos])) if pos.any() else None,
    }
    return BLFReport(c=float(c), n_points=int(r.size), conditions=conditions, details=details)
