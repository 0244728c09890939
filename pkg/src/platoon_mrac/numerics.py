"""Small dense linear-algebra and integration kernels.

Everything here works on plain ``numpy`` arrays. Sizes stay at desk scale
(at most ``4 * (N + 1)`` rows), so the dense algorithms below are adequate.
"""

import math

import numpy as np

__all__ = [
    "NumericsError",
    "is_hurwitz",
    "is_spd",
    "solve_lyapunov",
    "lyapunov_residual",
    "matrix_exponential",
    "rk4_step",
    "spectral_norm",
    "integrate_norm_expm",
    "ExpmIntegral",
    "frequency_gain",
    "impulse_responses",
]


class NumericsError(ValueError):
    """Raised when a kernel precondition fails (non-Hurwitz, non-SPD, ...)."""


def _square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericsError(f"{name} has non-finite entries")
    return A


def is_hurwitz(A):
    """True if every eigenvalue of ``A`` has strictly negative real part."""
    A = _square(A)
    return bool(np.max(np.linalg.eigvals(A).real) < 0.0)


def is_spd(M, tol=0.0):
    """True if ``M`` is symmetric and its smallest eigenvalue exceeds ``tol``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
        return False
    scale = max(1.0, float(np.max(np.abs(M))))
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * scale):
        return False
    return bool(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) > tol)


def solve_lyapunov(A, Q):
    """Solve ``A^T P + P A + Q = 0`` for the symmetric positive definite ``P``.

    The equation is vectorised as ``(I kron A^T + A^T kron I) vec(P) = -vec(Q)``
    and solved densely, which is cheap for the matrix sizes used here.

    Parameters
    ----------
    A : (n, n) array_like
        Hurwitz matrix.
    Q : (n, n) array_like
        Symmetric positive definite right-hand side.

    Returns
    -------
    P : (n, n) ndarray

    Raises
    ------
    NumericsError
        If ``A`` is not Hurwitz ("no stabilizing solution") or ``Q`` is not SPD.
    """
    A = _square(A)
    Q = _square(Q, "Q")
    if A.shape != Q.shape:
        raise NumericsError(f"shape mismatch: A {A.shape}, Q {Q.shape}")
    if not is_spd(Q):
        raise NumericsError("Q must be symmetric positive definite")
    if not is_hurwitz(A):
        raise NumericsError("no stabilizing solution: A is not Hurwitz")
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    # column-major vec so that vec(A^T P) = (I kron A^T) vec(P)
    p = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    P = p.reshape((n, n), order="F")
    return 0.5 * (P + P.T)


def lyapunov_residual(A, P, Q):
    """Frobenius norm of ``A^T P + P A + Q``."""
    A, P, Q = (np.asarray(M, dtype=float) for M in (A, P, Q))
    return float(np.linalg.norm(A.T @ P + P @ A + Q, "fro"))


# Pade [6/6] numerator coefficients; the denominator uses alternating signs.
_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


def matrix_exponential(A, t=1.0):
    """Return ``exp(A t)`` by scaling and squaring with a [6/6] Pade approximant.

    The argument is scaled by ``2**-s`` until its 1-norm is at most 1/2, where
    the [6/6] approximant is accurate to roughly machine precision, and the
    result is squared back ``s`` times. ``exp(A * 0)`` is exactly the identity.
    """
    if t < 0:
        raise NumericsError(f"t must be nonnegative, got {t}")
    A = _square(A) * float(t)
    n = A.shape[0]
    eye = np.eye(n)
    norm = np.linalg.norm(A, 1)
    if norm == 0.0:
        return eye
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = A / (2.0**s)
    num = _PADE6[0] * eye
    den = _PADE6[0] * eye
    power = eye
    for k in range(1, len(_PADE6)):
        power = power @ X
        term = _PADE6[k] * power
        num = num + term
        den = den + term if k % 2 == 0 else den - term
    E = np.linalg.solve(den, num)
    for _ in range(s):
        E = E @ E
    return E


def rk4_step(f, x, t, dt):
    """One classical fourth-order Runge-Kutta step of ``x' = f(t, x)``.

    Raises
    ------
    NumericsError
        If ``dt`` is not positive or a stage derivative is non-finite; the
        message carries the offending component index.
    """
    if not dt > 0:
        raise NumericsError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)

    def stage(tt, xx):
        d = np.asarray(f(tt, xx), dtype=float)
        bad = np.flatnonzero(~np.isfinite(d))
        if bad.size:
            raise NumericsError(f"non-finite derivative at index {int(bad[0])} (t={tt})")
        return d

    k1 = stage(t, x)
    k2 = stage(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = stage(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = stage(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def spectral_norm(M):
    """Largest singular value of ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


class ExpmIntegral(float):
    """Value of ``integral_0^inf ||exp(A s)|| ds * ||B||`` plus diagnostics.

    Behaves as a float; the quadrature step, horizon and tail-bound constants
    used to produce it are kept as attributes.
    """

    dt_quad: float
    horizon: float
    beta: float
    kappa: float
    tail: float
    refinements: int

    def diagnostics(self):
        return {
            "value": float(self),
            "dt_quad": self.dt_quad,
            "horizon": self.horizon,
            "beta": self.beta,
            "kappa": self.kappa,
            "tail_bound": self.tail,
            "refinements": self.refinements,
        }


def _norm_expm_trapezoid(A, dt, beta, tail_tol):
    # march exp(A k dt) by repeated multiplication until the tail bound is small
    step = matrix_exponential(A, dt)
    E = np.eye(A.shape[0])
    norms = [1.0]
    kappa = 1.0
    total = 0.0
    k = 0
    while True:
        E = E @ step
        k += 1
        nk = spectral_norm(E)
        norms.append(nk)
        s = k * dt
        total += 0.5 * dt * (norms[-2] + nk)
        kappa = max(kappa, nk * math.exp(beta * s))
        # the weighted sample has passed its peak once it falls below kappa
        if nk * math.exp(beta * s) < kappa:
            tail = kappa * math.exp(-beta * s) / beta
            if tail <= 0.1 * tail_tol * total:
                return total, s, kappa, tail
        if k > 50_000_000:
            raise NumericsError("quadrature failed to converge")


def integrate_norm_expm(A, B, dt_quad=0.01, tail_tol=1e-6, max_refinements=12):
    """Integral of ``||exp(A s)|| * ||B||`` over ``[0, inf)`` (spectral norms).

    The integrand is nonnegative, so the maximum over ``t`` of the running
    integral is the improper integral. A composite trapezoid rule runs out to a
    horizon beyond which the exponential bound ``||exp(A s)|| <= kappa
    exp(-beta s)`` makes the remainder negligible; that bound is added to the
    result so it stays an upper estimate. ``beta`` is 0.9 times the spectral
    abscissa magnitude and ``kappa`` the largest sampled value of
    ``||exp(A s)|| exp(beta s)``. The step is halved until two successive
    estimates agree to ``tail_tol`` (relative).

    Returns
    -------
    ExpmIntegral
    """
    A = _square(A)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    abscissa = float(np.max(np.linalg.eigvals(A).real))
    if not abscissa < 0:
        raise NumericsError("A is not Hurwitz; the integral diverges")
    beta = 0.9 * abs(abscissa)
    nb = spectral_norm(B)
    dt = float(dt_quad)
    prev = None
    for refinement in range(max_refinements + 1):
        total, horizon, kappa, tail = _norm_expm_trapezoid(A, dt, beta, tail_tol)
        value = (total + tail) * nb
        if prev is not None and abs(value - prev) <= tail_tol * max(abs(value), 1e-300):
            break
        prev = value
        dt *= 0.5
    else:
        raise NumericsError("quadrature did not converge under refinement")
    out = ExpmIntegral(value)
    out.dt_quad = dt
    out.horizon = horizon
    out.beta = beta
    out.kappa = kappa
    out.tail = tail * nb
    out.refinements = refinement
    return out


def frequency_gain(h, omega):
    """Magnitude ``1 / sqrt(h^2 w^2 + 1)`` of the first-order headway filter."""
    if not h > 0:
        raise NumericsError(f"h must be positive, got {h}")
    omega = np.asarray(omega, dtype=float)
    out = 1.0 / np.sqrt(h * h * omega * omega + 1.0)
    return float(out) if out.ndim == 0 else out


def impulse_responses(h, t):
    """Impulse responses ``(g, f)`` of ``1/(hs+1)`` and ``h/(hs+1)``.

    ``g(t) = exp(-t/h) / h`` is the velocity-to-velocity response and
    ``f(t) = exp(-t/h)`` the velocity-to-pseudo-spacing response.
    """
    if not h > 0:
        raise NumericsError(f"h must be positive, got {h}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise NumericsError("impulse responses are defined for t >= 0")
    f = np.exp(-t / h)
    g = f / h
    if g.ndim == 0:
        return float(g), float(f)
    return g, f
