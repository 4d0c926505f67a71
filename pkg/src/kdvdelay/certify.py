"""Decay certificates: quadratic forms, rate bounds and the rate optimizer.

The certified estimate has the form ``E(t) <= zeta * E(0) * exp(-lambda t)``.
``lambda`` is limited by a Poincare-type term ``f(mu1)``, which grows with
``mu1``, and by a delay term ``g(mu1)``, which shrinks with it. The best
rate sits at their crossing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import SQRT3_PI, ConfigurationError, _check_d, check_gain_feasibility

VARIANTS = ("theorem", "proposition")

# |det| below this is reported indeterminate rather than definite
DET_FLOOR = 1e-14


class InfeasibleError(ConfigurationError):
    """Gains or domain outside the set where a certificate exists."""


@dataclass(frozen=True)
class QuadForm2:
    """Symmetric 2x2 matrix ``[[a11, a12], [a12, a22]]``."""

    a11: float
    a12: float
    a22: float

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    @property
    def indeterminate(self) -> bool:
        return abs(self.det) < DET_FLOOR

    @property
    def negative_definite(self) -> bool:
        """Leading-minor test with strict inequalities and no tolerance."""
        return self.a11 < 0 and self.det > 0 and not self.indeterminate

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    def __call__(self, u, v):
        """Evaluate the form at ``(u, v)``; broadcasts over arrays."""
        return self.a11 * u * u + 2.0 * self.a12 * u * v + self.a22 * v * v

    def __add__(self, other: "QuadForm2") -> "QuadForm2":
        return QuadForm2(self.a11 + other.a11, self.a12 + other.a12, self.a22 + other.a22)


def phi_matrix(alpha: float, beta: float, d: float) -> QuadForm2:
    """Quadratic form of the energy dissipation in the boundary traces."""
    _check_d(d)
    b = abs(beta)
    return QuadForm2(-2.0 * alpha + b, beta, b * (d - 1.0))


def psi_matrix(alpha: float, beta: float, d: float, L: float, mu1: float, mu2: float) -> QuadForm2:
    """Perturbed form governing ``V' + lambda V``."""
    _check_d(d)
    if not L > 0:
        raise ConfigurationError("L must be positive")
    if mu1 < 0 or mu2 < 0:
        raise ConfigurationError("mu1 and mu2 must be nonnegative")
    b = abs(beta)
    pert = QuadForm2(L * mu1 * (alpha**2 + 1.0) + b * mu2,
                     -L * mu1 * alpha * beta,
                     L * mu1 * beta**2)
    phi = phi_matrix(alpha, beta, d)
    # a12 written as beta*(1 - L mu1 alpha) so mu1 = 0 reproduces phi bit for bit
    return QuadForm2(phi.a11 + pert.a11, beta * (1.0 - L * mu1 * alpha), phi.a22 + pert.a22)


def _require_feasible(alpha, beta, d):
    if not check_gain_feasibility(alpha, beta, d):
        raise InfeasibleError(
            f"gains violate (2 alpha - |beta|)(1 - d) > |beta| (alpha={alpha}, beta={beta}, d={d})")


def _require_certified_L(L):
    if not (0.0 < L < SQRT3_PI):
        raise InfeasibleError(f"L outside certified range (0, sqrt(3) pi): L={L}")


def _margin(alpha, beta, d):
    # (2 alpha - |beta|)(1 - d) - |beta|, positive iff feasible
    b = abs(beta)
    return (2.0 * alpha - b) * (1.0 - d) - b


def mu1_upper_bound(alpha: float, beta: float, d: float, L: float) -> float:
    """Largest admissible ``mu1``; ``mu2(mu1)`` vanishes there."""
    _require_feasible(alpha, beta, d)
    if not L > 0:
        raise ConfigurationError("L must be positive")
    return _margin(alpha, beta, d) / (L * (1.0 - d) * (1.0 + alpha**2))


def mu2_of_mu1(alpha: float, beta: float, d: float, L: float, mu1: float) -> float:
    """Closed-form ``mu2`` that keeps the (1,1) entry of Psi at its threshold."""
    if beta == 0:
        raise ConfigurationError("mu2(mu1) is undefined for beta=0; the delay channel is absent")
    _check_d(d)
    upper = mu1_upper_bound(alpha, beta, d, L)
    if not (0.0 <= mu1 <= upper):
        raise ConfigurationError(f"mu1={mu1} outside [0, {upper}]")
    num = _margin(alpha, beta, d) - L * (1.0 - d) * (1.0 + alpha**2) * mu1
    return num / (abs(beta) * (1.0 - d))


def rate_f(mu1: float, L: float, variant: str = "proposition") -> float:
    """Poincare-type rate bound, increasing in ``mu1``."""
    _require_certified_L(L)
    if mu1 < 0:
        raise ConfigurationError("mu1 must be nonnegative")
    if variant == "theorem":
        den = L**2 * (1.0 + mu1)
    elif variant == "proposition":
        den = L**2 * (1.0 + mu1 * L)
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    return mu1 * (3.0 * math.pi**2 - L**2) / den


def rate_g(mu1: float, alpha: float, beta: float, d: float, L: float, M: float) -> float:
    """Delay rate bound, decreasing in ``mu1`` and zero at the upper bound."""
    _require_feasible(alpha, beta, d)
    if not M > 0:
        raise ConfigurationError("M must be positive")
    b = abs(beta)
    c = L * (1.0 - d) * (1.0 + alpha**2) * mu1
    num = _margin(alpha, beta, d) - c
    den = 2.0 * alpha * (1.0 - d) - b - c
    if den <= 0:
        raise ConfigurationError(f"rate_g denominator nonpositive at mu1={mu1}")
    return (1.0 - d) * num / (M * den)


def delay_rate_bound(mu2: float, d: float, M: float) -> float:
    """``mu2 (1 - d) / (M (1 + mu2))``."""
    return mu2 * (1.0 - d) / (M * (1.0 + mu2))


def optimize_mu1(alpha: float, beta: float, d: float, L: float, M: float,
                 tol: float = 1e-12, max_iter: int = 200) -> tuple[float, float]:
    """Crossing of ``f`` (proposition variant) and ``g`` by bisection.

    ``f - g`` is increasing, negative at 0 and positive at the upper bound,
    so the crossing is unique.

    Returns
    -------
    mu1_star, lambda_star
    """
    _require_feasible(alpha, beta, d)
    _require_certified_L(L)
    if beta == 0:
        raise InfeasibleError("optimizer requires beta != 0 (g undefined); use certify with mu2=0")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    hi = mu1_upper_bound(alpha, beta, d, L)
    lo = 0.0

    def h(m):
        return rate_f(m, L, "proposition") - rate_g(m, alpha, beta, d, L, M)

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = h(mid)
        if abs(val) <= tol or hi - lo <= 2.0 * np.spacing(mid):
            break
        if val < 0:
            lo = mid
        else:
            hi = mid
    return mid, rate_f(mid, L, "proposition")


@dataclass(frozen=True)
class Certificate:
    """Decay certificate ``E(t) <= zeta E(0) exp(-lambda t)``."""

    mu1: float
    mu2: float
    lam: float
    zeta: float
    variant: str
    phi: QuadForm2
    psi: QuadForm2
    feasible: bool
    alpha: float = 0.0
    beta: float = 0.0
    d: float = 0.0
    L: float = 0.0
    M: float = 0.0
    diagnostics: tuple = field(default=())

    @property
    def m(self) -> float:
        return max(self.mu1 * self.L, self.mu2)

    def bound(self, t, E0: float):
        return self.zeta * E0 * np.exp(-self.lam * np.asarray(t, dtype=float))

    def as_dict(self) -> dict:
        return {
            "mu1": self.mu1, "mu2": self.mu2, "lambda": self.lam, "zeta": self.zeta,
            "variant": self.variant,
            "phi.a11": self.phi.a11, "phi.a12": self.phi.a12, "phi.a22": self.phi.a22,
            "phi.negative_definite": self.phi.negative_definite,
            "psi.a11": self.psi.a11, "psi.a12": self.psi.a12, "psi.a22": self.psi.a22,
            "psi.negative_definite": self.psi.negative_definite,
            "feasible": self.feasible,
        }


def build_certificate(alpha: float, beta: float, d: float, L: float, M: float,
                      mu1: float, mu2: float, variant: str = "proposition") -> Certificate:
    """Assemble and check a certificate for given Lyapunov weights.

    Hard preconditions (certified ``L``, ``mu1 L < 1``, ``mu2 < 1``, positive
    weights) raise :class:`InfeasibleError`. Conditions that are the content
    of the certificate (gain feasibility, definiteness of Psi, its diagonal
    signs) are reported through ``feasible`` and ``diagnostics``.
    ``mu2 = 0`` is accepted only for ``beta = 0``, where the delay channel is
    absent and ``lambda`` comes from ``f`` alone.
    """
    _check_d(d)
    _require_certified_L(L)
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if not M > 0:
        raise ConfigurationError("M must be positive")
    if not mu1 > 0:
        raise InfeasibleError(f"mu1 > 0 violated: mu1={mu1}")
    if not mu1 * L < 1:
        raise InfeasibleError(f"mu1 L < 1 violated: mu1 L={mu1 * L}")
    if beta == 0:
        if mu2 != 0:
            raise InfeasibleError("beta=0 requires mu2=0 (no delay channel)")
    elif not mu2 > 0:
        raise InfeasibleError(f"mu2 > 0 violated: mu2={mu2}")
    if not mu2 < 1:
        raise InfeasibleError(f"mu2 < 1 violated: mu2={mu2}")

    phi = phi_matrix(alpha, beta, d)
    psi = psi_matrix(alpha, beta, d, L, mu1, mu2)
    diags = []
    if not check_gain_feasibility(alpha, beta, d):
        diags.append("(2 alpha - |beta|)(1 - d) > |beta| violated")
    if beta == 0:
        # Psi is singular in the absent delay direction; only the eta_x(L) entry matters
        if not psi.a11 < 0:
            diags.append("a11 >= 0")
    else:
        if not psi.a11 < 0:
            diags.append("a11 >= 0")
        if psi.indeterminate:
            diags.append("det(Psi) indeterminate (|det| < 1e-14)")
        elif not psi.det > 0:
            diags.append("det(Psi) <= 0")

    lam = rate_f(mu1, L, variant)
    if beta != 0:
        lam = min(lam, delay_rate_bound(mu2, d, M))
    m = max(mu1 * L, mu2)
    zeta = (1.0 + m) / (1.0 - m)
    return Certificate(mu1=mu1, mu2=mu2, lam=lam, zeta=zeta, variant=variant,
                       phi=phi, psi=psi, feasible=not diags,
                       alpha=alpha, beta=beta, d=d, L=L, M=M, diagnostics=tuple(diags))


def optimal_certificate(alpha: float, beta: float, d: float, L: float, M: float,
                        tol: float = 1e-12) -> Certificate:
    """Certificate at the optimizer crossing with ``mu2 = mu2(mu1*)``."""
    mu1, _ = optimize_mu1(alpha, beta, d, L, M, tol)
    return build_certificate(alpha, beta, d, L, M, mu1, mu2_of_mu1(alpha, beta, d, L, mu1))


def default_certificate(alpha: float, beta: float, d: float, L: float, M: float) -> Certificate:
    """Optimal certificate, or for ``beta = 0`` the ``f``-only one at half the ``mu1`` range."""
    if beta == 0:
        mu1 = 0.5 * min(mu1_upper_bound(alpha, beta, d, L), 1.0 / L)
        return build_certificate(alpha, beta, d, L, M, mu1, 0.0)
    return optimal_certificate(alpha, beta, d, L, M)


def resolvent_delay_gain_g0(lam: float, tau: float, tau_dot: float) -> float:
    """Gain of the delayed trace in the resolvent of the transport equation.

    ``exp(-lam tau)`` for ``tau_dot = 0``, otherwise
    ``(1 - tau_dot) ** (lam tau / tau_dot)``.
    """
    if not lam > 0 or not tau > 0:
        raise ConfigurationError("lambda and tau must be positive")
    if not tau_dot < 1:
        raise ConfigurationError(f"tau_dot must be < 1, got {tau_dot}")
    if tau_dot == 0:
        return math.exp(-lam * tau)
    # log1p(-x)/x stays finite for tiny |x|, where lam*tau/x alone would overflow
    return math.exp(lam * tau * (math.log1p(-tau_dot) / tau_dot))
