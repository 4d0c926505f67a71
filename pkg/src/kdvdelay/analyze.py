"""Energy, Lyapunov functional, decay fits and bound checks on recorded runs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .certify import VARIANTS, Certificate, QuadForm2, rate_f
from .discretize import quadrature
from .model import SystemState


class AnalysisError(ValueError):
    pass


def _rho_weights(nz: int) -> tuple[np.ndarray, np.ndarray]:
    rho = np.linspace(0.0, 1.0, nz)
    w = np.full(nz, 1.0 / (nz - 1))
    w[[0, -1]] *= 0.5
    return rho, w


def energy(state: SystemState, profile, beta: float, L: float) -> float:
    """``E = 1/2 int (eta^2 + omega^2) dx + |beta|/2 tau(t) int z^2 drho``."""
    h = L / (state.eta.size - 1)
    Ex = 0.5 * quadrature(state.eta**2 + state.omega**2, h)
    if beta == 0:
        return Ex
    _, w = _rho_weights(state.z.size)
    return Ex + 0.5 * abs(beta) * float(profile.tau(state.t)) * float(w @ state.z**2)


def lyapunov_V(state: SystemState, profile, beta: float, L: float,
               mu1: float, mu2: float) -> tuple[float, float, float]:
    """``V = E + mu1 V1 + mu2 V2``.

    ``V1 = 1/2 int x eta omega dx`` and ``V2 = |beta|/2 tau(t) int (1 - rho) z^2 drho``.

    Returns
    -------
    V, V1, V2
    """
    n = state.eta.size - 1
    x = np.linspace(0.0, L, n + 1)
    V1 = 0.5 * quadrature(x * state.eta * state.omega, L / n)
    if beta == 0:
        V2 = 0.0
    else:
        rho, w = _rho_weights(state.z.size)
        V2 = 0.5 * abs(beta) * float(profile.tau(state.t)) * float(w @ ((1.0 - rho) * state.z**2))
    E = energy(state, profile, beta, L)
    return E + mu1 * V1 + mu2 * V2, V1, V2


class DecayRateRegressor(BaseEstimator, RegressorMixin):
    """Single-exponential fit ``E(t) = exp(intercept - rate * t)``.

    Least squares on ``(t, ln E)``. ``window`` keeps the trailing fraction
    of the samples.
    """

    def __init__(self, window=0.5):
        self.window = window

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2)
        if not 0 < self.window <= 1:
            raise AnalysisError("window fraction must lie in (0, 1]")
        t = X[:, 0]
        start = min(int(np.floor((1.0 - self.window) * t.size)), t.size - 2)
        t, y = t[start:], y[start:]
        if np.any(y <= 0) or not np.all(np.isfinite(y)):
            raise AnalysisError("nonpositive energy in fit window (conserved or zero run?)")
        slope, intercept = np.polynomial.polynomial.polyfit(t, np.log(y), 1)[::-1]
        resid = np.log(y) - (intercept + slope * t)
        self.rate_ = -slope
        self.intercept_ = intercept
        self.window_ = (float(t[0]), float(t[-1]))
        self.residual_ = float(np.sqrt(np.mean(resid**2)))
        return self

    def predict(self, X):
        check_is_fitted(self, "rate_")
        t = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return np.exp(self.intercept_ - self.rate_ * t)


@dataclass(frozen=True)
class DecayFit:
    lambda_fit: float
    intercept: float
    t_a: float
    t_b: float
    residual: float


def fit_decay_rate(record, window: float = 0.5) -> DecayFit:
    """Fit the decay rate of ``record.E`` over the last ``window`` of the record.

    ``record`` may also be a ``(t, E)`` pair.
    """
    t, E = (record.t, record.E) if hasattr(record, "E") else record
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    reg = DecayRateRegressor(window=window).fit(t[:, None], E)
    return DecayFit(float(reg.rate_), float(reg.intercept_), *reg.window_, reg.residual_)


@dataclass(frozen=True)
class BoundReport:
    lam: float
    zeta: float
    slack: float
    max_ratio: float
    t_worst: float
    passed: bool
    vacuous: bool = False
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "zeta": self.zeta, "slack": self.slack,
                "max_ratio": self.max_ratio, "t_worst": self.t_worst,
                "pass": self.passed, "vacuous": self.vacuous, **self.diagnostics}


def safe_rate(certificate: Certificate) -> float:
    """Certified rate with the smaller of the two ``f`` denominators."""
    lam = certificate.lam
    for variant in VARIANTS:
        lam = min(lam, rate_f(certificate.mu1, certificate.L, variant))
    return lam


def verify_bound(record, certificate: Certificate | tuple, slack: float = 0.05) -> BoundReport:
    """Check ``E(t) <= zeta E(0) exp(-lambda t) (1 + slack)`` along the record.

    ``certificate`` may be a :class:`Certificate`, checked at
    :func:`safe_rate`, or an explicit ``(lambda, zeta)`` pair.
    """
    if isinstance(certificate, Certificate):
        lam, zeta = safe_rate(certificate), certificate.zeta
    else:
        lam, zeta = certificate
    t = np.asarray(record.t, dtype=float)
    E = np.asarray(record.E, dtype=float)
    if t.size == 0:
        raise AnalysisError("empty record")
    if E[0] == 0:
        return BoundReport(lam, zeta, slack, 0.0, float(t[0]), True, vacuous=True)
    ratio = E / (zeta * E[0] * np.exp(-lam * t))
    k = int(np.argmax(ratio))
    return BoundReport(lam, zeta, slack, float(ratio[k]), float(t[k]),
                       bool(ratio[k] <= 1.0 + slack),
                       diagnostics={"E0": float(E[0]), "E_final": float(E[-1])})


@dataclass(frozen=True)
class ResidualReport:
    t_half: np.ndarray
    residual: np.ndarray
    quad_term: np.ndarray
    max_abs: float
    E0: float


def instantaneous_phi(alpha: float, beta: float, tau_dot: float) -> QuadForm2:
    """Dissipation form with ``tau'(t)`` in place of its bound ``d``."""
    b = abs(beta)
    return QuadForm2(-2.0 * alpha + b, beta, b * (tau_dot - 1.0))


def dissipation_residual(record, gains, profile, t_min: float = 0.0) -> ResidualReport:
    """Residual of ``dE/dt = 1/2 w^T Phi w`` between consecutive steps.

    ``w`` is the midpoint average of ``(eta_x(L), delayed trace)`` and the
    form uses ``tau'`` at the half step. ``max_abs`` is taken over half steps
    with ``t >= t_min``; a fixed ``t_min > 0`` excludes the initial layer of
    data that is incompatible with the feedback boundary condition.
    """
    t = np.asarray(record.t, dtype=float)
    if t.size < 2:
        raise AnalysisError("missing snapshots: need at least two consecutive steps")
    dts = np.diff(t)
    if not np.allclose(dts, record.dt, rtol=1e-9, atol=0.0):
        raise AnalysisError("missing snapshots: record is not sampled at every step")
    th = 0.5 * (t[1:] + t[:-1])
    if not np.any(th >= t_min):
        raise AnalysisError(f"no half steps after t_min={t_min}")
    a = 0.5 * (record.eta_x_L[1:] + record.eta_x_L[:-1])
    b = 0.5 * (record.z1[1:] + record.z1[:-1])
    phi = instantaneous_phi(gains.alpha, gains.beta, np.asarray(profile.tau_dot(th)))
    quad = 0.5 * phi(a, b)
    r = np.diff(record.E) / dts - quad
    return ResidualReport(th, r, quad, float(np.abs(r[th >= t_min]).max()), float(record.E[0]))


@dataclass(frozen=True)
class LyapunovDecayReport:
    lam: float
    tol: float
    max_ratio: float
    t_worst: float
    passed: bool


def lyapunov_decay_check(record, lam: float, tol: float = 1e-3) -> LyapunovDecayReport:
    """Per-step check ``V(k+1) <= V(k) exp(-lam dt) (1 + tol)`` on the recorded ``V``."""
    V = np.asarray(record.V, dtype=float)
    t = np.asarray(record.t, dtype=float)
    if V.size < 2 or not np.all(np.isfinite(V)):
        raise AnalysisError("record carries no Lyapunov series (run without certificate?)")
    prev = V[:-1] * np.exp(-lam * np.diff(t))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prev > 0, V[1:] / prev, np.where(V[1:] <= 0, 0.0, np.inf))
    k = int(np.argmax(ratio))
    return LyapunovDecayReport(lam, tol, float(ratio[k]), float(t[k + 1]), bool(ratio[k] <= 1.0 + tol))


@dataclass(frozen=True)
class KatoReport:
    ratio: float
    lhs: float
    rhs: float
    constant: float
    T: float
    vacuous: bool = False
    note: str = ""


def kato_constant(L: float, T: float, alpha: float) -> float:
    return max(1.0, L + T, (alpha**2 + 0.5) * L)


def kato_smoothing_report(record, T: float) -> KatoReport:
    """Space-time ``int int (eta_x^2 + omega_x^2)`` over ``[0, T]`` against its a-priori bound."""
    st = np.asarray(record.snap_t)
    if st.size < 2 or st[0] > 0 or st[-1] < T - 1e-9 * max(1.0, T):
        raise AnalysisError("snapshots do not cover [0, T]")
    keep = st <= T + 1e-9 * max(1.0, T)
    st = st[keep]
    eta, om = record.snap_eta[keep], record.snap_omega[keep]
    h = record.L / (eta.shape[1] - 1)
    grad2 = (np.diff(eta, axis=1) ** 2 + np.diff(om, axis=1) ** 2).sum(axis=1) / h
    lhs = float(trapezoid(grad2, st))
    x0 = float(quadrature(eta[0] ** 2 + om[0] ** 2, h))
    C = kato_constant(record.L, T, record.alpha)
    rhs = C * (x0 + record.z0_norm2)
    note = ""
    if record.alpha == 0 and record.beta == 0:
        note = "a-priori estimate was derived for admissible gains; evaluated for bookkeeping only"
    if rhs == 0:
        return KatoReport(0.0, lhs, rhs, C, T, vacuous=True, note="zero initial data")
    return KatoReport(lhs / rhs, lhs, rhs, C, T, note=note)
