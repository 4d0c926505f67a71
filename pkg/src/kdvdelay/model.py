"""Domain types and scalar feasibility checks.

Gains, delay profiles and the spatial domain are plain immutable values.
The checks here are the closed-form conditions a configuration has to meet
before a decay certificate can be issued for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

SQRT3_PI = math.sqrt(3.0) * math.pi

DELAY_KINDS = ("constant", "sinusoidal", "tabulated")


class ConfigurationError(ValueError):
    """Raised for parameter values outside the admissible set."""


def _check_d(d: float) -> None:
    if not (0.0 <= d < 1.0):
        raise ConfigurationError(f"delay-derivative bound d={d!r} outside [0, 1)")


@dataclass(frozen=True)
class GainConfig:
    """Boundary feedback gains: damping ``alpha`` and delayed gain ``beta``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")
        if self.alpha == 0 and self.beta != 0:
            raise ConfigurationError("alpha=0 is only allowed together with beta=0")

    @property
    def conservative(self) -> bool:
        return self.alpha == 0 and self.beta == 0

    def feasible(self, d: float) -> bool:
        return check_gain_feasibility(self.alpha, self.beta, d)


@dataclass(frozen=True)
class DomainConfig:
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigurationError(f"L must be positive, got {self.L}")

    @property
    def certified(self) -> bool:
        return self.L < SQRT3_PI


@dataclass(frozen=True)
class DelayProfile:
    """Time-varying delay with declared bounds.

    ``tau0`` is the declared positive lower bound of the delay, ``M`` the
    declared upper bound and ``d`` the declared bound on the derivative.
    The bounds are inputs; :func:`validate_delay_profile` audits them.

    Use the ``constant``, ``sinusoidal`` and ``tabulated`` constructors.
    """

    kind: str
    tau0: float
    M: float
    d: float
    value: float = 0.0
    mean: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    times: tuple = ()
    values: tuple = ()
    interpolation: str = "cubic"
    _spline: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ConfigurationError(f"unknown delay kind {self.kind!r}")
        if not self.tau0 > 0:
            raise ConfigurationError(f"tau0 must be positive, got {self.tau0}")
        _check_d(self.d)
        if self.kind == "sinusoidal" and not self.mean - abs(self.amplitude) > 0:
            raise ConfigurationError("sinusoidal delay must stay positive (mean - |amplitude| > 0)")
        if self.kind == "tabulated":
            t = np.asarray(self.times, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2:
                raise ConfigurationError("tabulated delay needs matching 1-d time/value columns (>= 2 rows)")
            if np.any(np.diff(t) <= 0):
                raise ConfigurationError("tabulated delay: time column is not strictly increasing")
            if self.interpolation not in ("cubic", "linear"):
                raise ConfigurationError(f"unknown interpolation rule {self.interpolation!r}")
            if self.interpolation == "cubic":
                spline = CubicSpline(t, v, bc_type="not-a-knot" if t.size > 3 else "natural")
                object.__setattr__(self, "_spline", spline)

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value: float, M: float | None = None, d: float = 0.0) -> "DelayProfile":
        return cls("constant", tau0=value, M=value if M is None else M, d=d, value=value)

    @classmethod
    def sinusoidal(cls, mean: float, amplitude: float, frequency: float,
                   M: float | None = None, d: float | None = None,
                   tau0: float | None = None) -> "DelayProfile":
        """``tau(t) = mean + amplitude*sin(frequency*t)``; bounds default to the exact ones."""
        a = abs(amplitude)
        return cls(
            "sinusoidal",
            tau0=mean - a if tau0 is None else tau0,
            M=mean + a if M is None else M,
            d=a * abs(frequency) if d is None else d,
            mean=mean, amplitude=amplitude, frequency=frequency,
        )

    @classmethod
    def tabulated(cls, times: Sequence[float], values: Sequence[float], M: float, d: float,
                  tau0: float | None = None, interpolation: str = "cubic") -> "DelayProfile":
        values = tuple(float(v) for v in values)
        return cls("tabulated", tau0=min(values) if tau0 is None else tau0, M=M, d=d,
                   times=tuple(float(t) for t in times), values=values,
                   interpolation=interpolation)

    # evaluation ---------------------------------------------------------
    def tau(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.value)
        elif self.kind == "sinusoidal":
            out = self.mean + self.amplitude * np.sin(self.frequency * t)
        else:
            out = self._table(t, 0)
        return out if out.ndim else float(out)

    def tau_dot(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.zeros_like(t)
        elif self.kind == "sinusoidal":
            out = self.amplitude * self.frequency * np.cos(self.frequency * t)
        else:
            out = self._table(t, 1)
        return out if out.ndim else float(out)

    def _table(self, t, nu):
        tt = np.asarray(self.times)
        # held constant outside the table
        tc = np.clip(t, tt[0], tt[-1])
        if self._spline is not None:
            out = self._spline(tc, nu)
        elif nu == 0:
            out = np.interp(tc, tt, self.values)
        else:
            slopes = np.diff(self.values) / np.diff(tt)
            idx = np.clip(np.searchsorted(tt, tc, side="right") - 1, 0, slopes.size - 1)
            out = slopes[idx]
        if nu:
            out = np.where((t < tt[0]) | (t > tt[-1]), 0.0, out)
        return out

    @property
    def tau_initial(self) -> float:
        return float(self.tau(0.0))


@dataclass(frozen=True)
class DelayValidationReport:
    passed: bool
    tau_min: float
    tau_max: float
    tau_dot_max: float
    tau_ddot_max: float
    violations: tuple
    horizon: float
    samples: int
    starts_at_minimum: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"delay profile validation: {status}",
                 f"  tau range  [{self.tau_min:.6g}, {self.tau_max:.6g}]",
                 f"  max tau'   {self.tau_dot_max:.6g}"]
        lines += [f"  violation: {v}" for v in self.violations]
        return "\n".join(lines)


def validate_delay_profile(profile: DelayProfile, horizon: float, samples: int = 10001) -> DelayValidationReport:
    """Sample the delay on ``[0, horizon]`` and audit the declared bounds."""
    if not horizon > 0:
        raise ConfigurationError("horizon must be positive")
    if samples < 2:
        raise ConfigurationError("need at least two samples")
    t = np.linspace(0.0, horizon, samples)
    tau = np.asarray(profile.tau(t), dtype=float)
    tau_dot = np.asarray(profile.tau_dot(t), dtype=float)
    tau_ddot = np.abs(np.gradient(tau_dot, t)) if samples > 2 else np.zeros(1)

    # relative slack absorbs round-off in analytic kinds
    eps = 1e-12 * max(1.0, profile.M)
    violations = []
    if tau.min() < profile.tau0 - eps:
        violations.append(f"tau(t) >= tau0: min tau = {tau.min():.6g} < tau0 = {profile.tau0:.6g}")
    if tau.max() > profile.M + eps:
        violations.append(f"tau(t) <= M: max tau = {tau.max():.6g} > M = {profile.M:.6g}")
    if tau_dot.max() > profile.d + 1e-12:
        violations.append(f"tau'(t) <= d: max tau' = {tau_dot.max():.6g} > d = {profile.d:.6g}")
    if not np.all(np.isfinite(tau_ddot)):
        violations.append("tau'' not bounded on samples")
    return DelayValidationReport(
        passed=not violations,
        tau_min=float(tau.min()), tau_max=float(tau.max()),
        tau_dot_max=float(tau_dot.max()), tau_ddot_max=float(tau_ddot.max()),
        violations=tuple(violations), horizon=float(horizon), samples=int(samples),
        starts_at_minimum=bool(tau[0] <= tau.min() + eps),
    )


def check_gain_feasibility(alpha: float, beta: float, d: float) -> bool:
    """Strict gain condition ``(2 alpha - |beta|)(1 - d) > |beta|``."""
    _check_d(d)
    b = abs(beta)
    return (2.0 * alpha - b) * (1.0 - d) > b


def alpha_lower_bound(beta: float, d: float) -> float:
    """Smallest damping gain (exclusive) that makes ``beta`` admissible."""
    _check_d(d)
    return 0.5 * abs(beta) * (2.0 - d) / (1.0 - d)


def critical_lengths(k_max: int) -> np.ndarray:
    """Sorted set ``{2 pi / sqrt(3) * sqrt(k^2 + k l + l^2) : 1 <= k, l <= k_max}``."""
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    k = np.arange(1, k_max + 1, dtype=float)
    kk, ll = np.meshgrid(k, k)
    return np.unique(2.0 * math.pi / math.sqrt(3.0) * np.sqrt(kk**2 + kk * ll + ll**2))


def is_critical_length(L: float, k_max: int = 100, tol: float = 1e-9) -> bool:
    if not L > 0 or not tol > 0:
        raise ConfigurationError("L and tol must be positive")
    return bool(np.any(np.abs(critical_lengths(k_max) - L) <= tol))


@dataclass(frozen=True)
class SystemState:
    """Discrete state at time ``t``.

    ``eta`` and ``omega`` live on all x-grid nodes (boundary values included),
    ``z`` on all rho-grid nodes, with ``z[0]`` equal to the discrete
    ``eta_x(t, L)``.
    """

    t: float
    eta: np.ndarray
    omega: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("eta", "omega", "z"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.eta.shape != self.omega.shape:
            raise ValueError("eta and omega must share the x-grid")
