"""Time integration of the delayed boundary-feedback system.

The discrete state is ``(eta, omega)`` on the x-grid plus the delay channel
``z`` on the rho-grid. In the transport channel ``z`` solves

    tau(t) z_t + (1 - tau'(t) rho) z_rho = 0,    z(t, 0) = eta_x(t, L),

and ``z(t, 1)`` is the delayed trace. Internally the channel is advanced in
the scaled variable ``sqrt(tau) z`` with a summation-by-parts split-form
operator, a weak (penalty) inflow condition at ``rho = 0`` and a small
fourth-difference dissipation. With that choice the fully discrete
theta-scheme satisfies the energy balance

    E(n+1) - E(n) = dt * [w^T Phi(tau') w / 2 - penalty - dissipation]
                    - (theta - 1/2) * |y(n+1) - y(n)|^2,

so the energy is non-increasing whenever the gains are admissible. Every
step is one monolithic linear solve. The transport part is pentadiagonal
and the rank-one boundary coupling is folded in with a Sherman-Morrison
update, so the x-system factorization is reused across steps.

The history channel reads the delayed trace from a buffer of past
``eta_x(t, L)`` values instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .analyze import energy, lyapunov_V
from .certify import Certificate
from .discretize import Operators, RhoGrid, RhoTransport, SpaceGrid, trace_functional
from .model import ConfigurationError, DelayProfile, GainConfig, SystemState

IC_KINDS = ("sine", "compatible", "zero")
Z0_KINDS = ("zero", "constant", "trace", "function")
CHANNELS = ("transport", "history")


class SolverError(RuntimeError):
    pass


class PicardDivergence(SolverError):
    pass


class HistoryError(SolverError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping parameters."""

    dt: float
    horizon: float
    theta: float = 0.5
    delay_channel: str = "transport"
    nonlinear: bool = False
    picard_tol: float = 1e-12
    picard_max_iters: int = 50
    transport_dissipation: float = 0.03125

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in [0.5, 1], got {self.theta}")
        if self.delay_channel not in CHANNELS:
            raise ConfigurationError(f"unknown delay channel {self.delay_channel!r}")
        if self.picard_max_iters < 1:
            raise ConfigurationError("picard_max_iters must be >= 1")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive")
        if not self.transport_dissipation >= 0:
            raise ConfigurationError("transport_dissipation must be nonnegative")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def step(self) -> float:
        """Step actually used: ``dt`` nudged so the steps land on ``horizon``."""
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class InitialCondition:
    """Initial ``(eta0, omega0)``.

    ``sine``: ``eta0 = A sin(pi x/L) sin(pi x/(2L))`` (the second factor
    enforces ``eta_x(0) = 0``), ``omega0 = A sin(2 pi x/L)``.
    ``compatible``: ``eta0 = A sin^2(pi x/L)``, ``omega0 = A sin^2(2 pi x/L)``,
    which also satisfies ``eta_x(L) = omega_x(L) = 0``.
    Callables ``eta``/``omega`` override the kind.
    """

    kind: str = "sine"
    amplitude: float = 1.0
    eta: Callable | None = field(default=None, compare=False)
    omega: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in IC_KINDS and self.eta is None:
            raise ConfigurationError(f"unknown initial-condition kind {self.kind!r}")

    def evaluate(self, grid: SpaceGrid) -> tuple[np.ndarray, np.ndarray, bool]:
        """Nodal ``eta0, omega0`` and whether boundary nodes had to be zeroed."""
        x, L, A = grid.x, grid.L, self.amplitude
        if self.eta is not None or self.omega is not None:
            eta = np.asarray(self.eta(x) if self.eta else np.zeros_like(x), dtype=float)
            om = np.asarray(self.omega(x) if self.omega else np.zeros_like(x), dtype=float)
        elif self.kind == "sine":
            eta = A * np.sin(np.pi * x / L) * np.sin(np.pi * x / (2.0 * L))
            om = A * np.sin(2.0 * np.pi * x / L)
        elif self.kind == "compatible":
            eta = A * np.sin(np.pi * x / L) ** 2
            om = A * np.sin(2.0 * np.pi * x / L) ** 2
        else:
            eta = np.zeros_like(x)
            om = np.zeros_like(x)
        tol = 1e-12 * max(1.0, np.abs(eta).max(), np.abs(om).max())
        projected = bool(max(abs(eta[0]), abs(eta[-1]), abs(om[0]), abs(om[-1])) > tol)
        eta = eta.copy()
        om = om.copy()
        eta[[0, -1]] = 0.0
        om[[0, -1]] = 0.0
        return eta, om, projected


@dataclass(frozen=True)
class InitialHistory:
    """Initial history ``z0(s)`` of ``eta_x(s, L)`` for ``s`` in ``[-tau(0), 0]``.

    ``trace`` holds the initial trace ``eta0_x(L)`` constant, which makes the
    delay channel continuous at ``rho = 0``.
    """

    kind: str = "zero"
    value: float = 0.0
    func: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in Z0_KINDS:
            raise ConfigurationError(f"unknown initial-history kind {self.kind!r}")
        if self.kind == "function" and self.func is None:
            raise ConfigurationError("initial history of kind 'function' needs func")

    def resolve(self, trace0: float) -> Callable:
        if self.kind == "zero":
            return lambda s: np.zeros_like(np.asarray(s, dtype=float))
        if self.kind == "constant":
            c = self.value
        elif self.kind == "trace":
            c = trace0
        else:
            f = self.func
            return lambda s: np.asarray(f(np.asarray(s, dtype=float)), dtype=float) + 0.0 * np.asarray(s)
        return lambda s: np.full_like(np.asarray(s, dtype=float), c)


def initial_state(ic: InitialCondition, grid: SpaceGrid, rho_grid: RhoGrid,
                  profile: DelayProfile, z0: InitialHistory = InitialHistory()) -> SystemState:
    """State at ``t = 0`` with ``z(0, rho) = z0(-tau(0) rho)`` and ``z(0, 0)`` set to the trace."""
    eta, om, _ = ic.evaluate(grid)
    a0 = float(trace_functional(grid) @ eta[1:-1])
    zf = z0.resolve(a0)
    z = np.asarray(zf(-profile.tau_initial * rho_grid.rho), dtype=float).copy()
    z[0] = a0
    return SystemState(0.0, eta, om, z)


def step_transport(z: np.ndarray, tau: float, tau_dot: float, inflow: float, dt: float,
                   cfl: float = 1.0, max_substeps: int = 100_000) -> np.ndarray:
    """Explicit upwind step of ``tau z_t + (1 - tau' rho) z_rho = 0`` with frozen coefficients.

    The step is sub-cycled so that each sub-step satisfies the CFL limit.
    """
    if not tau > 0:
        raise ConfigurationError("tau must be positive")
    if not tau_dot < 1:
        raise ConfigurationError("tau_dot must be < 1")
    z = np.array(z, dtype=float)
    N = z.size - 1
    drho = 1.0 / N
    rho = np.linspace(0.0, 1.0, N + 1)
    c = 1.0 - tau_dot * rho
    speed = c.max() / (tau * drho)
    nsub = max(1, math.ceil(dt * speed / cfl - 1e-12))
    if nsub > max_substeps:
        raise SolverError(f"CFL violation: {nsub} sub-steps needed (cap {max_substeps})")
    nu = (dt / nsub) * c[1:] / (tau * drho)
    z[0] = inflow
    for _ in range(nsub):
        z[1:] -= nu * (z[1:] - z[:-1])
    return z


class HistoryBuffer:
    """Ring buffer of ``(t, eta_x(t, L))`` samples with local cubic interpolation.

    Samples are pushed at uniform spacing ``dt`` starting at ``t = 0``; times
    before zero are answered by the initial history ``z0``.
    """

    def __init__(self, dt: float, span: float, z0: Callable, tau_initial: float):
        self.dt = float(dt)
        self.capacity = int(math.ceil(span / dt)) + 8
        self._t = np.empty(self.capacity)
        self._v = np.empty(self.capacity)
        self.count = 0
        self.z0 = z0
        self.tau_initial = float(tau_initial)

    def push(self, t: float, value: float) -> None:
        k = self.count
        if k and not t > self._t[(k - 1) % self.capacity]:
            raise HistoryError("history times must increase")
        self._t[k % self.capacity] = t
        self._v[k % self.capacity] = value
        self.count += 1

    @property
    def t_last(self) -> float:
        return float(self._t[(self.count - 1) % self.capacity]) if self.count else -math.inf

    def __call__(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s_arr)
        eps = 1e-12 * np.maximum(1.0, np.abs(s_arr))
        past = s_arr < 0
        if np.any(past):
            if np.any(s_arr[past] < -self.tau_initial - eps[past]):
                bad = s_arr[past].min()
                raise HistoryError(f"lookback {bad} precedes the initial history [-{self.tau_initial}, 0]")
            out[past] = self.z0(s_arr[past])
        if not np.all(past):
            out[~past] = self._lookup(s_arr[~past], eps[~past])
        return out if np.ndim(s) else float(out[0])

    def _lookup(self, s: np.ndarray, eps: np.ndarray) -> np.ndarray:
        if np.any(s > self.t_last + eps):
            raise HistoryError(f"lookback {s.max()} is after the last stored sample {self.t_last}")
        lo = max(0, self.count - self.capacity)
        hi = self.count - 1
        if lo > 0 and np.any(s < self._t[lo % self.capacity] - eps):
            raise HistoryError(f"lookback {s.min()} older than the buffer span")
        npts = min(4, hi - lo + 1)
        i = np.floor(s / self.dt).astype(int)
        start = np.clip(i - 1, lo, hi - npts + 1)
        idx = (start[:, None] + np.arange(npts)) % self.capacity
        ts, vs = self._t[idx], self._v[idx]
        # Lagrange weights on the (at most four) stencil points
        total = np.zeros_like(s)
        for j in range(npts):
            w = np.ones_like(s)
            for m in range(npts):
                if m != j:
                    w *= (s - ts[:, m]) / (ts[:, j] - ts[:, m])
            total += w * vs[:, j]
        return total


def delayed_trace(channel: str, t: float, profile: DelayProfile, source) -> float:
    """``eta_x(t - tau(t), L)`` from either channel.

    ``source`` is the ``z`` array (transport) or a :class:`HistoryBuffer`.
    """
    if channel == "transport":
        return float(np.asarray(source)[-1])
    if channel == "history":
        return float(source(t - profile.tau(t)))
    raise ConfigurationError(f"unknown delay channel {channel!r}")


@dataclass(frozen=True)
class ChannelDifference:
    """Sup-norm gap between the two delay channels on one input signal."""

    nrho: int
    dt: float
    max_abs: float
    max_rel: float
    t_worst: float
    transport_error: float
    history_error: float


def driven_channel_difference(profile: DelayProfile, signal: Callable, nrho: int, dt: float,
                              horizon: float, theta: float = 0.5,
                              dissipation: float = 0.03125) -> ChannelDifference:
    """Feed the same trace ``signal(t)`` into both delay channels and compare their outputs.

    The transport channel starts from ``z(0, rho) = signal(-tau(0) rho)`` and
    the history buffer uses ``signal`` as initial history, so both see
    identical inputs. ``transport_error`` and ``history_error`` are the sup
    distances to the exact delayed value ``signal(t - tau(t))``.
    """
    rho_grid = RhoGrid(nrho)
    n = max(1, int(round(horizon / dt)))
    dt = horizon / n
    chan = TransportChannel(rho_grid, profile, dt, theta, dissipation)
    hist = HistoryBuffer(dt, profile.M + 2.0 * dt, signal, profile.tau_initial)
    z = np.asarray(signal(-profile.tau_initial * rho_grid.rho), dtype=float)
    a = float(signal(0.0))
    hist.push(0.0, a)
    t_all = np.arange(1, n + 1) * dt
    zt = np.empty(n)
    zh = np.empty(n)
    for k, t in enumerate(t_all):
        a_new = float(signal(t))
        z = chan.step(z, t - dt, a, a_new)
        hist.push(t, a_new)
        a = a_new
        zt[k] = z[-1]
        zh[k] = hist(t - float(profile.tau(t)))
    exact = np.asarray(signal(t_all - profile.tau(t_all)), dtype=float)
    diff = np.abs(zt - zh)
    k = int(np.argmax(diff))
    scale = max(np.abs(zh).max(), np.finfo(float).tiny)
    return ChannelDifference(nrho, dt, float(diff[k]), float(diff[k] / scale), float(t_all[k]),
                             float(np.abs(zt - exact).max()), float(np.abs(zh - exact).max()))


class TransportChannel:
    """Theta-step of the scaled delay channel ``zeta = sqrt(tau) z``.

    The step is affine in the new inflow value, ``zeta(n+1) = P + Q a(n+1)``,
    which lets the caller couple it implicitly to the boundary trace.
    """

    def __init__(self, rho_grid: RhoGrid, profile: DelayProfile, dt: float,
                 theta: float = 0.5, dissipation: float = 0.03125):
        self.rho_grid = rho_grid
        self.profile = profile
        self.dt = float(dt)
        self.theta = float(theta)
        self.op = RhoTransport(rho_grid, dissipation)

    def affine(self, zeta_n: np.ndarray, a_n: float, t_n: float):
        """Return ``P, Q`` and ``tau`` at the theta-point."""
        th, dt = self.theta, self.dt
        t_th = t_n + th * dt
        tau = float(self.profile.tau(t_th))
        B = self.op.generator(tau, float(self.profile.tau_dot(t_th)))
        H = self.op.H
        # penalty weight c(0) = 1
        inflow = dt / math.sqrt(tau)
        rhs_P = H * zeta_n - (1.0 - th) * dt * self.op.matvec(B, zeta_n)
        rhs_P[0] += inflow * (1.0 - th) * a_n
        rhs_Q = np.zeros_like(rhs_P)
        rhs_Q[0] = inflow * th
        ab = self.op.banded(th * dt * B)
        ab[2] += H
        sol = solve_banded((2, 2), ab, np.column_stack([rhs_P, rhs_Q]), check_finite=False)
        return sol[:, 0], sol[:, 1], tau

    def step(self, z: np.ndarray, t_n: float, a_n: float, a_new: float) -> np.ndarray:
        """Advance ``z`` from ``t_n`` to ``t_n + dt`` with known inflow values."""
        zeta_n = math.sqrt(float(self.profile.tau(t_n))) * np.asarray(z, dtype=float)
        P, Q, _ = self.affine(zeta_n, a_n, t_n)
        return (P + Q * a_new) / math.sqrt(float(self.profile.tau(t_n + self.dt)))


class Integrator:
    """Theta-scheme stepper for one grid pair, gains, delay profile and scheme.

    The x-system ``I - theta dt A`` is factored once at construction.
    """

    def __init__(self, operators: Operators, rho_grid: RhoGrid, gains: GainConfig,
                 profile: DelayProfile, scheme: SchemeConfig):
        self.ops = operators
        self.rho_grid = rho_grid
        self.gains = gains
        self.profile = profile
        self.scheme = scheme
        self.dt = scheme.step
        self.n = operators.grid.n_unknowns
        th, dt = scheme.theta, self.dt
        A = operators.generator()
        I = sp.identity(2 * self.n, format="csc")
        self.A = A
        self.K_minus = (I - th * dt * A).tocsc()
        self.K_plus = (I + (1.0 - th) * dt * A).tocsr()
        try:
            self.lu = spla.splu(self.K_minus)
        except RuntimeError as exc:
            raise SolverError(f"singular x-system for dt={dt:g}, h={operators.grid.h:g}") from exc
        self.ell = operators.load_vector
        self.r = np.concatenate([operators.trace, np.zeros(self.n)])
        self.u = self.lu.solve(self.ell)
        self.ru = float(self.r @ self.u)
        self.D1 = operators.d1.matrix
        self.transport = TransportChannel(rho_grid, profile, dt, th, scheme.transport_dissipation)
        self.picard_counts: list[int] = []

    # helpers -----------------------------------------------------------
    def _nonlinear_force(self, y):
        eta, om = y[: self.n], y[self.n:]
        return np.concatenate([-(self.D1 @ (eta * om)), -0.5 * (self.D1 @ (om * om))])

    def _solve_coupled(self, rhs, g0, gamma):
        """Solve ``K y - dt gamma ell (r . y) = rhs`` by Sherman-Morrison."""
        x = self.lu.solve(rhs)
        denom = 1.0 - self.dt * gamma * self.ru
        if abs(denom) < 1e-14:
            raise SolverError(f"boundary coupling singular for dt={self.dt:g}, h={self.ops.grid.h:g}")
        return x + self.dt * gamma * self.u * (self.r @ x) / denom

    # one step ----------------------------------------------------------
    def step(self, state: SystemState, history: HistoryBuffer | None = None) -> SystemState:
        th, dt = self.scheme.theta, self.dt
        al, be = self.gains.alpha, self.gains.beta
        t_n = state.t
        n = self.n
        y_n = np.concatenate([state.eta[1:-1], state.omega[1:-1]])
        a_n = float(self.r @ y_n)
        base = self.K_plus @ y_n

        if self.scheme.delay_channel == "transport":
            tau_n = float(self.profile.tau(t_n))
            zeta_n = math.sqrt(tau_n) * state.z
            P, Q, tau_th = self.transport.affine(zeta_n, a_n, t_n)
            sq = math.sqrt(tau_th)
            g0 = -al * (1.0 - th) * a_n + be / sq * (th * P[-1] + (1.0 - th) * zeta_n[-1])
            gamma = th * (-al + be * Q[-1] / sq)
        else:
            if history is None:
                raise ConfigurationError("history channel needs a HistoryBuffer")
            # same theta-weighting of the delayed trace as the transport channel;
            # a point sample at t_theta recycles the undamped sawtooth mode
            t_new = t_n + dt
            b_n = history(t_n - float(self.profile.tau(t_n)))
            b_new = history(t_new - float(self.profile.tau(t_new)))
            g0 = -al * (1.0 - th) * a_n + be * (th * b_new + (1.0 - th) * b_n)
            gamma = -al * th

        rhs = base + dt * self.ell * g0
        if self.scheme.nonlinear:
            f_n = self._nonlinear_force(y_n)
            y = y_n
            for it in range(1, self.scheme.picard_max_iters + 1):
                forcing = dt * (th * self._nonlinear_force(y) + (1.0 - th) * f_n)
                y_new = self._solve_coupled(rhs + forcing, g0, gamma)
                diff = np.linalg.norm(y_new - y)
                y = y_new
                if diff <= self.scheme.picard_tol * np.linalg.norm(y):
                    break
            else:
                raise PicardDivergence(
                    f"Picard iteration did not converge in {self.scheme.picard_max_iters} "
                    f"iterations at t={t_n:g} (last update {diff:.3e})")
            self.picard_counts.append(it)
        else:
            y = self._solve_coupled(rhs, g0, gamma)

        a_new = float(self.r @ y)
        t_new = t_n + dt
        if self.scheme.delay_channel == "transport":
            z_new = (P + Q * a_new) / math.sqrt(float(self.profile.tau(t_new)))
        else:
            z_new = state.z.copy()
            z_new[0] = a_new
        grid = self.ops.grid
        return SystemState(t_new, grid.embed(y[:n]), grid.embed(y[n:]), z_new)


_CACHE: dict = {}


def _integrator(operators, rho_grid, gains, profile, scheme):
    key = (id(operators), rho_grid, gains, profile, scheme)
    integ = _CACHE.get(key)
    if integ is None or integ.ops is not operators:
        if len(_CACHE) > 8:
            _CACHE.clear()
        integ = _CACHE[key] = Integrator(operators, rho_grid, gains, profile, scheme)
    return integ


def step_linear(state: SystemState, operators: Operators, gains: GainConfig,
                profile: DelayProfile, scheme: SchemeConfig,
                history: HistoryBuffer | None = None) -> SystemState:
    """One linear theta-step; the integrator is cached per configuration."""
    if scheme.nonlinear:
        scheme = replace(scheme, nonlinear=False)
    rho_grid = RhoGrid(state.z.size - 1)
    return _integrator(operators, rho_grid, gains, profile, scheme).step(state, history)


def step_nonlinear(state: SystemState, operators: Operators, gains: GainConfig,
                   profile: DelayProfile, scheme: SchemeConfig,
                   history: HistoryBuffer | None = None) -> SystemState:
    """One theta-step with Picard iteration on ``(eta omega)_x`` and ``omega omega_x``."""
    if not scheme.nonlinear:
        raise ConfigurationError("step_nonlinear requires scheme.nonlinear=True")
    rho_grid = RhoGrid(state.z.size - 1)
    return _integrator(operators, rho_grid, gains, profile, scheme).step(state, history)


@dataclass
class SimulationConfig:
    L: float
    nx: int
    nrho: int
    gains: GainConfig
    profile: DelayProfile
    scheme: SchemeConfig
    ic: InitialCondition = InitialCondition()
    z0: InitialHistory = InitialHistory()
    certificate: Certificate | None = None
    snapshot_every: float | None = None
    record_every: int = 1


@dataclass
class SimulationRecord:
    """Recorded observables; all series share the time axis ``t``."""

    t: np.ndarray
    E: np.ndarray
    V: np.ndarray
    eta_x_L: np.ndarray
    z1: np.ndarray
    z1_history: np.ndarray
    tau: np.ndarray
    tau_dot: np.ndarray
    dt: float
    L: float
    beta: float
    alpha: float
    snap_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    snap_eta: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    snap_omega: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    snap_z: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    picard_iters: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    z0_norm2: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def series_table(self) -> np.ndarray:
        return np.column_stack([self.t, self.E, self.V, self.eta_x_L, self.z1])


def run_simulation(config: SimulationConfig) -> SimulationRecord:
    """Integrate to the horizon and record energy, Lyapunov functional and traces."""
    grid = SpaceGrid(config.L, config.nx)
    rho_grid = RhoGrid(config.nrho)
    ops = Operators.build(grid)
    scheme, prof, gains = config.scheme, config.profile, config.gains
    integ = Integrator(ops, rho_grid, gains, prof, scheme)
    dt = integ.dt
    nsteps = scheme.n_steps

    eta0, om0, projected = config.ic.evaluate(grid)
    state = initial_state(config.ic, grid, rho_grid, prof, config.z0)
    a0 = float(state.z[0])
    z0f = config.z0.resolve(a0)
    history = HistoryBuffer(dt, prof.M + 2.0 * dt, z0f, prof.tau_initial)
    history.push(0.0, a0)

    use_history = scheme.delay_channel == "history"
    cert = config.certificate
    mu1, mu2 = (cert.mu1, cert.mu2) if cert is not None else (None, None)
    beta = gains.beta
    rho = rho_grid.rho

    def hist_z(st):
        # delay field reconstructed from the history: z(t, rho) = eta_x(t - tau(t) rho, L)
        return history(st.t - float(prof.tau(st.t)) * rho)

    def observe(st):
        z = st.z
        if use_history:
            z = hist_z(st)
            st = SystemState(st.t, st.eta, st.omega, z)
        E = energy(st, prof, beta, config.L)
        V = lyapunov_V(st, prof, beta, config.L, mu1, mu2)[0] if mu1 is not None else np.nan
        zh = history(st.t - float(prof.tau(st.t)))
        return E, V, float(st.z[0]), float(z[-1]), zh

    nrec = nsteps // config.record_every + 1
    t_s = np.empty(nrec)
    obs = np.empty((nrec, 5))
    snap_stride = None
    if config.snapshot_every:
        snap_stride = max(1, int(round(config.snapshot_every / dt)))
    snaps = ([], [], [], [])

    def snapshot(st):
        snaps[0].append(st.t)
        snaps[1].append(st.eta.copy())
        snaps[2].append(st.omega.copy())
        snaps[3].append(hist_z(st) if use_history else st.z.copy())

    t_s[0] = 0.0
    obs[0] = observe(state)
    if snap_stride:
        snapshot(state)
    rec = 1
    for k in range(1, nsteps + 1):
        state = integ.step(state, history if use_history else None)
        # exact grid time avoids drift in t
        state = SystemState(k * dt, state.eta, state.omega, state.z)
        history.push(state.t, float(state.z[0]))
        if k % config.record_every == 0:
            t_s[rec] = state.t
            obs[rec] = observe(state)
            rec += 1
        if snap_stride and k % snap_stride == 0:
            snapshot(state)
    t_s, obs = t_s[:rec], obs[:rec]

    z_init = np.asarray(z0f(-prof.tau_initial * rho), dtype=float)
    z0_norm2 = float(trapezoid(z_init**2, rho))
    meta = {
        "L": config.L, "nx": config.nx, "nrho": config.nrho, "dt": dt, "steps": nsteps,
        "theta": scheme.theta, "horizon": scheme.horizon, "delay_channel": scheme.delay_channel,
        "nonlinear": scheme.nonlinear, "alpha": gains.alpha, "beta": gains.beta,
        "delay_kind": prof.kind, "tau0": prof.tau0, "M": prof.M, "d": prof.d,
        "ic_kind": config.ic.kind, "ic_amplitude": config.ic.amplitude, "z0_kind": config.z0.kind,
        "ic_projected": projected, "no_delay_channel": beta == 0,
        "conservative": gains.conservative,
    }
    if cert is not None:
        meta.update({"cert_mu1": cert.mu1, "cert_mu2": cert.mu2, "cert_lambda": cert.lam,
                     "cert_zeta": cert.zeta, "cert_variant": cert.variant})
    picard = np.asarray(integ.picard_counts, dtype=int)
    if picard.size:
        meta.update({"picard_max": int(picard.max()), "picard_mean": float(picard.mean())})
    out = SimulationRecord(
        t=t_s, E=obs[:, 0], V=obs[:, 1], eta_x_L=obs[:, 2], z1=obs[:, 3], z1_history=obs[:, 4],
        tau=np.asarray(prof.tau(t_s)), tau_dot=np.asarray(prof.tau_dot(t_s)),
        dt=dt * config.record_every, L=config.L, beta=beta, alpha=gains.alpha,
        picard_iters=picard, z0_norm2=z0_norm2, metadata=meta,
    )
    if snap_stride:
        out.snap_t = np.asarray(snaps[0])
        out.snap_eta = np.asarray(snaps[1])
        out.snap_omega = np.asarray(snaps[2])
        out.snap_z = np.asarray(snaps[3])
    return out
