"""Grids, difference operators and quadrature.

The x-operators act on interior unknowns ``u[1:nx]``; boundary nodes carry
the homogeneous Dirichlet values. The third-derivative pair is built in
summation-by-parts form on an extended staggered grid so that the discrete
energy balance mirrors the continuous one exactly::

    h * (eta . eta_t + omega . omega_t) = g * a

where ``a`` is the discrete ``eta_x(L)`` and ``g`` the ``omega_x(L)`` load.
In the interior both reduce to the centred five-point stencil.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import ConfigurationError


@dataclass(frozen=True)
class SpaceGrid:
    L: float
    nx: int

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigurationError("L must be positive")
        if self.nx < 8:
            raise ConfigurationError(f"grid too coarse: nx={self.nx} < 8")

    @property
    def h(self) -> float:
        return self.L / self.nx

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.nx + 1)

    @property
    def interior(self) -> np.ndarray:
        return self.x[1:-1]

    @property
    def n_unknowns(self) -> int:
        return self.nx - 1

    def embed(self, u_int) -> np.ndarray:
        """Interior values to a full nodal vector with zero boundary values."""
        out = np.zeros(self.nx + 1)
        out[1:-1] = u_int
        return out


@dataclass(frozen=True)
class RhoGrid:
    nrho: int

    def __post_init__(self):
        if self.nrho < 4:
            raise ConfigurationError(f"nrho must be >= 4, got {self.nrho}")

    @property
    def drho(self) -> float:
        return 1.0 / self.nrho

    @property
    def rho(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nrho + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights."""
        w = np.full(self.nrho + 1, self.drho)
        w[[0, -1]] *= 0.5
        return w


@dataclass(frozen=True)
class BandedOperator:
    """Sparse linear map with a known bandwidth."""

    matrix: sp.csr_matrix
    name: str = ""

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def bandwidth(self) -> int:
        r, c = self.matrix.nonzero()
        return int(np.abs(r - c).max()) if r.size else 0

    def __matmul__(self, u):
        return self.matrix @ u

    def __call__(self, u):
        return self.matrix @ u

    def to_banded(self) -> tuple[np.ndarray, tuple[int, int]]:
        """LAPACK banded storage for :func:`scipy.linalg.solve_banded`."""
        A = self.matrix.tocoo()
        p = self.bandwidth
        ab = np.zeros((2 * p + 1, A.shape[1]))
        ab[p + A.row - A.col, A.col] = A.data
        return ab, (p, p)


@dataclass(frozen=True)
class BoundarySet:
    """Descriptor of three boundary conditions for one unknown.

    ``"eta"``: ``u(0) = u(L) = 0`` and ``u_x(0) = 0``.
    ``"omega"``: ``u(0) = u(L) = 0`` and ``u_x(L) = g`` with ``g`` affine in
    the boundary traces.
    """

    variable: str
    conditions: tuple = field(default=())

    def __post_init__(self):
        expected = {"eta": ("u(0)=0", "u(L)=0", "u_x(0)=0"),
                    "omega": ("u(0)=0", "u(L)=0", "u_x(L)=g")}
        if self.variable not in expected:
            raise ConfigurationError(f"unknown boundary set {self.variable!r}")
        if not self.conditions:
            object.__setattr__(self, "conditions", expected[self.variable])
        if len(self.conditions) != 3:
            raise ConfigurationError(
                f"boundary set needs exactly 3 conditions, got {len(self.conditions)}")

    @classmethod
    def eta(cls):
        return cls("eta")

    @classmethod
    def omega(cls):
        return cls("omega")


def trace_functional(grid: SpaceGrid) -> np.ndarray:
    """Row vector mapping interior values to the one-sided ``u_x(L)`` (uses ``u(L) = 0``)."""
    n, h = grid.n_unknowns, grid.h
    a = np.zeros(n)
    a[n - 1] = -4.0 / (2.0 * h)
    a[n - 2] = 1.0 / (2.0 * h)
    return a


def boundary_trace_eta_x_L(u: np.ndarray, grid: SpaceGrid) -> float:
    """Second-order one-sided ``u_x(L)`` from a full nodal vector."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.nx + 1,):
        raise ValueError(f"expected {grid.nx + 1} nodal values, got {u.shape}")
    return float((3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * grid.h))


def _staggered_parts(grid: SpaceGrid):
    """Building blocks of the summation-by-parts third derivative."""
    N, h, n = grid.nx, grid.h, grid.n_unknowns
    # forward difference, interior nodes -> half nodes x_{k+1/2}, k = 0..N-1
    rows = np.arange(N)
    G = sp.csr_matrix(
        (np.r_[np.full(N - 1, 1.0 / h), np.full(N - 1, -1.0 / h)],
         (np.r_[rows[:-1], rows[1:]], np.r_[np.arange(n), np.arange(n)])),
        shape=(N, n))
    # first-difference SBP operator on [0, half nodes..., L]; Q + Q^T = diag(-1, 0, ..., 0, 1)
    Q = sp.diags([np.full(N + 1, 0.5), np.full(N + 1, -0.5)], [1, -1], shape=(N + 2, N + 2)).tolil()
    Q[0, 0] = -0.5
    Q[N + 1, N + 1] = 0.5
    Q = Q.tocsr()
    a = trace_functional(grid)
    b0 = np.zeros(n)
    b0[0] = 4.0 / (2.0 * h)
    b0[1] = -1.0 / (2.0 * h)
    # eta_x on the extended grid: 0 at x=0, reflected through the trace at x=L
    Le = sp.vstack([sp.csr_matrix((1, n)), G, sp.csr_matrix(2.0 * a - G[N - 1].toarray())]).tocsr()
    # omega_x on the extended grid: one-sided at x=0, load slot at x=L
    Lw = sp.vstack([sp.csr_matrix(b0[None, :]), G, sp.csr_matrix((1, n))]).tocsr()
    return Q, Le, Lw


def d1_operator(grid: SpaceGrid, bc: str | None = None) -> BandedOperator:
    """First derivative.

    With ``bc=None`` the operator acts on all ``nx + 1`` nodes with centred
    interior rows and second-order one-sided end rows. With
    ``bc="dirichlet"`` it acts on interior unknowns with zero boundary
    values; this version is skew-symmetric and is the one used in time
    stepping.
    """
    h = grid.h
    if bc is None:
        m = grid.nx + 1
        D = sp.diags([np.full(m - 1, 0.5 / h), np.full(m - 1, -0.5 / h)], [1, -1], shape=(m, m)).tolil()
        D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
        D[m - 1, m - 3:] = np.array([1.0, -4.0, 3.0]) / (2.0 * h)
        return BandedOperator(D.tocsr(), "d1")
    if bc != "dirichlet":
        raise ConfigurationError(f"unknown d1 boundary treatment {bc!r}")
    n = grid.n_unknowns
    D = sp.diags([np.full(n - 1, 0.5 / h), np.full(n - 1, -0.5 / h)], [1, -1], shape=(n, n))
    return BandedOperator(D.tocsr(), "d1_dirichlet")


def d3_operator(grid: SpaceGrid, bc: BoundarySet) -> tuple[BandedOperator, np.ndarray]:
    """Third derivative on interior unknowns under one boundary set.

    Returns
    -------
    op : BandedOperator
        Homogeneous part.
    load : ndarray
        Coefficient of the boundary datum ``g`` (zeros for the ``eta`` set),
        so that ``u_xxx ~ op @ u + load * g``.
    """
    if not isinstance(bc, BoundarySet):
        bc = BoundarySet(str(bc))
    Q, Le, Lw = _staggered_parts(grid)
    h = grid.h
    if bc.variable == "omega":
        D = -(Le.T @ Q @ Lw) / h
        load = -np.asarray((Le.T @ Q[:, grid.nx + 1]).todense()).ravel() / h
    else:
        D = -(Lw.T @ Q @ Le) / h
        load = np.zeros(grid.n_unknowns)
    D = sp.csr_matrix(D)
    D.eliminate_zeros()
    return BandedOperator(D, f"d3_{bc.variable}"), load


def interior_d3_stencil(u: np.ndarray, h: float) -> np.ndarray:
    """Centred ``(-u[i-2] + 2u[i-1] - 2u[i+1] + u[i+2]) / (2h^3)`` on ``i = 2..n-3``."""
    u = np.asarray(u, dtype=float)
    return (-u[:-4] + 2.0 * u[1:-3] - 2.0 * u[3:-1] + u[4:]) / (2.0 * h**3)


class RhoTransport:
    """Energy-stable discretization of the scaled delay channel.

    For ``zeta = sqrt(tau) z`` the transport equation reads
    ``zeta_t = -(c/tau) zeta_rho + tau'/(2 tau) zeta`` with
    ``c = 1 - tau' rho``. The split form ``(Q C + C Q)/2`` of the
    summation-by-parts first difference discretizes both terms at once, the
    inflow ``zeta(0) = sqrt(tau) a`` is imposed by a penalty, and a weak
    fourth-difference term damps grid-scale modes. With ``H`` the trapezoid
    weights the semi-discrete system is

        H zeta' = -B zeta + (c0 / sqrt(tau)) a e0

    and satisfies

        d/dt (zeta.H.zeta / 2) = (a^2 - (1 - tau') b^2) / 2
                                 - (zeta0 - sqrt(tau) a)^2 / (2 tau) - dissipation,

    with ``b = zeta_N / sqrt(tau)``. ``B`` is stored by diagonals, offsets
    -2..2, as ``B[2 + k, i] = B_(i, i+k)``.
    """

    def __init__(self, rho_grid: RhoGrid, dissipation: float = 0.03125):
        if dissipation < 0:
            raise ConfigurationError("transport dissipation must be nonnegative")
        self.grid = rho_grid
        self.dissipation = float(dissipation)
        N = rho_grid.nrho
        self.H = rho_grid.weights
        Lm = sp.diags([np.ones(N - 1), -2.0 * np.ones(N - 1), np.ones(N - 1)], [0, 1, 2],
                      shape=(N - 1, N + 1))
        LtL = (Lm.T @ Lm).todia()
        self._ltl = np.zeros((5, N + 1))
        for k in range(-2, 3):
            d = LtL.diagonal(k)
            if k >= 0:
                self._ltl[2 + k, : N + 1 - k] = d
            else:
                self._ltl[2 + k, -k:] = d

    def generator(self, tau: float, tau_dot: float) -> np.ndarray:
        N, dr = self.grid.nrho, self.grid.drho
        c = 1.0 - tau_dot * self.grid.rho
        B = (self.dissipation / dr) * self._ltl
        B[2, 0] += 0.5 * c[0]     # -c0/2 from the split form plus the penalty c0
        B[2, N] += 0.5 * c[N]
        cm = 0.25 * (c[:-1] + c[1:])
        B[3, :N] += cm
        B[1, 1:] -= cm
        return B / tau

    @staticmethod
    def matvec(B: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = B[2] * v
        for k in (1, 2):
            out[:-k] += B[2 + k, :-k] * v[k:]
            out[k:] += B[2 - k, k:] * v[:-k]
        return out

    @staticmethod
    def banded(B: np.ndarray) -> np.ndarray:
        """LAPACK ``(2, 2)`` band storage of the matrix held by diagonals."""
        ab = np.zeros_like(B)
        for k in range(-2, 3):
            if k >= 0:
                ab[2 - k, k:] = B[2 + k, : B.shape[1] - k]
            else:
                ab[2 - k, : B.shape[1] + k] = B[2 + k, -k:]
        return ab


def quadrature(values: np.ndarray, spacing: float | SpaceGrid) -> float:
    """Composite trapezoid rule over uniformly spaced nodal values."""
    if isinstance(spacing, SpaceGrid):
        spacing = spacing.h
    v = np.asarray(values, dtype=float)
    return float(spacing * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1])))


@dataclass(frozen=True)
class Operators:
    """Everything the time stepper needs for one spatial grid."""

    grid: SpaceGrid
    d1: BandedOperator
    d3_eta: BandedOperator
    d3_omega: BandedOperator
    load: np.ndarray
    trace: np.ndarray

    @classmethod
    def build(cls, grid: SpaceGrid) -> "Operators":
        d3w, load = d3_operator(grid, BoundarySet.omega())
        d3e, _ = d3_operator(grid, BoundarySet.eta())
        return cls(grid, d1_operator(grid, "dirichlet"), d3e, d3w, load, trace_functional(grid))

    def generator(self) -> sp.csr_matrix:
        """Homogeneous linear generator on ``(eta_int, omega_int)``."""
        A = sp.bmat([[None, -(self.d1.matrix + self.d3_omega.matrix)],
                     [-(self.d1.matrix + self.d3_eta.matrix), None]])
        return A.tocsr()

    @property
    def load_vector(self) -> np.ndarray:
        """Coefficient of ``g`` in the stacked right-hand side."""
        return np.concatenate([-self.load, np.zeros(self.grid.n_unknowns)])
