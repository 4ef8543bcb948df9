"""Time-local generator: cut-diagram compositions, order recursion, and propagation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .baths import DiscreteBath, super_correlation_lags
from .liouville import SQRT2, SystemModel, SystemState, rotation_superop, trace_row, unvec, vec
from .moments import MomentSeries, TimeGrid, as_bath_provider, compute_moments, sigma_superops, trapezoid_weights

MAX_COMPOSITION_ORDER = 12


@dataclass(frozen=True)
class Composition:
    """Ordered partition ``(n_1, ..., n_k)`` of ``n``; a connected diagram cut ``k - 1`` times."""

    parts: tuple

    def __post_init__(self):
        if not self.parts or any(int(p) != p or p < 1 for p in self.parts):
            raise ValueError(f"invalid composition {self.parts}")

    @property
    def n(self):
        return sum(self.parts)

    @property
    def sign(self):
        return -1 if len(self.parts) % 2 == 0 else 1

    def term(self):
        head, *rest = self.parts
        return "·".join([f"Ṁ({head})"] + [f"M({p})" for p in rest])


def enumerate_compositions(n: int):
    """All ``2^(n-1)`` compositions of ``n`` in descending lexicographic order."""
    if n < 1 or n > MAX_COMPOSITION_ORDER:
        raise ValueError(f"n must be between 1 and {MAX_COMPOSITION_ORDER}, got {n}")
    out = []
    for cuts in itertools.product((False, True), repeat=n - 1):
        parts, run = [], 1
        for cut in cuts:
            if cut:
                parts.append(run)
                run = 1
            else:
                run += 1
        parts.append(run)
        out.append(tuple(parts))
    out.sort(reverse=True)
    return [Composition(p) for p in out]


@dataclass(frozen=True)
class GeneratorSeries:
    """Generator terms ``G^(n)`` on a grid, each of shape ``(n_points, d*d, d*d)``."""

    orders: dict
    grid: TimeGrid | None = None
    meta: dict = field(default_factory=dict)

    def total(self, max_order=None):
        keys = [n for n in sorted(self.orders) if max_order is None or n <= max_order]
        if not keys:
            raise ValueError("no generator orders to sum")
        return sum(self.orders[n] for n in keys)

    def norms(self):
        """Largest Frobenius norm over the grid, per order."""
        return {n: float(np.max(np.linalg.norm(G, axis=(-2, -1)))) for n, G in sorted(self.orders.items())}


def _moment_arrays(moments):
    M, Mdot = {}, {}
    for n, m in moments.items():
        if isinstance(m, MomentSeries):
            M[n], Mdot[n] = m.value, m.derivative
        else:
            M[n], Mdot[n] = m
    return M, Mdot


def generator_via_recursion(moments, n_max, grid=None) -> GeneratorSeries:
    """``G^(n) = Mdot^(n) - sum_{m<n} G^(m) M^(n-m)``, pointwise in time.

    ``moments`` maps order to a :class:`MomentSeries` or an ``(M, Mdot)`` pair.
    """
    M, Mdot = _moment_arrays(moments)
    missing = [n for n in range(1, n_max + 1) if n not in M]
    if missing:
        raise ValueError(f"missing moment orders {missing}")
    G = {}
    for n in range(1, n_max + 1):
        acc = Mdot[n].copy()
        for m in range(1, n):
            acc -= G[m] @ M[n - m]
        G[n] = acc
    if grid is None:
        grid = next((m.grid for m in moments.values() if isinstance(m, MomentSeries)), None)
    return GeneratorSeries(G, grid)


def generator_via_compositions(moments, n):
    """``G^(n)`` as the signed sum over compositions of ``Mdot^(n_1) M^(n_2) ... M^(n_k)``."""
    M, Mdot = _moment_arrays(moments)
    total = None
    for comp in enumerate_compositions(n):
        head, *rest = comp.parts
        if head not in Mdot or any(p not in M for p in rest):
            raise ValueError(f"missing moment orders for composition {comp.parts}")
        term = Mdot[head]
        for p in rest:
            term = term @ M[p]
        term = comp.sign * term
        total = term if total is None else total + term
    return total


def tcl2_generator(model: SystemModel, bath, grid: TimeGrid) -> GeneratorSeries:
    """Second-order generator from its closed form, plus the first-order mean-field term.

    ``G^(2)(t) = -S^-(t) int_{t0}^t ds sum_s S^s(s) D[+, -s](t, s)`` with the
    fluctuation correlation, and ``G^(1)(t) = -i sqrt(2) <B> S^-(t)``, a
    Hamiltonian shift ``<B> S``. The time integral uses the trapezoid rule.
    """
    provider = as_bath_provider(bath)
    corr = provider.correlation() if isinstance(provider, DiscreteBath) else provider
    Sm, Sp = sigma_superops(model, grid.times - grid.t0)
    N, L = len(grid), model.dim ** 2
    D = super_correlation_lags(corr, grid.dt, N)
    dpp, dpm = D[("+", "+")], D[("+", "-")]
    G2 = np.zeros((N, L, L), complex)
    for k in range(1, N):
        w = trapezoid_weights(k, grid.dt)
        lag = k - np.arange(k + 1)
        inner = np.einsum("j,jab->ab", w * dpp[lag], Sm[: k + 1]) + np.einsum("j,jab->ab", w * dpm[lag], Sp[: k + 1])
        G2[k] = -Sm[k] @ inner
    G1 = -1j * SQRT2 * corr.mean * Sm
    return GeneratorSeries({1: G1, 2: G2}, grid)


# --------------------------------------------------------------------------
# propagation
# --------------------------------------------------------------------------

def _midpoints(G):
    """Generator at half steps by 4-point Lagrange interpolation (cubic; linear if fewer than 4 points)."""
    n = len(G)
    if n < 4:
        return 0.5 * (G[1:] + G[:-1])
    mid = np.empty((n - 1,) + G.shape[1:], dtype=G.dtype)
    mid[1:-1] = (-G[:-3] + 9 * G[1:-2] + 9 * G[2:-1] - G[3:]) / 16
    mid[0] = (5 * G[0] + 15 * G[1] - 5 * G[2] + G[3]) / 16
    mid[-1] = (G[-4] - 5 * G[-3] + 15 * G[-2] + 5 * G[-1]) / 16
    return mid


def _rk4_linear(G, G_mid, y0, h):
    """Fourth-order Runge-Kutta for ``y' = G(t) y`` given ``G`` on the grid and at half steps."""
    ys = np.empty((len(G),) + y0.shape, dtype=complex)
    y = np.array(y0, dtype=complex)
    ys[0] = y
    for k in range(len(G) - 1):
        k1 = G[k] @ y
        k2 = G_mid[k] @ (y + 0.5 * h * k1)
        k3 = G_mid[k] @ (y + 0.5 * h * k2)
        k4 = G[k + 1] @ (y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[k + 1] = y
    return ys


def solve_linear(G, y0, grid: TimeGrid):
    """Integrate ``y' = G(t) y`` on the grid; ``G`` has shape ``(n_points, L, L)``."""
    G = np.asarray(G)
    if len(G) != len(grid):
        raise ValueError(f"generator has {len(G)} points, grid has {len(grid)}")
    return _rk4_linear(G, _midpoints(G), np.asarray(y0, dtype=complex), grid.dt)


def step_halving_error(G, y0, grid: TimeGrid):
    """Max difference between step ``dt`` and step ``2 dt`` RK4 at the shared grid points.

    The coarse run takes its half-step generator values from the odd grid
    points, so it involves no interpolation.
    """
    G = np.asarray(G)
    fine = solve_linear(G, y0, grid)
    n_coarse = (len(G) - 1) // 2
    if n_coarse < 1:
        return 0.0
    coarse = _rk4_linear(G[: 2 * n_coarse + 1 : 2], G[1 : 2 * n_coarse : 2], np.asarray(y0, complex), 2 * grid.dt)
    return float(np.max(np.abs(coarse - fine[: 2 * n_coarse + 1 : 2])))


@dataclass(frozen=True)
class Trajectory:
    """Reduced density matrices on a grid, shape ``(n_points, d, d)``."""

    grid: TimeGrid
    rho: np.ndarray
    picture: str = "interaction"

    def to_schrodinger(self, H_S):
        if self.picture == "schrodinger":
            return self
        rho = np.array([
            unvec(rotation_superop(H_S, t - self.grid.t0) @ vec(r)) for t, r in zip(self.grid.times, self.rho)
        ])
        return Trajectory(self.grid, rho, "schrodinger")

    def traces(self):
        return np.real(np.trace(self.rho, axis1=1, axis2=2))

    def purities(self):
        return np.real(np.einsum("kij,kji->k", self.rho, self.rho))


def propagate(G, rho0: SystemState, grid: TimeGrid) -> Trajectory:
    """Solve ``d rho / dt = G(t) rho`` in the interaction picture with fixed-step RK4.

    ``G`` is a :class:`GeneratorSeries` (all orders summed) or an array of
    superoperators on the grid. Half-step generator values come from cubic
    interpolation.
    """
    if isinstance(G, GeneratorSeries):
        G = G.total()
    if rho0.picture != "interaction":
        raise ValueError("initial state must be given in the interaction picture")
    d = rho0.dim
    vs = solve_linear(G, vec(rho0.rho), grid)
    rho = vs.reshape(len(vs), d, d).transpose(0, 2, 1)
    return Trajectory(grid, rho)


@dataclass(frozen=True)
class DynamicalMap:
    """Interaction-picture map ``Lambda(t, t0)`` on a grid, shape ``(n_points, L, L)``."""

    grid: TimeGrid
    maps: np.ndarray
    H_S: np.ndarray | None = None

    def schrodinger(self, k):
        """Schrodinger-picture map at grid point ``k``."""
        if self.H_S is None:
            return self.maps[k]
        return rotation_superop(self.H_S, self.grid.times[k] - self.grid.t0) @ self.maps[k]

    def trace_defect(self):
        d = int(round(np.sqrt(self.maps.shape[-1])))
        row = trace_row(d)
        return float(np.max(np.abs(row @ self.maps - row)))


def dynamical_map_from_generator(G, grid: TimeGrid, H_S=None) -> DynamicalMap:
    """Solve ``dLambda/dt = G(t) Lambda`` with ``Lambda(t0) = I``."""
    if isinstance(G, GeneratorSeries):
        G = G.total()
    L = np.asarray(G).shape[-1]
    return DynamicalMap(grid, solve_linear(G, np.eye(L), grid), None if H_S is None else np.asarray(H_S))


def tcl_generator(model: SystemModel, bath, grid: TimeGrid, order: int) -> GeneratorSeries:
    """Moments up to ``order`` followed by the recursion."""
    moments = compute_moments(model, bath, grid, order)
    return generator_via_recursion(moments, order, grid)
