"""Nonperturbative resummation of the time-local generator.

The generator series ``sum_n G^(n)`` is factored through its lowest
nonvanishing order ``G^(l)``: ``G = G^(l) R`` with the relative series
``R = 1 + sum_n R^(n)`` and ``R^(n) = pinv(G^(l)) G^(l+n)``. ``R`` is treated
as a dynamical map in its own right. Its time-local generator ``K``
(``dR/dt = K R``) is expanded with the same order recursion as the
physical generator. Truncating ``K`` and integrating the auxiliary
propagator ``dX/dt = K X`` gives the resummed generator ``G^(l) X``.
Applying the construction again to ``K`` gives deeper levels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .moments import TimeGrid
from .tcl import GeneratorSeries, generator_via_recursion, solve_linear

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 1e-10
LOWEST_ORDER_TOL = 1e-12
DEFAULT_EPS_STEPS = 5


def _svd_inverse(A, cutoff):
    if not 0 < cutoff < 1:
        raise ValueError(f"cutoff must lie in (0, 1), got {cutoff}")
    U, s, Vh = np.linalg.svd(np.asarray(A, dtype=complex))
    if s.size == 0 or s[0] == 0:
        raise ValueError("no retained singular values")
    keep = s >= cutoff * s[0]
    inv = (Vh[keep].conj().T / s[keep]) @ U[:, keep].conj().T
    return inv, int(keep.sum()), float(s[0] / s[keep][-1])


def regularized_inverse(A, cutoff=DEFAULT_CUTOFF):
    """Moore-Penrose inverse keeping singular values above ``cutoff * s_max``."""
    return _svd_inverse(A, cutoff)[0]


@dataclass(frozen=True)
class HierarchyLevel:
    """One level of the generator hierarchy: its series and lowest nonvanishing order.

    Level 1 is the physical generator.
    """

    k: int
    lowest_order: int
    series: dict
    grid: TimeGrid | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("hierarchy level index must be at least 1")
        if self.lowest_order < 1:
            raise ValueError("lowest order must be at least 1")

    @classmethod
    def from_series(cls, series, k=1, grid=None, tol=LOWEST_ORDER_TOL):
        """Drop negligible orders and identify the lowest one that survives.

        An order counts as vanishing when its largest norm on the grid is below
        ``tol`` times the largest norm among all orders.
        """
        if isinstance(series, GeneratorSeries):
            grid = series.grid if grid is None else grid
            series = series.orders
        norms = {n: float(np.max(np.abs(g))) for n, g in series.items()}
        scale = max(norms.values(), default=0.0)
        if scale == 0.0:
            raise ValueError("all generator orders vanish on the grid")
        kept = {n: np.asarray(series[n]) for n in sorted(series) if norms[n] > tol * scale}
        return cls(k, min(kept), kept, grid)

    @property
    def base(self):
        return self.series[self.lowest_order]


@dataclass(frozen=True)
class InverseDiagnostics:
    """Per-time rank and condition number of the lowest-order term on the retained subspace."""

    times: np.ndarray
    rank: np.ndarray
    condition: np.ndarray

    def to_dict(self):
        return {
            "t": self.times.tolist(),
            "rank": self.rank.tolist(),
            "condition_number": self.condition.tolist(),
        }


def relative_series(level: HierarchyLevel, cutoff=DEFAULT_CUTOFF, start=0):
    """Relative series ``R^(n) = pinv(G^(l)) G^(l+n)`` on grid points ``start:``.

    Returns ``(terms, diagnostics)``. ``terms[0]`` is the identity; relative
    orders without a matching absolute order are omitted.
    """
    base = level.base[start:]
    N, L = base.shape[0], base.shape[-1]
    inv = np.empty_like(base)
    rank = np.empty(N, dtype=int)
    cond = np.empty(N)
    for i in range(N):
        inv[i], rank[i], cond[i] = _svd_inverse(base[i], cutoff)
    full = np.max(rank)
    for i in np.flatnonzero(rank < full):
        log.warning("pseudo-inverse rank drops to %d (of %d) at grid point %d", rank[i], full, start + i)
    terms = {0: np.broadcast_to(np.eye(L, dtype=complex), (N, L, L)).copy()}
    for n_abs, g in level.series.items():
        if n_abs > level.lowest_order:
            terms[n_abs - level.lowest_order] = inv @ g[start:]
    times = level.grid.times[start:] if level.grid is not None else np.arange(start, start + N, dtype=float)
    return terms, InverseDiagnostics(times, rank, cond)


def time_derivative(f, dt):
    """Centered differences in the interior, second-order one-sided at the ends."""
    f = np.asarray(f)
    if len(f) < 3:
        raise ValueError("at least 3 grid points are needed for a derivative")
    return np.gradient(f, dt, axis=0, edge_order=2)


def level_series(relative, dt):
    """Series of the generator of the relative series, ``K^(n)``, from the order recursion."""
    orders = sorted(n for n in relative if n >= 1)
    if not orders:
        return {}
    n_max = orders[-1]
    shape = relative[0].shape
    moments = {
        n: (relative[n], time_derivative(relative[n], dt)) if n in relative else (np.zeros(shape, complex),) * 2
        for n in range(1, n_max + 1)
    }
    return generator_via_recursion(moments, n_max).orders


def level2_generator(relative, truncation, dt):
    """Truncated generator of the relative series: ``sum_{m <= truncation} K^(m)``."""
    available = max((n for n in relative if n >= 1), default=0)
    if truncation < 1 or truncation > available:
        raise ValueError(f"truncation {truncation} exceeds the available relative orders (max {available})")
    series = level_series({n: g for n, g in relative.items() if n <= truncation}, dt)
    return sum(series[m] for m in range(1, truncation + 1))


@dataclass(frozen=True)
class ResummedGenerator:
    """Resummed generator ``base @ auxiliary`` on a grid; the auxiliary propagator solves ``dX/dt = K X``."""

    base: np.ndarray
    auxiliary: np.ndarray
    resummed: np.ndarray
    grid: TimeGrid | None = None
    start: int = 0
    diagnostics: dict = field(default_factory=dict)


def resummed_generator(base, K, grid: TimeGrid, start=0, X0=None) -> ResummedGenerator:
    """Integrate ``dX/dt = K X`` from grid point ``start`` and form ``base X``.

    ``K`` covers grid points ``start:``. Before ``start`` the auxiliary
    propagator is held at its initial value ``X0`` (identity by default).
    """
    base = np.asarray(base)
    K = np.asarray(K)
    N, L = base.shape[0], base.shape[-1]
    if K.shape != (N - start, L, L):
        raise ValueError(f"K has shape {K.shape}, expected {(N - start, L, L)}")
    X0 = np.eye(L, dtype=complex) if X0 is None else np.asarray(X0, dtype=complex)
    X = np.empty((N, L, L), complex)
    X[:start] = X0
    if N - start > 1:
        X[start:] = solve_linear(K, X0, grid.sub(start))
    else:
        X[start:] = X0
    return ResummedGenerator(base, X, base @ X, grid, start)


def resum(series, grid: TimeGrid, truncation=None, cutoff=DEFAULT_CUTOFF, eps_steps=DEFAULT_EPS_STEPS,
          initial="matched") -> ResummedGenerator:
    """Two-level resummation of a generator series.

    The hierarchy starts ``eps_steps`` grid points after ``t0``, since the
    lowest-order term vanishes at ``t0``. ``initial`` selects the auxiliary
    propagator's value at the starting point:

    ``"matched"``
        the truncated ``R`` there, so that the resummed generator agrees with the
        truncated series at the start; before it, ``X`` is the truncated
        ``R`` pointwise (identity at ``t0``). Expanding the result in the
        coupling then reproduces the series through the truncation order.
    ``"identity"``
        ``X = 1`` up to the starting point. This leaves a boundary term of
        the same order as the first correction.
    """
    level = HierarchyLevel.from_series(series, grid=grid)
    if not 0 <= eps_steps < len(grid) - 2:
        raise ValueError(f"eps_steps must lie in [0, {len(grid) - 3}], got {eps_steps}")
    gt, diag = relative_series(level, cutoff, eps_steps)
    available = max((n for n in gt if n >= 1), default=0)
    L = level.base.shape[-1]
    if available == 0:
        K = np.zeros((len(grid) - eps_steps, L, L), complex)
        truncation = 0
    else:
        truncation = available if truncation is None else truncation
        K = level2_generator(gt, truncation, grid.dt)
    if initial == "identity":
        X0 = None
    elif initial == "matched":
        X0 = sum(gt[n][0] for n in gt if n <= truncation)
    else:
        raise ValueError(f"unknown initial condition {initial!r}")
    out = resummed_generator(level.base, K, grid, eps_steps, X0)
    if initial == "matched" and eps_steps > 1:
        early = HierarchyLevel(1, level.lowest_order, {n: g[: eps_steps] for n, g in level.series.items()})
        gt_early, _ = relative_series(early, cutoff, start=1)
        out.auxiliary[1:eps_steps] = sum(gt_early[n] for n in gt_early if n <= truncation)
        out.resummed[:eps_steps] = level.base[:eps_steps] @ out.auxiliary[:eps_steps]
    if eps_steps > 0:
        out.auxiliary[0] = np.eye(L)
        out.resummed[0] = level.base[0]
    diagnostics = {
        "lowest_order": level.lowest_order,
        "truncation": truncation,
        "eps_steps": eps_steps,
        "initial": initial,
        "cutoff": cutoff,
        "inverse": diag.to_dict(),
        "max_condition_number": float(diag.condition.max()),
        "min_rank": int(diag.rank.min()),
        "trace_defect": _trace_defect(out.resummed[eps_steps:]),
    }
    return ResummedGenerator(out.base, out.auxiliary, out.resummed, grid, eps_steps, diagnostics)


def _trace_defect(G):
    d = int(round(np.sqrt(G.shape[-1])))
    if d * d != G.shape[-1]:
        return None
    row = np.eye(d).reshape(-1)
    return float(np.max(np.abs(row @ G), initial=0.0))


def nested_resummation(series, grid: TimeGrid, depth, cutoff=DEFAULT_CUTOFF, eps_steps=0):
    """Nested resummation through ``depth`` hierarchy levels.

    Level ``k`` is approximated by its lowest order times the time-ordered
    exponential of level ``k + 1``; the deepest level keeps its full
    truncated series. Every auxiliary propagator starts at the matched value
    of its relative series. With ``depth=2`` this is :func:`resum` with
    ``initial="matched"``.

    Returns the approximate level-1 generator on grid points ``eps_steps:``.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if isinstance(series, GeneratorSeries):
        series = series.orders
    sub = grid.sub(eps_steps)
    series = {n: np.asarray(g)[eps_steps:] for n, g in series.items()}
    return _nested(series, sub, depth, cutoff, 1)


def _nested(series, grid, depth, cutoff, k):
    if depth == 1:
        return sum(series.values())
    if all(not np.any(g) for g in series.values()):
        return sum(series.values())
    level = HierarchyLevel.from_series(series, k=k, grid=grid)
    gt, _ = relative_series(level, cutoff)
    if len(gt) == 1:
        return level.base
    K = _nested(level_series(gt, grid.dt), grid, depth - 1, cutoff, k + 1)
    X0 = sum(gt.values())[0]
    X = solve_linear(K, X0, grid)
    return level.base @ X
