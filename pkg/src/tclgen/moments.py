"""Moments ``M^(n)(t)`` of the reduced dynamical map and their top-vertex derivatives.

``M^(n)(t) = (-i)^n sum_sigma int_{t > t_n > ... > t_1 > t0}
S^{s_n}(t_n) ... S^{s_1}(t_1) Tr_B[B^{-s_n}(t_n) ... B^{-s_1}(t_1) rho_B]``

and ``Mdot^(n)(t)`` is the same expression with the latest vertex pinned at
``t`` (never a numerical derivative of ``M``).

Two engines are provided.

Gaussian baths (:class:`~tclgen.baths.BathCorrelation`)
    Bath moments are Wick sums of two-point components. The ordered simplex
    is integrated with the *symmetrized product trapezoid rule*: a point with
    tied indices is weighted by ``(number of distinct permutations) / k!``
    times the product of trapezoid weights on ``[t0, t]``. For an integrand
    symmetric under relabelling this is exactly ``1/k!`` times the product
    rule on the cube, so product identities between moments (cumulant
    termination for pure dephasing) hold to rounding. Cost is
    ``O(n_steps^3)`` for order 4 and ``O(n_steps^2)`` for order 2.

Discrete baths (:class:`~tclgen.baths.DiscreteBath`)
    The nested integrals are the order-by-order expansion of the joint
    interaction-picture evolution. They are integrated as the
    block-triangular ODE ``d/dt Phi_n = V(t) Phi_{n-1}`` with fourth-order
    Runge-Kutta (``V`` evaluated exactly at half steps), tracing the bath at
    the end. Cost is ``O(n_steps)`` per order and the bath moments are exact,
    so non-Gaussian baths are handled.

The interaction picture is referenced to ``grid.t0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .baths import BathCorrelation, DiscreteBath, SpectralDensity, correlation_from_spectral_density, super_correlation_lags
from .liouville import SQRT2, SystemModel, anticommutator_superop, commutator_superop, interaction_picture_ops

log = logging.getLogger(__name__)

MAX_ORDER = 4
# largest grid for which the (n_steps, n_steps, L, L) Wick kernel is held in memory
MAX_WICK_KERNEL_BYTES = 1 << 30


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("grid.dt must be positive")
        if self.n_steps < 1 or int(self.n_steps) != self.n_steps:
            raise ValueError("grid.n_steps must be a positive integer")
        if not math.isfinite(self.t0 + self.n_steps * self.dt):
            raise ValueError("grid end time is not finite")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self):
        return self.t0 + self.dt * self.n_steps

    def __len__(self):
        return self.n_steps + 1

    def index(self, t, tol=1e-9):
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.dt - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a point of the grid")
        return k

    def sub(self, start):
        """Grid starting at point ``start`` of this one."""
        return TimeGrid(self.t0 + start * self.dt, self.dt, self.n_steps - start)


@dataclass(frozen=True)
class MomentSeries:
    """``M^(n)`` and ``Mdot^(n)`` sampled on a grid, arrays of shape ``(n_points, d*d, d*d)``."""

    order: int
    value: np.ndarray
    derivative: np.ndarray
    grid: TimeGrid | None = None


def as_bath_provider(bath):
    """Normalize a bath description to a correlation function or a discrete bath."""
    if isinstance(bath, (BathCorrelation, DiscreteBath)):
        return bath
    if isinstance(bath, SpectralDensity):
        return correlation_from_spectral_density(bath)
    raise TypeError(f"cannot compute bath moments from {type(bath).__name__}")


def trapezoid_weights(k, dt):
    """Trapezoid weights of the points ``0..k`` on ``[t0, t0 + k dt]``."""
    w = np.full(k + 1, dt)
    w[0] *= 0.5
    w[k] *= 0.5
    if k == 0:
        w[0] = 0.0
    return w


def cumulative_trapezoid(f, dt):
    """Cumulative trapezoid integral along axis 0, starting at zero."""
    out = np.zeros_like(f)
    if len(f) > 1:
        out[1:] = np.cumsum(0.5 * dt * (f[1:] + f[:-1]), axis=0)
    return out


def sigma_superops(model: SystemModel, times):
    """Interaction-picture ``S^-(t)`` and ``S^+(t)`` on the given times (relative to ``t0``)."""
    S_t = interaction_picture_ops(model.S, model.H_S, times)
    Sm = np.array([commutator_superop(s) for s in S_t])
    Sp = np.array([anticommutator_superop(s) for s in S_t])
    return Sm, Sp


# --------------------------------------------------------------------------
# Gaussian (Wick) engine
# --------------------------------------------------------------------------

class _WickQuadrature:
    def __init__(self, model: SystemModel, corr: BathCorrelation, grid: TimeGrid):
        self.grid = grid
        self.dt = grid.dt
        self.N = grid.n_steps + 1
        self.L = model.dim ** 2
        self.mean = corr.mean
        self.Sm, self.Sp = sigma_superops(model, grid.times - grid.t0)
        self.D = super_correlation_lags(corr, self.dt, self.N)
        leak = max(np.max(np.abs(self.D[("-", s)])) for s in "+-")
        if leak > 1e-13:
            raise ValueError(f"commutator bath components do not vanish (max {leak:.2e})")
        self._E_full = None

    def _D_later(self, sigma_later, lag, with_mean=False):
        """Components ``D[-sigma_later, +]`` and ``D[-sigma_later, -]`` at the given lags."""
        a = "+" if sigma_later == "-" else "-"
        dpp = self.D[(a, "+")][lag]
        dpm = self.D[(a, "-")][lag]
        if with_mean and a == "+":
            dpp = dpp + 2 * self.mean ** 2
        return dpp, dpm

    def E_row(self, k, sigma_later="-", with_mean=False):
        """``E(k, j) = sum_s S^s(t_j) D[-sigma_later, -s](t_k, t_j)`` for ``j = 0..k``."""
        lag = k - np.arange(k + 1)
        dpp, dpm = self._D_later(sigma_later, lag, with_mean)
        # earlier vertex with system label '-' pairs with bath '+', and vice versa
        return self.Sm[: k + 1] * dpp[:, None, None] + self.Sp[: k + 1] * dpm[:, None, None]

    def E_full(self):
        if self._E_full is None:
            nbytes = self.N * self.N * self.L * self.L * 16
            if nbytes > MAX_WICK_KERNEL_BYTES:
                raise MemoryError(
                    f"order-4 Wick quadrature on {self.N} points needs {nbytes / 2**30:.1f} GiB; reduce n_steps"
                )
            i = np.arange(self.N)
            lag = np.clip(i[:, None] - i[None, :], 0, None)
            dpp, dpm = self._D_later("-", lag)
            E = self.Sm[None] * dpp[..., None, None] + self.Sp[None] * dpm[..., None, None]
            E[lag == 0] = 0.0
            E[i, i] = self.Sm * self.D[("+", "+")][0] + self.Sp * self.D[("+", "-")][0]
            self._E_full = E
        return self._E_full

    def top(self, k, sigma_top):
        return self.Sm[k] if sigma_top == "-" else self.Sp[k]

    # -- order 1 -------------------------------------------------------------
    def order1(self, sigma_top="-"):
        b = self.mean if sigma_top == "-" else 0.0
        top = self.Sm if sigma_top == "-" else self.Sp
        Mdot = -1j * SQRT2 * b * top
        M = cumulative_trapezoid(-1j * SQRT2 * self.mean * self.Sm, self.dt)
        return M, Mdot

    # -- order 2 -------------------------------------------------------------
    def order2(self, sigma_top="-", with_mean=True):
        N, L, dt = self.N, self.L, self.dt
        Mdot = np.zeros((N, L, L), complex)
        T = np.zeros((N, L, L), complex)  # trapezoid sum over [t0, t_k] of E(k, .)
        for k in range(1, N):
            w = trapezoid_weights(k, dt)
            T[k] = np.einsum("j,jab->ab", w, self.E_row(k, "-", with_mean))
            if sigma_top == "-":
                Mdot[k] = -self.Sm[k] @ T[k]
            else:
                Mdot[k] = -self.Sp[k] @ np.einsum("j,jab->ab", w, self.E_row(k, "+", with_mean))
        # symmetrized 2-simplex rule, expressed through the per-row sums T
        P = np.einsum("kab,kbc->kac", self.Sm, T)
        M = np.zeros((N, L, L), complex)
        if N > 1:
            interior = np.concatenate([np.zeros((1, L, L)), np.cumsum(P[1:], axis=0)])
            E00 = self.E_row(0, "-", with_mean)[0]
            corner = (dt / 2) * (dt / 4) * self.Sm[0] @ E00
            for k in range(1, N):
                Ekk = self.E_row(k, "-", with_mean)[k]
                inner = dt * (interior[k - 1] - interior[0]) if k > 1 else 0.0
                last = (dt / 2) * self.Sm[k] @ (T[k] - (dt / 4) * Ekk)
                M[k] = -(inner + corner + last)
        return M, Mdot

    # -- order 4 -------------------------------------------------------------
    def order4_derivative(self, sigma_top="-"):
        N, L, dt = self.N, self.L, self.dt
        E = self.E_full()
        Sm = self.Sm
        Mdot = np.zeros((N, L, L), complex)
        for k in range(1, N):
            w = trapezoid_weights(k, dt)
            n = k + 1
            Ek = E[:n, :n]
            top_row = self.E_row(k, sigma_top)
            h = np.tril(np.ones((n, n)))
            h[np.diag_indices(n)] = 0.5
            H = h * w[None, :]  # H[i, j] = h(i, j) w_j, j <= i
            # pairing (k, i3)(i2, i1)
            A = np.einsum("ij,ijab->iab", H, Ek)
            B = np.einsum("ij,jab->iab", H, Sm[:n] @ A)
            P1 = np.einsum("i,iab,ibc->ac", w, top_row, B)
            # pairing (k, i2)(i3, i1): Q[i3, i2] = sum_{i1 <= i2} h(i2, i1) w1 E(i3, i1)
            wE = Ek * w[None, :, None, None]
            Q = np.cumsum(wE, axis=1) - 0.5 * wE
            R = np.einsum("ij,jab,ijbc->iac", H, top_row, Q)
            P2 = np.einsum("i,iab,ibc->ac", w, Sm[:n], R)
            # pairing (k, i1)(i3, i2)
            wT = top_row * w[:, None, None]
            F = np.cumsum(wT, axis=0) - 0.5 * wT
            R3 = np.einsum("ij,ijab,jbc->iac", H, Ek, F)
            P3 = np.einsum("i,iab,ibc->ac", w, Sm[:n], R3)
            # all three indices tied: weight w^3/6 instead of w^3/4
            diag = Ek[np.arange(n), np.arange(n)]
            corr = (
                np.einsum("iab,ibc,icd->iad", top_row, Sm[:n], diag)
                + np.einsum("iab,ibc,icd->iad", Sm[:n], top_row, diag)
                + np.einsum("iab,ibc,icd->iad", Sm[:n], diag, top_row)
            )
            corr = -np.einsum("i,iab->ab", w ** 3 / 12.0, corr)
            Mdot[k] = self.top(k, sigma_top) @ (P1 + P2 + P3 + corr)
        return Mdot


def _wick_moments(model, corr, grid, n_max, sigma_top="-"):
    engine = _WickQuadrature(model, corr, grid)
    N, L = engine.N, engine.L
    if n_max >= 3 and abs(corr.mean) > 0:
        raise NotImplementedError("Gaussian baths with a nonzero mean are supported up to order 2")
    out = {}
    M1, Md1 = engine.order1(sigma_top)
    out[1] = MomentSeries(1, M1, Md1, grid)
    if n_max >= 2:
        M2, Md2 = engine.order2(sigma_top)
        out[2] = MomentSeries(2, M2, Md2, grid)
    if n_max >= 3:
        zero = np.zeros((N, L, L), complex)
        out[3] = MomentSeries(3, zero, zero.copy(), grid)
    if n_max >= 4:
        Md4 = engine.order4_derivative(sigma_top)
        # only orders >= 5 of the generator would need this; trapezoid is sufficient
        M4 = cumulative_trapezoid(engine.order4_derivative("-") if sigma_top != "-" else Md4, grid.dt)
        out[4] = MomentSeries(4, M4, Md4, grid)
    return out


# --------------------------------------------------------------------------
# discrete-bath engine
# --------------------------------------------------------------------------

class _DysonIntegrator:
    """Order-by-order joint evolution ``Phi_n`` with axes (sys out, sys in, bath, bath)."""

    def __init__(self, model: SystemModel, bath: DiscreteBath, grid: TimeGrid):
        self.model = model
        self.bath = bath
        self.grid = grid
        self.L = model.dim ** 2
        E, V = np.linalg.eigh(model.H_S)
        self._sys = (E, V, V.conj().T @ model.S @ V)
        Eb, Vb = np.linalg.eigh(bath.H_B)
        self._bath = (Eb, Vb, Vb.conj().T @ bath.B @ Vb)

    def _ops(self, t):
        """``S^-(t), S^+(t)`` and ``B(t)`` at time ``t`` after ``t0``."""
        E, V, Se = self._sys
        S_t = V @ (Se * np.exp(1j * np.subtract.outer(E, E) * t)) @ V.conj().T
        Eb, Vb, Be = self._bath
        B_t = Vb @ (Be * np.exp(1j * np.subtract.outer(Eb, Eb) * t)) @ Vb.conj().T
        return commutator_superop(S_t), anticommutator_superop(S_t), B_t

    @staticmethod
    def _apply_V(ops, Phi, sigma_top=None):
        """``-i sum_s S^s (x) B^{-s}`` applied to ``Phi``; optionally only the ``S^{sigma_top}`` term."""
        Sm, Sp, B = ops
        BPhi = B @ Phi
        PhiB = Phi @ B
        out = 0
        if sigma_top in (None, "-"):
            out = out + np.einsum("ab,bjxy->ajxy", Sm, (BPhi + PhiB) / SQRT2)
        if sigma_top in (None, "+"):
            out = out + np.einsum("ab,bjxy->ajxy", Sp, (BPhi - PhiB) / SQRT2)
        return -1j * out

    def run(self, n_max, sigma_top="-"):
        grid, L = self.grid, self.L
        dB = self.bath.dim
        N = grid.n_steps + 1
        h = grid.dt
        Phi = [np.zeros((L, L, dB, dB), complex) for _ in range(n_max + 1)]
        Phi[0] = np.einsum("aj,xy->ajxy", np.eye(L), self.bath.rho_B)
        M = np.zeros((n_max + 1, N, L, L), complex)
        Mdot = np.zeros((n_max + 1, N, L, L), complex)

        def record(k, ops):
            for n in range(1, n_max + 1):
                M[n, k] = np.trace(Phi[n], axis1=2, axis2=3)
                Mdot[n, k] = np.trace(self._apply_V(ops, Phi[n - 1], sigma_top), axis1=2, axis2=3)

        def rhs(ops, Y):
            return [np.zeros_like(Y[0])] + [self._apply_V(ops, Y[n - 1]) for n in range(1, n_max + 1)]

        ops0 = self._ops(0.0)
        record(0, ops0)
        for k in range(N - 1):
            t = k * h
            ops_mid = self._ops(t + h / 2)
            ops_end = self._ops(t + h)
            k1 = rhs(ops0, Phi)
            k2 = rhs(ops_mid, [p + 0.5 * h * d for p, d in zip(Phi, k1)])
            k3 = rhs(ops_mid, [p + 0.5 * h * d for p, d in zip(Phi, k2)])
            k4 = rhs(ops_end, [p + h * d for p, d in zip(Phi, k3)])
            Phi = [p + (h / 6) * (a + 2 * b + 2 * c + d) for p, a, b, c, d in zip(Phi, k1, k2, k3, k4)]
            ops0 = ops_end
            record(k + 1, ops0)
        return {n: MomentSeries(n, M[n], Mdot[n], grid) for n in range(1, n_max + 1)}


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

def compute_moments(model: SystemModel, bath, grid: TimeGrid, n_max: int, sigma_top="-"):
    """Moments ``M^(n)`` and ``Mdot^(n)`` for ``n = 1..n_max`` on ``grid``.

    ``sigma_top`` selects the system label of the pinned top vertex in
    ``Mdot``; the physical choice is ``'-'``, and ``'+'`` must give zero.
    """
    if not 1 <= n_max <= MAX_ORDER:
        raise ValueError(f"moment order must be between 1 and {MAX_ORDER}, got {n_max}")
    if sigma_top not in ("+", "-"):
        raise ValueError("sigma_top must be '+' or '-'")
    bath = as_bath_provider(bath)
    if isinstance(bath, DiscreteBath):
        if model.dim * bath.dim > 256:
            raise ValueError("system and bath exceed 256 dimensions")
        return _DysonIntegrator(model, bath, grid).run(n_max, sigma_top)
    return _wick_moments(model, bath, grid, n_max, sigma_top)


def compute_moment(model, bath, n, grid):
    """``M^(n)`` on the grid, shape ``(n_points, d*d, d*d)``."""
    return compute_moments(model, bath, grid, n)[n].value


def compute_moment_derivative(model, bath, n, grid, sigma_top="-"):
    """``Mdot^(n)`` (top vertex pinned at ``t``) on the grid."""
    return compute_moments(model, bath, grid, n, sigma_top=sigma_top)[n].derivative
