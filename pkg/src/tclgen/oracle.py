"""Exact reference dynamics of a system coupled to a small discrete bath.

Everything is computed from one eigendecomposition of the total
Hamiltonian ``H = H_S (x) 1 + 1 (x) H_B + lambda S (x) B``. The system is
the first tensor factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .baths import DiscreteBath, MAX_BATH_DIM
from .liouville import SystemModel, is_hermitian, rotation_superop, trace_row, unvec, vec
from .moments import TimeGrid
from .resummation import regularized_inverse
from .tcl import DynamicalMap

log = logging.getLogger(__name__)

TRUNCATION_TOL = 1e-6


@dataclass(frozen=True)
class FullModel:
    system: SystemModel
    bath: DiscreteBath
    coupling: float = 1.0

    def __post_init__(self):
        if self.dim > MAX_BATH_DIM:
            raise ValueError(f"total dimension {self.dim} exceeds {MAX_BATH_DIM}")

    @property
    def d_S(self):
        return self.system.dim

    @property
    def d_B(self):
        return self.bath.dim

    @property
    def dim(self):
        return self.d_S * self.d_B

    @property
    def rho_B0(self):
        return self.bath.rho_B

    @cached_property
    def H_total(self):
        I_S, I_B = np.eye(self.d_S), np.eye(self.d_B)
        H = (
            np.kron(self.system.H_S, I_B)
            + np.kron(I_S, self.bath.H_B)
            + self.coupling * np.kron(self.system.S, self.bath.B)
        )
        if not is_hermitian(H):
            raise ValueError("assembled total Hamiltonian is not Hermitian")
        return H

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.H_total)

    def evolve(self, X, t):
        """``U(t) X U(t)^dagger`` with ``U(t) = exp(-i H t)``; ``X`` need not be a state."""
        E, V = self._eig
        Xe = V.conj().T @ X @ V
        phase = np.exp(-1j * np.subtract.outer(E, E) * t)
        return V @ (Xe * phase) @ V.conj().T

    def system_op(self, A):
        return np.kron(np.asarray(A, dtype=complex), np.eye(self.d_B))

    def product_state(self, rho_S):
        return np.kron(np.asarray(rho_S, dtype=complex), self.rho_B0)


def partial_trace_bath(rho_total, d_S, d_B):
    """Trace out the second tensor factor; works on stacked arrays ``(..., d_S d_B, d_S d_B)``."""
    rho_total = np.asarray(rho_total)
    if rho_total.shape[-2:] != (d_S * d_B, d_S * d_B):
        raise ValueError(f"array of shape {rho_total.shape} is not a {d_S}x{d_B} operator")
    r = rho_total.reshape(rho_total.shape[:-2] + (d_S, d_B, d_S, d_B))
    return np.einsum("...ibjb->...ij", r)


def partial_trace_system(rho_total, d_S, d_B):
    """Trace out the first tensor factor."""
    r = np.asarray(rho_total).reshape(rho_total.shape[:-2] + (d_S, d_B, d_S, d_B))
    return np.einsum("...aiaj->...ij", r)


def propagate_full(full: FullModel, rho_total0, grid: TimeGrid):
    """Schrodinger-picture total states on the grid, starting from ``rho_total0`` at ``grid.t0``."""
    return np.array([full.evolve(rho_total0, t - grid.t0) for t in grid.times])


def to_interaction_picture(full: FullModel, rho_total, t):
    """``exp(i H_0 t) rho exp(-i H_0 t)`` with ``H_0 = H_S + H_B``."""
    H0 = np.kron(full.system.H_S, np.eye(full.d_B)) + np.kron(np.eye(full.d_S), full.bath.H_B)
    E, V = np.linalg.eigh(H0)
    U = (V * np.exp(-1j * E * t)) @ V.conj().T
    return U.conj().T @ rho_total @ U


@dataclass(frozen=True)
class ExactMap:
    """Exact interaction-picture map, its time derivative and generator on a grid."""

    grid: TimeGrid
    maps: np.ndarray
    maps_dot: np.ndarray
    generator: np.ndarray
    H_S: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def schrodinger(self, k):
        return rotation_superop(self.H_S, self.grid.times[k] - self.grid.t0) @ self.maps[k]

    def as_dynamical_map(self):
        return DynamicalMap(self.grid, self.maps, self.H_S)


def exact_dynamical_map(full: FullModel, grid: TimeGrid, cutoff=1e-10) -> ExactMap:
    """Process tomography of the reduced dynamics.

    Each system matrix unit ``E_ij (x) rho_B`` is propagated exactly and
    traced over the bath. The derivative is exact as well,
    ``dLambda/dt X = exp(i H_S t) Tr_B(-i lambda [S B, rho(t)]) exp(-i H_S t)``,
    and ``G = Lambda_dot Lambda^{-1}``.
    """
    d, dB = full.d_S, full.d_B
    L = d * d
    N = len(grid)
    E, V = full._eig
    SB = full.coupling * np.kron(full.system.S, full.bath.B)
    Lam = np.zeros((N, L, L), complex)
    Lam_dot = np.zeros((N, L, L), complex)
    inputs = []
    for col in range(L):
        unit = unvec(np.eye(L)[col], d)
        inputs.append(V.conj().T @ full.product_state(unit) @ V)
    dE = np.subtract.outer(E, E)
    diagonal_cols = {i + d * i for i in range(d)}
    top_level = 0.0
    has_oscillators = any(m.kind == "oscillator" for m in full.bath.modes)
    for k, t in enumerate(grid.times - grid.t0):
        phase = np.exp(-1j * dE * t)
        U_S = _sys_rotation(full.system.H_S, t)
        mixed = 0.0
        for col, X0 in enumerate(inputs):
            rho = V @ (X0 * phase) @ V.conj().T
            if has_oscillators and col in diagonal_cols:
                mixed = mixed + rho / d
            red = partial_trace_bath(rho, d, dB)
            dred = partial_trace_bath(-1j * (SB @ rho - rho @ SB), d, dB)
            Lam[k, :, col] = vec(U_S.conj().T @ red @ U_S)
            Lam_dot[k, :, col] = vec(U_S.conj().T @ dred @ U_S)
        if has_oscillators:
            pops = full.bath.top_level_populations(partial_trace_system(mixed, d, dB))
            top_level = max(top_level, max(pops))
    G = np.zeros_like(Lam)
    cond = np.zeros(N)
    for k in range(N):
        cond[k] = np.linalg.cond(Lam[k])
        if cond[k] * cutoff < 1:
            G[k] = np.linalg.solve(Lam[k].T, Lam_dot[k].T).T
        else:
            log.warning("exact map ill-conditioned at t=%g (cond %.3g)", grid.times[k], cond[k])
            G[k] = Lam_dot[k] @ regularized_inverse(Lam[k], cutoff)
    row = trace_row(d)
    diagnostics = {
        "max_condition_number": float(cond.max()),
        "trace_defect": float(np.max(np.abs(row @ Lam - row))),
    }
    if has_oscillators:
        # truncation check, starting from the maximally mixed system state
        diagnostics["top_level_population"] = float(top_level)
        if top_level > TRUNCATION_TOL:
            log.warning("oscillator truncation: top-level population %.3g exceeds %.0e", top_level, TRUNCATION_TOL)
    return ExactMap(grid, Lam, Lam_dot, G, full.system.H_S, diagnostics)


def _sys_rotation(H, t):
    E, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * E * t)) @ V.conj().T


def exact_two_point_correlation(full: FullModel, A, B, rho_S, grid: TimeGrid):
    """``Tr[A(t) B rho_0]`` on the grid (Heisenberg ``A(t)`` under the total Hamiltonian)."""
    X0 = full.system_op(B) @ full.product_state(rho_S)
    A_full = full.system_op(A)
    return np.array([np.trace(A_full @ full.evolve(X0, t - grid.t0)) for t in grid.times])


def exact_multipoint_correlation(full: FullModel, ops, times, rho_S, t0=0.0):
    """``Tr[A U(t2, t1) B U(t1, t0) C rho_0]`` by full-space propagation."""
    A, B, C = ops
    t2, t1 = times
    if not t2 >= t1 >= t0:
        raise ValueError("times must satisfy t2 >= t1 >= t0")
    X = full.system_op(C) @ full.product_state(rho_S)
    X = full.evolve(X, t1 - t0)
    X = full.system_op(B) @ X
    X = full.evolve(X, t2 - t1)
    return complex(np.trace(full.system_op(A) @ X))


def two_point_correlation(dmap, A, B, rho_S):
    """``Tr_S[A Lambda(t) (B rho_S)]`` with the Schrodinger-picture map, on the map's grid."""
    x = vec(np.asarray(B) @ np.asarray(rho_S))
    A = np.asarray(A)
    d = A.shape[0]
    return np.array([np.trace(A @ unvec(dmap.schrodinger(k) @ x, d)) for k in range(len(dmap.grid))])


def factorized_multipoint(dmap, ops, times, rho_S):
    """``Tr_S[A Lambda(t2, t1) B Lambda(t1, t0) C rho_S]`` with ``Lambda(t2, t1) = Lambda(t2) Lambda(t1)^{-1}``.

    This is the value one would get if system and bath stayed uncorrelated;
    it generally differs from :func:`exact_multipoint_correlation`.
    """
    A, B, C = (np.asarray(o, dtype=complex) for o in ops)
    t2, t1 = times
    k2, k1 = dmap.grid.index(t2), dmap.grid.index(t1)
    d = A.shape[0]
    L1 = dmap.schrodinger(k1)
    L2 = dmap.schrodinger(k2)
    if np.linalg.cond(L1) > 1e12:
        raise ValueError(f"map is singular at t={t1}")
    x = L1 @ vec(C @ np.asarray(rho_S))
    x = vec(B @ unvec(x, d))
    x = L2 @ np.linalg.solve(L1, x)
    return complex(np.trace(A @ unvec(x, d)))


def recurrence_window(bath: DiscreteBath):
    """Largest time kept in oracle comparisons: half the shortest recurrence period."""
    return 0.5 * bath.recurrence_time()
