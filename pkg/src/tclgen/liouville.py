"""Operator and superoperator algebra on the system Hilbert space.

Vectorization is column stacking, so that ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
Superoperators are plain ``(d*d, d*d)`` complex arrays acting on ``vec(X)``.

The commutator and anticommutator superoperators carry a ``1/sqrt(2)``
normalization, ``S^{+-} X = (S X +- X S) / sqrt(2)``, so that
``[S B, rho] = sum_sigma S^sigma B^{-sigma} rho`` holds without extra factors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-12
SQRT2 = np.sqrt(2.0)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _square(A, name="matrix"):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    return A


def is_hermitian(A, tol=HERMITIAN_TOL):
    A = np.asarray(A)
    return A.ndim == 2 and A.shape[0] == A.shape[1] and np.max(np.abs(A - A.conj().T), initial=0.0) < tol


def vec(X):
    """Column-stack a ``(d, d)`` operator into a ``d*d`` vector."""
    X = _square(X, "operator")
    return X.reshape(-1, order="F")


def unvec(v, d=None):
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"vector of length {v.size} is not the vectorization of a {d}x{d} operator")
    return v.reshape((d, d), order="F")


def apply(superop, X):
    """Apply a superoperator matrix to an operator."""
    X = _square(X, "operator")
    superop = np.asarray(superop)
    if superop.shape != (X.size, X.size):
        raise ValueError(f"superoperator of shape {superop.shape} cannot act on a {X.shape} operator")
    return unvec(superop @ vec(X), X.shape[0])


def left_superop(A):
    """Matrix of ``X -> A X``."""
    A = _square(A)
    return np.kron(np.eye(A.shape[0]), A)


def right_superop(B):
    """Matrix of ``X -> X B``."""
    B = _square(B)
    return np.kron(B.T, np.eye(B.shape[0]))


def commutator_superop(S):
    """``X -> (S X - X S) / sqrt(2)``."""
    return (left_superop(S) - right_superop(S)) / SQRT2


def anticommutator_superop(S):
    """``X -> (S X + X S) / sqrt(2)``."""
    return (left_superop(S) + right_superop(S)) / SQRT2


def sigma_superop(S, sigma):
    """Commutator (``'-'``) or anticommutator (``'+'``) superoperator of ``S``."""
    if sigma == "-":
        return commutator_superop(S)
    if sigma == "+":
        return anticommutator_superop(S)
    raise ValueError(f"sigma must be '+' or '-', got {sigma!r}")


def trace_row(d):
    """Row vector ``vec(I)^dagger``; ``trace_row(d) @ vec(X) == trace(X)``."""
    return vec(np.eye(d)).conj()


def expm(A):
    """Matrix exponential (Pade scaling and squaring)."""
    return scipy.linalg.expm(_square(A))


def unitary_from_hermitian(H, t):
    """``exp(-i H t)`` for Hermitian ``H`` via its eigendecomposition."""
    H = _square(H, "Hamiltonian")
    E, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * E * t)) @ V.conj().T


def interaction_picture_op(S, H, t):
    """Rotate ``S`` to ``exp(i H t) S exp(-i H t)``."""
    U = unitary_from_hermitian(H, t)
    return U.conj().T @ _square(S) @ U


def interaction_picture_ops(S, H, times):
    """Vectorized :func:`interaction_picture_op` over a 1-d array of times."""
    S = _square(S)
    E, V = np.linalg.eigh(_square(H, "Hamiltonian"))
    S_eig = V.conj().T @ S @ V
    times = np.asarray(times, dtype=float)
    phase = np.exp(1j * np.subtract.outer(E, E)[None, :, :] * times[:, None, None])
    return V[None] @ (S_eig[None] * phase) @ V.conj().T[None]


def rotation_superop(H, t):
    """Superoperator of ``X -> exp(-i H t) X exp(i H t)``."""
    U = unitary_from_hermitian(H, t)
    return np.kron(U.conj(), U)


@dataclass(frozen=True)
class SystemModel:
    """System Hamiltonian ``H_S`` and coupling operator ``S`` (``H_SB = S B``)."""

    H_S: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H_S, dtype=complex)
        S = np.asarray(self.S, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"H_S must be square, got shape {H.shape}")
        if S.shape != H.shape:
            raise ValueError(f"S has shape {S.shape}, expected {H.shape}")
        if not is_hermitian(H):
            raise ValueError("H_S is not Hermitian")
        if not is_hermitian(S):
            raise ValueError("S is not Hermitian")
        object.__setattr__(self, "H_S", H)
        object.__setattr__(self, "S", S)

    @property
    def dim(self):
        return self.H_S.shape[0]

    def scaled(self, coupling):
        """Same model with the coupling operator multiplied by ``coupling``."""
        return SystemModel(self.H_S, coupling * self.S)


@dataclass(frozen=True)
class SystemState:
    """A density matrix tagged with the picture it is expressed in."""

    rho: np.ndarray
    picture: Literal["interaction", "schrodinger"] = "interaction"

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {rho.shape}")
        if abs(np.trace(rho) - 1) > 1e-10:
            raise ValueError(f"density matrix has trace {np.trace(rho).real:.3g}, expected 1")
        if not is_hermitian(rho):
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValueError("density matrix has negative eigenvalues")
        if self.picture not in ("interaction", "schrodinger"):
            raise ValueError(f"unknown picture {self.picture!r}")
        object.__setattr__(self, "rho", rho)

    @property
    def dim(self):
        return self.rho.shape[0]
