"""Bath correlation functions, discrete baths, and Wick pairings.

Conventions
-----------
* ``C(tau) = <dB(tau) dB(0)>`` is the correlation of the fluctuation
  ``dB = B - <B>`` in the stationary bath state. The mean ``<B>`` is carried
  separately and enters the first-order moment only.
* For a spectral density ``J``,
  ``C(tau) = (1/pi) int_0^inf dw J(w) [coth(beta w / 2) cos(w tau) - i sin(w tau)]``.
* Superoperator labels passed to the moment functions are *bath* labels:
  ``'+'`` is the anticommutator ``B^+``, ``'-'`` the commutator ``B^-``.
  Lists of labels and times are ordered latest first, i.e. left to right in
  the operator product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal

import numpy as np
from scipy import integrate

from .liouville import SIGMA_X, SIGMA_Z, SQRT2

SIGMAS = ("+", "-")
MAX_BATH_DIM = 256
MAX_PAIRING_ORDER = 6


# --------------------------------------------------------------------------
# continuum baths
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralDensity:
    """Bath spectral density.

    ``kind='ohmic'``: ``J(w) = eta * w * exp(-w / omega_c)``.
    ``kind='drude'``: ``J(w) = 2 * reorganization * width * w / (w**2 + width**2)``.
    """

    kind: Literal["ohmic", "drude"]
    eta: float = 0.0
    omega_c: float = 1.0
    reorganization: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ohmic", "drude"):
            raise ValueError(f"unknown spectral density kind {self.kind!r}")
        if self.kind == "ohmic" and (self.omega_c <= 0 or self.eta < 0):
            raise ValueError("ohmic spectral density needs eta >= 0 and omega_c > 0")
        if self.kind == "drude" and (self.width <= 0 or self.reorganization < 0):
            raise ValueError("drude spectral density needs reorganization >= 0 and width > 0")

    def __call__(self, w):
        return self.over_omega(w) * np.asarray(w, dtype=float)

    def over_omega(self, w):
        """``J(w) / w``, finite at ``w = 0``."""
        w = np.asarray(w, dtype=float)
        if self.kind == "ohmic":
            return self.eta * np.exp(-w / self.omega_c)
        return 2 * self.reorganization * self.width / (w**2 + self.width**2)


@dataclass(frozen=True)
class BathCorrelation:
    """Stationary two-point function of the bath coupling operator.

    ``func`` is evaluated for ``tau >= 0`` only; negative arguments use
    ``C(-tau) = conj(C(tau))``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    beta: float = math.inf
    mean: float = 0.0
    cell_integral: Callable[[float], complex] | None = None

    def __post_init__(self):
        if abs(np.imag(self.mean)) > 1e-12:
            raise ValueError("the mean of a Hermitian bath operator must be real")
        object.__setattr__(self, "mean", float(np.real(self.mean)))

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        vals = np.asarray(self.func(np.abs(tau)), dtype=complex)
        return np.where(tau < 0, vals.conj(), vals)

    def lag_values(self, dt, n):
        """``C(k dt)`` for ``k = 0..n-1``, as consumed by trapezoid rules of step ``dt``.

        If ``cell_integral`` is set (correlations with an integrable
        singularity at zero lag), the zero-lag entry is replaced by
        ``2/dt int_0^dt C - C(dt)``, which makes the trapezoid rule exact on
        the first cell.
        """
        lags = dt * np.arange(n)
        if self.cell_integral is None:
            return self(lags)
        vals = np.empty(n, dtype=complex)
        vals[1:] = self(lags[1:])
        c1 = vals[1] if n > 1 else complex(self(dt))
        vals[0] = 2.0 / dt * self.cell_integral(dt) - c1
        return vals


def ohmic_zero_temperature(eta, omega_c):
    """Closed form ``(eta / pi) * omega_c**2 / (1 + i omega_c tau)**2`` at ``T = 0``."""
    def C(tau):
        return (eta / np.pi) * omega_c**2 / (1 + 1j * omega_c * np.asarray(tau)) ** 2
    return C


def _quadrature_correlation(J: SpectralDensity, beta):
    if J.kind == "ohmic":
        upper = 40.0 * J.omega_c
    else:
        upper = math.inf

    def weight(w):
        w = np.asarray(w, dtype=float)
        if math.isinf(beta):
            return J(w)
        x = 0.5 * beta * w
        small = x < 1e-8
        safe = np.where(small, 1.0, x)
        coth_term = np.where(small, 2.0 / beta * J.over_omega(w), J(w) / np.tanh(safe))
        return coth_term

    def one(tau):
        opts = dict(epsabs=1e-13, epsrel=1e-10, limit=400)
        if tau == 0.0:
            if math.isinf(upper):
                # J(w) ~ 1/w for Drude-Lorentz: Re C diverges logarithmically at zero lag
                return complex(math.inf, 0.0)
            re, _ = integrate.quad(weight, 0.0, upper, **opts)
            return re / np.pi
        if math.isinf(upper):
            re, _ = integrate.quad(weight, 0.0, upper, weight="cos", wvar=tau, limlst=200)
            im, _ = integrate.quad(J, 0.0, upper, weight="sin", wvar=tau, limlst=200)
        else:
            re, _ = integrate.quad(weight, 0.0, upper, weight="cos", wvar=tau, **opts)
            im, _ = integrate.quad(J, 0.0, upper, weight="sin", wvar=tau, **opts)
        return (re - 1j * im) / np.pi

    def C(tau):
        tau = np.asarray(tau, dtype=float)
        flat = tau.ravel()
        uniq, inverse = np.unique(flat, return_inverse=True)
        vals = np.array([one(float(t)) for t in uniq], dtype=complex)
        return vals[inverse].reshape(tau.shape)

    return C


def _drude_cell_integral(J: SpectralDensity, beta):
    """``int_0^h C(tau) dtau``, finite although ``Re C`` diverges logarithmically at zero lag."""
    def weight_over_omega(w):
        if math.isinf(beta):
            return J.over_omega(w)
        x = 0.5 * beta * w
        return np.where(x < 1e-8, 2.0 / (beta * np.maximum(w, 1e-300)) * J.over_omega(w),
                        J.over_omega(w) / np.tanh(np.maximum(x, 1e-300)))

    def one(h):
        split = 50.0 / h
        opts = dict(epsabs=1e-13, epsrel=1e-10, limit=400)
        # real part: int w(om) sin(om h) / om; imaginary: -int J (1 - cos(om h)) / om
        near_re = integrate.quad(lambda w: weight_over_omega(w) * np.sin(w * h), 0.0, split, **opts)[0]
        far_re = integrate.quad(weight_over_omega, split, math.inf, weight="sin", wvar=h, limlst=200)[0]
        near_im = integrate.quad(lambda w: J.over_omega(w) * (1 - np.cos(w * h)), 0.0, split, **opts)[0]
        far_im = (integrate.quad(J.over_omega, split, math.inf, **opts)[0]
                  - integrate.quad(J.over_omega, split, math.inf, weight="cos", wvar=h, limlst=200)[0])
        return complex(near_re + far_re, -(near_im + far_im)) / np.pi

    return one


def correlation_from_spectral_density(J: SpectralDensity, beta=math.inf, mean=0.0) -> BathCorrelation:
    """Two-point function of a Gaussian bath with spectral density ``J``.

    The zero-temperature Ohmic case uses the closed form; everything else is
    integrated with adaptive (Fourier-weighted) Gauss-Kronrod quadrature,
    on ``(0, 40 omega_c]`` for the Ohmic cutoff and on ``(0, inf)`` otherwise.
    """
    if not (math.isinf(beta) or beta > 0):
        raise ValueError("beta must be positive or infinite")
    if J.kind == "ohmic" and math.isinf(beta):
        func = ohmic_zero_temperature(J.eta, J.omega_c)
    else:
        func = _quadrature_correlation(J, beta)
    cell = _drude_cell_integral(J, beta) if J.kind == "drude" else None
    return BathCorrelation(func=func, beta=beta, mean=mean, cell_integral=cell)


@dataclass(frozen=True)
class SuperCorrelation:
    """Two-time functions ``D[(a2, a1)](t2, t1) = Tr_B[B^{a2}(t2) B^{a1}(t1) rho_B]`` for ``t2 >= t1``."""

    components: dict

    def __call__(self, a2, a1, t2, t1):
        return self.components[(a2, a1)](t2, t1)


def super_correlation_lags(C: BathCorrelation, dt, n):
    """Components ``D[a2, a1]`` at lags ``k dt`` (``t2 - t1 >= 0``), built from :meth:`BathCorrelation.lag_values`."""
    c = C.lag_values(dt, n)
    zero = np.zeros(n, dtype=complex)
    return {("+", "+"): 2 * c.real + 0j, ("+", "-"): 2j * c.imag, ("-", "+"): zero, ("-", "-"): zero.copy()}


def super_correlation(C: BathCorrelation) -> SuperCorrelation:
    """Superoperator two-point components of a (fluctuation) correlation function.

    Using cyclicity of the trace, ``D[+,+] = C(t2-t1) + C(t1-t2)``,
    ``D[+,-] = C(t2-t1) - C(t1-t2)`` and ``D[-,.] = 0``.
    """
    def plus_plus(t2, t1):
        tau = np.asarray(t2, dtype=float) - np.asarray(t1, dtype=float)
        return C(tau) + C(-tau)

    def plus_minus(t2, t1):
        tau = np.asarray(t2, dtype=float) - np.asarray(t1, dtype=float)
        return C(tau) - C(-tau)

    def zero(t2, t1):
        return np.zeros(np.broadcast(np.asarray(t2), np.asarray(t1)).shape, dtype=complex)

    return SuperCorrelation({
        ("+", "+"): plus_plus,
        ("+", "-"): plus_minus,
        ("-", "+"): zero,
        ("-", "-"): zero,
    })


# --------------------------------------------------------------------------
# discrete baths
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mode:
    """One bath mode.

    A ``'qubit'`` mode has ``H = (w/2) sigma_z`` and couples through
    ``g sigma_x``; an ``'oscillator'`` has ``H = w a^dag a`` truncated at
    Fock level ``n_max`` and couples through ``g (a + a^dag)``.
    """

    frequency: float
    coupling: float
    kind: Literal["qubit", "oscillator"] = "qubit"
    n_max: int = 6

    def __post_init__(self):
        if self.kind not in ("qubit", "oscillator"):
            raise ValueError(f"unknown mode kind {self.kind!r}")
        if self.kind == "oscillator" and self.n_max < 1:
            raise ValueError("oscillator modes need n_max >= 1")

    @property
    def dim(self):
        return 2 if self.kind == "qubit" else self.n_max + 1

    def hamiltonian(self):
        if self.kind == "qubit":
            return 0.5 * self.frequency * SIGMA_Z
        return np.diag(self.frequency * np.arange(self.dim)).astype(complex)

    def coupling_operator(self):
        if self.kind == "qubit":
            return SIGMA_X.copy()
        a = np.diag(np.sqrt(np.arange(1, self.dim)), 1).astype(complex)
        return a + a.conj().T


def _embed(op, index, dims):
    out = np.eye(1, dtype=complex)
    for i, d in enumerate(dims):
        out = np.kron(out, op if i == index else np.eye(d))
    return out


@dataclass(frozen=True)
class DiscreteBath:
    """Finite bath of qubit and/or truncated oscillator modes.

    The coupling operator is ``B = sum_i g_i X_i``. The initial state is
    thermal at inverse temperature ``beta`` (ground state for ``beta = inf``).
    """

    modes: tuple
    beta: float = math.inf

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("a discrete bath needs at least one mode")
        object.__setattr__(self, "modes", modes)
        if not (math.isinf(self.beta) or self.beta > 0):
            raise ValueError("beta must be positive or infinite")
        if self.dim > MAX_BATH_DIM:
            raise ValueError(f"bath dimension {self.dim} exceeds {MAX_BATH_DIM}")

    @property
    def dims(self):
        return [m.dim for m in self.modes]

    @property
    def dim(self):
        return int(np.prod(self.dims))

    def scaled(self, factor):
        """Bath with every coupling multiplied by ``factor``."""
        return DiscreteBath(
            tuple(Mode(m.frequency, factor * m.coupling, m.kind, m.n_max) for m in self.modes),
            self.beta,
        )

    @cached_property
    def H_B(self):
        return sum(_embed(m.hamiltonian(), i, self.dims) for i, m in enumerate(self.modes))

    @cached_property
    def B(self):
        return sum(m.coupling * _embed(m.coupling_operator(), i, self.dims) for i, m in enumerate(self.modes))

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.H_B)

    @cached_property
    def rho_B(self):
        E, V = self._eig
        if math.isinf(self.beta):
            p = (np.abs(E - E[0]) < 1e-10).astype(float)
        else:
            p = np.exp(-self.beta * (E - E[0]))
        p /= p.sum()
        return (V * p) @ V.conj().T

    @cached_property
    def _populations_eig(self):
        E, V = self._eig
        return np.real(np.diag(V.conj().T @ self.rho_B @ V))

    @property
    def mean(self):
        return float(np.real(np.trace(self.B @ self.rho_B)))

    def heisenberg_B(self, t):
        """``exp(i H_B t) B exp(-i H_B t)``."""
        E, V = self._eig
        U = (V * np.exp(-1j * E * t)) @ V.conj().T
        return U.conj().T @ self.B @ U

    def correlation(self) -> BathCorrelation:
        """Exact fluctuation two-point function of this bath."""
        E, V = self._eig
        p = self._populations_eig
        b = self.mean
        Bt = V.conj().T @ (self.B - b * np.eye(self.dim)) @ V
        weights = p[:, None] * np.abs(Bt) ** 2
        dE = np.subtract.outer(E, E)

        def C(tau):
            tau = np.asarray(tau, dtype=float)
            phase = np.exp(1j * np.multiply.outer(tau, dE))
            return np.sum(weights * phase, axis=(-2, -1))

        return BathCorrelation(func=C, beta=self.beta, mean=b)

    def recurrence_time(self):
        """Shortest single-mode recurrence period ``2 pi / max(w_i)``."""
        return 2 * np.pi / max(abs(m.frequency) for m in self.modes)

    def top_level_populations(self, rho_B):
        """Population of the highest kept Fock level of every oscillator mode."""
        dims = self.dims
        rho = np.asarray(rho_B).reshape(dims + dims)
        out = []
        n = len(dims)
        for i, m in enumerate(self.modes):
            if m.kind != "oscillator":
                continue
            keep = rho
            # trace out all other modes, highest axis first
            for j in reversed(range(n)):
                if j != i:
                    keep = np.trace(keep, axis1=j, axis2=j + keep.ndim // 2)
            out.append(float(np.real(keep[-1, -1])))
        return out


def _bath_superop_apply(B, sigma, X):
    if sigma == "+":
        return (B @ X + X @ B) / SQRT2
    if sigma == "-":
        return (B @ X - X @ B) / SQRT2
    raise ValueError(f"sigma must be '+' or '-', got {sigma!r}")


def exact_multipoint_moment(bath: DiscreteBath, sigmas, times) -> complex:
    """``Tr_B[B^{s_1}(t_1) ... B^{s_n}(t_n) rho_B]`` with ``t_1 > ... > t_n``.

    Every Heisenberg-picture ``B(t)`` is built exactly from the
    eigendecomposition of ``H_B``.
    """
    sigmas = list(sigmas)
    times = [float(t) for t in times]
    if len(sigmas) != len(times) or not sigmas:
        raise ValueError("sigmas and times must be non-empty and of equal length")
    if any(t_next >= t_prev for t_prev, t_next in zip(times[:-1], times[1:])):
        raise ValueError("times must be strictly descending")
    X = bath.rho_B
    for s, t in zip(reversed(sigmas), reversed(times)):
        X = _bath_superop_apply(bath.heisenberg_B(t), s, X)
    return complex(np.trace(X))


# --------------------------------------------------------------------------
# Wick pairings
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PairPartition:
    """A perfect matching of ``{1, ..., 2m}``; each pair is ``(earlier index, later index)`` in label order."""

    pairs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        flat = [i for p in self.pairs for i in p]
        if sorted(flat) != list(range(1, len(flat) + 1)) or any(len(p) != 2 for p in self.pairs):
            raise ValueError(f"{self.pairs} is not a pair partition of 1..{len(flat)}")


def _pairings(items):
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in _pairings(rest[:i] + rest[i + 1:]):
            yield ((first, other),) + tail


def enumerate_pairings(m: int):
    """All ``(2m-1)!!`` pair partitions of ``{1, ..., 2m}``."""
    if m < 1 or m > MAX_PAIRING_ORDER:
        raise ValueError(f"m must be between 1 and {MAX_PAIRING_ORDER}, got {m}")
    return [PairPartition(p) for p in _pairings(tuple(range(1, 2 * m + 1)))]


def wick_multipoint(D: SuperCorrelation, sigmas, times) -> complex:
    """Gaussian ``n``-point superoperator moment as a sum over pairings.

    ``sigmas`` and ``times`` are latest first; in each pair the later time is
    the left argument of ``D``.
    """
    sigmas = list(sigmas)
    times = np.asarray(times, dtype=float)
    n = len(sigmas)
    if n % 2:
        raise ValueError("Wick factorization needs an even number of points")
    if len(times) != n:
        raise ValueError("sigmas and times must have equal length")
    if np.any(np.diff(times) > 0):
        raise ValueError("times must be descending")
    total = 0.0 + 0.0j
    for pairing in enumerate_pairings(n // 2):
        term = 1.0 + 0.0j
        for a, b in pairing.pairs:
            # labels are 1-based, position 1 is the latest time
            i, j = a - 1, b - 1
            term *= complex(D(sigmas[i], sigmas[j], times[i], times[j]))
        total += term
    return total


def double_factorial(k):
    return math.prod(range(k, 0, -2)) if k > 0 else 1


__all__ = [
    "SpectralDensity", "BathCorrelation", "SuperCorrelation", "Mode", "DiscreteBath",
    "PairPartition", "correlation_from_spectral_density", "ohmic_zero_temperature",
    "super_correlation", "super_correlation_lags", "exact_multipoint_moment", "enumerate_pairings", "wick_multipoint",
    "double_factorial",
]
