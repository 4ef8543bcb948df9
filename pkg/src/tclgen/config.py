"""Run configuration: parsing, validation, canonical form and hashing.

Configs are TOML (or JSON with the same layout). Matrix entries are
either real numbers or ``[re, im]`` pairs. Validation collects every
problem before failing.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .baths import MAX_BATH_DIM, DiscreteBath, Mode, SpectralDensity, correlation_from_spectral_density
from .liouville import SystemModel, SystemState, is_hermitian
from .moments import MAX_ORDER, TimeGrid

SUPPORTED_ORDERS = (2, 4)
BATH_KINDS = ("ohmic", "drude", "discrete")

DEFAULTS = {
    "bath": {"beta": "inf", "mean": 0.0},
    "method": {
        "tcl_order": 2,
        "coupling": 1.0,
        "resummation": {"enabled": False, "cutoff": 1e-10, "eps_steps": 5, "initial": "matched"},
    },
    "output": {"formats": ["csv", "json"]},
}


class ConfigError(ValueError):
    """Raised with the full list of validation errors."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass(frozen=True)
class ResummationConfig:
    enabled: bool = False
    cutoff: float = 1e-10
    eps_steps: int = 5
    initial: str = "matched"


@dataclass(frozen=True)
class OracleConfig:
    lambdas: tuple
    window_tcl2: tuple = (8.0, 32.0)
    window_tcl4: tuple = (32.0, 128.0)
    t_max: float | None = None


@dataclass(frozen=True)
class CorrelationConfig:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray | None = None
    pairs: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    system: SystemModel
    bath: object
    grid: TimeGrid
    rho0: SystemState
    tcl_order: int = 2
    coupling: float = 1.0
    resummation: ResummationConfig = ResummationConfig()
    oracle: OracleConfig | None = None
    correlation: CorrelationConfig | None = None
    formats: tuple = ("csv", "json")
    name: str = "run"
    normalized: dict = field(default_factory=dict)

    @property
    def model(self):
        """System model with the coupling operator scaled by the overall coupling."""
        return self.system.scaled(self.coupling)

    @property
    def config_hash(self):
        return config_hash(self.normalized)


def _merge_defaults(raw, defaults):
    out = copy.deepcopy(raw)
    for key, val in defaults.items():
        if isinstance(val, dict):
            if isinstance(out.get(key, {}), dict):
                out[key] = _merge_defaults(out.get(key, {}), val)
        else:
            out.setdefault(key, copy.deepcopy(val))
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def canonical_bytes(normalized):
    return json.dumps(_jsonable(normalized), sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def config_hash(normalized):
    """SHA-256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical_bytes(normalized)).hexdigest()


def write_canonical(config: RunConfig, path):
    """Write the normalized config as canonical JSON; parsing it back gives the same hash."""
    Path(path).write_bytes(canonical_bytes(config.normalized) + b"\n")


def load_raw(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {path} does not exist"])
    text = path.read_bytes()
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from None


def _float(value, where, errors, positive=False, allow_inf=False):
    if value is None:  # a missing key is reported by the caller
        return None
    if isinstance(value, str) and allow_inf and value.lower() == "inf":
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{where} must be a number")
        return None
    value = float(value)
    if not math.isfinite(value) and not (allow_inf and value == math.inf):
        errors.append(f"{where} must be finite")
        return None
    if positive and not value > 0:
        errors.append(f"{where} must be positive")
        return None
    return value


def parse_matrix(value, where, errors, d=None):
    """Nested list of reals or ``[re, im]`` pairs to a complex array."""
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        errors.append(f"{where} must be a list of rows")
        return None
    rows = []
    for i, row in enumerate(value):
        out = []
        for j, entry in enumerate(row):
            if isinstance(entry, list):
                if len(entry) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in entry):
                    errors.append(f"{where}[{i}][{j}] must be a number or an [re, im] pair")
                    return None
                out.append(complex(entry[0], entry[1]))
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                out.append(complex(entry))
            else:
                errors.append(f"{where}[{i}][{j}] must be a number or an [re, im] pair")
                return None
        rows.append(out)
    n = len(rows)
    if any(len(r) != n for r in rows):
        errors.append(f"{where} must be square")
        return None
    if d is not None and n != d:
        errors.append(f"{where} must be {d}x{d}, got {n}x{n}")
        return None
    return np.array(rows, dtype=complex)


def _matrix_key(block, key, where, errors, d, hermitian=False):
    if key not in block:
        errors.append(f"missing key {where}.{key}")
        return None
    M = parse_matrix(block[key], f"{where}.{key}", errors, d)
    if M is not None and hermitian and not is_hermitian(M):
        errors.append(f"{where}.{key} is not Hermitian")
        return None
    return M


def _require(block, key, where, errors):
    if key not in block:
        errors.append(f"missing key {where}.{key}")
        return None
    return block[key]


def _table(raw, key, errors, required=True):
    block = raw.get(key)
    if block is None:
        if required:
            errors.append(f"missing table [{key}]")
        return None
    if not isinstance(block, dict):
        errors.append(f"[{key}] must be a table")
        return None
    return block


def _parse_bath(block, errors):
    kind = _require(block, "kind", "bath", errors)
    if kind is None:
        return None
    if kind not in BATH_KINDS:
        errors.append(f"bath.kind must be one of {', '.join(BATH_KINDS)}, got {kind!r}")
        return None
    beta = _float(block.get("beta", "inf"), "bath.beta", errors, positive=True, allow_inf=True)
    mean = _float(block.get("mean", 0.0), "bath.mean", errors)
    if kind == "discrete":
        modes_raw = _require(block, "modes", "bath", errors)
        if not isinstance(modes_raw, list) or not modes_raw:
            if modes_raw is not None:
                errors.append("bath.modes must be a non-empty list of tables")
            return None
        modes = []
        for i, m in enumerate(modes_raw):
            where = f"bath.modes[{i}]"
            if not isinstance(m, dict):
                errors.append(f"{where} must be a table")
                continue
            w = _float(_require(m, "frequency", where, errors), f"{where}.frequency", errors, positive=True)
            g = _float(_require(m, "coupling", where, errors), f"{where}.coupling", errors)
            mkind = m.get("kind", "qubit")
            n_max = m.get("n_max", 6)
            if mkind not in ("qubit", "oscillator"):
                errors.append(f"{where}.kind must be 'qubit' or 'oscillator'")
                continue
            if not isinstance(n_max, int) or isinstance(n_max, bool) or n_max < 1:
                errors.append(f"{where}.n_max must be a positive integer")
                continue
            if w is not None and g is not None:
                modes.append(Mode(w, g, mkind, n_max))
        if len(modes) != len(modes_raw) or beta is None:
            return None
        if block.get("mean", 0.0) != 0.0:
            errors.append("bath.mean is determined by the modes for a discrete bath; leave it at 0")
            return None
        dim = int(np.prod([m.dim for m in modes]))
        if dim > MAX_BATH_DIM:
            errors.append(f"discrete bath dimension {dim} exceeds {MAX_BATH_DIM}")
            return None
        return DiscreteBath(tuple(modes), beta)
    if kind == "ohmic":
        eta = _float(_require(block, "eta", "bath", errors), "bath.eta", errors, positive=True)
        wc = _float(_require(block, "omega_c", "bath", errors), "bath.omega_c", errors, positive=True)
        if None in (eta, wc, beta, mean):
            return None
        J = SpectralDensity("ohmic", eta=eta, omega_c=wc)
    else:
        lam = _float(_require(block, "reorganization", "bath", errors), "bath.reorganization", errors, positive=True)
        width = _float(_require(block, "width", "bath", errors), "bath.width", errors, positive=True)
        if None in (lam, width, beta, mean):
            return None
        J = SpectralDensity("drude", reorganization=lam, width=width)
    return correlation_from_spectral_density(J, beta=beta, mean=mean)


def _parse_window(value, where, errors):
    if not (isinstance(value, list) and len(value) == 2):
        errors.append(f"{where} must be a [low, high] pair")
        return None
    lo = _float(value[0], f"{where}[0]", errors)
    hi = _float(value[1], f"{where}[1]", errors)
    if lo is None or hi is None:
        return None
    if not lo < hi:
        errors.append(f"{where} must satisfy low < high")
        return None
    return (lo, hi)


def parse_config(path) -> RunConfig:
    """Read and validate a config file; raises :class:`ConfigError` listing every problem."""
    return build_config(load_raw(path), name=Path(path).stem)


def build_config(raw, name="run") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a table"])
    errors = []
    norm = _merge_defaults(raw, DEFAULTS)

    system = None
    sys_block = _table(norm, "system", errors)
    d = None
    if sys_block is not None:
        d = _require(sys_block, "d", "system", errors)
        if d is not None and (not isinstance(d, int) or isinstance(d, bool) or d < 2):
            errors.append("system.d must be an integer >= 2")
            d = None
        H = _matrix_key(sys_block, "H_S", "system", errors, d, hermitian=True)
        S = _matrix_key(sys_block, "S", "system", errors, d, hermitian=True)
        if H is not None and S is not None:
            system = SystemModel(H, S)

    bath = None
    bath_block = _table(norm, "bath", errors)
    if bath_block is not None:
        bath = _parse_bath(bath_block, errors)

    method = _table(norm, "method", errors)
    order = coupling = grid = None
    resum_cfg = ResummationConfig()
    if method is not None:
        order = method.get("tcl_order")
        if order not in SUPPORTED_ORDERS or isinstance(order, bool):
            errors.append(f"method.tcl_order must be one of {SUPPORTED_ORDERS} (moment engine ceiling {MAX_ORDER}), got {order!r}")
            order = None
        coupling = _float(method.get("coupling"), "method.coupling", errors)
        g = method.get("grid")
        if not isinstance(g, dict):
            errors.append("missing table [method.grid]")
        else:
            t0 = _float(g.get("t0", 0.0), "grid.t0", errors)
            dt = g.get("dt")
            n_steps = g.get("n_steps")
            if dt is None:
                errors.append("missing key grid.dt")
            elif isinstance(dt, bool) or not isinstance(dt, (int, float)) or not dt > 0 or not math.isfinite(dt):
                errors.append("grid.dt must be positive")
                dt = None
            if not isinstance(n_steps, int) or isinstance(n_steps, bool) or n_steps < 1:
                errors.append("grid.n_steps must be a positive integer")
                n_steps = None
            if None not in (t0, dt, n_steps):
                grid = TimeGrid(t0, float(dt), n_steps)
        r = method.get("resummation", {})
        if not isinstance(r, dict):
            errors.append("[method.resummation] must be a table")
        else:
            enabled = r.get("enabled", False)
            cutoff = _float(r.get("cutoff", 1e-10), "method.resummation.cutoff", errors)
            eps_steps = r.get("eps_steps", 5)
            initial = r.get("initial", "matched")
            if not isinstance(enabled, bool):
                errors.append("method.resummation.enabled must be true or false")
            if cutoff is not None and not 0 < cutoff < 1:
                errors.append("method.resummation.cutoff must lie in (0, 1)")
            if not isinstance(eps_steps, int) or isinstance(eps_steps, bool) or eps_steps < 1:
                errors.append("method.resummation.eps_steps must be a positive integer")
            elif grid is not None and eps_steps > grid.n_steps - 3:
                errors.append("method.resummation.eps_steps leaves fewer than 3 grid points")
            if initial not in ("matched", "identity"):
                errors.append("method.resummation.initial must be 'matched' or 'identity'")
            if enabled is True and order is not None and order < 4:
                errors.append("method.resummation requires tcl_order = 4")
            resum_cfg = ResummationConfig(bool(enabled), cutoff or 1e-10, eps_steps, initial)
        if resum_cfg.enabled and bath is not None and not isinstance(bath, DiscreteBath) and bath.mean != 0:
            errors.append("method.resummation assumes a zero-mean bath")

    rho0 = None
    init = _table(norm, "initial_state", errors)
    if init is not None:
        rho = _matrix_key(init, "rho", "initial_state", errors, d)
        if rho is not None:
            try:
                rho0 = SystemState(rho)
            except ValueError as exc:
                errors.append(f"initial_state.rho: {exc}")

    oracle = None
    o = _table(norm, "oracle", errors, required=False)
    if o is not None:
        lambdas = o.get("lambdas")
        if not isinstance(lambdas, list) or not lambdas:
            errors.append("oracle.lambdas must be a non-empty list")
        else:
            lam = [_float(x, f"oracle.lambdas[{i}]", errors) for i, x in enumerate(lambdas)]
            w2 = _parse_window(o.get("window_tcl2", [8.0, 32.0]), "oracle.window_tcl2", errors)
            w4 = _parse_window(o.get("window_tcl4", [32.0, 128.0]), "oracle.window_tcl4", errors)
            t_max = o.get("t_max")
            if t_max is not None:
                t_max = _float(t_max, "oracle.t_max", errors, positive=True)
            if None not in lam and w2 and w4:
                if any(x < 0 for x in lam):
                    errors.append("oracle.lambdas must be non-negative")
                oracle = OracleConfig(tuple(lam), w2, w4, t_max)

    corr = None
    c = _table(norm, "correlation", errors, required=False)
    if c is not None:
        A = _matrix_key(c, "A", "correlation", errors, d)
        B = _matrix_key(c, "B", "correlation", errors, d)
        C = parse_matrix(c["C"], "correlation.C", errors, d) if "C" in c else None
        pairs_raw = c.get("times", [])
        pairs = []
        if not isinstance(pairs_raw, list):
            errors.append("correlation.times must be a list of [t2, t1] pairs")
        else:
            for i, p in enumerate(pairs_raw):
                if not (isinstance(p, list) and len(p) == 2):
                    errors.append(f"correlation.times[{i}] must be a [t2, t1] pair")
                    continue
                t2 = _float(p[0], f"correlation.times[{i}][0]", errors)
                t1 = _float(p[1], f"correlation.times[{i}][1]", errors)
                if t2 is not None and t1 is not None:
                    if t2 < t1:
                        errors.append(f"correlation.times[{i}] must satisfy t2 >= t1")
                    pairs.append((t2, t1))
        if pairs and C is None:
            errors.append("correlation.C is required when correlation.times is given")
        if A is not None and B is not None:
            corr = CorrelationConfig(A, B, C, tuple(pairs))

    out = norm.get("output", {})
    formats = out.get("formats", ["csv", "json"]) if isinstance(out, dict) else None
    if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
        errors.append("output.formats must be a list drawn from 'csv' and 'json'")
        formats = ["csv", "json"]
    name = out.get("name", name) if isinstance(out, dict) else name

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        system=system, bath=bath, grid=grid, rho0=rho0, tcl_order=order, coupling=coupling,
        resummation=resum_cfg, oracle=oracle, correlation=corr, formats=tuple(formats),
        name=str(name), normalized=_jsonable(norm),
    )
