"""Command-line driver: ``tclgen simulate|diagrams|oracle-compare|correlation``.

Exit codes: 0 success, 1 invalid input, 2 a numerical check failed.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baths import DiscreteBath
from .config import ConfigError, RunConfig, parse_config
from .liouville import vec
from .oracle import (
    FullModel,
    exact_dynamical_map,
    exact_multipoint_correlation,
    exact_two_point_correlation,
    factorized_multipoint,
    recurrence_window,
    two_point_correlation,
)
from .resummation import resum
from .tcl import (
    GeneratorSeries,
    dynamical_map_from_generator,
    enumerate_compositions,
    generator_via_compositions,
    generator_via_recursion,
    propagate,
    step_halving_error,
    tcl2_generator,
    tcl_generator,
)

log = logging.getLogger("tclgen")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
TIMINGS_KEY = "timings"


class NumericalCheckFailed(RuntimeError):
    """A configured numerical acceptance window was missed."""


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def _num(x):
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _clean(obj):
    """Convert numpy scalars and arrays (complex as ``[re, im]``) to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [_num(obj.real), _num(obj.imag)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def json_bytes(report):
    return (json.dumps(_clean(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def csv_bytes(header, rows):
    """Header plus rows of floats at 17 significant digits."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format(float(x), ".17g") for x in row))
    return ("\r\n".join(lines) + "\r\n").encode()


def strip_timings(report):
    return {k: v for k, v in report.items() if k != TIMINGS_KEY}


def _metadata(cfg: RunConfig | None, command):
    meta = {
        "command": command,
        "versions": {
            "tclgen": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if cfg is not None:
        meta["config_hash"] = cfg.config_hash
        meta["name"] = cfg.name
    return meta


class _Timer:
    def __init__(self):
        self.laps = {}

    @contextlib.contextmanager
    def __call__(self, key):
        start = time.perf_counter()
        yield
        self.laps[key] = time.perf_counter() - start


# --------------------------------------------------------------------------
# engines wired to configs
# --------------------------------------------------------------------------

def build_generator(cfg: RunConfig, order=None, coupling=None) -> GeneratorSeries:
    """TCL generator of the configured order for the configured (or given) coupling."""
    order = cfg.tcl_order if order is None else order
    model = cfg.system.scaled(cfg.coupling if coupling is None else coupling)
    if order == 2 and not isinstance(cfg.bath, DiscreteBath):
        return tcl2_generator(model, cfg.bath, cfg.grid)
    return tcl_generator(model, cfg.bath, cfg.grid, order)


def run_simulate(cfg: RunConfig):
    """Returns ``(csv_header, csv_rows, report)``."""
    timer = _Timer()
    with timer("generator"):
        series = build_generator(cfg)
    G = series.total()
    diagnostics = {"generator_norms": series.norms(), "tcl_order": cfg.tcl_order}
    if cfg.resummation.enabled:
        r = cfg.resummation
        with timer("resummation"):
            res = resum(series.orders, cfg.grid, cutoff=r.cutoff, eps_steps=r.eps_steps, initial=r.initial)
        G = res.resummed
        diagnostics["resummation"] = res.diagnostics
        diagnostics["resummation"]["difference_from_series"] = float(
            np.max(np.linalg.norm(res.resummed - series.total(), axis=(1, 2)))
        )
    with timer("propagation"):
        traj = propagate(G, cfg.rho0, cfg.grid).to_schrodinger(cfg.system.H_S)
        diagnostics["step_halving_error"] = step_halving_error(G, vec(cfg.rho0.rho), cfg.grid)
    traces = np.real(np.trace(traj.rho, axis1=1, axis2=2))
    purities = traj.purities()
    diagnostics["trace_drift"] = float(np.max(np.abs(traces - 1)))
    d = cfg.system.dim
    header = ["t"]
    for i in range(d):
        for j in range(d):
            header += [f"re_rho_{i}{j}", f"im_rho_{i}{j}"]
    header += ["trace", "purity"]
    rows = []
    for k, t in enumerate(cfg.grid.times):
        row = [t]
        for x in traj.rho[k].reshape(-1):
            row += [x.real, x.imag]
        row += [traces[k], purities[k]]
        rows.append(row)
    report = {"metadata": _metadata(cfg, "simulate"), "diagnostics": diagnostics, TIMINGS_KEY: timer.laps}
    return header, rows, report


def run_diagrams(n, verify=False, seed=0):
    comps = enumerate_compositions(n)
    report = {
        "n": n,
        "count": len(comps),
        "compositions": [{"parts": list(c.parts), "sign": "+" if c.sign > 0 else "-", "term": c.term()} for c in comps],
    }
    if verify:
        report["verification"] = verify_recursion(n, seed)
    return report


def verify_recursion(n_max, seed, d=2, n_points=10):
    """Recursion versus explicit composition sums on random dense moment grids."""
    rng = np.random.default_rng(seed)
    L = d * d
    shape = (n_points, L, L)
    moments = {
        n: (rng.normal(size=shape) + 1j * rng.normal(size=shape), rng.normal(size=shape) + 1j * rng.normal(size=shape))
        for n in range(1, n_max + 1)
    }
    rec = generator_via_recursion(moments, n_max).orders
    diff = scale = 0.0
    for n in range(1, n_max + 1):
        diff = max(diff, float(np.max(np.abs(rec[n] - generator_via_compositions(moments, n)))))
        scale = max(scale, float(np.max(np.abs(rec[n]))))
    return {"seed": seed, "n_max": n_max, "max_abs_difference": diff, "max_relative_difference": diff / scale}


def _oracle_window(cfg: RunConfig):
    t_rec = recurrence_window(cfg.bath)
    t_max = t_rec if cfg.oracle.t_max is None else min(t_rec, cfg.oracle.t_max)
    idx = np.flatnonzero(cfg.grid.times - cfg.grid.t0 <= t_max + 1e-12)
    return t_rec, t_max, idx


def halving_ratio(d_big, d_small, lam_big, lam_small):
    """Distance ratio rescaled to a factor-2 step in the coupling."""
    if d_small == 0 or d_big == 0 or lam_big == lam_small or lam_small == 0:
        return None
    return (d_big / d_small) ** (math.log(2) / math.log(lam_big / lam_small))


def run_oracle_compare(cfg: RunConfig):
    """Exact versus TCL2/TCL4 generators over a coupling sweep. Returns ``(report, failures)``."""
    if not isinstance(cfg.bath, DiscreteBath):
        raise ConfigError(["oracle-compare needs bath.kind = 'discrete'"])
    if cfg.oracle is None:
        raise ConfigError(["oracle-compare needs an [oracle] table"])
    timer = _Timer()
    t_rec, t_max, idx = _oracle_window(cfg)
    log.info("recurrence-safe window t - t0 <= %.6g (%d grid points)", t_max, len(idx))
    with timer("generator"):
        unit = build_generator(cfg, order=4, coupling=1.0).orders
    times = cfg.grid.times[idx]
    per_lambda = []
    with timer("oracle"):
        for lam in cfg.oracle.lambdas:
            em = exact_dynamical_map(FullModel(cfg.system, cfg.bath, lam), cfg.grid)
            tcl2 = sum(lam**n * unit[n] for n in (1, 2))
            tcl4 = tcl2 + sum(lam**n * unit[n] for n in (3, 4))
            d2 = np.linalg.norm((em.generator - tcl2)[idx], axis=(1, 2))
            d4 = np.linalg.norm((em.generator - tcl4)[idx], axis=(1, 2))
            per_lambda.append({
                "lambda": lam,
                "max_distance_tcl2": float(d2.max()),
                "max_distance_tcl4": float(d4.max()),
                "distance_tcl2": d2,
                "distance_tcl4": d4,
                "max_condition_number": em.diagnostics["max_condition_number"],
                "trace_defect": em.diagnostics["trace_defect"],
            })
    ratios, failures = [], []
    for a, b in zip(per_lambda[:-1], per_lambda[1:]):
        entry = {"lambdas": [a["lambda"], b["lambda"]]}
        for key, window in (("tcl2", cfg.oracle.window_tcl2), ("tcl4", cfg.oracle.window_tcl4)):
            r = halving_ratio(a[f"max_distance_{key}"], b[f"max_distance_{key}"], a["lambda"], b["lambda"])
            ok = r is None or window[0] <= r <= window[1]
            entry[key] = {"ratio": r, "window": list(window), "pass": ok}
            if not ok:
                failures.append(
                    f"{key} halving ratio {r:.4g} between lambda={a['lambda']} and {b['lambda']} "
                    f"outside [{window[0]}, {window[1]}]"
                )
        ratios.append(entry)
    report = {
        "metadata": _metadata(cfg, "oracle-compare"),
        "recurrence_window": t_rec,
        "comparison_t_max": t_max,
        "t": times,
        "per_lambda": per_lambda,
        "halving_ratios": ratios,
        "pass": not failures,
        TIMINGS_KEY: timer.laps,
    }
    return report, failures


def run_correlation(cfg: RunConfig):
    """Two-point function through the TCL map, plus exact versus factorized three-point values.

    Returns ``(csv_header, csv_rows, report)``.
    """
    if cfg.correlation is None:
        raise ConfigError(["correlation needs a [correlation] table with operators A and B"])
    c = cfg.correlation
    timer = _Timer()
    rho_S = cfg.rho0.rho
    with timer("map"):
        dmap = dynamical_map_from_generator(build_generator(cfg), cfg.grid, cfg.system.H_S)
    two = two_point_correlation(dmap, c.A, c.B, rho_S)
    rows = [[t, v.real, v.imag] for t, v in zip(cfg.grid.times, two)]
    report = {"metadata": _metadata(cfg, "correlation"), "tcl_order": cfg.tcl_order}
    if isinstance(cfg.bath, DiscreteBath):
        full = FullModel(cfg.system, cfg.bath, cfg.coupling)
        with timer("oracle"):
            em = exact_dynamical_map(full, cfg.grid)
            exact_two = exact_two_point_correlation(full, c.A, c.B, rho_S, cfg.grid)
            report["two_point_max_gap"] = float(np.max(np.abs(two - exact_two)))
            points = []
            for t2, t1 in c.pairs:
                cfg.grid.index(t2)
                cfg.grid.index(t1)
                exact = exact_multipoint_correlation(full, (c.A, c.B, c.C), (t2, t1), rho_S, cfg.grid.t0)
                fact = factorized_multipoint(em, (c.A, c.B, c.C), (t2, t1), rho_S)
                points.append({"t2": t2, "t1": t1, "exact": exact, "factorized": fact, "gap": abs(exact - fact)})
        report["three_point"] = points
        report["three_point_max_gap"] = max((p["gap"] for p in points), default=0.0)
    else:
        report["three_point"] = None
        report["note"] = "three-point values need a discrete bath for the exact reference"
    report[TIMINGS_KEY] = timer.laps
    return ["t", "re_C_AB", "im_C_AB"], rows, report


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common_options(default):
    # subcommands repeat the global options; their defaults are suppressed so
    # that a value given before the subcommand is not overwritten
    common = argparse.ArgumentParser(add_help=False)
    pick = (lambda v: v) if default else (lambda v: argparse.SUPPRESS)
    common.add_argument("--output-dir", type=Path, default=pick(None), help="directory for CSV/JSON output (default: cwd)")
    common.add_argument("--seed", type=int, default=pick(0), help="seed for random-matrix self-tests")
    common.add_argument("--quiet", action="store_true", default=pick(False), help="only report errors")
    return common


def build_parser():
    common = _common_options(default=False)
    p = _Parser(prog="tclgen", description="Time-convolutionless generators for open quantum systems.",
                parents=[_common_options(default=True)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="propagate the reduced state")
    s.add_argument("config", type=Path)
    s = sub.add_parser("diagrams", parents=[common], help="list cut-diagram compositions of order n")
    s.add_argument("n", type=int)
    s.add_argument("--verify", action="store_true", help="check recursion against composition sums on random grids")
    s = sub.add_parser("oracle-compare", parents=[common], help="compare TCL generators with the exact one")
    s.add_argument("config", type=Path)
    s = sub.add_parser("correlation", parents=[common], help="two- and three-point correlation functions")
    s.add_argument("config", type=Path)
    return p


def _emit(out_dir, name, formats, header=None, rows=None, report=None):
    written = []
    if header is not None and "csv" in formats:
        path = out_dir / f"{name}.csv"
        _atomic_write(path, csv_bytes(header, rows))
        written.append(path)
    if report is not None and "json" in formats:
        path = out_dir / f"{name}_report.json"
        _atomic_write(path, json_bytes(report))
        written.append(path)
    return written


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    out_dir = args.output_dir or Path.cwd()
    try:
        if args.command == "diagrams":
            report = run_diagrams(args.n, args.verify, args.seed)
            data = json_bytes(report)
            if args.output_dir is not None:
                _atomic_write(out_dir / f"diagrams_{args.n}.json", data)
            if not args.quiet:
                sys.stdout.write(data.decode())
            if args.verify and report["verification"]["max_relative_difference"] >= 1e-12:
                raise NumericalCheckFailed("recursion and composition sums disagree beyond 1e-12")
            return EXIT_OK
        cfg = parse_config(args.config)
        if args.command == "simulate":
            header, rows, report = run_simulate(cfg)
            written = _emit(out_dir, cfg.name, cfg.formats, header, rows, report)
            log.info("trace drift %.3g", report["diagnostics"]["trace_drift"])
        elif args.command == "oracle-compare":
            report, failures = run_oracle_compare(cfg)
            written = _emit(out_dir, cfg.name, ("json",), report=report)
            for path in written:
                log.info("wrote %s", path)
            if failures:
                raise NumericalCheckFailed("; ".join(failures))
            return EXIT_OK
        else:
            header, rows, report = run_correlation(cfg)
            written = _emit(out_dir, cfg.name, cfg.formats, header, rows, report)
            if report.get("three_point") is not None:
                log.info("max three-point gap %.3g", report["three_point_max_gap"])
        for path in written:
            log.info("wrote %s", path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"tclgen: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalCheckFailed as exc:
        print(f"tclgen: numerical check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, NotImplementedError) as exc:
        print(f"tclgen: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
