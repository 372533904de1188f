"""Command-line entry point ``amoebalab``.

Subcommands ``classical``, ``generalized``, ``superform-check`` and
``fan-limit`` run a pipeline, evaluate its invariant checks and write a JSON
report (plus an optional PPM raster and CSV grid dump).

Exit status: 0 when every requested check passes, 2 on an invalid
configuration, 3 when a check fails or a module raises a numerical error.
The environment variable ``AMOEBALAB_THREADS`` caps the BLAS/OpenMP thread
pools.
"""
from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy
import sklearn
from threadpoolctl import threadpool_limits

from . import io
from .validation import check_box

log = logging.getLogger("amoebalab")

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3
MIN_CLI_GRID = 16
MODES = ("classical", "generalized", "superform-check", "fan-limit")


class SchemaError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Validated configuration of one CLI run."""

    mode: str
    box: Optional[List[float]] = None
    grid: Optional[int] = None
    seed: Optional[int] = None
    poly: Optional[str] = None
    points: Optional[List[List[float]]] = None
    residues: Optional[List[List[float]]] = None
    base_point: Optional[List[float]] = None
    params: Dict[str, object] = field(default_factory=dict)
    report: Optional[str] = None
    emit: Optional[str] = None
    csv: Optional[str] = None
    timestamp: bool = True

    def echo(self) -> dict:
        """Configuration as written into the report (output paths excluded)."""
        d = asdict(self)
        for k in ("report", "emit", "csv", "timestamp"):
            d.pop(k)
        return d


# -- parsing helpers ---------------------------------------------------------

def _complex(tok: str) -> complex:
    tok = tok.strip().replace(" ", "").replace("i", "j")
    if not tok:
        raise SchemaError("empty number")
    try:
        return complex(tok)
    except ValueError as exc:
        raise SchemaError(f"not a number: {tok!r}") from exc


def parse_points(text: str) -> List[complex]:
    """``"0,1,0.5+2i"`` -> complex points."""
    return [_complex(t) for t in text.split(",")]


def parse_residues(text: str) -> List[List[float]]:
    """``"1,0;0,1"`` -> rows of real residues (one row per differential)."""
    rows = []
    for row in text.split(";"):
        try:
            rows.append([float(t) for t in row.split(",")])
        except ValueError as exc:
            raise SchemaError(f"residue row {row!r} is not a list of reals") from exc
    if len({len(r) for r in rows}) != 1:
        raise SchemaError("residue rows have different lengths")
    return rows


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise SchemaError(f"not a list of numbers: {text!r}") from exc


def thread_cap(env: Optional[Dict[str, str]] = None) -> Optional[int]:
    """Value of ``AMOEBALAB_THREADS`` (None when unset)."""
    raw = (os.environ if env is None else env).get("AMOEBALAB_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise SchemaError(f"AMOEBALAB_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise SchemaError(f"AMOEBALAB_THREADS must be a positive integer, got {raw!r}")
    return n


# -- argument parser ---------------------------------------------------------

def _outputs(p: argparse.ArgumentParser, raster: bool = True, grid_dump: bool = True) -> None:
    p.add_argument("--report", help="JSON report path (stdout when omitted)")
    if raster:
        p.add_argument("--emit", help="PPM raster of the complement components")
    if grid_dump:
        p.add_argument("--csv", help="CSV dump of the Ronkin function")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp field")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amoebalab", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="mode", required=True)

    c = sub.add_parser("classical", help="amoeba of a Laurent polynomial in two variables")
    c.add_argument("--poly", required=True, help='e.g. "1 + z1 + z2"')
    c.add_argument("--box", default="-6,6,-6,6")
    c.add_argument("--grid", type=int, default=300)
    c.add_argument("--fibers", type=int, default=600)
    c.add_argument("--angles", type=int, default=64)
    c.add_argument("--nq", type=int, default=256)
    c.add_argument("--ma-grid", type=int, default=41)
    c.add_argument("--ma-nq", type=int, default=128)
    c.add_argument("--csv-grid", type=int, default=41, help="cells per axis of the Ronkin CSV dump")
    c.add_argument("--convex-trials", type=int, default=200)
    c.add_argument("--tol-deg", type=float, default=3.0)
    c.add_argument("--seed", type=int, default=0)
    _outputs(c)

    g = sub.add_parser("generalized", help="generalized amoeba of a marked sphere")
    g.add_argument("--points", required=True, help='marked points, e.g. "0,1" or "0,1+2i"')
    g.add_argument("--residues", required=True, help='rows separated by ";", e.g. "1,0;0,1"')
    g.add_argument("--base-point", help="complex base point of the Log map")
    g.add_argument("--box", default="-6,6,-6,6")
    g.add_argument("--grid", type=int, default=200)
    g.add_argument("--samples", type=float, default=2e6)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--delta", type=float, default=1e-3)
    g.add_argument("--eps", type=float, default=6.0)
    g.add_argument("--closed-tol", type=float, default=0.05)
    g.add_argument("--sym-tol", type=float, default=1e-2)
    g.add_argument("--positivity-trials", type=int, default=64)
    g.add_argument("--convex-trials", type=int, default=200)
    g.add_argument("--tol-deg", type=float, default=3.0)
    g.add_argument("--compare-classical", metavar="POLY",
                   help="classical polynomial of the same curve to cross-check against")
    _outputs(g)

    s = sub.add_parser("superform-check", help="randomized superform calculus and Theta identities")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--forms", type=int, default=50)
    s.add_argument("--points", type=int, default=20)
    s.add_argument("--degree", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--calculus-tol", type=float, default=1e-12)
    s.add_argument("--theta-tol", type=float, default=1e-8)
    _outputs(s, raster=False, grid_dump=False)

    f = sub.add_parser("fan-limit", help="Hausdorff distance of scaled amoebas to the asymptotic fan")
    f.add_argument("--points", required=True)
    f.add_argument("--residues", required=True)
    f.add_argument("--base-point")
    f.add_argument("--t", default="1,2,4,8")
    f.add_argument("--box", default="-6,6,-6,6")
    f.add_argument("--resolution", type=float, default=0.02)
    f.add_argument("--slack", type=float, default=0.10)
    _outputs(f, raster=False, grid_dump=False)
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    """Validate parsed arguments; raises :class:`SchemaError`."""
    mode = ns.mode
    cfg = RunConfig(mode=mode, report=ns.report, emit=getattr(ns, "emit", None),
                    csv=getattr(ns, "csv", None), timestamp=not ns.no_timestamp)
    try:
        if hasattr(ns, "box"):
            cfg.box = list(check_box(ns.box, 2))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
    if hasattr(ns, "grid"):
        if ns.grid < MIN_CLI_GRID:
            raise SchemaError(f"grid must be at least {MIN_CLI_GRID} cells per axis, got {ns.grid}")
        cfg.grid = ns.grid
    cfg.seed = getattr(ns, "seed", None)

    def positive(name, value, integer=False):
        if not (value > 0) or (integer and int(value) != value):
            raise SchemaError(f"--{name.replace('_', '-')} must be a positive {'integer' if integer else 'number'}")
        return value

    if mode == "classical":
        cfg.poly = ns.poly
        for k in ("fibers", "angles", "nq", "ma_grid", "ma_nq", "csv_grid", "convex_trials"):
            cfg.params[k] = positive(k, getattr(ns, k), True)
        cfg.params["tol_deg"] = positive("tol_deg", ns.tol_deg)
    elif mode in ("generalized", "fan-limit"):
        pts = parse_points(ns.points)
        res = parse_residues(ns.residues)
        if len(res) != 2:
            raise SchemaError(f"two residue rows are needed, got {len(res)}")
        if len(res[0]) != len(pts):
            raise SchemaError(f"{len(pts)} points but {len(res[0])} residues per row")
        cfg.points = [[p.real, p.imag] for p in pts]
        cfg.residues = res
        if ns.base_point is not None:
            z0 = _complex(ns.base_point)
            cfg.base_point = [z0.real, z0.imag]
        if mode == "generalized":
            if ns.samples < 1e5:
                raise SchemaError("--samples must be at least 1e5")
            cfg.params["samples"] = int(ns.samples)
            for k in ("delta", "eps", "closed_tol", "sym_tol", "tol_deg"):
                cfg.params[k] = positive(k, float(getattr(ns, k)))
            if ns.eps < 2:
                raise SchemaError("--eps must be at least 2 cells")
            for k in ("positivity_trials", "convex_trials"):
                cfg.params[k] = positive(k, getattr(ns, k), True)
            cfg.params["compare_classical"] = ns.compare_classical
        else:
            t = parse_float_list(ns.t)
            if any(v <= 0 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
                raise SchemaError("--t must be positive and increasing")
            cfg.params.update(t=t, resolution=positive("resolution", ns.resolution),
                              slack=positive("slack", ns.slack))
    elif mode == "superform-check":
        for k in ("trials", "forms", "points"):
            cfg.params[k] = positive(k, getattr(ns, k), True)
        if ns.degree < 0:
            raise SchemaError("--degree must be nonnegative")
        cfg.params.update(degree=ns.degree, calculus_tol=positive("calculus_tol", ns.calculus_tol),
                          theta_tol=positive("theta_tol", ns.theta_tol))
    return cfg


# -- pipelines ---------------------------------------------------------------

def _failed(checks: Dict[str, dict]) -> List[str]:
    return sorted(k for k, v in checks.items() if isinstance(v, dict) and not v.get("pass", True))


def _sphere(cfg: RunConfig):
    from .generalized import build_marked_sphere

    pts = [complex(a, b) for a, b in cfg.points]
    z0 = complex(*cfg.base_point) if cfg.base_point else None
    try:
        return build_marked_sphere(pts, cfg.residues, z0)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def run_classical(cfg: RunConfig) -> dict:
    from .classical import ClassicalAmoeba, ronkin_value
    from .laurent import ParseError, parse_laurent
    from .geometry import Grid
    from .superforms import GridField

    try:
        F = parse_laurent(cfg.poly, 2)
    except (ParseError, ValueError) as exc:
        raise SchemaError(f"polynomial: {exc}") from exc
    p = cfg.params
    est = ClassicalAmoeba(box=tuple(cfg.box), grid=cfg.grid, fibers=p["fibers"], angles=p["angles"],
                          nq=p["nq"], ma_grid=p["ma_grid"], ma_nq=p["ma_nq"], seed=cfg.seed).fit(F)
    checks = est.check_invariants(convex_trials=p["convex_trials"], tol_deg=p["tol_deg"])
    o = est.orders_
    report = {
        "polynomial": {"text": cfg.poly, "terms": [{"exponent": list(e), "coefficient": c}
                                                   for e, c in sorted(F.terms.items())]},
        "raster": {"occupied_cells": int(est.raster_.mask.sum()), "meta": est.raster_.meta},
        "components": {"count": est.components_.n_components,
                       "per_component": [{"id": cid, "order": o.raw[i], "rounded": o.rounded[i],
                                          "rounding_distance": o.rounding_distance[i], "probe": o.probes[i]}
                                         for i, cid in enumerate(o.component_ids)]},
        "newton_polytope": est.newton_polytope_,
        "ma_mass": {"mass": est.ma_mass_, **est.ma_details_},
        "checks": checks,
        "tolerances": {"order_rounding": 1e-3, "recession_deg": p["tol_deg"], "ma_mass_abs": 0.02,
                       "convex_trials": p["convex_trials"]},
    }
    if cfg.emit:
        io.write_ppm(cfg.emit, est.components_.labels)
    if cfg.csv:
        lo1, hi1, lo2, hi2 = cfg.box
        g = Grid((lo1, hi1, lo2, hi2), (p["csv_grid"], p["csv_grid"]))
        vals = np.array([[ronkin_value(F, np.array([a, b]), p["nq"], adaptive=False) for b in g.axes()[1]]
                         for a in g.axes()[0]])
        io.write_grid_csv(cfg.csv, GridField(g, vals))
    return report


def run_generalized(cfg: RunConfig) -> dict:
    from .generalized import GeneralizedAmoeba, compare_with_classical

    MS = _sphere(cfg)
    p = cfg.params
    est = GeneralizedAmoeba(box=tuple(cfg.box), grid=cfg.grid, samples=p["samples"], delta=p["delta"],
                            eps=p["eps"], closed_tol=p["closed_tol"], seed=cfg.seed).fit(MS)
    checks = est.check_invariants(positivity_trials=p["positivity_trials"], convex_trials=p["convex_trials"],
                                  tol_deg=p["tol_deg"], sym_tol=p["sym_tol"])
    if p.get("compare_classical"):
        try:
            checks["classical_agreement"] = compare_with_classical(est, p["compare_classical"])
        except ValueError as exc:
            raise SchemaError(f"--compare-classical: {exc}") from exc
    hmeta = est.hessian_.meta
    report = {
        "sphere": MS,
        "fan": est.fan_,
        "nondegeneracy": est.nondegeneracy_,
        "raster": {"occupied_cells": int(est.raster_.mask.sum()), "meta": est.raster_.meta},
        "components": {"count": est.components_.n_components},
        "hessian": hmeta,
        "monte_carlo": {"rel_error_masses": hmeta["mc_rel_error"], "tail_mass": hmeta["tail_mass"],
                        "samples": hmeta["samples"]},
        "potential": est.potential_.meta,
        "orders": est.orders_,
        "newton_polytope": est.newton_polytope_,
        "ma_mass": est.ma_,
        "checks": checks,
        "tolerances": {"sym_tol": p["sym_tol"], "closed_tol": p["closed_tol"], "positivity_tol": 1e-9,
                       "convexity_tol": 1e-9, "recession_deg": p["tol_deg"], "ma_mass_rel": 0.05,
                       "ma_escape_slack": est.ma_.get("slack"), "order_distinct_tol": 0.05},
    }
    if cfg.emit:
        io.write_ppm(cfg.emit, est.components_.labels)
    if cfg.csv:
        io.write_grid_csv(cfg.csv, est.potential_)
    return report


def run_superform_check(cfg: RunConfig) -> dict:
    from .suites import calculus_suite, involution_exhaustive, theta_suite, wedge_sign_exhaustive

    p = cfg.params
    checks = {
        "calculus": calculus_suite(p["trials"], cfg.seed, degree=p["degree"], tol=p["calculus_tol"]),
        "wedge_sign_m2": wedge_sign_exhaustive(2),
        "wedge_sign_m3": wedge_sign_exhaustive(3),
        "involution_m2": involution_exhaustive(2),
        "involution_m3": involution_exhaustive(3),
        "theta": theta_suite(p["forms"], p["points"], cfg.seed, degree=p["degree"], tol=p["theta_tol"]),
    }
    for v in checks.values():
        v.pop("seconds", None)
    return {"checks": checks, "tolerances": {"calculus": p["calculus_tol"], "theta": p["theta_tol"]}}


def run_fan_limit(cfg: RunConfig) -> dict:
    from .generalized import verify_fan_limit

    MS = _sphere(cfg)
    p = cfg.params
    rep = verify_fan_limit(MS, p["t"], cfg.box, p["resolution"], p["slack"])
    return {"sphere": MS, "fan_limit": rep,
            "checks": {"fan_limit": {"nonincreasing": rep.nonincreasing, "decay": rep.decay,
                                     "pass": rep.passed}},
            "tolerances": {"monotone_slack": p["slack"], "resolution": p["resolution"]}}


RUNNERS = {"classical": run_classical, "generalized": run_generalized,
           "superform-check": run_superform_check, "fan-limit": run_fan_limit}


def versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"amoebalab": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": ".".join(map(str, sys.version_info[:3]))}


def run(cfg: RunConfig) -> int:
    """Run a validated configuration, write the report and return the exit status."""
    try:
        body = RUNNERS[cfg.mode](cfg)
    except SchemaError:
        raise
    except Exception as exc:  # numerical failure inside a module
        failing = type(exc).__name__
        print(f"amoebalab: numerical failure ({failing}): {exc}", file=sys.stderr)
        body = {"error": {"type": failing, "message": str(exc)}, "checks": {}}
        status = EXIT_NUMERIC
    else:
        failed = _failed(body.get("checks", {}))
        if failed:
            print("amoebalab: failed checks: " + ", ".join(failed), file=sys.stderr)
        status = EXIT_NUMERIC if failed else EXIT_OK
        body["failed_checks"] = failed
    report = {"mode": cfg.mode, "config": cfg.echo(), "seed": cfg.seed, "versions": versions(),
              "exit_status": status, **body}
    text = io.dumps_report(report, cfg.timestamp)
    if cfg.report:
        with open(cfg.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


_NEGATIVE_VALUE = re.compile(r"^-[0-9.]")


def _join_negative_values(argv: Sequence[str]) -> List[str]:
    """Rewrite ``--box -6,6,-6,6`` as ``--box=-6,6,-6,6`` so argparse does not take it for an option."""
    out: List[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) and _NEGATIVE_VALUE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(_join_negative_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        threads = thread_cap()
        cfg = config_from_args(ns)
        cfg.params["threads"] = threads
        with threadpool_limits(limits=threads):
            return run(cfg)
    except SchemaError as exc:
        print(f"amoebalab: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
