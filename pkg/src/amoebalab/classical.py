"""Amoebas of Laurent polynomials in two variables.

Rasterization by fiber root solving, the Ronkin function and its gradient by
periodic trapezoid quadrature on the torus, the order map on complement
components, and the Monge-Ampere mass as the area of the gradient image.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geometry import (ComponentMap, Grid, Polytope, cone_mismatch_deg, convex_hull, dilate,
                       distance_to_polytope, flood_components, is_convex_region, normal_cone_at_point,
                       recession_cone_estimate)
from .laurent import (LaurentPolynomial, fiber_coefficients, parse_laurent,
                      roots_from_fiber_coefficients, support_polytope, univariate_roots)
from .validation import check_box, check_grid_shape

log = logging.getLogger(__name__)

NQ_DEFAULT = 256
NQ_MAX = 1024
QUAD_TOL = 1e-8
# node cap of the one-dimensional fallback rule (kinks on the amoeba give second-order convergence)
NQ_JENSEN_MAX = 1 << 17
NEAR_ZERO = 1e-9
# the gradient image only needs ~1e-3 accuracy, so the mass lattice uses fewer nodes
NQ_MA = 128


class QuadratureError(RuntimeError):
    """A torus fiber passes too close to the zero set of ``F``."""


@dataclass
class AmoebaRaster:
    grid: Grid
    mask: np.ndarray
    meta: Dict = field(default_factory=dict)


@dataclass
class OrderMapResult:
    component_ids: List[int]
    raw: np.ndarray
    rounded: np.ndarray
    rounding_distance: np.ndarray
    probes: np.ndarray
    injective: bool
    in_polytope: bool

    def as_dict(self) -> Dict[int, np.ndarray]:
        return {cid: self.raw[i] for i, cid in enumerate(self.component_ids)}

    def to_json(self) -> dict:
        return {
            "components": [
                {"id": cid, "probe": self.probes[i].tolist(), "order": self.raw[i].tolist(),
                 "rounded": self.rounded[i].tolist(), "rounding_distance": float(self.rounding_distance[i])}
                for i, cid in enumerate(self.component_ids)
            ],
            "injective": self.injective,
            "in_polytope": self.in_polytope,
        }


# -- rasterization ---------------------------------------------------------

def _mark_segments(mask: np.ndarray, col: np.ndarray, y0: np.ndarray, y1: np.ndarray, grid: Grid):
    """Mark cells of column ``col`` covered by the x2-intervals ``[y0, y1]``."""
    lo2, h2, n2 = grid.lo[1], grid.spacing[1], grid.shape[1]
    a = np.minimum(y0, y1)
    b = np.maximum(y0, y1)
    keep = np.isfinite(a) & np.isfinite(b) & (b >= lo2) & (a <= grid.hi[1])
    col, a, b = col[keep], a[keep], b[keep]
    i0 = np.clip(np.floor((a - lo2) / h2), 0, n2 - 1).astype(int)
    i1 = np.clip(np.floor((b - lo2) / h2), 0, n2 - 1).astype(int)
    diff = np.zeros((mask.shape[0], n2 + 1), dtype=np.int64)
    np.add.at(diff, (col, i0), 1)
    np.add.at(diff, (col, i1 + 1), -1)
    mask |= np.cumsum(diff[:, :n2], axis=1) > 0


def _sweep(F: LaurentPolynomial, grid: Grid, fibers: int, angles: int, meta: dict) -> np.ndarray:
    """Fiber sweep over ``x1``: marks ``(x1, log|z2|)`` for the roots ``z2``."""
    mask = np.zeros(grid.shape, dtype=bool)
    x1 = grid.lo[0] + (np.arange(fibers) + 0.5) * (grid.hi[0] - grid.lo[0]) / fibers
    th = 2 * np.pi * np.arange(angles) / angles
    X1, TH = np.meshgrid(x1, th, indexing="ij")
    coeffs, _ = fiber_coefficients(F, np.exp(X1.ravel() + 1j * TH.ravel()))
    bad = np.max(np.abs(coeffs), axis=1) == 0
    meta["degenerate_fibers"] += int(bad.sum())
    roots: List[Optional[np.ndarray]] = [None] * len(coeffs)
    good = np.flatnonzero(~bad)
    for i, r in zip(good, roots_from_fiber_coefficients(coeffs[good])):
        roots[i] = r
    col = np.clip(np.floor((x1 - grid.lo[0]) / grid.spacing[0]), 0, grid.shape[0] - 1).astype(int)
    cols, ya, yb = [], [], []
    for f in range(fibers):
        for k in range(angles):
            ra = roots[f * angles + k]
            rb = roots[f * angles + (k + 1) % angles]
            if ra is None or len(ra) == 0:
                continue
            la = np.log(np.abs(ra))
            if rb is None or len(rb) != len(ra):
                cols.append(np.full(len(la), col[f])), ya.append(la), yb.append(la)
                continue
            lb = np.log(np.abs(rb))
            if len(ra) > 1:
                _, perm = linear_sum_assignment(np.abs(ra[:, None] - rb[None, :]))
                lb = lb[perm]
            cols.append(np.full(len(la), col[f])), ya.append(la), yb.append(lb)
    if cols:
        _mark_segments(mask, np.concatenate(cols), np.concatenate(ya), np.concatenate(yb), grid)
    return mask


def _swap(F: LaurentPolynomial) -> LaurentPolynomial:
    return LaurentPolynomial({(e[1], e[0]): c for e, c in F.terms.items()}, 2)


def rasterize_amoeba(F: LaurentPolynomial, box: Sequence[float], shape, fibers: int = 600,
                     angles: int = 64, dilation: int = 1) -> AmoebaRaster:
    """Occupied-cell mask of the amoeba of ``F`` over ``box``.

    Each fiber ``x1 = const`` is swept over ``angles`` values of ``theta1``;
    the roots ``z2`` mark cells ``(x1, log|z2|)`` and consecutive angles are
    joined so the slice of the fiber is covered without gaps.  The same sweep
    runs with the variables exchanged, which catches tentacles that thin out
    faster than the fiber spacing.
    """
    if F.m != 2:
        raise ValueError("rasterization is implemented for m = 2")
    grid = Grid(check_box(box, 2), check_grid_shape(shape, 2))
    mask = np.zeros(grid.shape, dtype=bool)
    meta = {"fibers": int(fibers), "angles": int(angles), "dilation": int(dilation),
            "degenerate_fibers": 0}
    if len(F.terms) == 1:
        meta["mode"] = "monomial"
        return AmoebaRaster(grid, mask, meta)
    if fibers < max(grid.shape):
        log.warning("fewer fibers (%d) than cells per axis %s: slices may leave gaps", fibers, grid.shape)
    meta["mode"] = "fiber"
    for axis in (0, 1):
        G = F if axis == 0 else _swap(F)
        g = grid if axis == 0 else Grid((grid.box[2], grid.box[3], grid.box[0], grid.box[1]),
                                        grid.shape[::-1])
        e = G.exponents
        if e[:, 1].min() == e[:, 1].max():
            # no dependence on the solved variable: vertical lines at the roots in the other one
            if e[:, 0].min() != e[:, 0].max():
                roots = univariate_roots(G, axis=0)
                idx, inside = g.index_of(np.c_[np.log(np.abs(roots)), np.full(len(roots), g.lo[1])])
                part = np.zeros(g.shape, dtype=bool)
                part[idx[inside, 0], :] = True
            else:
                part = np.zeros(g.shape, dtype=bool)
        else:
            part = _sweep(G, g, fibers, angles, meta)
        mask |= part if axis == 0 else part.T
    return AmoebaRaster(grid, dilate(mask, dilation), meta)


# -- Ronkin function -------------------------------------------------------

def _torus_sums(F: LaurentPolynomial, x, N: int, weights=None):
    """Scaled ``F`` on an ``N x N`` torus grid over ``Log^{-1}(x)`` and the dominant log modulus."""
    x = np.asarray(x, dtype=float)
    exps = F.exponents
    logmod = exps @ x + np.log(np.abs(F.coefficients))
    M = float(logmod.max())
    c = F.coefficients / np.abs(F.coefficients) * np.exp(logmod - M)
    th = 2 * np.pi * np.arange(N) / N
    U = np.exp(1j * np.outer(exps[:, 0], th))  # (T, N)
    V = np.exp(1j * np.outer(exps[:, 1], th))
    vals = (U * c[:, None]).T @ V
    extra = None
    if weights is not None:
        extra = [(U * (c * w)[:, None]).T @ V for w in weights]
    return vals, M, extra


def _ronkin_once(F, x, N):
    vals, M, _ = _torus_sums(F, x, N)
    with np.errstate(divide="ignore"):
        lv = np.log(np.abs(vals))
    lv[~np.isfinite(lv)] = np.log(1e-300)
    return M + float(lv.mean())


def _ronkin_jensen_once(F, x, N):
    # Jensen's formula in z2 on each of N fibers z1 = e^(x1 + i theta1), after scaling
    # both coordinates to the unit circle: the fiber mean of log|P(u)| over |u| = 1 is
    # log|top coefficient| + sum over roots of max(0, log|r|)
    x = np.asarray(x, dtype=float)
    exps = F.exponents
    logmod = exps @ x + np.log(np.abs(F.coefficients))
    M = float(logmod.max())
    G = LaurentPolynomial({tuple(e): c / abs(c) * np.exp(lm - M)
                           for e, c, lm in zip(exps.tolist(), F.coefficients, logmod)}, 2)
    th = 2 * np.pi * np.arange(N) / N
    coeffs, _ = fiber_coefficients(G, np.exp(1j * th))
    scale = np.max(np.abs(coeffs), axis=1)
    vals = np.full(N, np.log(1e-300))
    live = np.flatnonzero(scale > 0)
    if live.size:
        sub = coeffs[live]
        nz = np.abs(sub) > 1e-14 * scale[live, None]
        top = sub.shape[1] - 1 - np.argmax(nz[:, ::-1], axis=1)
        lead = np.log(np.abs(sub[np.arange(live.size), top]))
        roots = roots_from_fiber_coefficients(sub)
        vals[live] = lead + np.array([np.sum(np.maximum(0.0, np.log(np.abs(r)))) for r in roots])
    return M + float(vals.mean())


def ronkin_value_jensen(F: LaurentPolynomial, x, Nq: int = NQ_DEFAULT, nq_max: int = NQ_JENSEN_MAX) -> float:
    """Ronkin function by Jensen's formula in one variable and trapezoid quadrature in the other.

    The inner fiber mean is exact, so the remaining integrand is continuous
    with kinks only where the fiber meets the curve.  The rule on ``Nq``
    nodes is doubled until two successive values agree to ``1e-8`` or
    ``nq_max`` is reached.
    """
    if F.m != 2:
        raise ValueError("ronkin_value_jensen is implemented for m = 2")
    if len(F.terms) == 1:
        e, c = next(iter(F.terms.items()))
        return float(np.dot(e, x) + np.log(abs(c)))
    x = np.asarray(x, dtype=float)
    if np.ptp(F.exponents[:, 1]) == 0:  # no z2 dependence: apply Jensen in z1 instead
        F, x = _swap(F), x[::-1]
    val = _ronkin_jensen_once(F, x, Nq)
    N = Nq
    while N < nq_max:
        N *= 2
        new = _ronkin_jensen_once(F, x, N)
        if abs(new - val) < QUAD_TOL:
            return new
        val = new
    return val


def ronkin_value(F: LaurentPolynomial, x, Nq: int = NQ_DEFAULT, adaptive: bool = True,
                 nq_max: int = NQ_MAX) -> float:
    """Ronkin function ``(2 pi)^-2 int log|F(e^(x + i theta))| d theta``.

    The periodic trapezoid rule on ``Nq x Nq`` nodes is doubled until two
    successive values agree to ``1e-8``.  Its convergence rate degrades as
    the torus fiber approaches the curve; when ``nq_max`` is reached without
    convergence the value comes from :func:`ronkin_value_jensen`.
    """
    if F.m != 2:
        raise ValueError("ronkin_value is implemented for m = 2")
    if len(F.terms) == 1:
        e, c = next(iter(F.terms.items()))
        return float(np.dot(e, x) + np.log(abs(c)))
    val = _ronkin_once(F, x, Nq)
    if not adaptive:
        return val
    N = Nq
    while N < nq_max:
        N *= 2
        new = _ronkin_once(F, x, N)
        if abs(new - val) < QUAD_TOL:
            return new
        val = new
    return ronkin_value_jensen(F, x)


def _gradient_once(F, x, N):
    exps = F.exponents
    vals, _, (d1, d2) = _torus_sums(F, x, N, weights=[exps[:, 0], exps[:, 1]])
    amin = float(np.min(np.abs(vals)))
    if amin < NEAR_ZERO:
        raise QuadratureError(f"fiber over {np.asarray(x).tolist()} passes within {amin:.2g} of a zero")
    g = np.array([np.mean((d1 / vals).real), np.mean((d2 / vals).real)])
    return g


def ronkin_gradient(F: LaurentPolynomial, x, Nq: int = NQ_DEFAULT, adaptive: bool = True,
                    nq_max: int = NQ_MAX) -> np.ndarray:
    """Gradient of the Ronkin function: torus means of ``Re(z_j dF/dz_j / F)``."""
    if F.m != 2:
        raise ValueError("ronkin_gradient is implemented for m = 2")
    if len(F.terms) == 1:
        return np.array(next(iter(F.terms)), dtype=float)
    g = _gradient_once(F, x, Nq)
    if not adaptive:
        return g
    N = Nq
    while N < nq_max:
        N *= 2
        new = _gradient_once(F, x, N)
        if np.max(np.abs(new - g)) < QUAD_TOL:
            return new
        g = new
    return g


def _is_converged_gradient(F, x, Nq) -> Optional[np.ndarray]:
    try:
        a = _gradient_once(F, x, Nq)
        b = _gradient_once(F, x, 2 * Nq)
    except QuadratureError:
        return None
    return b if np.max(np.abs(a - b)) < 1e-6 else None


# -- order map -------------------------------------------------------------

def order_map_classical(F: LaurentPolynomial, raster: AmoebaRaster, components: ComponentMap,
                        Nq: int = NQ_DEFAULT, seed: int = 0) -> OrderMapResult:
    """Ronkin gradient at the deepest cell of each complement component."""
    rng = np.random.default_rng(seed)
    ids = components.ids()
    raw, probes = [], []
    for cid in ids:
        cell, depth = components.deepest_cell(cid)
        x = components.grid.center_of(cell)
        for attempt in range(5):
            try:
                g = ronkin_gradient(F, x, Nq)
                break
            except QuadratureError:
                x = x + rng.normal(scale=0.25 * components.grid.spacing)
        else:
            raise QuadratureError(f"component {cid}: every probe fiber hits the zero set")
        raw.append(g)
        probes.append(x)
    raw_a = np.array(raw).reshape(-1, 2)
    rounded = np.rint(raw_a)
    dist = np.linalg.norm(raw_a - rounded, axis=1)
    for cid, d in zip(ids, dist):
        if d > 0.1:
            log.warning("component %d under-resolved: rounding distance %.3g", cid, d)
    injective = len({tuple(r) for r in rounded.astype(int).tolist()}) == len(ids)
    N = support_polytope(F)
    in_poly = bool(np.all(N.contains(rounded, slack=1e-9))) if len(ids) else True
    return OrderMapResult(ids, raw_a, rounded.astype(int), dist, np.array(probes).reshape(-1, 2),
                          injective, in_poly)


def gradient_field(F: LaurentPolynomial, box, n: int = 41, Nq: int = NQ_MA) -> np.ndarray:
    """Ronkin gradients on an ``n x n`` node lattice over ``box``.

    Converged quadrature gradients are used off the amoeba; elsewhere central
    differences of the Ronkin function.
    """
    lo1, hi1, lo2, hi2 = box
    xs, ys = np.linspace(lo1, hi1, n), np.linspace(lo2, hi2, n)
    h = 0.25 * min(xs[1] - xs[0], ys[1] - ys[0])
    out = np.empty((n, n, 2))
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            x = np.array([a, b])
            g = _is_converged_gradient(F, x, Nq)
            if g is None:
                g = np.array([
                    (ronkin_value(F, x + [h, 0], Nq, adaptive=False)
                     - ronkin_value(F, x - [h, 0], Nq, adaptive=False)) / (2 * h),
                    (ronkin_value(F, x + [0, h], Nq, adaptive=False)
                     - ronkin_value(F, x - [0, h], Nq, adaptive=False)) / (2 * h),
                ])
            out[i, j] = g
    return out


def ma_total_mass_classical(F: LaurentPolynomial, box, grid: int = 41, Nq: int = NQ_MA,
                            return_details: bool = False):
    """Area of the convex hull of the Ronkin gradient image over ``box``."""
    box = check_box(box, 2)
    if len(F.terms) == 1:
        return (0.0, {"outside_polytope": 0}) if return_details else 0.0
    grads = gradient_field(F, box, grid, Nq).reshape(-1, 2)
    N = support_polytope(F)
    outside = distance_to_polytope(N, grads) > 0.05
    if outside.any():
        log.warning("%d gradient samples leave the Newton polytope by > 0.05", int(outside.sum()))
    area = convex_hull(grads).area
    if return_details:
        return area, {"outside_polytope": int(outside.sum()), "samples": int(len(grads))}
    return area


# -- estimator -------------------------------------------------------------

class ClassicalAmoeba(BaseEstimator):
    """Amoeba of a Laurent polynomial in two variables.

    ``fit`` rasterizes the amoeba, labels complement components and evaluates
    the order map; ``predict`` returns the component label of points
    (0 on the amoeba).

    Parameters
    ----------
    box : tuple of 4 floats
        ``(lo1, hi1, lo2, hi2)`` in log-modulus coordinates.
    grid : int
        Cells per axis.
    fibers, angles : int
        Fiber lines ``x1 = const`` and ``theta1`` samples per fiber.
    nq : int
        Trapezoid nodes per torus axis.
    ma_grid : int
        Lattice size for the gradient-image (Monge-Ampere) mass.
    ma_nq : int
        Trapezoid nodes per torus axis on that lattice.
    """

    def __init__(self, box=(-6.0, 6.0, -6.0, 6.0), grid: int = 300, fibers: int = 600,
                 angles: int = 64, nq: int = NQ_DEFAULT, ma_grid: int = 41, ma_nq: int = NQ_MA,
                 seed: int = 0):
        self.box = box
        self.grid = grid
        self.fibers = fibers
        self.angles = angles
        self.nq = nq
        self.ma_grid = ma_grid
        self.ma_nq = ma_nq
        self.seed = seed

    def fit(self, F: Union[LaurentPolynomial, str], y=None):
        if isinstance(F, str):
            F = parse_laurent(F, 2)
        self.polynomial_ = F
        self.raster_ = rasterize_amoeba(F, self.box, (self.grid, self.grid), self.fibers, self.angles)
        self.components_ = flood_components(self.raster_.mask, self.raster_.grid)
        self.orders_ = order_map_classical(F, self.raster_, self.components_, self.nq, self.seed)
        self.newton_polytope_ = support_polytope(F)
        self.ma_mass_, self.ma_details_ = ma_total_mass_classical(
            F, self.box, self.ma_grid, self.ma_nq, return_details=True)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "components_")
        idx, inside = self.components_.grid.index_of(X)
        lab = self.components_.labels[idx[:, 0], idx[:, 1]]
        return np.where(inside, lab, -1)

    def ronkin(self, X, Nq: Optional[int] = None) -> np.ndarray:
        check_is_fitted(self, "polynomial_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([ronkin_value(self.polynomial_, x, Nq or self.nq) for x in X])

    def ronkin_gradient(self, X, Nq: Optional[int] = None) -> np.ndarray:
        check_is_fitted(self, "polynomial_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([ronkin_gradient(self.polynomial_, x, Nq or self.nq) for x in X])

    def recession_report(self, tol_deg: float = 3.0) -> List[dict]:
        """Recession cone of each component against the normal cone of the Newton polytope."""
        check_is_fitted(self, "orders_")
        out = []
        for i, cid in enumerate(self.orders_.component_ids):
            rec = recession_cone_estimate(self.components_, cid)
            nc = normal_cone_at_point(self.newton_polytope_, self.orders_.rounded[i], tol=1e-9)
            mis = cone_mismatch_deg(rec, nc)
            out.append({"id": cid, "recession": rec.to_json(), "normal": nc.to_json(),
                        "mismatch_deg": mis, "pass": bool(mis <= tol_deg)})
        return out

    def check_invariants(self, convex_trials: int = 200, tol_deg: float = 3.0) -> Dict[str, dict]:
        """Theorem-level checks on the fitted amoeba; each entry has ``pass``."""
        check_is_fitted(self, "orders_")
        N = self.newton_polytope_
        o = self.orders_
        n_comp = self.components_.n_components
        lattice = _lattice_points(N)
        checks: Dict[str, dict] = {}
        checks["component_count_bounds"] = {
            "components": n_comp, "vertices": int(len(N.vertices)), "lattice_points": lattice,
            "pass": bool(len(N.vertices) <= n_comp <= lattice) if N.dim == 2 else True,
        }
        checks["order_integrality"] = {
            "max_rounding_distance": float(o.rounding_distance.max()) if n_comp else 0.0,
            "tol": 1e-3, "pass": bool(n_comp == 0 or o.rounding_distance.max() <= 1e-3),
        }
        checks["order_injective"] = {"pass": bool(o.injective)}
        checks["orders_in_polytope"] = {"pass": bool(o.in_polytope)}
        conv = {cid: is_convex_region(self.components_, cid, convex_trials, seed=self.seed)
                for cid in self.components_.ids()}
        checks["components_convex"] = {"per_component": conv, "pass": all(conv.values())}
        rec = self.recession_report(tol_deg)
        checks["recession_equals_normal_cone"] = {"per_component": rec, "tol_deg": tol_deg,
                                                  "pass": all(r["pass"] for r in rec)}
        area = N.area
        checks["ma_mass"] = {"mass": float(self.ma_mass_), "polytope_area": area, "tol": 0.02,
                             "pass": bool(abs(self.ma_mass_ - area) <= 0.02)}
        return checks


def _lattice_points(P: Polytope) -> int:
    V = P.vertices
    lo = np.floor(V.min(axis=0)).astype(int)
    hi = np.ceil(V.max(axis=0)).astype(int)
    pts = np.array([(a, b) for a in range(lo[0], hi[0] + 1) for b in range(lo[1], hi[1] + 1)], dtype=float)
    return int(np.sum(P.contains(pts, slack=1e-9)))
