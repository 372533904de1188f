"""Generalized amoebas of the Riemann sphere with marked points.

The differentials are ``omega_j = sum_k a_jk dz / (z - p_k)`` with real
residues ``a_jk``; the point at infinity is an implicit extra marked point
with residue ``-sum_k a_jk``.  Their real periods vanish, so the map

    x_j(z) = sum_k a_jk (log|z - p_k| - log|z0 - p_k|)

is the generalized Log map in closed form.  Everything downstream works on
point samples of the sphere drawn from three kinds of strata:

* ``pole`` strata, polar coordinates ``z = p_k + exp(u + i t)`` around each
  marked point with ``u`` uniform, so tentacles are sampled evenly along
  their length;
* one ``middle`` stratum, the disk ``|z| < R`` minus the pole disks;
* one ``far`` stratum, ``z = exp(u + i t)`` with ``u`` uniform beyond ``R``.

Deterministic lattices in these strata give the amoeba raster, and jittered
lattices with explicit area weights give the Hessian pushforward current.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .classical import ClassicalAmoeba, ronkin_value
from .geometry import (ComponentMap, Cone, Fan, Grid, Polytope, cone_mismatch_deg, convex_hull, dilate,
                       distance_to_polytope, flood_components, hausdorff_distance, is_convex_region,
                       normal_cone, recession_cone_estimate)
from .laurent import parse_laurent
from .potential import potential_from_current
from .superforms import GridField, SuperCurrent11, is_positive, is_symmetric, min_positivity_pairing
from .validation import check_box, check_grid_shape

log = logging.getLogger(__name__)

MIN_SEPARATION = 1e-9
POLE_GUARD = 1e-12
DELTA_DEFAULT = 1e-3
EPS_DEFAULT = 6.0
# strata share of the pushforward samples: poles (split by log-range), middle, far
SHARE_POLES, SHARE_MIDDLE, SHARE_FAR = 0.6, 0.25, 0.15


# -- marked spheres ----------------------------------------------------------

@dataclass(frozen=True)
class MarkedSphere:
    """Marked points ``p_k`` on the sphere and the real residue matrix ``a`` (m x s)."""

    points: np.ndarray
    residues: np.ndarray
    base_point: complex

    @property
    def m(self) -> int:
        return int(self.residues.shape[0])

    @property
    def s(self) -> int:
        return int(len(self.points))

    @property
    def residue_at_infinity(self) -> np.ndarray:
        return -self.residues.sum(axis=1)

    @property
    def is_degenerate(self) -> bool:
        """True when every residue vanishes (all the differentials are zero)."""
        return not np.any(self.residues)

    @property
    def offset(self) -> np.ndarray:
        """Constant ``sum_k a_jk log|z0 - p_k|`` removed by the base point."""
        return self.residues @ np.log(np.abs(self.base_point - self.points))

    def phi(self, z) -> np.ndarray:
        """``dz``-coefficients of the differentials at ``z``, shape ``(..., m)``."""
        z = np.asarray(z, dtype=complex)
        return (1.0 / (z[..., None] - self.points)) @ self.residues.T.astype(complex)

    def to_json(self) -> dict:
        return {
            "points": [[float(p.real), float(p.imag)] for p in self.points],
            "residues": self.residues.tolist(),
            "base_point": [float(np.real(self.base_point)), float(np.imag(self.base_point))],
            "residue_at_infinity": self.residue_at_infinity.tolist(),
            "degenerate": self.is_degenerate,
        }


def build_marked_sphere(points, residues, base_point: Optional[complex] = None) -> MarkedSphere:
    """Validate marked points and residues.

    Parameters
    ----------
    points : sequence of complex
        Distinct finite marked points.
    residues : array_like, shape (m, s)
        Real residues; row ``j`` belongs to the ``j``-th differential.
    base_point : complex, optional
        Normalization point ``z0``.  Defaults to ``-1`` when that is not a
        marked point, otherwise to ``1 + max |p_k|``.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    if pts.ndim != 1 or len(pts) == 0:
        raise ValueError("need at least one marked point")
    res = np.asarray(residues)
    if np.iscomplexobj(res):
        if np.any(np.abs(res.imag) > 0):
            raise ValueError("residues must be real")
        res = res.real
    res = np.atleast_2d(res.astype(float))
    if res.shape[1] != len(pts):
        raise ValueError(f"residue matrix has {res.shape[1]} columns for {len(pts)} points")
    if not np.all(np.isfinite(res)) or not np.all(np.isfinite(pts)):
        raise ValueError("points and residues must be finite")
    if len(pts) > 1:
        d = np.abs(pts[:, None] - pts[None, :])
        d[np.diag_indices(len(pts))] = np.inf
        if d.min() <= MIN_SEPARATION:
            raise ValueError(f"marked points coincide (separation {d.min():.3g})")
    if base_point is None:
        base_point = -1.0 + 0j
        if np.min(np.abs(base_point - pts)) <= MIN_SEPARATION:
            base_point = complex(1.0 + np.max(np.abs(pts)))
    base_point = complex(base_point)
    if np.min(np.abs(base_point - pts)) <= MIN_SEPARATION:
        raise ValueError("base point lies on a marked point")
    if not np.any(res):
        log.warning("all residues vanish: the generalized amoeba is a point")
    pts.setflags(write=False)
    res.setflags(write=False)
    return MarkedSphere(pts, res, base_point)


def log_map(MS: MarkedSphere, z) -> np.ndarray:
    """Generalized Log of points ``z`` (any shape), output shape ``(..., m)``."""
    z = np.asarray(z, dtype=complex)
    d = np.abs(z[..., None] - MS.points)
    if np.any(d <= POLE_GUARD):
        raise ValueError("log_map evaluated on a marked point")
    return np.log(d) @ MS.residues.T - MS.offset


def _log_distances_polar(MS: MarkedSphere, kind: str, k: int, u: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``log|z - p_l|`` for all ``l`` at polar samples, exact in ``u`` for the centre."""
    w = np.exp(u + 1j * t)
    if kind == "pole":
        z = MS.points[k] + w
        L = np.log(np.abs(z[:, None] - MS.points))
        L[:, k] = u
        return L
    if kind == "far":
        # |z - p| = |z| |1 - p/z| keeps huge |z| finite
        return u[:, None] + np.log(np.abs(1.0 - MS.points[None, :] * np.exp(-u - 1j * t)[:, None]))
    raise ValueError(kind)


def log_map_polar(MS: MarkedSphere, kind: str, k: int, u, t) -> np.ndarray:
    """Log map at ``p_k + exp(u + i t)`` (``kind='pole'``) or ``exp(u + i t)`` (``'far'``)."""
    u = np.asarray(u, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    return _log_distances_polar(MS, kind, k, u, t) @ MS.residues.T - MS.offset


# -- critical points ---------------------------------------------------------

@dataclass
class RankReport:
    rank: int
    dim_L: int
    dim_L_cap_conj: int


def jacobian_rank(MS: MarkedSphere, z: complex, tol: float = 1e-9) -> RankReport:
    """Rank of the real differential of the Log map at ``z``.

    ``L_z`` is spanned by ``phi(z)``; the rank is ``2 dim L - dim(L cap conj L)``,
    and ``L cap conj L`` is nonzero exactly when ``phi`` and ``conj phi`` are
    complex-proportional.
    """
    z = complex(z)
    if np.min(np.abs(z - MS.points)) <= POLE_GUARD:
        raise ValueError("jacobian_rank evaluated on a marked point")
    phi = MS.phi(z)
    scale = float(np.linalg.norm(phi))
    ref = float(np.sum(np.abs(MS.residues) / np.abs(z - MS.points)[None, :]))
    if ref == 0 or scale <= tol * ref:
        return RankReport(0, 0, 0)
    sv = np.linalg.svd(np.column_stack([phi, np.conj(phi)]), compute_uv=False)
    cap = 1 if sv[-1] <= tol * sv[0] else 0
    return RankReport(2 - cap, 1, cap)


# -- fan and nondegeneracy ---------------------------------------------------

@dataclass
class FanReport:
    """Rays ``v_k = -a[:, k]`` per marked point plus ``v_inf`` for the point at infinity."""

    rays: np.ndarray
    labels: List[str]
    zero: np.ndarray

    @property
    def fan(self) -> Fan:
        return Fan([Cone(r[None, :]) for r, z in zip(self.rays, self.zero) if not z])

    def support_sample(self, box, spacing: float = 0.01) -> np.ndarray:
        return self.fan.support_sample(box, spacing)

    def to_json(self) -> dict:
        return {"rays": [{"point": l, "ray": r.tolist(), "zero": bool(z)}
                         for l, r, z in zip(self.labels, self.rays, self.zero)]}


def asymptotic_fan(MS: MarkedSphere) -> FanReport:
    rays = np.vstack([-MS.residues.T, -MS.residue_at_infinity[None, :]])
    labels = [f"p{k + 1}" for k in range(MS.s)] + ["inf"]
    zero = ~np.any(rays != 0, axis=1)
    if zero.any():
        log.info("zero fan rays at %s", [l for l, z in zip(labels, zero) if z])
    return FanReport(rays, labels, zero)


@dataclass
class NondegeneracyReport:
    nondegenerate: bool
    fan_dim: int
    criteria_agree: bool


def nondegeneracy(MS: MarkedSphere) -> NondegeneracyReport:
    """Some differential is nonzero, equivalently the fan has dimension one."""
    nondeg = bool(np.any(MS.residues != 0))
    fan = asymptotic_fan(MS)
    dim = 1 if (~fan.zero).any() else 0
    agree = nondeg == (dim == 1)
    if not agree:
        raise AssertionError("nondegeneracy criteria disagree")
    return NondegeneracyReport(nondeg, dim, agree)


# -- strata ------------------------------------------------------------------

@dataclass
class Stratum:
    """A sampling region: ``pole``/``far`` carry a ``u`` range, ``middle`` a radius."""

    kind: str
    index: int
    u0: float = 0.0
    u1: float = 0.0
    radius: float = 0.0
    exclude: Tuple[Tuple[complex, float], ...] = ()


def _exit_parameter(direction: np.ndarray, const: np.ndarray, box: np.ndarray, outward: bool) -> Optional[float]:
    """Parameter ``u`` at which ``direction * u + const`` has left the box.

    ``outward`` means ``u`` grows (far field), otherwise it decreases (pole).
    """
    lo, hi = box[::2], box[1::2]
    cand = []
    for j, a in enumerate(direction):
        if a == 0:
            continue
        s = a if outward else -a
        # the coordinate moves in the sign of s as the tentacle goes out
        target = hi[j] if s > 0 else lo[j]
        cand.append((target - const[j]) / a)
    if not cand:
        return None
    return max(cand) if outward else min(cand)


def sphere_strata(MS: MarkedSphere, box, delta: float = DELTA_DEFAULT, margin: float = 1.0,
                  u_cap: float = 700.0) -> List[Stratum]:
    """Partition the sphere minus small pole disks into sampling strata.

    Pole disks have radius ``rho_k`` (half the distance to the nearest other
    point).  The excluded radius around ``p_k`` is ``min(delta, r_exit)``
    where ``r_exit`` puts the tentacle ``margin`` beyond the box, so no mass
    inside the box is lost; the far stratum likewise runs until the tentacle
    towards ``v_inf`` has left the box.
    """
    box = np.asarray(check_box(box, MS.m))
    pts = MS.points
    if len(pts) > 1:
        d = np.abs(pts[:, None] - pts[None, :])
        d[np.diag_indices(len(pts))] = np.inf
        rho = 0.5 * d.min(axis=1)
    else:
        rho = np.array([max(1.0, abs(pts[0]))])
    R = max(1.0, 2.0 * (np.max(np.abs(pts)) + rho.max()))
    a = MS.residues
    out = []
    for k in range(MS.s):
        col = a[:, k]
        # near p_k: x = col * u + sum_{l != k} a_l log|p_k - p_l| - offset
        others = np.array([l for l in range(MS.s) if l != k], dtype=int)
        const = (a[:, others] @ np.log(np.abs(pts[k] - pts[others]))) - MS.offset
        u_exit = _exit_parameter(col, const, box, outward=False)
        u0 = np.log(delta)
        if u_exit is not None:
            u0 = min(u0, u_exit - margin / np.max(np.abs(col)))
        out.append(Stratum("pole", k, u0=max(u0, -u_cap), u1=float(np.log(rho[k]))))
    v_inf = a.sum(axis=1)
    u_exit = _exit_parameter(v_inf, -MS.offset, box, outward=True)
    u1 = np.log(R) + 10.0
    if u_exit is not None:
        u1 = max(u1, u_exit + margin / np.max(np.abs(v_inf)))
    out.append(Stratum("far", -1, u0=float(np.log(R)), u1=float(min(u1, u_cap))))
    out.append(Stratum("middle", -1, radius=float(R), exclude=tuple(zip(pts, rho))))
    return out


def _speed_bound(MS: MarkedSphere, st: Stratum) -> float:
    """Bound on ``|dx/du|``, ``|dx/dt|`` (polar) or ``|dx/dz|`` (middle) in a stratum."""
    S = float(np.sum(np.linalg.norm(MS.residues, axis=0)))
    if st.kind == "middle":
        rho_min = min(r for _, r in st.exclude)
        return S / rho_min
    return 2.0 * S


def _lattice(st: Stratum, n_a: int, n_b: int, rng: Optional[np.random.Generator]):
    """Cell-centred (or jittered) lattice in the stratum's coordinates, with weights."""
    ja = (np.arange(n_a)[:, None] + (0.5 if rng is None else rng.random((n_a, n_b)))) / n_a
    jb = (np.arange(n_b)[None, :] + (0.5 if rng is None else rng.random((n_a, n_b)))) / n_b
    ja, jb = np.broadcast_arrays(ja, jb)
    t = 2 * np.pi * jb.ravel()
    if st.kind == "middle":
        r = st.radius * np.sqrt(ja.ravel())
        w = np.full(r.shape, np.pi * st.radius ** 2 / (n_a * n_b))
        return r, t, w
    u = st.u0 + (st.u1 - st.u0) * ja.ravel()
    w = np.full(u.shape, (st.u1 - st.u0) * 2 * np.pi / (n_a * n_b))
    return u, t, w


@dataclass
class StratumSample:
    x: np.ndarray            # log_map images, (n, m)
    psi: np.ndarray          # rescaled dz-coefficients, (n, m) complex
    weight: np.ndarray       # measure weights of the rescaled density
    z_abs: np.ndarray        # |z|, for properness diagnostics
    pole_dist: np.ndarray    # min_k |z - p_k|


def _evaluate_stratum(MS: MarkedSphere, st: Stratum, a, t, w) -> StratumSample:
    """Images and density factors.  For polar strata ``psi = (z - c) phi``, so that
    ``|phi|^2 dA = |psi|^2 du dt`` stays finite at tiny radii."""
    A = MS.residues
    if st.kind == "middle":
        z = a * np.exp(1j * t)
        keep = np.ones(len(z), dtype=bool)
        for p, r in st.exclude:
            keep &= np.abs(z - p) >= r
        z, w = z[keep], w[keep]
        x = log_map(MS, z)
        psi = MS.phi(z)
        dist = np.min(np.abs(z[:, None] - MS.points), axis=1)
        return StratumSample(x, psi, w, np.abs(z), dist)
    L = _log_distances_polar(MS, st.kind, st.index, a, t)
    x = L @ A.T - MS.offset
    e = np.exp(a + 1j * t)
    if st.kind == "pole":
        k = st.index
        z = MS.points[k] + e
        inv = np.zeros((len(z), MS.s), dtype=complex)
        others = [l for l in range(MS.s) if l != k]
        inv[:, others] = e[:, None] / (z[:, None] - MS.points[others])
        inv[:, k] = 1.0
        psi = inv @ A.T.astype(complex)
        z_abs = np.abs(z)
        dist = np.exp(a) if MS.s == 1 else np.minimum(np.exp(a), np.min(np.abs(z[:, None] - MS.points[others]), axis=1))
    else:
        # z phi = sum_l a_l / (1 - p_l / z)
        q = 1.0 / (1.0 - MS.points[None, :] * np.exp(-a - 1j * t)[:, None])
        psi = q @ A.T.astype(complex)
        z_abs = np.exp(a)
        dist = np.exp(a) * np.min(np.abs(1.0 - MS.points[None, :] * np.exp(-a - 1j * t)[:, None]), axis=1)
    return StratumSample(x, psi, w, z_abs, dist)


def _polar_lattice_sizes(MS: MarkedSphere, st: Stratum, resolution: float) -> Tuple[int, int]:
    v = _speed_bound(MS, st)
    return max(4, int(np.ceil((st.u1 - st.u0) * v / resolution))), max(8, int(np.ceil(2 * np.pi * v / resolution)))


def _middle_lattice(MS: MarkedSphere, st: Stratum, resolution: float, max_points: int) -> np.ndarray:
    """Cartesian lattice over the middle disk, minus the pole disks."""
    h = resolution / _speed_bound(MS, st)
    n = int(np.ceil(2 * st.radius / h))
    if n * n > max_points:
        log.warning("middle lattice capped at %d points", max_points)
        n = int(np.sqrt(max_points))
    ax = -st.radius + (np.arange(n) + 0.5) * (2 * st.radius / n)
    z = (ax[:, None] + 1j * ax[None, :]).ravel()
    keep = np.abs(z) < st.radius
    for p, r in st.exclude:
        keep &= np.abs(z - p) >= r
    return z[keep]


def amoeba_sample(MS: MarkedSphere, box, resolution: float, delta: float = DELTA_DEFAULT,
                  max_points: int = 4_000_000) -> Dict[str, np.ndarray]:
    """Deterministic lattice images of every stratum, spaced at most ``resolution`` apart."""
    xs, zabs, dist = [], [], []
    for st in sphere_strata(MS, box, delta):
        if st.kind == "middle":
            z = _middle_lattice(MS, st, resolution, max_points)
            xs.append(log_map(MS, z)), zabs.append(np.abs(z))
            dist.append(np.min(np.abs(z[:, None] - MS.points), axis=1))
            continue
        n_a, n_b = _polar_lattice_sizes(MS, st, resolution)
        if n_a * n_b > max_points:
            f = np.sqrt(max_points / (n_a * n_b))
            log.warning("%s stratum lattice capped at %d points", st.kind, max_points)
            n_a, n_b = max(4, int(n_a * f)), max(8, int(n_b * f))
        a, t, w = _lattice(st, n_a, n_b, None)
        smp = _evaluate_stratum(MS, st, a, t, w)
        xs.append(smp.x), zabs.append(smp.z_abs), dist.append(smp.pole_dist)
    return {"x": np.concatenate(xs), "z_abs": np.concatenate(zabs), "pole_dist": np.concatenate(dist)}


@dataclass
class GeneralizedRaster:
    grid: Grid
    mask: np.ndarray
    meta: Dict = field(default_factory=dict)


def rasterize_generalized(MS: MarkedSphere, box, shape, delta: float = DELTA_DEFAULT, dilation: int = 1,
                          refine: float = 0.5) -> GeneralizedRaster:
    """Occupied cells of the generalized amoeba: lattice images spaced at most
    ``refine`` cells apart, then dilated by ``dilation`` cells."""
    grid = Grid(check_box(box, MS.m), check_grid_shape(shape, MS.m))
    mask = np.zeros(grid.shape, dtype=bool)
    meta = {"dilation": int(dilation), "refine_cells": refine, "delta": delta, "points": 0}
    if MS.is_degenerate:
        # the amoeba is the single point -offset = 0
        idx, inside = grid.index_of(np.zeros((1, MS.m)))
        if inside.any():
            mask[tuple(idx[0])] = True
        meta["mode"] = "degenerate"
        return GeneralizedRaster(grid, dilate(mask, dilation), meta)
    smp = amoeba_sample(MS, box, refine * float(np.min(grid.spacing)), delta)
    idx, inside = grid.index_of(smp["x"])
    mask[idx[inside, 0], idx[inside, 1]] = True
    meta.update(mode="lattice", points=int(len(smp["x"])), points_in_box=int(inside.sum()))
    return GeneralizedRaster(grid, dilate(mask, dilation), meta)


def properness_bounds(MS: MarkedSphere, box, resolution: float, delta: float = DELTA_DEFAULT) -> dict:
    """Empirical ``min |z - p_k|`` and ``max |z|`` over samples whose image lies in ``box``."""
    smp = amoeba_sample(MS, box, resolution, delta)
    b = np.asarray(check_box(box, MS.m))
    inside = np.all((smp["x"] >= b[::2]) & (smp["x"] <= b[1::2]), axis=1)
    if not inside.any():
        return {"samples_in_box": 0, "min_pole_distance": None, "max_abs_z": None}
    return {"samples_in_box": int(inside.sum()),
            "min_pole_distance": float(smp["pole_dist"][inside].min()),
            "max_abs_z": float(smp["z_abs"][inside].max())}


# -- fan limit ---------------------------------------------------------------

@dataclass
class FanLimitReport:
    t: List[float]
    distances: List[float]
    c_fit: float
    max_ratio: float
    nonincreasing: bool
    slack: float
    resolution: float = 0.0
    decay: bool = True

    @property
    def passed(self) -> bool:
        return bool(self.nonincreasing and self.decay)

    def to_json(self) -> dict:
        return {"t": self.t, "hausdorff": self.distances, "c_fit": self.c_fit,
                "max_ratio_to_c_over_t": self.max_ratio, "nonincreasing": self.nonincreasing,
                "monotone_slack": self.slack, "resolution": self.resolution, "decay": self.decay,
                "pass": self.passed}


def verify_fan_limit(MS: MarkedSphere, t_list: Sequence[float], box, resolution: float = 0.02,
                     slack: float = 0.10) -> FanLimitReport:
    """Hausdorff distance between the amoeba of ``omega / t`` and the fan, both cut to ``box``.

    The amoeba of ``omega / t`` is the image of ``log_map / t``; it is sampled
    on the lattice for the box scaled by ``t`` at resolution ``t * resolution``.
    The report passes when the distances are nonincreasing within ``slack``
    and follow ``c_fit / t`` within ``slack`` (least-squares ``c_fit``);
    distances at or below ``resolution`` count as converged.
    """
    t_arr = np.asarray(t_list, dtype=float)
    if np.any(t_arr <= 0) or np.any(np.diff(t_arr) <= 0):
        raise ValueError("t values must be positive and increasing")
    b = np.asarray(check_box(box, MS.m))
    fan_pts = asymptotic_fan(MS).support_sample(b, spacing=resolution / 2)
    dists = []
    for t in t_arr:
        smp = amoeba_sample(MS, b * t, resolution * t)
        x = smp["x"] / t
        inside = np.all((x >= b[::2]) & (x <= b[1::2]), axis=1)
        if not inside.any():
            raise ValueError(f"no amoeba sample inside the box at t={t}")
        dists.append(hausdorff_distance(x[inside], fan_pts))
    d = np.asarray(dists)
    inv = 1.0 / t_arr
    c = float(np.dot(d, inv) / np.dot(inv, inv))
    ratio = float(np.max(d * t_arr) / c) if c > 0 else 0.0
    mono = bool(np.all(d[1:] <= (1 + slack) * d[:-1]))
    # c / t decay within the slack, unless every distance already sits at the sampling floor
    decay = bool(ratio <= 1 + slack or np.all(d <= resolution))
    return FanLimitReport(t_arr.tolist(), d.tolist(), c, ratio, mono, slack, resolution, decay)


# -- Hessian pushforward -----------------------------------------------------

@dataclass
class HessianMeasure:
    """Grid masses of the Hessian current plus sampling diagnostics."""

    current: SuperCurrent11
    meta: Dict = field(default_factory=dict)
    padded: Optional[SuperCurrent11] = None
    halo: int = 0

    def to_json(self) -> dict:
        return {**self.current.to_json(), "meta": self.meta}


def _deposit(grid: Grid, x, vec, w) -> Tuple[np.ndarray, float]:
    """Bin ``Re(vec_j conj vec_k) w / (2 pi)`` into cells; return masses and the trace tail."""
    m = grid.ndim
    idx, inside = grid.index_of(x)
    flat = np.ravel_multi_index(idx[inside].T, grid.shape)
    size = int(np.prod(grid.shape))
    out = np.zeros((m, m) + grid.shape)
    vi, wi = vec[inside], w[inside] / (2 * np.pi)
    for j in range(m):
        for k in range(j, m):
            dens = np.real(vi[:, j] * np.conj(vi[:, k])) * wi
            out[j, k] = np.bincount(flat, weights=dens, minlength=size).reshape(grid.shape)
            out[k, j] = out[j, k]
    tail = float(np.sum(np.sum(np.abs(vec[~inside]) ** 2, axis=1) * w[~inside]) / (2 * np.pi))
    return out, tail


def hessian_pushforward(MS: MarkedSphere, box, shape, samples: int = 2_000_000,
                        delta: float = DELTA_DEFAULT, seed: int = 0, halo: int = 0) -> HessianMeasure:
    """Pushforward of the curve's Hessian density to the grid (m = 2).

    With ``Omega_1 = omega_2``, ``Omega_2 = omega_1`` and ``G_j`` their
    ``dz``-coefficients, a sample of area weight ``w`` contributes

        mu_jk = (-1)^(j+k) Re(G_j conj G_k) w / (2 pi),

    a rank-one positive semidefinite matrix, so the current is symmetric and
    positive sample by sample.  Sampling is a jittered lattice in each
    stratum; mass that lands outside the box is returned as tail.

    With ``halo > 0`` the masses are also kept on the grid extended by
    ``halo`` cells per side (``padded``), so that a mollifier of radius up to
    ``halo`` cells sees the tentacles continue past the box edge.
    """
    if MS.m != 2:
        raise ValueError("the Hessian pushforward is implemented for m = 2")
    inner = Grid(check_box(box, 2), check_grid_shape(shape, 2))
    halo = int(halo)
    lo, hi = inner.lo - halo * inner.spacing, inner.hi + halo * inner.spacing
    grid = Grid((lo[0], hi[0], lo[1], hi[1]), tuple(n + 2 * halo for n in inner.shape))
    strata_box = (lo[0], hi[0], lo[1], hi[1])
    masses = np.zeros((2, 2) + grid.shape)
    halves = [np.zeros_like(masses), np.zeros_like(masses)]
    strata = sphere_strata(MS, strata_box, delta)
    seqs = np.random.SeedSequence(seed).spawn(len(strata))
    poles = [st for st in strata if st.kind == "pole"]
    span = sum(st.u1 - st.u0 for st in poles)
    tail, used = 0.0, 0
    for st, ss in zip(strata, seqs):
        if st.kind == "pole":
            n = SHARE_POLES * samples * (st.u1 - st.u0) / span
            aspect = 2 * np.pi / (st.u1 - st.u0)
        elif st.kind == "middle":
            n, aspect = SHARE_MIDDLE * samples, 2 * np.pi
        else:
            n = SHARE_FAR * samples
            aspect = 2 * np.pi / (st.u1 - st.u0)
        n_a = max(2, int(round(np.sqrt(n / aspect))))
        n_b = max(2, int(n // n_a))
        a, t, w = _lattice(st, n_a, n_b, np.random.default_rng(ss))
        smp = _evaluate_stratum(MS, st, a, t, w)
        # Omega_1 = omega_2, Omega_2 = omega_1, with the (-1)^(j+k) sign folded in
        vec = np.column_stack([smp.psi[:, 1], -smp.psi[:, 0]])
        dm, dt = _deposit(grid, smp.x, vec, smp.weight)
        masses += dm
        tail += dt
        used += n_a * n_b
        # interleaved halves along the first lattice axis estimate the sampling error
        par = np.repeat(np.arange(n_a) % 2, n_b)
        if st.kind == "middle":
            par = par[_middle_keep(MS, st, a, t)]
        for h in (0, 1):
            sel = par == h
            halves[h] += _deposit(grid, smp.x[sel], vec[sel], 2 * smp.weight[sel])[0]
    crop = (slice(None), slice(None)) + tuple(slice(halo, halo + n) for n in inner.shape)
    box_masses = masses[crop]
    total = float(np.trace(box_masses).sum())
    tail += float(np.trace(masses).sum()) - total
    diff = (halves[0] - halves[1])[crop]
    err = float(np.abs(diff).sum() / (2 * max(np.abs(box_masses).sum(), 1e-300)))
    meta = {"samples": int(used), "seed": int(seed), "delta": delta, "tail_mass": tail,
            "mass_in_box": total, "mc_rel_error": err, "halo_cells": halo,
            "strata": [{"kind": st.kind, "index": st.index, "u0": st.u0, "u1": st.u1, "radius": st.radius}
                       for st in strata]}
    padded = SuperCurrent11(grid, masses) if halo else None
    return HessianMeasure(SuperCurrent11(inner, box_masses), meta, padded, halo)


def _middle_keep(MS, st, r, t):
    z = r * np.exp(1j * t)
    keep = np.ones(len(z), dtype=bool)
    for p, rad in st.exclude:
        keep &= np.abs(z - p) >= rad
    return keep


# -- Ronkin function, orders, polytope -----------------------------------------

def ronkin_generalized(MS: MarkedSphere, box, shape, samples: int = 2_000_000, eps: float = EPS_DEFAULT,
                       delta: float = DELTA_DEFAULT, seed: int = 0, closed_tol: float = 0.05,
                       hessian: Optional[HessianMeasure] = None) -> GridField:
    """Convex potential of the pushforward current.

    ``closed_tol`` bounds the relative discrete curl of the binned Monte-Carlo
    current; binning alone leaves a curl of a few 1e-3 so the exact-data
    default of 1e-6 would reject every sampled current.  The row one-forms and
    the gradient are integrated in the least-squares sense (path integration
    lets sampling noise accumulate along the paths) and the result is
    projected onto its convex envelope; the pre-projection diagnostics stay in
    ``meta`` under ``*_raw``.
    """
    if hessian is None:
        hessian = hessian_pushforward(MS, box, shape, samples, delta, seed, halo=int(np.ceil(eps)) + 1)
    if MS.is_degenerate:
        g = hessian.current.grid
        return GridField(g, np.zeros(g.shape), {"degenerate": True, "total_mass": 0.0})
    if hessian.padded is not None and hessian.halo >= eps:
        R = potential_from_current(hessian.padded, eps, sym_tol=1e-6, closed_tol=closed_tol,
                                   psd_tol=1e-9, convex_tol=1e-9, crop=hessian.halo,
                                   integration="least_squares", envelope=True)
    else:
        R = potential_from_current(hessian.current, eps, sym_tol=1e-6, closed_tol=closed_tol,
                                   psd_tol=1e-9, convex_tol=1e-9,
                                   integration="least_squares", envelope=True)
    R.meta["degenerate"] = False
    return R


def affine_fit(points: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Least-squares ``v . x + c``; returns slope, intercept and max residual."""
    A = np.column_stack([points, np.ones(len(points))])
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    res = values - A @ coef
    return coef[:-1], float(coef[-1]), float(np.max(np.abs(res))) if len(res) else 0.0


def deep_cells(C: ComponentMap, cid: int, depth_cells: float) -> np.ndarray:
    """Cells of ``cid`` at least ``depth_cells`` cells from any other label (the grid edge does not count)."""
    other = C.labels != cid
    m = ~other
    if not other.any():
        return np.argwhere(m)
    dist = ndimage.distance_transform_edt(~other)
    return np.argwhere(m & (dist >= depth_cells))


@dataclass
class GeneralizedOrders:
    component_ids: List[int]
    orders: np.ndarray
    fit_residual: np.ndarray
    cells_used: np.ndarray
    probes: np.ndarray
    injective: bool

    def to_json(self) -> dict:
        return {"components": [
            {"id": cid, "order": self.orders[i].tolist(), "fit_residual": float(self.fit_residual[i]),
             "cells": int(self.cells_used[i]), "probe": self.probes[i].tolist()}
            for i, cid in enumerate(self.component_ids)], "injective": self.injective}


def order_map_generalized(R: GridField, components: ComponentMap, depth_cells: float = 5.0,
                          min_cells: int = 6, distinct_tol: float = 0.05) -> GeneralizedOrders:
    """Slopes of least-squares affine fits of ``R`` over each component's deep cells."""
    ids = components.ids()
    g = components.grid
    orders, res, used, probes = [], [], [], []
    for cid in ids:
        cells = deep_cells(components, cid, depth_cells)
        if len(cells) < min_cells:
            cells = deep_cells(components, cid, 1.0)
        if len(cells) < min_cells:
            raise ValueError(f"component {cid} has fewer than {min_cells} cells to fit")
        x = g.center_of(cells)
        v, _, r = affine_fit(x, R.values[cells[:, 0], cells[:, 1]])
        orders.append(v), res.append(r), used.append(len(cells))
        probes.append(g.center_of(components.deepest_cell(cid)[0]))
    O = np.array(orders).reshape(-1, g.ndim)
    inj = True
    for i in range(len(O)):
        for j in range(i + 1, len(O)):
            if np.linalg.norm(O[i] - O[j]) <= distinct_tol:
                inj = False
    return GeneralizedOrders(ids, O, np.array(res), np.array(used), np.array(probes).reshape(-1, g.ndim), inj)


def newton_polytope_generalized(orders) -> Polytope:
    orders = np.atleast_2d(np.asarray(orders, dtype=float))
    if len(orders) == 0:
        raise ValueError("need at least one order")
    return convex_hull(orders)


def _reference_cone(N: Polytope, nu, tol: float) -> Tuple[Optional[Cone], str]:
    k, dv = N.nearest_vertex(nu)
    if dv <= tol:
        return normal_cone(N, N.vertices[k]), "vertex"
    d = float(distance_to_polytope(N, nu[None, :])[0])
    if d > tol:
        return None, "outside"
    if not N.degenerate:
        slack = N.offsets - N.normals @ nu
        e = int(np.argmin(np.abs(slack)))
        if abs(slack[e]) <= tol:
            return Cone(N.normals[e][None, :]), "edge"
    return Cone.zero(), "interior"


def verify_recession_theorem(components: ComponentMap, N: Polytope, orders: np.ndarray,
                             tol_deg: float = 3.0, snap: float = 0.1) -> dict:
    """Recession cone of each component against the normal cone of ``N`` at its order."""
    per = []
    for i, cid in enumerate(components.ids()):
        rec = recession_cone_estimate(components, cid)
        ref, where = _reference_cone(N, np.asarray(orders[i], float), snap)
        if ref is None:
            per.append({"id": cid, "recession": rec.to_json(), "normal": None, "located": where,
                        "mismatch_deg": None, "pass": False, "inconclusive": True})
            continue
        mis = cone_mismatch_deg(rec, ref)
        per.append({"id": cid, "recession": rec.to_json(), "normal": ref.to_json(), "located": where,
                    "mismatch_deg": mis, "pass": bool(mis <= tol_deg), "inconclusive": False})
    return {"per_component": per, "tol_deg": tol_deg, "bounded_box_caveat":
            "cones are probed inside the grid only", "pass": all(p["pass"] for p in per)}


def ma_total_mass_generalized(R: GridField, orders: np.ndarray, margin_cells: int = 4,
                              slack: float = 0.05) -> dict:
    """Area of the hull of finite-difference gradients of ``R`` away from the grid edge."""
    g = R.grid
    grads = np.stack(np.gradient(R.values, *g.spacing), axis=-1)
    sl = tuple(slice(margin_cells, n - margin_cells) for n in g.shape)
    G = grads[sl].reshape(-1, g.ndim)
    if len(orders) == 0 or not np.any(R.values):
        return {"mass": 0.0, "outside_fraction": 0.0, "max_escape": 0.0, "slack": slack, "pass": True}
    N = convex_hull(orders)
    esc = distance_to_polytope(N, G)
    mass = convex_hull(G).area if len(G) > 2 else 0.0
    return {"mass": float(mass), "max_escape": float(esc.max()),
            "outside_fraction": float(np.mean(esc > slack)), "slack": slack,
            "pass": bool(esc.max() <= slack)}


# -- estimator ---------------------------------------------------------------

class GeneralizedAmoeba(BaseEstimator):
    """Generalized amoeba of a marked sphere (``m = 2``).

    ``fit`` takes a :class:`MarkedSphere` (or ``(points, residues)``) and
    computes the raster, complement components, Hessian current, Ronkin
    potential, order map and Newton polytope.  ``predict`` labels points by
    complement component (0 on the amoeba, -1 off the grid).

    Parameters
    ----------
    box : tuple of 4 floats
    grid : int
        Cells per axis.
    samples : int
        Pushforward samples.
    delta : float
        Upper bound for the excluded disk radius around marked points.
    eps : float
        Mollifier radius in cells.
    closed_tol : float
        Relative discrete-curl tolerance for the sampled current.
    seed : int
    """

    def __init__(self, box=(-6.0, 6.0, -6.0, 6.0), grid: int = 200, samples: int = 2_000_000,
                 delta: float = DELTA_DEFAULT, eps: float = EPS_DEFAULT, closed_tol: float = 0.05, seed: int = 0):
        self.box = box
        self.grid = grid
        self.samples = samples
        self.delta = delta
        self.eps = eps
        self.closed_tol = closed_tol
        self.seed = seed

    def fit(self, X: Union[MarkedSphere, Tuple], y=None):
        MS = X if isinstance(X, MarkedSphere) else build_marked_sphere(*X)
        if MS.m != 2:
            raise ValueError("GeneralizedAmoeba needs two differentials")
        self.sphere_ = MS
        self.fan_ = asymptotic_fan(MS)
        self.nondegeneracy_ = nondegeneracy(MS)
        self.raster_ = rasterize_generalized(MS, self.box, (self.grid, self.grid), self.delta)
        self.components_ = flood_components(self.raster_.mask, self.raster_.grid)
        self.hessian_ = hessian_pushforward(MS, self.box, (self.grid, self.grid), int(self.samples),
                                            self.delta, self.seed, halo=int(np.ceil(self.eps)) + 1)
        self.potential_ = ronkin_generalized(MS, self.box, (self.grid, self.grid), eps=self.eps,
                                             closed_tol=self.closed_tol, hessian=self.hessian_)
        if MS.is_degenerate:
            self.orders_ = GeneralizedOrders([1], np.zeros((1, 2)), np.zeros(1), np.array([self.grid ** 2]),
                                             np.zeros((1, 2)), True)
        else:
            self.orders_ = order_map_generalized(self.potential_, self.components_,
                                                 depth_cells=self.eps + 2)
        self.newton_polytope_ = newton_polytope_generalized(self.orders_.orders)
        self.ma_ = ma_total_mass_generalized(self.potential_, self.orders_.orders,
                                             margin_cells=int(np.ceil(self.eps)) + 1)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "components_")
        idx, inside = self.components_.grid.index_of(X)
        lab = self.components_.labels[idx[:, 0], idx[:, 1]]
        return np.where(inside, lab, -1)

    def ronkin(self, X) -> np.ndarray:
        check_is_fitted(self, "potential_")
        return self.potential_(np.atleast_2d(np.asarray(X, dtype=float)))

    def check_invariants(self, positivity_trials: int = 64, convex_trials: int = 200,
                         tol_deg: float = 3.0, sym_tol: float = 1e-2) -> Dict[str, dict]:
        check_is_fitted(self, "orders_")
        S = self.hessian_.current
        meta = self.potential_.meta
        checks: Dict[str, dict] = {}
        checks["nondegeneracy"] = {"nondegenerate": self.nondegeneracy_.nondegenerate,
                                   "fan_dim": self.nondegeneracy_.fan_dim,
                                   "pass": self.nondegeneracy_.criteria_agree}
        checks["hessian_symmetric"] = {"tol": sym_tol, "pass": is_symmetric(S, sym_tol)}
        checks["hessian_positive"] = {"trials": positivity_trials, "tol": 1e-9,
                                      "min_pairing": min_positivity_pairing(S, positivity_trials, self.seed),
                                      "pass": is_positive(S, positivity_trials, 1e-9, self.seed)}
        checks["hessian_closed"] = {"curl_residual": meta.get("curl_residual", 0.0), "tol": self.closed_tol,
                                    "pass": bool(meta.get("curl_residual", 0.0) <= self.closed_tol)}
        checks["ronkin_convex"] = {"violation": meta.get("convexity_violation", 0.0), "tol": 1e-9,
                                   "pass": bool(meta.get("convexity_violation", 0.0) <= 1e-9)}
        checks["order_injective"] = {"pass": bool(self.orders_.injective)}
        conv = {cid: is_convex_region(self.components_, cid, convex_trials, seed=self.seed)
                for cid in self.components_.ids()}
        checks["components_convex"] = {"per_component": conv, "pass": all(conv.values())}
        checks["recession_equals_normal_cone"] = verify_recession_theorem(
            self.components_, self.newton_polytope_, self.orders_.orders, tol_deg)
        ma = dict(self.ma_)
        ma["polytope_area"] = self.newton_polytope_.area
        ma["tol_rel"] = 0.05
        area = self.newton_polytope_.area
        ma["pass"] = bool(ma["pass"] and abs(ma["mass"] - area) <= 0.05 * max(area, 1e-12)) \
            if area > 0 else bool(ma["mass"] <= 1e-9)
        checks["ma_mass"] = ma
        return checks


# -- cross-pipeline comparison ---------------------------------------------

def _even_rows(a: np.ndarray, n: int) -> np.ndarray:
    if len(a) <= n:
        return a
    return a[np.linspace(0, len(a) - 1, n).round().astype(int)]


def compare_with_classical(G: GeneralizedAmoeba, F, shift=None, probe_box=(-3.0, 3.0, -3.0, 3.0),
                           n_probe: int = 5, classical: Optional[ClassicalAmoeba] = None,
                           mask_tol_cells: float = 2.0, ronkin_tol: float = 5e-2,
                           order_tol: float = 0.05, ma_tol: float = 0.05,
                           gauge_cells: int = 64) -> dict:
    """Check a fitted generalized amoeba against the classical pipeline of ``F``.

    The two pipelines must describe the same curve up to a translation
    ``x_gen = x_cls + shift``.  With the identity residue matrix on two points
    the generalized map is the classical ``Log`` of ``(z - p_1, z - p_2)``
    minus the base-point offset, so ``shift`` defaults to ``-MS.offset``.

    Parameters
    ----------
    G : GeneralizedAmoeba
        Fitted estimator.
    F : LaurentPolynomial or str
        Classical polynomial vanishing on the same curve.
    shift : array-like of 2 floats, optional
        Translation from classical to generalized coordinates.
    probe_box : tuple of 4 floats
        Box of the ``n_probe x n_probe`` probe lattice (generalized coordinates).
    classical : ClassicalAmoeba, optional
        Pre-fitted classical estimator on ``G.box - shift`` with ``G.grid`` cells.
    mask_tol_cells, ronkin_tol, order_tol, ma_tol : float
        Tolerances of the four agreement checks.
    gauge_cells : int
        Cells of the reference component used for the affine gauge fit.

    Returns
    -------
    dict
        One entry per check (``mask``, ``ronkin``, ``orders``, ``ma_mass``),
        each with its tolerance and ``pass``, plus the overall ``pass``.
    """
    check_is_fitted(G, "orders_")
    if isinstance(F, str):
        F = parse_laurent(F, 2)
    MS = G.sphere_
    b = -np.asarray(MS.offset, dtype=float) if shift is None else np.asarray(shift, dtype=float)
    lo1, hi1, lo2, hi2 = check_box(G.box, 2)
    cbox = (lo1 - b[0], hi1 - b[0], lo2 - b[1], hi2 - b[1])
    if classical is None:
        classical = ClassicalAmoeba(box=cbox, grid=G.grid, seed=G.seed).fit(F)
    out: Dict[str, object] = {"shift": b.tolist(), "classical_box": list(cbox)}

    # amoeba masks, compared on the common cell lattice
    gm, cm = G.raster_.mask, classical.raster_.mask
    if gm.shape == cm.shape and gm.any() and cm.any():
        dh = hausdorff_distance(np.argwhere(gm), np.argwhere(cm))
    else:
        dh = float("inf") if gm.any() != cm.any() or gm.shape != cm.shape else 0.0
    out["mask"] = {"hausdorff_cells": dh, "tol_cells": mask_tol_cells, "pass": bool(dh <= mask_tol_cells)}

    # Ronkin fields up to an affine function
    a1, b1, a2, b2 = probe_box
    P = np.array([(u, v) for u in np.linspace(a1, b1, n_probe) for v in np.linspace(a2, b2, n_probe)])
    rg = G.ronkin(P)
    rc = np.array([ronkin_value(F, p - b) for p in P])
    slope, _, dev = affine_fit(P, rg - rc)
    out["ronkin"] = {"probes": int(len(P)), "probe_box": list(probe_box), "affine_slope": slope.tolist(),
                     "max_deviation": dev, "tol": ronkin_tol, "pass": bool(dev <= ronkin_tol)}

    # affine gauge from the largest component, then orders component by component
    C = G.components_
    sizes = {cid: int(np.sum(C.labels == cid)) for cid in C.ids()}
    ref = max(sizes, key=lambda k: (sizes[k], -k)) if sizes else None
    per, ok = [], ref is not None
    if ref is not None:
        cells = _even_rows(deep_cells(C, ref, G.eps + 2), gauge_cells)
        x = C.grid.center_of(cells)
        diff = G.potential_.values[cells[:, 0], cells[:, 1]] - np.array([ronkin_value(F, p - b) for p in x])
        gauge, _, gauge_res = affine_fit(x, diff)
        co = classical.orders_
        for i, cid in enumerate(G.orders_.component_ids):
            calibrated = G.orders_.orders[i] - gauge
            lab = int(classical.predict((G.orders_.probes[i] - b)[None])[0])
            if lab in co.component_ids:
                target = co.raw[co.component_ids.index(lab)]
                err = float(np.max(np.abs(calibrated - target)))
                good = err <= order_tol
                per.append({"id": cid, "calibrated": calibrated.tolist(), "classical": target.tolist(),
                            "error": err, "pass": bool(good)})
            else:
                good = False
                per.append({"id": cid, "calibrated": calibrated.tolist(), "classical": None,
                            "error": None, "pass": False})
            ok = ok and good
        ok = ok and len(G.orders_.component_ids) == len(co.component_ids)
        out["orders"] = {"reference_component": ref, "gauge_slope": gauge.tolist(),
                         "gauge_fit_residual": gauge_res, "per_component": per,
                         "classical_components": len(co.component_ids), "tol": order_tol, "pass": bool(ok)}
    else:
        out["orders"] = {"reference_component": None, "per_component": [], "tol": order_tol, "pass": False}

    mg, mc = float(G.ma_["mass"]), float(classical.ma_mass_)
    out["ma_mass"] = {"generalized": mg, "classical": mc, "difference": abs(mg - mc), "tol": ma_tol,
                      "pass": bool(abs(mg - mc) <= ma_tol)}
    out["pass"] = bool(all(out[k]["pass"] for k in ("mask", "ronkin", "orders", "ma_mass")))
    return out
