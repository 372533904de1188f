"""Convex potentials of closed symmetric positive (1,1)-supercurrents.

Given grid masses ``mu_jk`` the recovery mollifies each component with a
compactly supported radial bump, integrates the rows ``sum_k h_jk dx_k`` to
gradient components ``g_j`` along axis-ordered paths from the grid corner,
and integrates ``sum_j g_j dx_j`` the same way.  The affine ambiguity is
fixed by ``R(center) = 0`` and ``grad R(center) = 0``.
"""
from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import cumulative_trapezoid
from scipy.fft import dctn, idctn
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import ConvexHull, QhullError
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geometry import Grid
from .superforms import GridField, SuperCurrent11, is_symmetric


class CurrentError(ValueError):
    """Input current is not closed, symmetric, or positive within tolerance."""


def mollifier(eps: float, ndim: int) -> np.ndarray:
    """Radial ``exp(-1/(1-r^2))`` kernel of radius ``eps`` cells, unit mass."""
    if eps < 1:
        raise ValueError("mollifier radius must be at least one cell")
    half = int(np.ceil(eps))
    ax = np.arange(-half, half + 1) / eps
    r2 = sum(np.meshgrid(*([ax ** 2] * ndim), indexing="ij"))
    k = np.zeros_like(r2)
    inside = r2 < 1
    k[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return k / k.sum()


def mollify(S: SuperCurrent11, eps: float) -> np.ndarray:
    """Mollified densities ``h_jk`` (mass per unit volume) on the grid."""
    kern = mollifier(eps, S.m)
    out = np.empty_like(S.masses)
    for j, k in itertools.product(range(S.m), repeat=2):
        # mirror across the box edge so lines crossing it keep their weight
        out[j, k] = ndimage.convolve(S.masses[j, k], kern, mode="reflect")
    return out / S.grid.cell_area


def _path_integral(fields: Sequence[np.ndarray], spacing, order) -> np.ndarray:
    """Primitive of the 1-form ``sum_k fields[k] dx_k`` along axis-ordered paths.

    ``order`` lists the axes in the order the path travels them; the path
    starts at cell ``(0, ..., 0)``.
    """
    ndim = len(fields)
    out = np.zeros(fields[0].shape)
    done = []
    for ax in order:
        # segment along ``ax``, with the axes still to travel pinned at index 0
        idx = tuple(slice(None) if (a == ax or a in done) else slice(0, 1) for a in range(ndim))
        seg = cumulative_trapezoid(fields[ax][idx], dx=spacing[ax], axis=ax, initial=0)
        out = out + seg  # broadcasts along the axes not yet travelled
        done.append(ax)
    return out


def _ls_integral(fields: Sequence[np.ndarray], spacing) -> np.ndarray:
    """Least-squares primitive of ``sum_k fields[k] dx_k`` (zero mean).

    Minimizes the squared mismatch of forward differences against the field
    averaged onto cell faces; the Neumann normal equations are diagonal in
    the type-II cosine basis.  For a closed field this agrees with the path
    primitive; for a noisy one it does not accumulate the noise along paths.
    """
    shape = fields[0].shape
    ndim = len(shape)
    rhs = np.zeros(shape)
    eig = np.zeros(shape)
    for ax in range(ndim):
        f = np.moveaxis(fields[ax], ax, 0)
        face = 0.5 * (f[1:] + f[:-1]) / spacing[ax]
        d = np.zeros_like(f)
        d[:-1] += face
        d[1:] -= face
        rhs += np.moveaxis(d, 0, ax)
        n = shape[ax]
        lam = (2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)) / spacing[ax] ** 2
        eig = eig + lam.reshape([-1 if a == ax else 1 for a in range(ndim)])
    # normal equations D^T D R = D^T w for the forward difference D; rhs holds -D^T w
    coef = dctn(-rhs, type=2, norm="ortho")
    eig.flat[0] = np.inf
    return idctn(coef / eig, type=2, norm="ortho")


def convex_envelope(R: np.ndarray) -> np.ndarray:
    """Lower convex envelope of grid values ``R`` (greatest convex minorant).

    The lower facets of the hull of ``(index, R)`` are supporting planes, so
    the envelope at a node is the largest plane value among the facets whose
    bounding box holds it.  Works in index coordinates; the envelope does not
    depend on the (uniform) spacing.
    """
    R = np.asarray(R, dtype=float)
    idx = np.indices(R.shape).reshape(R.ndim, -1).T.astype(float)
    pts = np.column_stack([idx, R.ravel()])
    try:
        hull = ConvexHull(pts)
    except QhullError:
        # the graph lies in a hyperplane: R is affine and already convex
        return R.copy()
    eq = hull.equations
    lower = eq[:, -2] < -1e-12
    simp, eq = hull.simplices[lower], eq[lower]
    corners = idx[simp]
    lo = np.floor(corners.min(axis=1) + 1e-9).astype(int)
    hi = np.ceil(corners.max(axis=1) - 1e-9).astype(int)
    out = np.full(R.shape, -np.inf)
    for f in range(len(simp)):
        box = tuple(slice(l, h + 1) for l, h in zip(lo[f], hi[f]))
        grid = np.mgrid[box]
        normal, off = eq[f, :-2], eq[f, -1]
        z = -(np.tensordot(normal, grid, axes=1) + off) / eq[f, -2]
        np.maximum(out[box], z, out=out[box])
    # nodes whose facets Qhull merged away as coplanar keep their own value
    return np.minimum(np.where(np.isfinite(out), out, R), R)


def curl_residual(h: np.ndarray, spacing) -> float:
    """Relative L1 size of the discrete curl of the row one-forms ``sum_k h_jk dx_k``."""
    m = h.shape[0]
    num, den = 0.0, float(np.abs(h).sum())
    if den == 0:
        return 0.0
    for j in range(m):
        for a, b in itertools.combinations(range(m), 2):
            c = np.gradient(h[j, b], spacing[a], axis=a) - np.gradient(h[j, a], spacing[b], axis=b)
            num += float(np.abs(c).sum()) * float(np.min(spacing))
    return num / den


def second_differences(R: np.ndarray, spacing) -> np.ndarray:
    """Centred second-difference Hessian on interior cells, shape ``(m, m, *interior)``."""
    m = R.ndim
    inner = tuple(slice(1, -1) for _ in range(m))
    H = np.zeros((m, m) + tuple(s - 2 for s in R.shape))

    def shift(a, d):
        sl = [slice(1, -1)] * m
        for ax, step in zip(a, d):
            sl[ax] = slice(1 + step, R.shape[ax] - 1 + step)
        return R[tuple(sl)]

    for j in range(m):
        H[j, j] = (shift([j], [1]) - 2 * R[inner] + shift([j], [-1])) / spacing[j] ** 2
        for k in range(j + 1, m):
            v = (shift([j, k], [1, 1]) - shift([j, k], [1, -1]) - shift([j, k], [-1, 1])
                 + shift([j, k], [-1, -1])) / (4 * spacing[j] * spacing[k])
            H[j, k] = H[k, j] = v
    return H


def midpoint_convexity_violation(R: np.ndarray) -> float:
    """Largest ``R(mid) - (R(a)+R(b))/2`` over grid neighbours along axes and diagonals."""
    worst = -np.inf
    m = R.ndim
    dirs = [d for d in itertools.product((-1, 0, 1), repeat=m) if any(d) and d > tuple([0] * m)]
    for d in dirs:
        sl_mid, sl_a, sl_b = [], [], []
        for step, n in zip(d, R.shape):
            if step == 0:
                sl_mid.append(slice(None)), sl_a.append(slice(None)), sl_b.append(slice(None))
            else:
                sl_mid.append(slice(1, n - 1))
                sl_a.append(slice(1 + step, n - 1 + step))
                sl_b.append(slice(1 - step, n - 1 - step))
        gap = R[tuple(sl_mid)] - 0.5 * (R[tuple(sl_a)] + R[tuple(sl_b)])
        if gap.size:
            worst = max(worst, float(gap.max()))
    return worst


def potential_from_current(S: SuperCurrent11, eps: float = 3.0, *, sym_tol: float = 1e-6,
                           closed_tol: float = 1e-6, psd_tol: float = 1e-9,
                           convex_tol: float = 1e-9, check: bool = True, crop: int = 0,
                           integration: str = "path", envelope: bool = True) -> GridField:
    """Recover a convex ``R`` with ``d'd'' R`` equal to the mollified current.

    Parameters
    ----------
    S : SuperCurrent11
        Symmetric, closed, positive current given by masses per cell.
    eps : float
        Mollifier radius in grid cells (at least 2).
    closed_tol, sym_tol, psd_tol : float
        Relative tolerances for closedness (discrete curl), symmetry and
        negativity of the mollified densities.
    check : bool
        Raise :class:`CurrentError` on a failed input check; otherwise only
        record it in ``meta``.
    crop : int
        Cells dropped from every side after mollifying.  A current given on a
        halo around the region of interest (``crop >= eps``) is mollified
        without any boundary treatment.
    integration : {"path", "least_squares"}
        How the row one-forms and the gradient are integrated.  ``path``
        follows axis-ordered paths from the grid corner; ``least_squares``
        solves the Neumann normal equations and suits sampled currents whose
        noise would pile up along paths.  Both residual diagnostics are
        computed either way.
    envelope : bool
        Replace ``R`` by its convex envelope on the grid (default).  Path or
        least-squares integration of a mollified current is convex only up
        to discretization error; the projection makes ``R`` midpoint-convex
        to rounding and keeps the violation before it as
        ``convexity_violation_raw``.

    Returns
    -------
    GridField
        ``R`` at cell centres; ``meta`` carries the diagnostics.
    """
    if eps < 2:
        raise ValueError("mollification radius must be at least 2 grid cells")
    if integration not in ("path", "least_squares"):
        raise ValueError(f"unknown integration {integration!r}")
    g = S.grid
    spacing = g.spacing
    m = S.m
    crop = int(crop)
    if crop < 0 or any(n - 2 * crop < 2 for n in g.shape):
        raise ValueError("crop leaves fewer than 2 cells per axis")
    meta = {"eps_cells": float(eps), "sym_tol": sym_tol, "closed_tol": closed_tol,
            "psd_tol": psd_tol, "convex_tol": convex_tol, "crop_cells": crop,
            "integration": integration, "envelope": bool(envelope)}

    sym_ok = is_symmetric(S, sym_tol)
    meta["symmetric"] = sym_ok
    if check and not sym_ok:
        raise CurrentError("current is not symmetric within tolerance")
    h = mollify(S, eps)
    h = 0.5 * (h + np.swapaxes(h, 0, 1))
    if crop:
        inner = (slice(None), slice(None)) + tuple(slice(crop, n - crop) for n in g.shape)
        h = h[inner]
        lo = g.lo + crop * spacing
        hi = g.hi - crop * spacing
        g = Grid(tuple(np.ravel(np.column_stack([lo, hi]))), tuple(n - 2 * crop for n in g.shape))
    curl = curl_residual(h, spacing)
    meta["curl_residual"] = curl
    meta["closed"] = curl <= closed_tol
    if check and curl > closed_tol:
        raise CurrentError(f"row one-forms are not closed: relative curl {curl:.3g} > {closed_tol:g}")
    # entrywise scale: a traceless density such as diag(1, -1) must still be caught
    scale = float(np.max(np.abs(h))) if h.size else 0.0
    if scale > 0:
        eig_min = float(np.min(np.linalg.eigvalsh(np.moveaxis(h, (0, 1), (-2, -1)))))
    else:
        eig_min = 0.0
    meta["min_eigenvalue_rel"] = eig_min / scale if scale > 0 else 0.0
    if check and scale > 0 and eig_min < -psd_tol * scale:
        raise CurrentError(f"negative mollified density (min eigenvalue {eig_min:.3g})")

    center = tuple(n // 2 for n in g.shape)
    order = list(range(m))

    def recover(order_):
        grads = []
        for j in range(m):
            gj = _path_integral([h[j, k] for k in range(m)], spacing, order_)
            grads.append(gj - gj[center])
        R = _path_integral(grads, spacing, order_)
        return R - R[center], grads

    R, grads = recover(order)
    R_alt, _ = recover(order[::-1])
    total = float(np.trace(h).sum()) * g.cell_area if crop else S.total_mass
    meta["path_residual"] = float(np.max(np.abs(R - R_alt)))
    meta["path_residual_rel"] = meta["path_residual"] / total if total > 0 else 0.0
    if integration == "least_squares":
        R_path = R
        grads = []
        for j in range(m):
            gj = _ls_integral([h[j, k] for k in range(m)], spacing)
            grads.append(gj - gj[center])
        R = _ls_integral(grads, spacing)
        R = R - R[center]
        meta["ls_minus_path_max"] = float(np.max(np.abs(R - R_path)))

    ref = h[(slice(None), slice(None)) + tuple(slice(1, -1) for _ in range(m))]
    den = float(np.abs(ref).sum())

    def recon(R_):
        H = second_differences(R_, spacing)
        return float(np.abs(H - ref).sum()) / den if den > 0 else float(np.abs(H).sum())

    viol = midpoint_convexity_violation(R)
    if envelope:
        meta["convexity_violation_raw"] = viol
        meta["reconstruction_l1_rel_raw"] = recon(R)
        env = convex_envelope(R)
        meta["envelope_max_change"] = float(np.max(np.abs(env - R)))
        R = env - env[center]
        viol = midpoint_convexity_violation(R)
    meta["reconstruction_l1_rel"] = recon(R)
    meta["convexity_violation"] = viol
    meta["midpoint_convex"] = viol <= convex_tol
    meta["total_mass"] = total
    return GridField(g, R, meta)


class PotentialRecovery(BaseEstimator):
    """Estimator wrapper: ``fit`` on a current, ``predict`` the potential at points.

    Parameters
    ----------
    eps : float, default=3.0
        Mollifier radius in grid cells.
    closed_tol : float, default=1e-6
        Relative curl tolerance for the closedness check.
    check : bool, default=True
        Raise on failed input checks.
    """

    def __init__(self, eps: float = 3.0, closed_tol: float = 1e-6, check: bool = True):
        self.eps = eps
        self.closed_tol = closed_tol
        self.check = check

    def fit(self, S: SuperCurrent11, y=None):
        self.potential_ = potential_from_current(S, self.eps, closed_tol=self.closed_tol,
                                                 check=self.check)
        self.report_ = dict(self.potential_.meta)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "potential_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        interp = RegularGridInterpolator(self.potential_.grid.axes(), self.potential_.values,
                                         bounds_error=False, fill_value=None)
        return interp(X)

    def gradient(self) -> np.ndarray:
        """Finite-difference gradient field, shape ``(m, *grid.shape)``."""
        check_is_fitted(self, "potential_")
        R = self.potential_.values
        return np.stack(np.gradient(R, *self.potential_.grid.spacing), axis=0)
