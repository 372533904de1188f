"""Randomized and exhaustive checks of the superform calculus and of Theta.

Each suite returns a plain dict (worst residual, case count, ``pass``) so that
the CLI can write it into a report and the tests can assert on it.
"""
from __future__ import annotations

import itertools
import time
from typing import Dict, Optional, Sequence

import numpy as np

from .superforms import Poly, SuperForm, dprime, dsecond, involution, subsets, wedge
from .theta import IDENTITIES, theta_residual


def random_superform(m: int, p: int, q: int, degree: int, rng: np.random.Generator,
                     density: float = 0.7) -> SuperForm:
    """Superform of bidegree ``(p, q)`` with random polynomial coefficients of total degree ``<= degree``."""
    coeffs = {}
    for J in subsets(m, p):
        for K in subsets(m, q):
            if rng.random() < density:
                f = Poly.random(m, degree, rng)
                if f.terms:
                    coeffs[(J, K)] = f
    return SuperForm(m, p, q, coeffs)


def _perm_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting ``seq``; 0 on a repeated entry."""
    if len(set(seq)) < len(seq):
        return 0
    inv = sum(1 for i, j in itertools.combinations(range(len(seq)), 2) if seq[i] > seq[j])
    return -1 if inv % 2 else 1


def _poly_gap(a: SuperForm, b: SuperForm) -> float:
    """Largest coefficient difference between two polynomial superforms."""
    gap = 0.0
    for key in set(a.coeffs) | set(b.coeffs):
        fa, fb = a.coeffs.get(key), b.coeffs.get(key)
        if fa is None:
            gap = max(gap, fb.max_abs())
        elif fb is None:
            gap = max(gap, fa.max_abs())
        else:
            gap = max(gap, (fa - fb).max_abs())
    return gap


def calculus_suite(trials: int = 100, seed: int = 0, m_values: Sequence[int] = (2, 3),
                   degree: int = 3, tol: float = 1e-12) -> Dict[str, object]:
    """``d'd' = 0``, ``d''d'' = 0`` and ``d'd'' = -d''d'`` on random polynomial superforms."""
    rng = np.random.default_rng(seed)
    worst = {"dprime_dprime": 0.0, "dsecond_dsecond": 0.0, "anticommute": 0.0}
    t0 = time.perf_counter()
    for i in range(trials):
        m = int(m_values[i % len(m_values)])
        p, q = (int(v) for v in rng.integers(0, m + 1, size=2))
        w = random_superform(m, p, q, degree, rng)
        scale = max(1.0, max((f.max_abs() for f in w.coeffs.values()), default=0.0))
        if p + 2 <= m:
            worst["dprime_dprime"] = max(worst["dprime_dprime"], dprime(dprime(w)).max_abs() / scale)
        if q + 2 <= m:
            worst["dsecond_dsecond"] = max(worst["dsecond_dsecond"], dsecond(dsecond(w)).max_abs() / scale)
        if p < m and q < m:
            gap = _poly_gap(dprime(dsecond(w)), dsecond(dprime(w)) * -1)
            worst["anticommute"] = max(worst["anticommute"], gap / scale)
    return {"trials": trials, "m_values": list(m_values), "degree": degree, "seed": seed, "tol": tol,
            "max_residual": worst, "seconds": time.perf_counter() - t0,
            "pass": bool(all(v <= tol for v in worst.values()))}


def wedge_sign_exhaustive(m: int) -> Dict[str, object]:
    """Every pair of basis superforms against an independent permutation-sign oracle."""
    cases = failures = 0
    for p, q, p2, q2 in itertools.product(range(m + 1), repeat=4):
        if p + p2 > m or q + q2 > m:
            continue
        for J, K, J2, K2 in itertools.product(subsets(m, p), subsets(m, q), subsets(m, p2), subsets(m, q2)):
            cases += 1
            got = wedge(SuperForm.basis(J, K, m), SuperForm.basis(J2, K2, m))
            s = _perm_sign(J + J2) * _perm_sign(K + K2) * (-1) ** (q * p2)
            if s == 0:
                ok = not got.coeffs
            else:
                key = (tuple(sorted(J + J2)), tuple(sorted(K + K2)))
                f = got.coeffs.get(key)
                ok = len(got.coeffs) == 1 and f is not None and _poly_gap(
                    SuperForm(m, p + p2, q + q2, {key: f}),
                    SuperForm(m, p + p2, q + q2, {key: Poly.const(float(s), m)})) == 0.0
            failures += not ok
    return {"m": m, "cases": cases, "failures": failures, "pass": failures == 0}


def involution_exhaustive(m: int) -> Dict[str, object]:
    """``I`` on every basis superform, plus ``I(I(w)) = w``."""
    cases = failures = 0
    for p, q in itertools.product(range(m + 1), repeat=2):
        for J, K in itertools.product(subsets(m, p), subsets(m, q)):
            cases += 1
            w = SuperForm.basis(J, K, m)
            got = involution(w)
            want = SuperForm(m, q, p, {(K, J): Poly.const(float((-1) ** (p * q)), m)})
            twice = involution(got)
            ok = got.bidegree == (q, p) and _poly_gap(got, want) == 0.0 and _poly_gap(twice, w) == 0.0
            failures += not ok
    return {"m": m, "cases": cases, "failures": failures, "pass": failures == 0}


def theta_suite(n_forms: int = 50, n_points: int = 20, seed: int = 0, m: int = 2, degree: int = 3,
                tol: float = 1e-8, which: Optional[Sequence[str]] = None) -> Dict[str, object]:
    """Worst residual of each Theta identity over random forms and points with ``0.5 <= |z_j| <= 2``."""
    rng = np.random.default_rng(seed)
    which = tuple(which or IDENTITIES)
    worst = {k: 0.0 for k in which}
    t0 = time.perf_counter()
    for _ in range(n_forms):
        p, q = (int(v) for v in rng.integers(0, m + 1, size=2))
        w = random_superform(m, p, q, degree, rng)
        p2, q2 = (int(v) for v in rng.integers(0, m + 1, size=2))
        other = random_superform(m, p2, q2, max(0, degree - 1), rng)
        r = rng.uniform(0.5, 2.0, size=(n_points, m))
        z = r * np.exp(1j * rng.uniform(0, 2 * np.pi, size=(n_points, m)))
        for k in which:
            if k == "integral":
                vals = [theta_residual(w, zi, k) for zi in z]
            elif k == "homomorphism":
                vals = [theta_residual(w, z, k, other)]
            else:
                vals = [theta_residual(w, z, k)]
            worst[k] = max(worst[k], float(np.max(np.abs(vals))) if len(vals) else 0.0)
    return {"forms": n_forms, "points": n_points, "m": m, "degree": degree, "seed": seed, "tol": tol,
            "max_residual": worst, "seconds": time.perf_counter() - t0,
            "pass": bool(all(v <= tol for v in worst.values()))}
