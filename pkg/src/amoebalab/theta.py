"""Complex forms on (C*)^m pulled back from superforms through Log.

A superform ``f(x) dx_J (x) dx_K`` corresponds to the complex form

    i^q / (2 sqrt(pi))^(p+q) * f(Log z) dz_J/z_J ^ dzbar_K/zbar_K.

Complex forms are kept as sums of monomials
``c * L^e * z^a * zbar^b * dz_A ^ dzbar_B`` with ``L_j = log|z_j|`` so that
``d/dz`` and ``d/dzbar`` are computed by the chain rule (``dL_j/dz_j = 1/(2 z_j)``)
independently of the tropical differentials.  Residuals compare both sides
of each correspondence at a sample point.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .superforms import Poly, SuperForm, VolumeConvention, dprime, dsecond, involution, merge_sign, wedge

# key: (generators, log-exponents, z-exponents, zbar-exponents)
Key = Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]

IDENTITIES = ("homomorphism", "dprime", "dsecond", "involution", "integral")


@dataclass
class ComplexForm:
    """Differential form on (C*)^m; generator ``g < m`` is ``dz_g``, ``g >= m`` is ``dzbar_(g-m)``."""

    m: int
    terms: Dict[Key, complex] = field(default_factory=dict)

    def add_term(self, key: Key, c: complex):
        if c == 0:
            return
        self.terms[key] = self.terms.get(key, 0) + c

    def __add__(self, other: "ComplexForm") -> "ComplexForm":
        out = ComplexForm(self.m, dict(self.terms))
        for k, c in other.terms.items():
            out.add_term(k, c)
        return out

    def __mul__(self, c: complex) -> "ComplexForm":
        return ComplexForm(self.m, {k: v * c for k, v in self.terms.items()})

    __rmul__ = __mul__

    def wedge(self, other: "ComplexForm") -> "ComplexForm":
        out = ComplexForm(self.m)
        for (g1, e1, a1, b1), c1 in self.terms.items():
            for (g2, e2, a2, b2), c2 in other.terms.items():
                s, g = merge_sign(g1, g2)
                if s == 0:
                    continue
                key = (g, _add(e1, e2), _add(a1, a2), _add(b1, b2))
                out.add_term(key, s * c1 * c2)
        return out

    def _derivative(self, holo: bool) -> "ComplexForm":
        out = ComplexForm(self.m)
        shift = 0 if holo else self.m
        for (g, e, a, b), c in self.terms.items():
            for k in range(self.m):
                s, g2 = merge_sign((k + shift,), g)
                if s == 0:
                    continue
                # d/dz_k of L_k^e_k: e_k L_k^(e_k-1) / (2 z_k); same with zbar
                if e[k]:
                    e2 = _bump(e, k, -1)
                    if holo:
                        key = (g2, e2, _bump(a, k, -1), b)
                    else:
                        key = (g2, e2, a, _bump(b, k, -1))
                    out.add_term(key, s * c * e[k] / 2.0)
                power = a[k] if holo else b[k]
                if power:
                    key = (g2, e, _bump(a, k, -1), b) if holo else (g2, e, a, _bump(b, k, -1))
                    out.add_term(key, s * c * power)
        return out

    def partial(self) -> "ComplexForm":
        return self._derivative(holo=True)

    def partial_bar(self) -> "ComplexForm":
        return self._derivative(holo=False)

    def conj(self) -> "ComplexForm":
        m = self.m
        out = ComplexForm(m)
        for (g, e, a, b), c in self.terms.items():
            swapped = tuple(x + m if x < m else x - m for x in g)
            s = _sort_sign(swapped)
            out.add_term((tuple(sorted(swapped)), e, b, a), s * np.conj(c))
        return out

    def evaluate(self, z) -> Dict[Tuple[int, ...], complex]:
        """Coefficient of each basis form ``dz_A ^ dzbar_B`` at ``z`` (last axis = coordinates)."""
        z = np.asarray(z, dtype=complex)
        L = np.log(np.abs(z))
        zc = np.conj(z)
        cache: Dict[Tuple[str, int, int], np.ndarray] = {}

        def power(kind: str, j: int, e: int) -> np.ndarray:
            key = (kind, j, e)
            if key not in cache:
                base = {"L": L, "z": z, "w": zc}[kind][..., j]
                cache[key] = base ** e if e >= 0 else (1.0 / base) ** (-e)
            return cache[key]

        out: Dict[Tuple[int, ...], complex] = {}
        for (g, e, a, b), c in self.terms.items():
            val = c
            for j in range(self.m):
                if e[j]:
                    val = val * power("L", j, e[j])
                if a[j]:
                    val = val * power("z", j, a[j])
                if b[j]:
                    val = val * power("w", j, b[j])
            out[g] = out[g] + val if g in out else val
        return out


def _add(u, v):
    return tuple(x + y for x, y in zip(u, v))


def _bump(u, k, d):
    w = list(u)
    w[k] += d
    return tuple(w)


def _sort_sign(seq) -> int:
    inv = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return -1 if inv % 2 else 1


def theta(w: SuperForm) -> ComplexForm:
    """Map a polynomial-coefficient superform to its complex counterpart."""
    m = w.m
    out = ComplexForm(m)
    factor = (1j ** w.q) / (2.0 * np.sqrt(np.pi)) ** (w.p + w.q)
    for (J, K), f in w.coeffs.items():
        if not isinstance(f, Poly):
            raise TypeError("theta needs polynomial coefficients")
        gens = tuple(J) + tuple(k + m for k in K)
        a = tuple(-1 if j in J else 0 for j in range(m))
        b = tuple(-1 if k in K else 0 for k in range(m))
        for e, c in f.terms.items():
            out.add_term((gens, e, a, b), factor * c)
    return out


def _max_diff(u: Dict, v: Dict) -> float:
    keys = set(u) | set(v)
    if not keys:
        return 0.0
    return max(float(np.max(np.abs(u.get(k, 0) - v.get(k, 0)))) for k in keys)


def _lift_to_top(w: SuperForm) -> SuperForm:
    m = w.m
    if w.bidegree == (m, m):
        return w
    filler = SuperForm(m, m - w.p, m - w.q)
    for J in itertools.combinations(range(m), m - w.p):
        for K in itertools.combinations(range(m), m - w.q):
            filler = filler + SuperForm.basis(J, K, m)
    return wedge(w, filler)


def complex_top_integral(form: ComplexForm, box: Sequence[float], nx: int = 12, nt: int = 16) -> complex:
    """Integral of a top-degree complex form over ``Log^{-1}(box)`` (complex orientation).

    Uses ``z_j = exp(x_j + i t_j)``: ``dz_j ^ dzbar_j = -2i |z_j|^2 dx_j ^ dt_j``,
    Gauss-Legendre in ``x`` and the periodic trapezoid rule in ``t``.
    """
    m = form.m
    top = tuple(range(2 * m))
    gx, wx = np.polynomial.legendre.leggauss(nx)
    lo, hi = np.asarray(box[::2], float), np.asarray(box[1::2], float)
    xs = [0.5 * (h + l) + 0.5 * (h - l) * gx for l, h in zip(lo, hi)]
    ws = [0.5 * (h - l) * wx for l, h in zip(lo, hi)]
    ts = 2 * np.pi * np.arange(nt) / nt
    X = np.stack(np.meshgrid(*xs, *([ts] * m), indexing="ij"), axis=-1)
    W = np.ones(X.shape[:-1])
    for j in range(m):
        shape = [1] * (2 * m)
        shape[j] = nx
        W = W * ws[j].reshape(shape)
    W = W * (2 * np.pi / nt) ** m
    z = np.exp(X[..., :m] + 1j * X[..., m:])
    c = form.evaluate(z).get(top, 0)
    total = np.sum(c * W * np.prod(np.abs(z) ** 2, axis=-1))
    # dz_1..dz_m dzbar_1..dzbar_m -> pairs dz_j dzbar_j: sign (-1)^(m(m-1)/2)
    return complex(VolumeConvention.sign(m) * (-2j) ** m * total)


def theta_residual(w: SuperForm, z, which: str, other: Optional[SuperForm] = None) -> float:
    """Max entrywise gap between the two sides of a Theta correspondence at ``z``.

    ``which`` is one of ``homomorphism``, ``dprime``, ``dsecond``,
    ``involution``, ``integral``.  The homomorphism check uses ``other``
    (default ``w``); the integral check lifts ``w`` to top bidegree and
    integrates over the unit box centred at ``Log z``.
    """
    z = np.asarray(z, dtype=complex)
    if which == "homomorphism":
        other = w if other is None else other
        lhs = theta(wedge(w, other)).evaluate(z)
        rhs = theta(w).wedge(theta(other)).evaluate(z)
        return _max_diff(lhs, rhs)
    if which == "dprime":
        lhs = theta(dprime(w)).evaluate(z)
        rhs = (theta(w).partial() * (1 / np.sqrt(np.pi))).evaluate(z)
        return _max_diff(lhs, rhs)
    if which == "dsecond":
        lhs = theta(dsecond(w)).evaluate(z)
        rhs = (theta(w).partial_bar() * (1j / np.sqrt(np.pi))).evaluate(z)
        return _max_diff(lhs, rhs)
    if which == "involution":
        lhs = theta(involution(w)).evaluate(z)
        rhs = (theta(w).conj() * (1j ** (w.p + w.q))).evaluate(z)
        return _max_diff(lhs, rhs)
    if which == "integral":
        top = _lift_to_top(w)
        x0 = np.log(np.abs(z))
        box = np.ravel(np.column_stack([x0 - 0.5, x0 + 0.5]))
        from .superforms import tropical_integral

        trop = tropical_integral(top, region=box)
        # Theta images carry z-exponents in {-1, 0}, so in t the integrand is a
        # trigonometric polynomial of degree <= 1 and in x a polynomial of the
        # coefficient degree: both rules below are exact
        deg = max((sum(e) for f in top.coeffs.values() for e in f.terms), default=0)
        cplx = complex_top_integral(theta(top), box, nx=deg // 2 + 2, nt=4)
        return abs(cplx - trop)
    raise ValueError(f"unknown identity {which!r}; expected one of {IDENTITIES}")
