"""Laurent polynomials in several complex variables.

Holds the classical input ``F(z) = sum_a C_a z^a``: parsing from text,
evaluation on the torus, the support polytope, and root solving along
one-dimensional fibers ``z1 = exp(x1 + i*theta1)``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .geometry import Polytope, convex_hull

Exponent = Tuple[int, ...]

ROOT_TOL = 1e-12
ROOT_MAXITER = 200
ZERO_ROOT_RADIUS = 1e-13


class ParseError(ValueError):
    pass


class DegenerateFiberError(ValueError):
    """The polynomial restricted to a fiber vanishes identically."""


@dataclass(frozen=True)
class LaurentPolynomial:
    """Finite map from integer exponent vectors to nonzero complex coefficients."""

    terms: Mapping[Exponent, complex]
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("ambient dimension must be positive")
        clean: Dict[Exponent, complex] = {}
        for exp, c in self.terms.items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != self.m:
                raise ValueError(f"exponent {exp} does not have length {self.m}")
            c = complex(c)
            if c != 0:
                clean[exp] = clean.get(exp, 0) + c
        clean = {e: c for e, c in clean.items() if c != 0}
        if not clean:
            raise ValueError("polynomial has no nonzero terms")
        object.__setattr__(self, "terms", dict(sorted(clean.items())))

    @property
    def exponents(self) -> np.ndarray:
        return np.array(list(self.terms.keys()), dtype=int).reshape(-1, self.m)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array(list(self.terms.values()), dtype=complex)

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.coefficients)))

    def __call__(self, z):
        return eval_laurent(self, z)

    def __mul__(self, other):
        if isinstance(other, LaurentPolynomial):
            out: Dict[Exponent, complex] = {}
            for a, ca in self.terms.items():
                for b, cb in other.terms.items():
                    e = tuple(x + y for x, y in zip(a, b))
                    out[e] = out.get(e, 0) + ca * cb
            return LaurentPolynomial(out, self.m)
        return LaurentPolynomial({e: c * other for e, c in self.terms.items()}, self.m)

    __rmul__ = __mul__

    def shifted(self, beta: Sequence[int]) -> "LaurentPolynomial":
        """Multiply by the monomial ``z^beta``."""
        return LaurentPolynomial(
            {tuple(a + b for a, b in zip(e, beta)): c for e, c in self.terms.items()}, self.m
        )

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "terms": [
                {"exp": list(e), "re": c.real, "im": c.imag} for e, c in self.terms.items()
            ],
        }

    @classmethod
    def from_json(cls, data) -> "LaurentPolynomial":
        if isinstance(data, str):
            data = json.loads(data)
        terms = {tuple(t["exp"]): complex(t["re"], t.get("im", 0.0)) for t in data["terms"]}
        return cls(terms, int(data["m"]))

    def __str__(self):
        parts = []
        for e, c in self.terms.items():
            mono = "*".join(
                f"z{j + 1}" if k == 1 else f"z{j + 1}^{k}" for j, k in enumerate(e) if k != 0
            )
            coef = f"{c.real:g}" if c.imag == 0 else f"({c.real:g}{c.imag:+g}j)"
            parts.append(coef if not mono else f"{coef}*{mono}")
        return " + ".join(parts)


# -- parsing ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?[ij]?)"
    r"|(?P<var>z\d+)|(?P<imag>[ij])(?![a-zA-Z0-9])|(?P<op>[-+*^()]))"
)


def _tokenize(text: str) -> List[Tuple[str, str]]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


class _Parser:
    # expr := ['+'|'-'] term (('+'|'-') term)*
    # term := factor ('*' factor)*
    # factor := number | z<k>['^' ['-'] int] | '(' expr ')'   (parenthesized: constant only)

    def __init__(self, tokens, m):
        self.toks = tokens
        self.i = 0
        self.m = m

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expr(self) -> Dict[Exponent, complex]:
        out: Dict[Exponent, complex] = {}
        sign = 1
        kind, val = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            sign = -1 if val == "-" else 1
        while True:
            exp, c = self.term()
            out[exp] = out.get(exp, 0) + sign * c
            kind, val = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                sign = -1 if val == "-" else 1
                continue
            return out

    def term(self) -> Tuple[Exponent, complex]:
        exp = [0] * self.m
        coef: complex = 1
        while True:
            e, c = self.factor()
            exp = [a + b for a, b in zip(exp, e)]
            coef *= c
            kind, val = self.peek()
            if kind == "op" and val == "*":
                self.take()
                continue
            return tuple(exp), coef

    def factor(self) -> Tuple[List[int], complex]:
        kind, val = self.take()
        zero = [0] * self.m
        if kind == "num":
            if val[-1] in "ij":
                return zero, complex(0, float(val[:-1]))
            return zero, float(val)
        if kind == "imag":
            return zero, 1j
        if kind == "var":
            j = int(val[1:])
            if not 1 <= j <= self.m:
                raise ParseError(f"variable {val} outside dimension {self.m}")
            power = 1
            k2, v2 = self.peek()
            if k2 == "op" and v2 == "^":
                self.take()
                sign = 1
                k3, v3 = self.take()
                if k3 == "op" and v3 in "+-":
                    sign = -1 if v3 == "-" else 1
                    k3, v3 = self.take()
                if k3 != "num" or not re.fullmatch(r"\d+", v3 or ""):
                    raise ParseError(f"exponent of {val} must be an integer, got {v3!r}")
                power = sign * int(v3)
            e = list(zero)
            e[j - 1] = power
            return e, 1
        if kind == "op" and val == "(":
            inner = self.expr()
            k2, v2 = self.take()
            if (k2, v2) != ("op", ")"):
                raise ParseError("unbalanced parenthesis")
            if any(any(e) for e in inner):
                raise ParseError("parenthesized groups may only hold constants")
            return zero, sum(inner.values())
        if val is None:
            raise ParseError("unexpected end of expression")
        raise ParseError(f"unexpected token {val!r}")


def parse_laurent(text: str, m: int) -> LaurentPolynomial:
    """Parse ``c*z1^a1*...*zm^am`` sums into a :class:`LaurentPolynomial`.

    Like terms are combined and zero coefficients dropped.

    >>> parse_laurent("1 + z1 + z2", 2).terms
    {(0, 0): (1+0j), (0, 1): (1+0j), (1, 0): (1+0j)}
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty expression")
    p = _Parser(tokens, m)
    terms = p.expr()
    if p.i != len(tokens):
        raise ParseError(f"trailing input starting at token {p.peek()[1]!r}")
    terms = {e: c for e, c in terms.items() if c != 0}
    if not terms:
        raise ParseError("polynomial is empty after combining like terms")
    return LaurentPolynomial(terms, m)


# -- evaluation ------------------------------------------------------------

def eval_laurent(F: LaurentPolynomial, z) -> complex:
    """Evaluate ``F`` at a point (or an array of points, last axis = coordinates)."""
    z = np.asarray(z, dtype=complex)
    if z.shape[-1] != F.m:
        raise ValueError(f"point must have {F.m} coordinates")
    if np.any(z == 0):
        raise ZeroDivisionError("Laurent polynomials are evaluated on (C*)^m only")
    logz = np.log(z)
    # exp(<a, log z>) avoids integer powers of huge/tiny moduli overflowing early
    phase = logz @ F.exponents.T
    val = np.exp(phase) @ F.coefficients
    return complex(val) if val.ndim == 0 else val


def support_polytope(F: LaurentPolynomial) -> Polytope:
    """Newton polytope: convex hull of the exponent support."""
    pts = F.exponents.astype(float)
    if F.m == 1:
        lo, hi = pts.min(), pts.max()
        verts = np.array([[lo]]) if lo == hi else np.array([[lo], [hi]])
        return Polytope(verts, normals=np.array([[-1.0], [1.0]]) if lo != hi else np.zeros((0, 1)),
                        offsets=np.array([-lo, hi]) if lo != hi else np.zeros(0),
                        degenerate=lo == hi)
    if F.m != 2:
        raise NotImplementedError("polytopes are only built for m <= 2")
    return convex_hull(pts)


# -- univariate roots ------------------------------------------------------

def _initial_guesses(coeffs: np.ndarray) -> np.ndarray:
    # coeffs: (B, d+1) low -> high; circle of radius from the coefficient geometry
    d = coeffs.shape[1] - 1
    lead = np.abs(coeffs[:, -1])
    const = np.abs(coeffs[:, 0])
    with np.errstate(divide="ignore"):
        r = np.where(const > 0, (const / lead) ** (1.0 / d), 1.0)
    r = np.where(np.isfinite(r) & (r > 0), r, 1.0)
    k = np.arange(d)
    ang = 2 * np.pi * k / d + 0.4
    return r[:, None] * np.exp(1j * ang)[None, :]


def aberth_roots(coeffs, tol: float = ROOT_TOL, maxiter: int = ROOT_MAXITER) -> np.ndarray:
    """Aberth-Ehrlich simultaneous iteration on a batch of polynomials.

    Parameters
    ----------
    coeffs : array_like, shape (B, d+1) or (d+1,)
        Coefficients from the constant term upward; the leading coefficient
        must be nonzero in every row.

    Returns
    -------
    roots : ndarray, shape (B, d) or (d,)
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    single = np.ndim(coeffs) == 1
    B, n = c.shape
    d = n - 1
    if d < 1:
        out = np.zeros((B, 0), dtype=complex)
        return out[0] if single else out
    if np.any(c[:, -1] == 0):
        raise ValueError("leading coefficient must be nonzero")
    c = c / c[:, -1:]
    if d == 1:
        out = -c[:, :1]
        return out[0] if single else out
    dc = c[:, 1:] * np.arange(1, n)[None, :]
    z = _initial_guesses(c)
    active = np.ones(B, dtype=bool)
    for _ in range(maxiter):
        zi = z[active]
        ci, dci = c[active], dc[active]
        p = np.zeros_like(zi)
        dp = np.zeros_like(zi)
        for k in range(n - 1, -1, -1):
            p = p * zi + ci[:, k:k + 1]
        for k in range(n - 2, -1, -1):
            dp = dp * zi + dci[:, k:k + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = p / dp
            diff = zi[:, :, None] - zi[:, None, :]
            idx = np.arange(d)
            diff[:, idx, idx] = np.inf
            s = np.sum(1.0 / diff, axis=2)
            corr = w / (1.0 - w * s)
        corr = np.where(np.isfinite(corr), corr, 0.0)
        corr = np.where(p == 0, 0.0, corr)
        z[active] = zi - corr
        done = np.max(np.abs(corr) - tol * np.maximum(np.abs(zi), 1.0), axis=1) <= 0
        act_idx = np.flatnonzero(active)
        active[act_idx[done]] = False
        if not active.any():
            break
    return z[0] if single else z


def fiber_coefficients(F: LaurentPolynomial, z1) -> Tuple[np.ndarray, int]:
    """Coefficients in ``z2`` (low to high) of ``z2^(-k0) F(z1, z2)``.

    Returns the (B, span+1) coefficient array and the lowest z2 exponent ``k0``.
    """
    if F.m != 2:
        raise ValueError("fiber solving needs m = 2")
    z1 = np.atleast_1d(np.asarray(z1, dtype=complex))
    exps = F.exponents
    lo, hi = exps[:, 1].min(), exps[:, 1].max()
    out = np.zeros((z1.size, hi - lo + 1), dtype=complex)
    logz1 = np.log(z1)
    for (a1, a2), c in F.terms.items():
        out[:, a2 - lo] += c * np.exp(a1 * logz1)
    return out, int(lo)


def roots_from_fiber_coefficients(coeffs: np.ndarray) -> List[np.ndarray]:
    """Nonzero roots for each row, dropping vanishing leading coefficients."""
    B, n = coeffs.shape
    scale = np.max(np.abs(coeffs), axis=1)
    if np.any(scale == 0):
        raise DegenerateFiberError("polynomial vanishes identically on a fiber")
    nz = np.abs(coeffs) > 1e-14 * scale[:, None]
    top = n - 1 - np.argmax(nz[:, ::-1], axis=1)
    bottom = np.argmax(nz, axis=1)
    results: List[np.ndarray] = [None] * B  # type: ignore[list-item]
    # Roots at zero (bottom > 0) are excluded from the torus; strip them up front.
    keys = np.stack([bottom, top], axis=1)
    for b0, t0 in {tuple(k) for k in keys.tolist()}:
        rows = np.flatnonzero((bottom == b0) & (top == t0))
        sub = coeffs[rows, b0:t0 + 1]
        r = aberth_roots(sub) if t0 > b0 else np.zeros((rows.size, 0), dtype=complex)
        r = _polish(sub, r)
        for i, row in enumerate(rows):
            rr = r[i]
            results[row] = rr[np.abs(rr) >= ZERO_ROOT_RADIUS]
    return results


def _polish(coeffs, roots, steps: int = 2):
    if roots.shape[1] == 0:
        return roots
    n = coeffs.shape[1]
    dc = coeffs[:, 1:] * np.arange(1, n)[None, :]
    z = roots.copy()
    for _ in range(steps):
        p = np.zeros_like(z)
        dp = np.zeros_like(z)
        for k in range(n - 1, -1, -1):
            p = p * z + coeffs[:, k:k + 1]
        for k in range(n - 2, -1, -1):
            dp = dp * z + dc[:, k:k + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            step = p / dp
        step = np.where(np.isfinite(step) & (np.abs(step) < 1e-3 * np.maximum(np.abs(z), 1e-300)),
                        step, 0)
        z = z - step
    return z


def fiber_roots(F: LaurentPolynomial, x1: float, theta1: float) -> np.ndarray:
    """All roots ``z2`` in C* of ``F(exp(x1 + i*theta1), z2) = 0``, with multiplicity."""
    z1 = np.exp(complex(x1, theta1))
    coeffs, _ = fiber_coefficients(F, z1)
    if coeffs.shape[1] < 2:
        raise DegenerateFiberError("F has no z2 dependence")
    return roots_from_fiber_coefficients(coeffs)[0]


def univariate_roots(F: LaurentPolynomial, axis: int = 0) -> np.ndarray:
    """Roots of a polynomial that depends on a single variable ``z_{axis+1}`` only."""
    exps = F.exponents
    others = np.delete(exps, axis, axis=1)
    if np.any(others != others[0]):
        raise ValueError("polynomial depends on more than one variable")
    lo = exps[:, axis].min()
    coeffs = np.zeros(exps[:, axis].max() - lo + 1, dtype=complex)
    for e, c in F.terms.items():
        coeffs[e[axis] - lo] += c
    return roots_from_fiber_coefficients(coeffs[None, :])[0]


def z2_degree_span(F: LaurentPolynomial) -> int:
    e = F.exponents[:, 1]
    return int(e.max() - e.min())


def dominant_log_modulus(F: LaurentPolynomial, x: np.ndarray) -> np.ndarray:
    """``max_a (<a, x> + log|C_a|)`` for points ``x`` (last axis = coordinates)."""
    x = np.asarray(x, dtype=float)
    lin = x @ F.exponents.T + np.log(np.abs(F.coefficients))
    return lin.max(axis=-1)
