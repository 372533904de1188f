"""Tropical superforms on R^m.

A ``(p, q)``-superform is ``sum f_JK(x) dx_J (x) dx_K`` over increasing index
tuples ``|J| = p``, ``|K| = q``.  Coefficients are either real polynomials
(:class:`Poly`, exact calculus) or samples on a cell-centred grid
(:class:`GridField`).  Indices are 0-based internally.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import Grid

Index = Tuple[int, ...]


# -- coefficient fields ----------------------------------------------------

class Poly:
    """Real polynomial in ``m`` variables, stored as ``{exponent: coefficient}``."""

    __slots__ = ("m", "terms")

    def __init__(self, terms: Optional[Dict[Tuple[int, ...], float]] = None, m: int = 1):
        self.m = m
        self.terms = {}
        for e, c in (terms or {}).items():
            e = tuple(int(k) for k in e)
            if len(e) != m or min(e, default=0) < 0:
                raise ValueError(f"bad exponent {e} for {m} variables")
            if c != 0:
                self.terms[e] = self.terms.get(e, 0.0) + float(c)

    @classmethod
    def const(cls, c: float, m: int) -> "Poly":
        return cls({(0,) * m: c}, m)

    @classmethod
    def var(cls, j: int, m: int) -> "Poly":
        e = [0] * m
        e[j] = 1
        return cls({tuple(e): 1.0}, m)

    @classmethod
    def random(cls, m: int, degree: int, rng: np.random.Generator, density: float = 0.7) -> "Poly":
        terms = {}
        for e in itertools.product(range(degree + 1), repeat=m):
            if sum(e) <= degree and rng.random() < density:
                terms[e] = rng.normal()
        return cls(terms, m)

    def _check(self, other: "Poly"):
        if other.m != self.m:
            raise ValueError("polynomials live in different dimensions")

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other, self.m)
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Poly(out, self.m)

    __radd__ = __add__

    def __neg__(self):
        return Poly({e: -c for e, c in self.terms.items()}, self.m)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly({e: c * other for e, c in self.terms.items()}, self.m)
        self._check(other)
        out: Dict[Tuple[int, ...], float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                e = tuple(x + y for x, y in zip(a, b))
                out[e] = out.get(e, 0.0) + ca * cb
        return Poly(out, self.m)

    __rmul__ = __mul__

    def diff(self, k: int) -> "Poly":
        out = {}
        for e, c in self.terms.items():
            if e[k]:
                f = list(e)
                f[k] -= 1
                out[tuple(f)] = c * e[k]
        return Poly(out, self.m)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x)
        val = np.zeros(x.shape[:-1], dtype=np.result_type(x, float))
        for e, c in self.terms.items():
            val = val + c * np.prod(x ** np.array(e), axis=-1)
        return val

    def integrate(self, box: Sequence[float]) -> float:
        """Exact integral over ``[lo1, hi1] x ... x [lom, him]``."""
        lo, hi = np.asarray(box[::2], float), np.asarray(box[1::2], float)
        total = 0.0
        for e, c in self.terms.items():
            e = np.array(e)
            total += c * float(np.prod((hi ** (e + 1) - lo ** (e + 1)) / (e + 1)))
        return total

    def max_abs(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())

    def __repr__(self):
        if not self.terms:
            return "Poly(0)"
        return "Poly(" + " + ".join(f"{c:g}*x^{e}" for e, c in sorted(self.terms.items())) + ")"


@dataclass
class GridField:
    """Scalar samples at the cell centres of a rectangular grid."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field values must be finite")

    @property
    def m(self) -> int:
        return self.grid.ndim

    def _check(self, other: "GridField"):
        if self.grid != other.grid:
            raise ValueError("grid mismatch")

    def __add__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.grid, self.values + other.values, {**self.meta, **other.meta})
        return GridField(self.grid, self.values + other, dict(self.meta))

    __radd__ = __add__

    def __neg__(self):
        return GridField(self.grid, -self.values, dict(self.meta))

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.grid, self.values * other.values, {**self.meta, **other.meta})
        if isinstance(other, Poly):
            raise TypeError("cannot mix exact and sampled coefficients")
        return GridField(self.grid, self.values * other, dict(self.meta))

    __rmul__ = __mul__

    def diff(self, k: int) -> "GridField":
        # central differences inside, one-sided on the boundary layer
        d = np.gradient(self.values, self.grid.spacing[k], axis=k, edge_order=1)
        return GridField(self.grid, d, {**self.meta, "one_sided_boundary": True})

    def __call__(self, x) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.grid.axes(), self.values, bounds_error=False,
                                         fill_value=None)
        return interp(np.asarray(x, dtype=float))

    def integrate(self, box=None) -> float:
        # cell-centred samples: midpoint (= trapezoid on the dual lattice) rule
        return float(self.values.sum() * self.grid.cell_area)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_abs() <= tol

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "GridField":
        return cls(grid, fn(grid.centers()))

    def to_json(self) -> dict:
        return {**self.grid.to_json(), "values": self.values.ravel(order="C").tolist(),
                "order": "row-major over (i1, i2, ...), i1 slowest"}

    @classmethod
    def from_json(cls, data: dict) -> "GridField":
        g = Grid(tuple(data["box"]), tuple(data["shape"]))
        return cls(g, np.asarray(data["values"], dtype=float).reshape(g.shape))


Field = Union[Poly, GridField]


# -- index bookkeeping -----------------------------------------------------

def merge_sign(a: Index, b: Index) -> Tuple[int, Index]:
    """Sign and sorted index tuple of ``dx_a ^ dx_b``; sign 0 on a repeated index."""
    if set(a) & set(b):
        return 0, ()
    seq = list(a) + list(b)
    inversions = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return (-1 if inversions % 2 else 1), tuple(sorted(seq))


def subsets(m: int, k: int) -> Iterable[Index]:
    return itertools.combinations(range(m), k)


# -- superforms ------------------------------------------------------------

@dataclass
class SuperForm:
    """Superform of bidegree ``(p, q)`` on ``R^m``; absent ``(J, K)`` pairs are zero."""

    m: int
    p: int
    q: int
    coeffs: Dict[Tuple[Index, Index], Field] = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError(f"negative bidegree ({self.p}, {self.q})")
        clean = {}
        for (J, K), f in self.coeffs.items():
            J, K = tuple(J), tuple(K)
            if len(J) != self.p or len(K) != self.q:
                raise ValueError(f"index pair {(J, K)} has wrong length for ({self.p}, {self.q})")
            if list(J) != sorted(set(J)) or list(K) != sorted(set(K)):
                raise ValueError(f"indices must be strictly increasing: {(J, K)}")
            if max(J + K, default=-1) >= self.m:
                raise ValueError(f"index out of range in {(J, K)}")
            clean[(J, K)] = f
        self.coeffs = clean

    @property
    def bidegree(self) -> Tuple[int, int]:
        return self.p, self.q

    @classmethod
    def scalar(cls, f: Field, m: int) -> "SuperForm":
        return cls(m, 0, 0, {((), ()): f})

    @classmethod
    def basis(cls, J: Sequence[int], K: Sequence[int], m: int, f: Optional[Field] = None) -> "SuperForm":
        """``f dx_J (x) dx_K`` with 0-based indices; ``J`` and ``K`` may be unsorted."""
        sj, Js = merge_sign((), tuple(J)) if len(set(J)) == len(J) else (0, ())
        sk, Ks = merge_sign((), tuple(K)) if len(set(K)) == len(K) else (0, ())
        f = Poly.const(1.0, m) if f is None else f
        if sj * sk == 0:
            return cls(m, len(J), len(K))
        return cls(m, len(J), len(K), {(Js, Ks): f * (sj * sk)})

    def _same_space(self, other: "SuperForm"):
        if (self.m, self.p, self.q) != (other.m, other.p, other.q):
            raise ValueError("superforms of different bidegree or dimension")

    def __add__(self, other: "SuperForm") -> "SuperForm":
        self._same_space(other)
        out = dict(self.coeffs)
        for key, f in other.coeffs.items():
            out[key] = out[key] + f if key in out else f
        return SuperForm(self.m, self.p, self.q, out)

    def __neg__(self):
        return SuperForm(self.m, self.p, self.q, {k: -f for k, f in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        """Scalar or coefficient-field multiple."""
        return SuperForm(self.m, self.p, self.q, {k: f * c for k, f in self.coeffs.items()})

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return max((f.max_abs() for f in self.coeffs.values()), default=0.0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(f.is_zero(tol) for f in self.coeffs.values())

    def coefficient(self, J: Index, K: Index) -> Optional[Field]:
        return self.coeffs.get((tuple(J), tuple(K)))

    def evaluate(self, x) -> Dict[Tuple[Index, Index], float]:
        return {k: f(np.asarray(x, dtype=float)) for k, f in self.coeffs.items()}


def dprime(w: SuperForm) -> SuperForm:
    """``d' w = sum_k d_k f dx_k ^ dx_J (x) dx_K``."""
    out: Dict[Tuple[Index, Index], Field] = {}
    for (J, K), f in w.coeffs.items():
        for k in range(w.m):
            s, Jk = merge_sign((k,), J)
            if s == 0:
                continue
            term = f.diff(k) * s
            out[(Jk, K)] = out[(Jk, K)] + term if (Jk, K) in out else term
    return SuperForm(w.m, w.p + 1, w.q, out)


def dsecond(w: SuperForm) -> SuperForm:
    """``d'' w = (-1)^p sum_k d_k f dx_J (x) dx_k ^ dx_K``."""
    sign_p = -1 if w.p % 2 else 1
    out: Dict[Tuple[Index, Index], Field] = {}
    for (J, K), f in w.coeffs.items():
        for k in range(w.m):
            s, Kk = merge_sign((k,), K)
            if s == 0:
                continue
            term = f.diff(k) * (s * sign_p)
            out[(J, Kk)] = out[(J, Kk)] + term if (J, Kk) in out else term
    return SuperForm(w.m, w.p, w.q + 1, out)


def wedge(a: SuperForm, b: SuperForm) -> SuperForm:
    """``(dx_J (x) dx_K) ^ (dx_J' (x) dx_K') = (-1)^(q p') dx_J^dx_J' (x) dx_K^dx_K'``."""
    if a.m != b.m:
        raise ValueError("superforms live in different dimensions")
    p, q = a.p + b.p, a.q + b.q
    base = -1 if (a.q * b.p) % 2 else 1
    out: Dict[Tuple[Index, Index], Field] = {}
    for (J, K), f in a.coeffs.items():
        for (J2, K2), g in b.coeffs.items():
            sj, JJ = merge_sign(J, J2)
            sk, KK = merge_sign(K, K2)
            if sj * sk == 0:
                continue
            term = (f * g) * (base * sj * sk)
            out[(JJ, KK)] = out[(JJ, KK)] + term if (JJ, KK) in out else term
    return SuperForm(a.m, p, q, out)


def involution(w: SuperForm) -> SuperForm:
    """``I(f dx_J (x) dx_K) = (-1)^(pq) f dx_K (x) dx_J``."""
    s = -1 if (w.p * w.q) % 2 else 1
    return SuperForm(w.m, w.q, w.p, {(K, J): f * s for (J, K), f in w.coeffs.items()})


involution_I = involution


@dataclass(frozen=True)
class VolumeConvention:
    """Volume form ``mu = c dx``; integrals of ``(m, m)``-forms carry ``(-1)^(m(m-1)/2)``."""

    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("volume form constant must be positive")

    @staticmethod
    def sign(m: int) -> int:
        return -1 if (m * (m - 1) // 2) % 2 else 1


def tropical_integral(w: SuperForm, conv: VolumeConvention = VolumeConvention(),
                      region: Optional[Sequence[float]] = None) -> float:
    """Integral of an ``(m, m)``-superform ``g dx (x) dx = (g / c^2) mu (x) mu`` over a box.

    Exact coefficients are integrated in closed form; grid coefficients use the
    cell-midpoint rule over their own grid.
    """
    if w.bidegree != (w.m, w.m):
        raise ValueError(f"only ({w.m}, {w.m})-superforms can be integrated, got {w.bidegree}")
    full = tuple(range(w.m))
    g = w.coefficient(full, full)
    if g is None:
        return 0.0
    if isinstance(g, Poly):
        if region is None:
            raise ValueError("exact-mode integration needs a region")
        val = g.integrate(region)
    else:
        val = g.integrate()
    # f = g / c^2 against mu = c dx
    return VolumeConvention.sign(w.m) * val / conv.c


# -- (1,1) supercurrents ---------------------------------------------------

@dataclass
class SuperCurrent11:
    """``sum_jk mu_jk dx_j (x) dx_k`` with ``mu_jk`` given as masses per grid cell."""

    grid: Grid
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        m = self.grid.ndim
        if self.masses.shape != (m, m) + self.grid.shape:
            raise ValueError(f"masses must have shape {(m, m) + self.grid.shape}")
        if not np.all(np.isfinite(self.masses)):
            raise ValueError("masses must be finite")

    @property
    def m(self) -> int:
        return self.grid.ndim

    @classmethod
    def uniform(cls, grid: Grid, matrix) -> "SuperCurrent11":
        """Constant density ``matrix`` (mass per unit area) over the whole grid."""
        matrix = np.asarray(matrix, dtype=float)
        dens = np.broadcast_to(matrix[(...,) + (None,) * grid.ndim], matrix.shape + grid.shape)
        return cls(grid, dens * grid.cell_area)

    @classmethod
    def from_superform(cls, w: SuperForm) -> "SuperCurrent11":
        """Masses of a grid-sampled ``(1, 1)``-superform (density times cell area)."""
        if w.bidegree != (1, 1):
            raise ValueError("need a (1, 1)-superform")
        fields = [f for f in w.coeffs.values() if isinstance(f, GridField)]
        if not fields:
            raise ValueError("superform has no sampled coefficients")
        grid = fields[0].grid
        masses = np.zeros((w.m, w.m) + grid.shape)
        for ((j,), (k,)), f in w.coeffs.items():
            masses[j, k] = f.values * grid.cell_area
        return cls(grid, masses)

    @property
    def total_mass(self) -> float:
        """Total trace mass ``sum_j |mu_jj|``."""
        return float(sum(np.abs(self.masses[j, j]).sum() for j in range(self.m)))

    def density(self) -> np.ndarray:
        return self.masses / self.grid.cell_area

    def to_json(self) -> dict:
        return {**self.grid.to_json(), "masses": self.masses.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "SuperCurrent11":
        g = Grid(tuple(data["box"]), tuple(data["shape"]))
        return cls(g, np.asarray(data["masses"], dtype=float))


def is_symmetric(S: SuperCurrent11, tol: float = 1e-9) -> bool:
    scale = float(np.max(np.abs(S.masses))) if S.masses.size else 0.0
    if scale == 0:
        return True
    asym = np.max(np.abs(S.masses - np.swapaxes(S.masses, 0, 1)))
    return bool(asym <= tol * scale)


def pairing(S: SuperCurrent11, psi: SuperForm) -> float:
    """``S[psi]`` for a grid-sampled ``(m-1, m-1)``-superform ``psi``."""
    m = S.m
    if psi.bidegree != (m - 1, m - 1):
        raise ValueError("a (1,1)-current pairs with (m-1, m-1)-forms")
    full = tuple(range(m))
    total = 0.0
    for j in range(m):
        for k in range(m):
            piece = wedge(SuperForm.basis((j,), (k,), m, GridField(S.grid, np.ones(S.grid.shape))), psi)
            g = piece.coefficient(full, full)
            if g is None:
                continue
            # the (0,0)-current mu_jk acts on g dx(x)dx as (-1)^(m(m-1)/2) * integral of g dmu_jk
            total += VolumeConvention.sign(m) * float(np.sum(S.masses[j, k] * g.values))
    return total


def bump(grid: Grid, center, radius: float) -> np.ndarray:
    """Radial ``exp(-1/(1-r^2))`` bump of the given radius (x units), peak value 1."""
    r2 = np.sum(((grid.centers() - np.asarray(center)) / radius) ** 2, axis=-1)
    out = np.zeros(grid.shape)
    inside = r2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def is_positive(S: SuperCurrent11, trials: int = 64, tol: float = 1e-9, seed: int = 0) -> bool:
    """Check ``S[(-1)^((m-1)(m-2)/2) beta ^ I(beta)] >= 0`` on random bump test forms."""
    return min_positivity_pairing(S, trials, seed) >= -tol * max(S.total_mass, 1e-300)


def min_positivity_pairing(S: SuperCurrent11, trials: int = 64, seed: int = 0) -> float:
    m = S.m
    g = S.grid
    rng = np.random.default_rng(seed)
    sign = -1 if ((m - 1) * (m - 2) // 2) % 2 else 1
    h = float(np.min(g.spacing))
    worst = np.inf
    for _ in range(trials):
        center = g.lo + rng.random(m) * (g.hi - g.lo)
        radius = h * rng.uniform(2.0, 12.0)
        phi = bump(g, center, radius)
        if not phi.any():
            continue
        a = rng.normal(size=m)
        a /= np.linalg.norm(a)
        beta = SuperForm(m, m - 1, 0)
        for j in range(m):
            comp = tuple(i for i in range(m) if i != j)
            beta = beta + SuperForm(m, m - 1, 0, {(comp, ()): GridField(g, a[j] * phi)})
        psi = wedge(beta, involution(beta)) * sign
        worst = min(worst, pairing(S, psi))
    return float(worst)
