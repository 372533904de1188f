"""Planar convex geometry and raster topology.

Convex hulls with outer facet normals, normal and recession cones, Hausdorff
distances between finite samples, and connected-component labelling of the
complement of an occupied raster.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

ANGLE_TOL = 1e-9


@dataclass
class Polytope:
    """Convex polygon (or lower-dimensional hull) given by vertices and facets.

    ``vertices`` are extreme points in counterclockwise order; facet ``k``
    is ``normals[k] . x <= offsets[k]`` with ``normals[k]`` the outer unit
    normal of the edge from ``vertices[k]`` to ``vertices[k+1]``.
    Segments and points carry ``degenerate=True`` and no facets.
    """

    vertices: np.ndarray
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False

    @property
    def dim(self) -> int:
        if len(self.vertices) == 1:
            return 0
        if self.degenerate:
            return 1
        return self.vertices.shape[1]

    @property
    def area(self) -> float:
        if self.degenerate or self.vertices.shape[1] != 2:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, pts, slack: float = 1e-9) -> np.ndarray:
        """Membership of points in the ``slack``-neighbourhood of the polytope."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return distance_to_polytope(self, pts) <= slack

    def nearest_vertex(self, p) -> Tuple[int, float]:
        d = np.linalg.norm(self.vertices - np.asarray(p, dtype=float), axis=1)
        k = int(np.argmin(d))
        return k, float(d[k])

    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "normals": self.normals.tolist(),
            "offsets": self.offsets.tolist(),
            "degenerate": bool(self.degenerate),
            "area": self.area,
        }


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points, tol: float = 1e-12) -> Polytope:
    """Andrew monotone-chain hull of a planar point set."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError("convex_hull works in the plane")
    # Snap to a lattice of pitch ~tol*scale and run the turn test on the
    # integer lattice keys: exact, so collinear runs are never mistaken for
    # turns and a tolerance cannot pop true vertices either.
    scale = max(1.0, float(np.max(np.abs(pts))))
    # a power of two keeps the snapping exact for dyadic (e.g. integer) input
    q = 2.0 ** np.floor(np.log2(tol * scale))
    keys = np.round(pts / q).astype(np.int64)
    rep = {}
    for k, p in zip(map(tuple, keys.tolist()), pts):
        rep.setdefault(k, (float(p[0]) + 0.0, float(p[1]) + 0.0))
    uniq = sorted(rep)
    if len(uniq) == 1:
        return Polytope(np.array([rep[uniq[0]]]), degenerate=True)

    def half(seq):
        out: List[Tuple[int, int]] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = [rep[k] for k in lower[:-1] + upper[:-1]]
    if len(hull) <= 2:
        ends = np.array([rep[uniq[0]], rep[uniq[-1]]])
        return Polytope(ends, degenerate=True)
    verts = np.array(hull)
    edges = np.roll(verts, -1, axis=0) - verts
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = np.einsum("ij,ij->i", normals, verts)
    return Polytope(verts, normals, offsets, degenerate=False)


def distance_to_polytope(P: Polytope, pts) -> np.ndarray:
    """Euclidean distance from each point to the (closed) polytope."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    V = P.vertices
    if len(V) == 1:
        return np.linalg.norm(pts - V[0], axis=1)
    if P.degenerate:
        segs = [(V[0], V[1])]
    else:
        segs = list(zip(V, np.roll(V, -1, axis=0)))
    best = np.full(len(pts), np.inf)
    for a, b in segs:
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(pts - (a + t[:, None] * ab), axis=1))
    if not P.degenerate:
        inside = np.all(pts @ P.normals.T <= P.offsets + 1e-12, axis=1)
        best[inside] = 0.0
    return best


# -- cones -----------------------------------------------------------------

@dataclass
class Cone:
    """Convex cone spanned by unit generator rays; no generators = zero cone."""

    generators: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.generators, dtype=float).reshape(-1, 2)
        n = np.linalg.norm(g, axis=1)
        if np.any(n == 0):
            raise ValueError("cone generators must be nonzero")
        g = g / n[:, None]
        keep: List[np.ndarray] = []
        for v in g:
            if not any(np.arccos(np.clip(v @ w, -1, 1)) < ANGLE_TOL for w in keep):
                keep.append(v)
        self.generators = np.array(keep).reshape(-1, 2)

    @classmethod
    def full(cls) -> "Cone":
        return cls(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]))

    @classmethod
    def zero(cls) -> "Cone":
        return cls(np.zeros((0, 2)))

    @property
    def is_zero(self) -> bool:
        return len(self.generators) == 0

    def arc(self) -> Optional[Tuple[float, float]]:
        """(start angle, angular width) of the cone, counterclockwise.

        Returns ``None`` for the zero cone and width ``2*pi`` for the plane.
        """
        if self.is_zero:
            return None
        ang = np.sort(np.mod(np.arctan2(self.generators[:, 1], self.generators[:, 0]), 2 * np.pi))
        if len(ang) == 1:
            return float(ang[0]), 0.0
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        k = int(np.argmax(gaps))
        if gaps[k] < np.pi - 1e-9:
            return 0.0, 2 * np.pi
        start = ang[(k + 1) % len(ang)]
        return float(start), float(2 * np.pi - gaps[k])

    @property
    def is_full(self) -> bool:
        a = self.arc()
        return a is not None and a[1] >= 2 * np.pi - 1e-12

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        if np.linalg.norm(v) == 0:
            return True
        a = self.arc()
        if a is None:
            return False
        start, width = a
        if width >= 2 * np.pi - 1e-12:
            return True
        t = np.mod(np.arctan2(v[1], v[0]) - start, 2 * np.pi)
        return t <= width + tol or t >= 2 * np.pi - tol

    def to_json(self) -> dict:
        a = self.arc()
        return {
            "generators": self.generators.tolist(),
            "arc_deg": None if a is None else [np.degrees(a[0]), np.degrees(a[1])],
        }


def cone_mismatch_deg(a: Cone, b: Cone) -> float:
    """Largest angular disagreement (degrees) between the boundary rays of two cones."""
    arc_a, arc_b = a.arc(), b.arc()
    if arc_a is None or arc_b is None:
        return 0.0 if arc_a is None and arc_b is None else float("inf")
    full_a, full_b = arc_a[1] >= 2 * np.pi - 1e-12, arc_b[1] >= 2 * np.pi - 1e-12
    if full_a or full_b:
        if full_a and full_b:
            return 0.0
        return float(np.degrees(2 * np.pi - min(arc_a[1], arc_b[1])))

    def wrap(t):
        return abs((t + np.pi) % (2 * np.pi) - np.pi)

    d_start = wrap(arc_a[0] - arc_b[0])
    d_end = wrap(arc_a[0] + arc_a[1] - arc_b[0] - arc_b[1])
    return float(np.degrees(max(d_start, d_end)))


def normal_cone(P: Polytope, v) -> Cone:
    """Cone of outer normals of ``P`` at its vertex ``v``."""
    v = np.asarray(v, dtype=float)
    k, dist = P.nearest_vertex(v)
    if dist > 1e-9:
        raise ValueError(f"{v.tolist()} is not a vertex (distance {dist:.3g})")
    V = P.vertices
    if len(V) == 1:
        return Cone.full()
    if P.degenerate:
        d = V[k] - V[1 - k]
        d = d / np.linalg.norm(d)
        perp = np.array([-d[1], d[0]])
        return Cone(np.array([perp, d, -perp]))
    n = len(V)
    return Cone(np.array([P.normals[(k - 1) % n], P.normals[k]]))


def normal_cone_at_point(P: Polytope, p, tol: float = 1e-9) -> Cone:
    """Normal cone at any point of ``P``: vertex, edge interior, or interior."""
    p = np.asarray(p, dtype=float)
    k, dist = P.nearest_vertex(p)
    if dist <= tol:
        return normal_cone(P, P.vertices[k])
    if P.degenerate:
        if len(P.vertices) == 1:
            return Cone.zero()
        d = P.vertices[1] - P.vertices[0]
        perp = np.array([-d[1], d[0]])
        return Cone(np.array([perp, -perp]))
    slack = P.offsets - P.normals @ p
    on = np.flatnonzero(np.abs(slack) <= tol)
    if len(on):
        return Cone(P.normals[on[:1]])
    return Cone.zero()


# -- hausdorff -------------------------------------------------------------

def hausdorff_distance(A, B) -> float:
    """Symmetric Hausdorff distance between two finite point samples."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if len(A) == 0 or len(B) == 0:
        raise ValueError("Hausdorff distance needs nonempty samples")
    dab, _ = cKDTree(B).query(A)
    dba, _ = cKDTree(A).query(B)
    return float(max(dab.max(), dba.max()))


# -- raster topology -------------------------------------------------------

@dataclass
class Grid:
    """Cell-centred rectangular grid over ``box = (lo1, hi1, lo2, hi2, ...)``.

    Arrays on the grid are indexed ``[i1, i2, ...]`` with ``i1`` along ``x1``.
    """

    box: Tuple[float, ...]
    shape: Tuple[int, ...]

    def __post_init__(self):
        self.box = tuple(float(b) for b in self.box)
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.box) != 2 * len(self.shape):
            raise ValueError("box must hold a (lo, hi) pair per axis")
        for lo, hi in zip(self.box[::2], self.box[1::2]):
            if not lo < hi:
                raise ValueError(f"box needs lo < hi, got ({lo}, {hi})")
        if any(s < 2 for s in self.shape):
            raise ValueError("grid needs at least 2 cells per axis")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.box[::2])

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.box[1::2])

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.shape)

    @property
    def cell_area(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> List[np.ndarray]:
        return [lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.lo, self.shape, self.spacing)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def index_of(self, pts) -> Tuple[np.ndarray, np.ndarray]:
        """Integer cell indices of points and a mask of points inside the box."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        with np.errstate(invalid="ignore"):
            idx = np.floor((pts - self.lo) / self.spacing)
        inside = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        idx = np.where(inside[:, None], idx, 0).astype(int)
        return idx, inside

    def center_of(self, idx) -> np.ndarray:
        return self.lo + (np.asarray(idx, dtype=float) + 0.5) * self.spacing

    def to_json(self) -> dict:
        return {"box": list(self.box), "shape": list(self.shape)}


@dataclass
class ComponentMap:
    """Labels per cell: 0 marks the occupied (amoeba) set, ``k > 0`` a complement component."""

    grid: Grid
    labels: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.labels.max())

    def ids(self) -> List[int]:
        return list(range(1, self.n_components + 1))

    def cells(self, cid: int) -> np.ndarray:
        return np.argwhere(self.labels == cid)

    def touches_boundary(self, cid: int) -> bool:
        m = self.labels == cid
        return bool(m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any())

    def deepest_cell(self, cid: int) -> Tuple[np.ndarray, float]:
        """Cell of component ``cid`` farthest (Euclidean, in x units) from everything else."""
        m = self.labels == cid
        if not m.any():
            raise ValueError(f"component {cid} does not exist")
        if m.all():
            k = tuple(s // 2 for s in m.shape)
            return np.array(k), float("inf")
        dist = np.where(m, ndimage.distance_transform_edt(m, sampling=self.grid.spacing), -1.0)
        k = np.unravel_index(int(np.argmax(dist)), dist.shape)
        return np.array(k), float(dist[k])

    def to_json(self) -> dict:
        return {**self.grid.to_json(), "labels": self.labels.T[::-1].tolist(),
                "layout": "rows from high x2 to low x2, columns from low x1 to high x1"}


FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)


def flood_components(mask: np.ndarray, grid: Optional[Grid] = None) -> ComponentMap:
    """Label maximal 4-connected unoccupied regions ``1..K`` in row-major first-cell order."""
    mask = np.asarray(mask, dtype=bool)
    if grid is None:
        grid = Grid((0.0, float(mask.shape[0]), 0.0, float(mask.shape[1])), mask.shape)
    labels, _ = ndimage.label(~mask, structure=FOUR)
    return ComponentMap(grid, labels.astype(np.int32))


def dilate(mask: np.ndarray, cells: int = 1) -> np.ndarray:
    if cells <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=EIGHT, iterations=cells)


def _boundary_cells(labels: np.ndarray, cid: int) -> np.ndarray:
    m = labels == cid
    inner = ndimage.binary_erosion(m, structure=FOUR, border_value=1)
    return np.argwhere(m & ~inner)


def _even_subsample(arr: np.ndarray, n: int) -> np.ndarray:
    if len(arr) <= n:
        return arr
    idx = np.linspace(0, len(arr) - 1, n).round().astype(int)
    return arr[idx]


def recession_cone_estimate(C: ComponentMap, cid: int, R_probe: Optional[float] = None,
                            step_deg: float = 1.0, max_points: int = 600) -> Cone:
    """Directions ``v`` along which sampled cells of a component stay inside it.

    Probing stops at the grid edge; components that never reach the edge are
    treated as bounded and get the zero cone.  When everything else is
    bounded (no other cell reaches the edge) the estimate is the full plane:
    it is then the asymptotic cone of the complement of a bounded set, which
    agrees with the recession cone of its closure for a point obstacle and
    never arises for a convex component with a hole.
    """
    g = C.grid
    if R_probe is None:
        R_probe = 0.5 * float(np.linalg.norm(g.hi - g.lo))
    if not C.touches_boundary(cid):
        return Cone.zero()
    other = C.labels != cid
    if not (other[0].any() or other[-1].any() or other[:, 0].any() or other[:, -1].any()):
        return Cone.full()
    inside_cells = C.cells(cid)
    pts_idx = np.concatenate([
        _even_subsample(_boundary_cells(C.labels, cid), max_points),
        _even_subsample(inside_cells, max_points // 3),
    ])
    pts = g.center_of(pts_idx)
    h = float(np.min(g.spacing)) * 0.5
    ts = np.arange(h, R_probe + h, h)
    angles = np.radians(np.arange(0.0, 360.0, step_deg))
    ok = np.zeros(len(angles), dtype=bool)
    for a_i, a in enumerate(angles):
        v = np.array([np.cos(a), np.sin(a)])
        ray = pts[:, None, :] + ts[None, :, None] * v
        idx = np.floor((ray - g.lo) / g.spacing).astype(int)
        in_grid = np.all((idx >= 0) & (idx < np.array(g.shape)), axis=2)
        # once a ray leaves the grid it is not followed back in
        in_grid = np.cumprod(in_grid, axis=1).astype(bool)
        lab = C.labels[np.clip(idx[..., 0], 0, g.shape[0] - 1), np.clip(idx[..., 1], 0, g.shape[1] - 1)]
        ok[a_i] = not np.any(in_grid & (lab != cid))
    return _cone_from_direction_mask(angles, ok)


def _cone_from_direction_mask(angles: np.ndarray, ok: np.ndarray) -> Cone:
    if ok.all():
        return Cone.full()
    if not ok.any():
        return Cone.zero()
    # rotate so the sequence starts on a rejected direction, then take the longest run
    shift = int(np.argmin(ok))
    okr = np.roll(ok, -shift)
    angr = np.roll(angles, -shift)
    best, cur_start, best_run = (0, 0), None, 0
    for i, flag in enumerate(np.append(okr, False)):
        if flag and cur_start is None:
            cur_start = i
        elif not flag and cur_start is not None:
            if i - cur_start > best_run:
                best_run, best = i - cur_start, (cur_start, i - 1)
            cur_start = None
    a0, a1 = angr[best[0]], angr[best[1]]
    width = np.mod(a1 - a0, 2 * np.pi)
    rays = [a0, a1]
    if width > np.pi:
        rays.append(a0 + width / 2)
    return Cone(np.array([[np.cos(t), np.sin(t)] for t in rays]))


def is_convex_region(C: ComponentMap, cid: int, trials: int = 200, seed: int = 0) -> bool:
    """Random segment test for convexity of a component, with a one-cell collar."""
    cells = C.cells(cid)
    if len(cells) == 0:
        raise ValueError(f"component {cid} does not exist")
    if len(cells) == 1:
        return True
    collar = dilate(C.labels == cid, 1)
    rng = np.random.default_rng(seed)
    g = C.grid
    h = 0.5 * float(np.min(g.spacing))
    for _ in range(trials):
        i, j = rng.choice(len(cells), 2, replace=False)
        a, b = g.center_of(cells[i]), g.center_of(cells[j])
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / h)) + 1)
        seg = a + np.linspace(0, 1, n)[:, None] * (b - a)
        idx, inside = g.index_of(seg)
        if not collar[idx[inside, 0], idx[inside, 1]].all():
            return False
    return True


@dataclass
class Fan:
    """Finite union of cones; need not be a fan in the toric sense."""

    cones: List[Cone]

    def support_sample(self, box: Sequence[float], spacing: float = 0.01) -> np.ndarray:
        """Points of the union of cones (rays from the origin) inside ``box``."""
        lo = np.array(box[::2], dtype=float)
        hi = np.array(box[1::2], dtype=float)
        reach = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        ts = np.arange(0.0, reach + spacing, spacing)
        pts = [np.zeros((1, 2))]
        for cone in self.cones:
            a = cone.arc()
            if a is None:
                continue
            start, width = a
            n_ang = 1 if width == 0 else max(2, int(np.ceil(width * reach / spacing)))
            for t in np.linspace(start, start + width, n_ang):
                v = np.array([np.cos(t), np.sin(t)])
                pts.append(ts[:, None] * v)
        P = np.concatenate(pts)
        keep = np.all((P >= lo - 1e-12) & (P <= hi + 1e-12), axis=1)
        return P[keep]
