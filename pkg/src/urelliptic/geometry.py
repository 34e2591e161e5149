"""Boundary sets, domains, corkscrew points and Harnack chains.

A :class:`BoundarySet` is a rasterized AD-regular set: a sparse list of grid
cells, each carrying the surface measure of the generating set inside that
cell.  A :class:`Domain` is the dense companion: the open set on the grid,
its distance to the boundary set, and the component labels.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import ConvexHull, cKDTree

from .errors import (
    EmptySet,
    NoCorkscrew,
    PointOutsideDomain,
    ResolutionTooCoarse,
    UnknownKind,
)
from .grid import Grid

log = logging.getLogger(__name__)

KINDS = ("hyperplane", "lipschitz_graph", "parallel_planes", "four_corner_cantor", "sphere")
_SET_MAGIC = b"URBS"


@dataclass(frozen=True, eq=False)
class BoundarySet:
    grid: Grid
    index: np.ndarray  # (m, d) integer cell indices
    weights: np.ndarray  # (m,) surface measure per cell
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    feature: float = 0.0  # smallest scale at which the set is resolved as n-dimensional

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=np.int64).reshape(-1, self.grid.dim)
        w = np.asarray(self.weights, dtype=float).ravel()
        if len(idx) != len(w):
            raise ValueError("index/weight length mismatch")
        # canonical order: lexicographic by flat index, duplicates merged
        flat = np.ravel_multi_index(tuple(idx.T), self.grid.shape) if len(idx) else np.zeros(0, int)
        uniq, inv = np.unique(flat, return_inverse=True)
        merged = np.bincount(inv, weights=w, minlength=len(uniq)) if len(w) else w
        keep = merged > 0
        object.__setattr__(self, "index", np.stack(np.unravel_index(uniq[keep], self.grid.shape), axis=-1)
                           if keep.any() else np.zeros((0, self.grid.dim), np.int64))
        object.__setattr__(self, "weights", merged[keep])
        object.__setattr__(self, "params", dict(self.params))

    @property
    def ambient_dim(self) -> int:
        return self.grid.dim

    @property
    def n(self) -> int:
        """Dimension of the set (ambient dimension minus one)."""
        return self.grid.dim - 1

    @property
    def h(self) -> float:
        return self.grid.h

    def __len__(self):
        return len(self.weights)

    @cached_property
    def points(self) -> np.ndarray:
        return self.grid.points(self.index)

    @cached_property
    def flat(self) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.index.T), self.grid.shape)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @property
    def total_measure(self) -> float:
        return float(self.weights.sum())

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.points(self.index.min(axis=0)) - self.h / 2, self.grid.points(self.index.max(axis=0)) + self.h / 2

    @cached_property
    def diam(self) -> float:
        p = self.points
        if len(p) < 2:
            return 0.0
        try:
            hull = p[ConvexHull(p).vertices]
        except Exception:  # degenerate (collinear / coplanar) clouds
            lo, hi = p.min(axis=0), p.max(axis=0)
            return float(np.linalg.norm(hi - lo))
        d = np.linalg.norm(hull[:, None, :] - hull[None, :, :], axis=-1)
        return float(d.max())

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.shape, dtype=bool)
        m[tuple(self.index.T)] = True
        return m

    def measure_within(self, x, r) -> float:
        ids = self.tree.query_ball_point(np.asarray(x, float), r)
        return float(self.weights[ids].sum())

    def subset(self, keep: np.ndarray, kind: str | None = None) -> "BoundarySet":
        return BoundarySet(self.grid, self.index[keep], self.weights[keep], kind or self.kind, self.params, self.feature)

    def union(self, other: "BoundarySet", kind: str | None = None) -> "BoundarySet":
        """Union of cell lists; overlapping cells keep the larger weight."""
        if other.grid != self.grid:
            raise ValueError("sets live on different grids")
        both = np.concatenate([self.flat, other.flat])
        w = np.concatenate([self.weights, other.weights])
        order = np.lexsort((-w, both))
        both, w = both[order], w[order]
        first = np.ones(len(both), bool)
        first[1:] = both[1:] != both[:-1]
        idx = np.stack(np.unravel_index(both[first], self.grid.shape), axis=-1)
        return BoundarySet(self.grid, idx, w[first], kind or self.kind, self.params, self.feature)


# ---------------------------------------------------------------------------
# generators


def _check_resolution(h, feature, what):
    if h > feature / 8:
        raise ResolutionTooCoarse(f"h={h:g} exceeds {what}/8 = {feature / 8:g}")


def _flat_axis(h, half_width):
    n = int(round(2 * half_width / h))
    return -n * h / 2, n


def _normal_axis(h, below, above, plane_offsets=(0.0,)):
    """Axis with cell centers exactly on every ``plane_offsets`` value."""
    base = min(plane_offsets)
    rows_below = int(round(below / h))
    rows_above = int(round((max(plane_offsets) - base + above) / h))
    lo = base - (rows_below + 0.5) * h
    return lo, rows_below + rows_above + 1, rows_below


def _rasterize_samples(grid: Grid, pts: np.ndarray, w: np.ndarray):
    inside = np.all((pts >= np.asarray(grid.lo)) & (pts < np.asarray(grid.hi)), axis=1)
    idx = grid.indices_of(pts[inside])
    return idx, w[inside]


def _tent(t, slope, period):
    s = np.mod(t, period)
    return slope * (period / 2 - np.abs(s - period / 2))


def generate_boundary(kind: str, params: dict | None, h: float) -> BoundarySet:
    """Rasterize a test set of the given kind at resolution ``h``.

    Common params: ``dim`` (2 or 3), ``box`` (half-width of the grid along the
    flat directions), ``above`` / ``below`` (grid extent on either side of the
    set), ``extent`` (half-length of flat pieces; defaults to ``box``).
    """
    p = dict(params or {})
    if h <= 0:
        raise ValueError("h must be positive")
    if kind not in KINDS:
        raise UnknownKind(kind)
    d = int(p.get("dim", 2))
    if d not in (2, 3):
        raise ValueError("ambient dimension must be 2 or 3")
    n = d - 1

    if kind in ("hyperplane", "parallel_planes", "lipschitz_graph"):
        box = float(p.get("box", 1.0))
        extent = float(p.get("extent", box))
        above = float(p.get("above", box))
        below = float(p.get("below", box))
        t_lo, t_n = _flat_axis(h, box)

    if kind == "hyperplane":
        _check_resolution(h, 2 * min(extent, box), "plane extent")
        lo_d, n_d, row = _normal_axis(h, below, above)
        grid = Grid((t_lo,) * n + (lo_d,), h, (t_n,) * n + (n_d,))
        tc = grid.axis(0)
        # fraction of each flat cell inside [-extent, extent]
        frac = np.clip((np.minimum(tc + h / 2, extent) - np.maximum(tc - h / 2, -extent)) / h, 0, 1)
        cols = np.nonzero(frac > 0)[0]
        mesh = np.meshgrid(*([cols] * n), indexing="ij")
        idx = np.stack([m.ravel() for m in mesh] + [np.full(mesh[0].size, row)], axis=-1)
        w = np.prod([frac[m.ravel()] for m in mesh], axis=0) * h**n
        return BoundarySet(grid, idx, w, kind, p, feature=0.0)

    if kind == "parallel_planes":
        s = float(p.get("separation", 0.1))
        if s <= 0:
            raise ValueError("plane separation must be positive")
        _check_resolution(h, s, "plane separation")
        m = int(round(s / h))
        lo_d, n_d, row = _normal_axis(h, below, above, (-m * h / 2, m * h / 2))
        grid = Grid((t_lo,) * n + (lo_d,), h, (t_n,) * n + (n_d,))
        tc = grid.axis(0)
        frac = np.clip((np.minimum(tc + h / 2, extent) - np.maximum(tc - h / 2, -extent)) / h, 0, 1)
        cols = np.nonzero(frac > 0)[0]
        mesh = np.meshgrid(*([cols] * n), indexing="ij")
        base = np.stack([mm.ravel() for mm in mesh], axis=-1)
        wb = np.prod([frac[mm.ravel()] for mm in mesh], axis=0) * h**n
        idx = np.concatenate([np.column_stack([base, np.full(len(base), r)]) for r in (row, row + m)])
        return BoundarySet(grid, idx, np.concatenate([wb, wb]), kind, p, feature=0.0)

    if kind == "lipschitz_graph":
        slope = float(p.get("slope", 0.3))
        period = float(p.get("period", 0.5))
        if slope < 0:
            raise ValueError("graph slope must be >= 0")
        _check_resolution(h, period / 2, "graph half-period")
        amp = slope * period / 2
        lo_d, n_d, row = _normal_axis(h, below, above + amp)
        grid = Grid((t_lo,) * n + (lo_d,), h, (t_n,) * n + (n_d,))
        dt = h / 16
        nt = int(round(2 * extent / dt))
        t = -extent + (np.arange(nt) + 0.5) * dt
        if n == 1:
            pts = np.column_stack([t, _tent(t, slope, period)])
            w = np.full(nt, dt * math.hypot(1.0, slope))
        else:
            tt1, tt2 = np.meshgrid(t, t, indexing="ij")
            pts = np.column_stack([tt1.ravel(), tt2.ravel(), _tent(tt1.ravel(), slope, period)])
            w = np.full(pts.shape[0], dt * dt * math.hypot(1.0, slope))
        idx, w = _rasterize_samples(grid, pts, w)
        return BoundarySet(grid, idx, w, kind, p, feature=0.0)

    if kind == "four_corner_cantor":
        depth = int(p.get("depth", 3))
        side = float(p.get("side", 1.0))
        margin = float(p.get("margin", 0.25 * side))
        if depth < 1:
            raise ValueError("cantor depth must be >= 1")
        sq = side * 4.0**-depth
        _check_resolution(h, sq, "cantor square side")
        cells_per_side = int(round(sq / h))
        if not math.isclose(cells_per_side * h, sq, rel_tol=1e-9):
            raise ResolutionTooCoarse("cantor squares must be a whole number of cells")
        nm = int(round(margin / h))
        total_cells = int(round(side / h)) + 2 * nm
        grid = Grid((-nm * h,) * d, h, (total_cells,) * d)
        corners = np.zeros((1, d))
        s = side
        for _ in range(depth):
            offs = np.array(np.meshgrid(*([[0.0, 0.75 * s]] * d), indexing="ij")).reshape(d, -1).T
            corners = (corners[:, None, :] + offs[None, :, :]).reshape(-1, d)
            s /= 4
        start = np.round(corners / h).astype(np.int64) + nm
        local = np.stack(np.meshgrid(*([np.arange(cells_per_side)] * d), indexing="ij"), axis=-1).reshape(-1, d)
        idx = (start[:, None, :] + local[None, :, :]).reshape(-1, d)
        w = np.full(len(idx), 1.0 / len(idx))  # normalized: total mass 1
        return BoundarySet(grid, idx, w, kind, p, feature=sq)

    # sphere
    rho = float(p.get("radius", 0.5))
    margin = float(p.get("margin", 0.25 * rho))
    _check_resolution(h, rho, "sphere radius")
    half = rho + margin
    ncell = int(round(2 * half / h))
    grid = Grid((-ncell * h / 2,) * d, h, (ncell,) * d)
    if d == 2:
        dphi = h / (16 * rho)
        nphi = int(math.ceil(2 * math.pi / dphi))
        phi = (np.arange(nphi) + 0.5) * (2 * math.pi / nphi)
        pts = rho * np.column_stack([np.cos(phi), np.sin(phi)])
        w = np.full(nphi, 2 * math.pi * rho / nphi)
    else:
        nth = int(math.ceil(math.pi * rho / (h / 8)))
        th = (np.arange(nth) + 0.5) * (math.pi / nth)
        pts_l, w_l = [], []
        for t in th:
            nph = max(8, int(math.ceil(2 * math.pi * rho * math.sin(t) / (h / 8))))
            ph = (np.arange(nph) + 0.5) * (2 * math.pi / nph)
            st = math.sin(t)
            pts_l.append(rho * np.column_stack([st * np.cos(ph), st * np.sin(ph), np.full(nph, math.cos(t))]))
            # exact area of the latitude band split evenly
            band = 2 * math.pi * rho**2 * (math.cos(t - math.pi / (2 * nth)) - math.cos(t + math.pi / (2 * nth)))
            w_l.append(np.full(nph, band / nph))
        pts, w = np.concatenate(pts_l), np.concatenate(w_l)
    idx, w = _rasterize_samples(grid, pts, w)
    return BoundarySet(grid, idx, w, kind, p, feature=0.0)


def analytic_measure(kind: str, params: dict | None) -> float:
    """Closed-form H^n measure of a generator's set (normalized Cantor: 1)."""
    p = dict(params or {})
    d = int(p.get("dim", 2))
    n = d - 1
    box = float(p.get("box", 1.0))
    extent = float(p.get("extent", box))
    if kind == "hyperplane":
        return (2 * extent) ** n
    if kind == "parallel_planes":
        return 2 * (2 * extent) ** n
    if kind == "lipschitz_graph":
        return (2 * extent) ** n * math.hypot(1.0, float(p.get("slope", 0.3)))
    if kind == "four_corner_cantor":
        return 1.0
    if kind == "sphere":
        rho = float(p.get("radius", 0.5))
        return 2 * math.pi * rho if d == 2 else 4 * math.pi * rho**2
    raise UnknownKind(kind)


def face_crossing(bset: BoundarySet, inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """Fraction t of the segment inner -> outer at which the generating surface is met.

    Only spheres have a closed-form surface here; every other kind returns 1
    (the boundary sits at the boundary-cell center).  Values are clipped to
    [0.05, 2] to keep the discrete operator well conditioned.
    """
    t = np.ones(len(inner))
    if bset.kind != "sphere" or len(inner) == 0:
        return t
    rho = float(bset.params.get("radius", 0.5))
    p = np.asarray(inner, float)
    v = np.asarray(outer, float) - p
    a = (v * v).sum(axis=1)
    b = 2 * (p * v).sum(axis=1)
    c = (p * p).sum(axis=1) - rho**2
    disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
    roots = np.stack([(-b - disc) / (2 * a), (-b + disc) / (2 * a)], axis=1)
    roots = np.where(roots > 0, roots, np.inf)
    t = roots.min(axis=1)
    return np.clip(np.where(np.isfinite(t), t, 1.0), 0.05, 2.0)


# ---------------------------------------------------------------------------
# serialization


def write_set_binary(path, s: BoundarySet) -> None:
    g = s.grid
    with open(path, "wb") as fh:
        fh.write(_SET_MAGIC)
        fh.write(struct.pack("<I", g.dim))
        fh.write(struct.pack(f"<{g.dim}Q", *g.shape))
        fh.write(struct.pack("<d", g.h))
        fh.write(struct.pack(f"<{g.dim}d", *g.lo))
        fh.write(struct.pack("<Q", len(s)))
        fh.write(np.ascontiguousarray(s.flat, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(s.weights, dtype="<f8").tobytes())


def read_set_binary(path) -> BoundarySet:
    data = Path(path).read_bytes()
    if data[:4] != _SET_MAGIC:
        raise ValueError(f"{path}: not a boundary-set file")
    off = 4
    (dim,) = struct.unpack_from("<I", data, off)
    off += 4
    shape = struct.unpack_from(f"<{dim}Q", data, off)
    off += 8 * dim
    (h,) = struct.unpack_from("<d", data, off)
    off += 8
    lo = struct.unpack_from(f"<{dim}d", data, off)
    off += 8 * dim
    (m,) = struct.unpack_from("<Q", data, off)
    off += 8
    flat = np.frombuffer(data, "<i8", count=m, offset=off)
    off += 8 * m
    w = np.frombuffer(data, "<f8", count=m, offset=off)
    grid = Grid(lo, h, shape)
    idx = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    return BoundarySet(grid, idx, w.copy())


def write_set_csv(path, s: BoundarySet) -> None:
    import csv

    names = ["x", "y", "z"][: s.ambient_dim]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cell_id", *names, "weight"])
        for cid, pt, w in zip(s.flat, s.points, s.weights):
            wr.writerow([int(cid), *[repr(float(v)) for v in pt], repr(float(w))])


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class Domain:
    """The open set Omega on the grid.

    ``mask`` marks cells of Omega, ``dist`` is the distance from each cell
    center to the nearest boundary-set cell center, ``labels`` numbers the
    face-connected components of the free cells (grid minus set minus frame).
    """

    set: BoundarySet
    mask: np.ndarray
    dist: np.ndarray
    labels: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.set.grid

    @cached_property
    def frame(self) -> np.ndarray:
        f = np.zeros(self.grid.shape, bool)
        for k in range(self.grid.dim):
            sl = [slice(None)] * self.grid.dim
            sl[k] = 0
            f[tuple(sl)] = True
            sl[k] = -1
            f[tuple(sl)] = True
        return f & ~self.set.mask()

    @cached_property
    def dist_complement(self) -> np.ndarray:
        """Distance from each Omega cell center to the nearest cell center outside Omega."""
        return ndimage.distance_transform_edt(self.mask) * self.grid.h

    @cached_property
    def boundary_index(self) -> np.ndarray:
        """Cells outside Omega that share a face with an Omega cell (the discrete boundary)."""
        m = self.mask
        touch = np.zeros_like(m)
        for k in range(m.ndim):
            touch |= np.roll(m, 1, axis=k) & self._no_wrap(k, 1)
            touch |= np.roll(m, -1, axis=k) & self._no_wrap(k, -1)
        return np.argwhere(touch & ~m)

    def _no_wrap(self, k, shift):
        ok = np.ones(self.mask.shape, bool)
        sl = [slice(None)] * self.mask.ndim
        sl[k] = 0 if shift == 1 else -1
        ok[tuple(sl)] = False
        return ok

    @cached_property
    def boundary_tree(self) -> cKDTree:
        return cKDTree(self.grid.points(self.boundary_index))

    def contains(self, point) -> bool:
        p = np.asarray(point, float)
        if np.any(p < np.asarray(self.grid.lo)) or np.any(p >= np.asarray(self.grid.hi)):
            return False
        return bool(self.mask[self.grid.index_of(p)])

    def restrict(self, keep: np.ndarray) -> "Domain":
        return Domain(self.set, self.mask & keep, self.dist, self.labels)


def make_domain(bset: BoundarySet, seeds=None) -> Domain:
    """Build Omega from a boundary set.

    With ``seeds=None`` Omega is every free cell; otherwise it is the union
    of the face-connected components containing the given seed points.
    """
    g = bset.grid
    free = ~bset.mask()
    for k in range(g.dim):
        sl = [slice(None)] * g.dim
        sl[k] = 0
        free[tuple(sl)] = False
        sl[k] = -1
        free[tuple(sl)] = False
    labels, _ = ndimage.label(free)
    if seeds is None:
        mask = free
    else:
        keep = set()
        for s in np.atleast_2d(np.asarray(seeds, float)):
            lab = labels[g.index_of(s)]
            if lab == 0:
                raise PointOutsideDomain(f"seed {tuple(s)} lies on the boundary or frame")
            keep.add(int(lab))
        mask = np.isin(labels, sorted(keep))
    dist = ndimage.distance_transform_edt(~bset.mask()) * g.h
    return Domain(bset, mask, dist, labels)


# ---------------------------------------------------------------------------
# measurements


def ad_regularity(bset: BoundarySet, sample_count: int, seed: int, r_min=None, r_max=None, interior=None):
    """Smallest C0 with C0^-1 r^n <= mu(B(x,r)) <= C0 r^n over sampled (x, r).

    Radii are log-uniform in ``[r_min, r_max]``; the defaults keep r above
    both 16 cells and the set's resolved feature scale, and below diam(E).
    ``interior`` optionally restricts centers to points at least that far
    from the ends of the set's bounding box along the flat directions.
    Returns ``(C0, ratios)`` with the per-sample ratios mu(B)/r^n.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if len(bset) == 0:
        raise EmptySet("boundary set is empty")
    rng = np.random.default_rng(seed)
    lo = max(16 * bset.h, bset.feature) if r_min is None else float(r_min)
    hi = bset.diam if r_max is None else float(r_max)
    hi = max(hi, lo)
    pts = bset.points
    candidates = np.arange(len(pts))
    if interior is not None:
        blo, bhi = pts.min(axis=0), pts.max(axis=0)
        ok = np.ones(len(pts), bool)
        for k in range(bset.n):
            ok &= (pts[:, k] >= blo[k] + interior) & (pts[:, k] <= bhi[k] - interior)
        candidates = candidates[ok]
        if len(candidates) == 0:
            raise EmptySet("no interior sample points")
    xi = candidates[rng.integers(0, len(candidates), sample_count)]
    r = np.exp(rng.uniform(math.log(lo), math.log(hi), sample_count))
    ratios = np.empty(sample_count)
    for k in range(sample_count):
        ratios[k] = bset.measure_within(pts[xi[k]], r[k]) / r[k] ** bset.n
    c0 = float(max(ratios.max(), 1.0 / ratios.min()))
    return c0, ratios


@dataclass(frozen=True)
class Corkscrew:
    point: np.ndarray
    c: float
    index: tuple


def corkscrew_point(bset: BoundarySet, domain: Domain, x, r: float) -> Corkscrew:
    """Node x' maximizing the radius of a ball B(x', c r) inside Omega and B(x, r)."""
    g = bset.grid
    x = np.asarray(x, float)
    if bset.tree.query(x)[0] > g.h * (1 + 1e-9) * math.sqrt(g.dim):
        raise ValueError("x is not within one cell of the boundary set")
    if r <= 0:
        raise ValueError("r must be positive")
    lo = np.maximum(g.indices_of(x - r)[0], 0)
    hi = np.minimum(g.indices_of(x + r)[0] + 1, np.asarray(g.shape))
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub_axes = [g.axis(k)[sl[k]] for k in range(g.dim)]
    cc = np.meshgrid(*sub_axes, indexing="ij")
    dx = np.sqrt(sum((c - xk) ** 2 for c, xk in zip(cc, x)))
    room = np.minimum(domain.dist_complement[sl], r - dx)
    room = np.where(domain.mask[sl] & (dx <= r), room, -np.inf)
    flat = int(np.argmax(room))  # first maximum in C order = lexicographic tie-break
    best = room.flat[flat]
    c = best / r if np.isfinite(best) else 0.0
    if c < 2 * g.h / r:
        raise NoCorkscrew(f"best achievable c={c:.3g} below resolution limit {2 * g.h / r:.3g}")
    local = np.unravel_index(flat, room.shape)
    index = tuple(int(a + b) for a, b in zip(lo, local))
    return Corkscrew(g.points(np.array(index)), float(c), index)


@dataclass(frozen=True)
class HarnackChain:
    centers: np.ndarray
    radii: np.ndarray
    x: np.ndarray
    y: np.ndarray
    constant: float

    def __len__(self):
        return len(self.radii)

    def consecutive_intersect(self) -> bool:
        gaps = np.linalg.norm(np.diff(self.centers, axis=0), axis=1)
        return bool(np.all(gaps < self.radii[:-1] + self.radii[1:]))


def _grid_graph(mask: np.ndarray, weight: np.ndarray, h: float):
    ids = -np.ones(mask.shape, np.int64)
    ids[mask] = np.arange(int(mask.sum()))
    rows, cols, vals = [], [], []
    for k in range(mask.ndim):
        a = [slice(None)] * mask.ndim
        b = [slice(None)] * mask.ndim
        a[k] = slice(0, -1)
        b[k] = slice(1, None)
        both = mask[tuple(a)] & mask[tuple(b)]
        ia, ib = ids[tuple(a)][both], ids[tuple(b)][both]
        wv = 0.5 * (weight[tuple(a)][both] + weight[tuple(b)][both]) * h
        rows += [ia, ib]
        cols += [ib, ia]
        vals += [wv, wv]
    n = int(mask.sum())
    graph = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return ids, graph


def harnack_chain(domain: Domain, x, y, max_len: int) -> HarnackChain | None:
    """Greedy chain of balls B(z, d(z)/2) along a quasi-hyperbolic geodesic.

    Returns ``None`` when no chain with at most ``max_len`` balls is found
    (which does not prove that none exists).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    g = domain.grid
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    for p in (x, y):
        if not domain.contains(p):
            raise PointOutsideDomain(f"{tuple(p)} is not in the domain")
    room = domain.dist_complement
    ix, iy = g.index_of(x), g.index_of(y)
    if ix == iy or np.linalg.norm(x - y) < room[ix] / 2:
        return HarnackChain(x[None, :], np.array([room[ix] / 2]), x, y, 2.0)
    inv = np.where(domain.mask, 1.0 / np.maximum(room, g.h), 0.0)
    ids, graph = _grid_graph(domain.mask, inv, g.h)
    src, dst = ids[ix], ids[iy]
    dist, pred = dijkstra(graph, indices=src, return_predecessors=True)
    if not np.isfinite(dist[dst]):
        log.info("harnack_chain: endpoints lie in different components")
        return None
    path = [dst]
    while path[-1] != src:
        path.append(pred[path[-1]])
    path = path[::-1]
    flat_of = np.flatnonzero(domain.mask.ravel())
    nodes = g.unravel(flat_of[np.asarray(path)])
    pts = g.points(nodes)
    pts[0], pts[-1] = x, y
    rad = room[tuple(nodes.T)] / 2
    centers, radii = [pts[0]], [rad[0]]
    cur = 0
    while np.linalg.norm(y - centers[-1]) >= radii[-1]:
        gap = np.linalg.norm(pts - centers[-1], axis=1)
        ok = np.nonzero(gap < radii[-1] + rad)[0]
        nxt = int(ok.max())
        if nxt <= cur:
            nxt = cur + 1
        cur = nxt
        centers.append(pts[cur])
        radii.append(rad[cur])
        if len(radii) > max_len:
            return None
    radii = np.asarray(radii)
    centers = np.asarray(centers)
    d_b = np.array([room[g.index_of(c)] for c in centers]) - radii
    ratio = np.maximum(2 * radii / d_b, d_b / (2 * radii))
    return HarnackChain(centers, radii, x, y, float(ratio.max()))
