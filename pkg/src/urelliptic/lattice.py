"""Dyadic cube lattices on rasterized boundary sets.

Cubes are intersections of the boundary cell cloud with an ambient dyadic
grid in index space.  The root box is anchored at the smallest occupied cell
index and has a power-of-two side (in cells), so generation ``j`` boxes have
side ``2**(K - j)`` cells and measures of flat fixtures are exact sums.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import DepthExceedsResolution
from .geometry import BoundarySet

_TREE_MAGIC = b"URDL"


@dataclass(eq=False)
class DyadicCube:
    id: int
    generation: int
    corner: np.ndarray  # lower index corner of the box (grid cells)
    side_cells: int
    members: np.ndarray  # positions into the set's cell arrays
    measure: float
    center: np.ndarray
    side: float  # l(Q) in length units
    parent: int | None = None
    children: list = field(default_factory=list)
    ball_radius: float = 0.0
    ball_flagged: bool = False

    def __repr__(self):
        return f"DyadicCube(id={self.id}, j={self.generation}, n={len(self.members)}, mu={self.measure:.4g})"

    @property
    def ball(self) -> tuple[np.ndarray, float]:
        return self.center, self.ball_radius


class Lattice:
    """Dyadic cubes of generations 0..depth on a boundary set."""

    def __init__(self, bset: BoundarySet, cubes: list[DyadicCube], generations: list[list[int]], c1: float):
        self.set = bset
        self.cubes = cubes
        self.generations = generations
        self.c1 = c1

    @property
    def depth(self) -> int:
        return len(self.generations) - 1

    @property
    def root(self) -> DyadicCube:
        return self.cubes[self.generations[0][0]]

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def __getitem__(self, i) -> DyadicCube:
        return self.cubes[i]

    def generation(self, j: int) -> list[DyadicCube]:
        return [self.cubes[i] for i in self.generations[j]]

    @cached_property
    def membership(self) -> np.ndarray:
        """``membership[j, k]`` = id of the generation-j cube containing set cell k."""
        m = np.empty((self.depth + 1, len(self.set)), np.int64)
        for j, ids in enumerate(self.generations):
            for i in ids:
                m[j, self.cubes[i].members] = i
        return m

    def ancestor(self, q: DyadicCube | int, j: int) -> DyadicCube:
        q = self.cubes[q] if isinstance(q, (int, np.integer)) else q
        if not 0 <= j <= q.generation:
            raise ValueError(f"no ancestor of generation {j} for a generation-{q.generation} cube")
        while q.generation > j:
            q = self.cubes[q.parent]
        return q

    def is_descendant(self, q: DyadicCube, r: DyadicCube) -> bool:
        """True if q is contained in r (q == r included)."""
        return q.generation >= r.generation and self.ancestor(q, r.generation).id == r.id

    def descendants(self, r: DyadicCube, include_self: bool = True) -> list[DyadicCube]:
        out = [r] if include_self else []
        stack = list(r.children)
        while stack:
            c = self.cubes[stack.pop()]
            out.append(c)
            stack.extend(c.children)
        return sorted(out, key=lambda c: c.id)

    def measure_of(self, positions) -> float:
        return float(self.set.weights[np.asarray(positions, dtype=np.int64)].sum())

    def to_csv(self, path) -> None:
        names = ["zx", "zy", "zz"][: self.set.ambient_dim]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "j", *names, "side", "mu", "parent"])
            for q in self.cubes:
                w.writerow([q.id, q.generation, *[repr(float(v)) for v in q.center], repr(q.side),
                            repr(q.measure), -1 if q.parent is None else q.parent])

    def to_binary(self, path) -> None:
        """Compact tree: per cube (id, j, parent, side_cells, corner..., mu, center...)."""
        d = self.set.ambient_dim
        with open(path, "wb") as fh:
            fh.write(_TREE_MAGIC)
            fh.write(struct.pack("<II", d, len(self.cubes)))
            for q in self.cubes:
                fh.write(struct.pack("<qqqq", q.id, q.generation, -1 if q.parent is None else q.parent, q.side_cells))
                fh.write(struct.pack(f"<{d}q", *[int(v) for v in q.corner]))
                fh.write(struct.pack(f"<d{d}d", q.measure, *q.center))


def _central_member(pts, members, mp, lo, hi, side):
    """Member farthest from the rest of the set (capped at side/2), ties broken
    by closeness to the box center and then by member order."""
    pad = side / 2
    sel = np.nonzero(np.all((pts >= lo - pad) & (pts <= hi + pad), axis=1))[0]
    others = np.setdiff1d(sel, members, assume_unique=True)
    if len(others):
        room, _ = cKDTree(pts[others]).query(mp, distance_upper_bound=pad)
        room = np.minimum(room, pad)
    else:
        room = np.full(len(mp), pad)
    off = np.linalg.norm(mp - (lo + hi) / 2, axis=1)
    cand = np.nonzero(room >= room.max() - 1e-12)[0]
    return int(cand[np.argmin(off[cand])])


def build_lattice(bset: BoundarySet, depth: int, c1: float = 1 / 8) -> Lattice:
    """Build generations 0..depth of the dyadic lattice on ``bset``."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if len(bset) == 0:
        raise ValueError("cannot build a lattice on an empty set")
    if 2.0**-depth * bset.diam < 4 * bset.h:
        raise DepthExceedsResolution(
            f"2^-{depth} * diam = {2.0**-depth * bset.diam:.3g} is below 4h = {4 * bset.h:.3g}")
    idx = bset.index
    anchor = idx.min(axis=0)
    span = int((idx.max(axis=0) - anchor).max()) + 1
    K = max(int(math.ceil(math.log2(span))), depth)
    if 2 ** (K - depth) < 1:
        raise DepthExceedsResolution("finest cubes would be smaller than one cell")
    rel = idx - anchor
    pts = bset.points
    h = bset.h
    cubes: list[DyadicCube] = []
    generations: list[list[int]] = []
    prev_key_to_id: dict = {}
    for j in range(depth + 1):
        s = 2 ** (K - j)
        keys = rel // s
        uk, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uk) + 1))
        ids = []
        key_to_id = {}
        for g, key in enumerate(uk):
            members = np.sort(order[bounds[g]:bounds[g + 1]])
            corner = anchor + key * s
            lo = bset.grid.points(corner) - h / 2
            hi = lo + s * h
            mp = pts[members]
            best = _central_member(pts, members, mp, lo, hi, s * h)
            parent = None if j == 0 else prev_key_to_id[tuple(key // 2)]
            q = DyadicCube(
                id=len(cubes), generation=j, corner=corner, side_cells=s, members=members,
                measure=float(bset.weights[members].sum()), center=mp[best].copy(), side=s * h, parent=parent,
            )
            if parent is not None:
                cubes[parent].children.append(q.id)
            key_to_id[tuple(key)] = q.id
            ids.append(q.id)
            cubes.append(q)
        generations.append(ids)
        prev_key_to_id = key_to_id
    lat = Lattice(bset, cubes, generations, c1)
    _fit_balls(lat)
    return lat


def _fit_balls(lat: Lattice) -> None:
    """Set B_Q = B(z_Q, c1 l(Q)), shrinking it when it would reach other cubes."""
    tree = lat.set.tree
    memb = lat.membership
    for j, ids in enumerate(lat.generations):
        for i in ids:
            q = lat.cubes[i]
            r = lat.c1 * q.side
            near = np.asarray(tree.query_ball_point(q.center, r), dtype=np.int64)
            leak = near[memb[j, near] != i]
            if len(leak):
                dmin = np.linalg.norm(lat.set.points[leak] - q.center, axis=1).min()
                q.ball_radius = float(dmin) * (1 - 1e-9)
                q.ball_flagged = True
            else:
                q.ball_radius = r


def _nearby(lat: Lattice, q: DyadicCube, pad: float):
    lo = lat.set.grid.points(q.corner) - lat.set.h / 2 - pad
    hi = lo + q.side + 2 * pad
    p = lat.set.points
    sel = np.nonzero(np.all((p >= lo) & (p <= hi), axis=1))[0]
    inside = np.isin(sel, q.members, assume_unique=True)
    return sel[inside], sel[~inside]


def small_boundary_mass(lat: Lattice, q: DyadicCube, tau: float) -> float:
    """Mass of the inner and outer tau l(Q)-collars of Q (center-to-center distances)."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    w = tau * q.side
    inner, outer = _nearby(lat, q, w + lat.set.h)
    if len(outer) == 0:
        return 0.0
    p = lat.set.points
    t_out = cKDTree(p[outer])
    t_in = cKDTree(p[inner])
    d_in, _ = t_out.query(p[inner], distance_upper_bound=w * (1 + 1e-12))
    d_out, _ = t_in.query(p[outer], distance_upper_bound=w * (1 + 1e-12))
    wt = lat.set.weights
    return float(wt[inner[np.isfinite(d_in)]].sum() + wt[outer[np.isfinite(d_out)]].sum())


def dilate(lat: Lattice, q: DyadicCube, lam: float) -> np.ndarray:
    """Positions of set cells within (lam - 1) l(Q) of Q; lam = 1 gives Q."""
    if lam < 1:
        raise ValueError("dilation factor must be >= 1")
    if lam == 1:
        return q.members.copy()
    reach = (lam - 1) * q.side
    inner, outer = _nearby(lat, q, reach + lat.set.h)
    if len(outer) == 0:
        return q.members.copy()
    d, _ = cKDTree(lat.set.points[inner]).query(lat.set.points[outer], distance_upper_bound=reach * (1 + 1e-12))
    return np.sort(np.concatenate([q.members, outer[np.isfinite(d)]]))
