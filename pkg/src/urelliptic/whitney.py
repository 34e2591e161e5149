"""Whitney cubes of a grid domain and the Whitney regions attached to boundary cubes.

Cubes come from recursive dyadic splitting in index space.  A box ``I`` fully
inside Omega is admissible when ``dist(8I, E) >= 8 diam(I)``; the maximal
admissible boxes form the decomposition.  Distances are measured to the
cell centers of the discrete boundary of Omega (boundary-set cells, frame
cells and other components touching Omega).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DomainTooThin, EmptyRegion
from .geometry import Domain
from .lattice import DyadicCube, Lattice

DEFAULT_M = 100


@dataclass(frozen=True, eq=False)
class WhitneyCube:
    corner: np.ndarray  # lower cell index
    side_cells: int
    lo: np.ndarray  # geometric box
    hi: np.ndarray
    dist: float  # dist(I, E)

    @property
    def side(self) -> float:
        return float(self.hi[0] - self.lo[0])

    @property
    def diam(self) -> float:
        return self.side * math.sqrt(len(self.lo))

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    def slices(self):
        return tuple(slice(int(c), int(c) + self.side_cells) for c in self.corner)


@dataclass
class Whitney:
    """A Whitney decomposition plus a per-node owner map (-1 for uncovered nodes)."""

    domain: Domain
    cubes: list[WhitneyCube]
    owner: np.ndarray

    def __post_init__(self):
        d = self.domain.grid.dim
        self.lo = np.array([c.lo for c in self.cubes]).reshape(-1, d)
        self.hi = np.array([c.hi for c in self.cubes]).reshape(-1, d)
        self.side = self.hi[:, 0] - self.lo[:, 0]
        self.dist = np.array([c.dist for c in self.cubes])

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def __getitem__(self, i):
        return self.cubes[i]

    @property
    def coverage_threshold(self) -> float:
        g = self.domain.grid
        return 12 * math.sqrt(g.dim) * g.h


def _box_point_distance(lo, hi, pts):
    gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    return np.sqrt((gap**2).sum(axis=1))


def box_set_distance(lo, hi, tree: cKDTree, pts: np.ndarray) -> float:
    """Exact distance from an axis-aligned box to a point cloud."""
    c = (lo + hi) / 2
    half = np.linalg.norm(hi - lo) / 2
    d0, _ = tree.query(c)
    if d0 <= half:
        near = tree.query_ball_point(c, half + 1e-12)
    else:
        near = tree.query_ball_point(c, d0 + 1e-12)
    if not near:
        return float(max(d0 - half, 0.0))
    return float(_box_point_distance(lo, hi, pts[near]).min())


def _window_min(field: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """Minimum of ``field`` over the boxes [start, start + length) (inf outside the grid)."""
    d = field.ndim
    pad = length + 1
    big = np.pad(field, pad, constant_values=np.inf)
    filt = ndimage.minimum_filter(big, size=length, mode="constant", cval=np.inf)
    centre = starts + pad + length // 2
    return filt[tuple(centre.T)]


def whitney_decompose(domain: Domain) -> Whitney:
    """Maximal dyadic boxes inside Omega with dist(8I, dOmega) >= 8 diam(I).

    Processed one dyadic level at a time.  A min-filter of the node distance
    over 8I brackets the exact box distance within half a cell diagonal; only
    boxes inside that bracket get the exact point-cloud computation.
    """
    g = domain.grid
    d = g.dim
    h = g.h
    tree = domain.boundary_tree
    pts = tree.data
    delta = domain.dist_complement
    slack = h * math.sqrt(d) / 2
    if delta.max(initial=0.0) < 12 * math.sqrt(d) * h:
        raise DomainTooThin("no interior node is far enough from the boundary for a Whitney cube")
    sat = np.pad(domain.mask.astype(np.int64), [(1, 0)] * d)
    for k in range(d):
        sat = np.cumsum(sat, axis=k)
    shape = np.asarray(g.shape)
    offsets = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T

    def count(corners, side):
        tot = np.zeros(len(corners), np.int64)
        for bits in offsets:
            idx = np.minimum(corners + bits * side, shape)
            sign = (-1) ** int(d - bits.sum())
            tot += sign * sat[tuple(idx.T)]
        return tot

    K = int(math.ceil(math.log2(max(g.shape))))
    corners = np.zeros((1, d), np.int64)
    side = 2**K
    found = []
    while len(corners):
        corners = corners[np.all(corners < shape, axis=1)]
        n_in = count(corners, side)
        corners, n_in = corners[n_in > 0], n_in[n_in > 0]
        full = np.all(corners + side <= shape, axis=1) & (n_in == side**d)
        ok = np.zeros(len(corners), bool)
        if full.any():
            diam = side * h * math.sqrt(d)
            # cells whose centers lie in 8I
            lo_cell = corners[full] - int(math.ceil(3.5 * side - 0.5))
            length = int(math.floor(4.5 * side - 0.5)) - int(-math.ceil(3.5 * side - 0.5)) + 1
            m = _window_min(delta, lo_cell, length)
            sure = m - slack >= 8 * diam
            maybe = ~sure & (m >= 8 * diam)
            res = sure.copy()
            for k in np.nonzero(maybe)[0]:
                lo = np.asarray(g.lo) + corners[full][k] * h
                res[k] = box_set_distance(lo - 3.5 * side * h, lo + 4.5 * side * h, tree, pts) >= 8 * diam
            ok[np.nonzero(full)[0][res]] = True
        for c in corners[ok]:
            lo = np.asarray(g.lo) + c * h
            hi = lo + side * h
            found.append(WhitneyCube(c.copy(), side, lo, hi, box_set_distance(lo, hi, tree, pts)))
        if side == 1:
            break
        rest = corners[~ok]
        side //= 2
        corners = (rest[:, None, :] + offsets[None, :, :] * side).reshape(-1, d)
    found.sort(key=lambda c: (-c.side_cells, tuple(c.corner)))
    owner = -np.ones(g.shape, np.int64)
    for i, c in enumerate(found):
        owner[c.slices()] = i
    return Whitney(domain, found, owner)


# ---------------------------------------------------------------------------
# regions


@dataclass
class WhitneyRegion:
    cube: DyadicCube
    k0: float
    K0: float
    tau: float
    members: list[int]  # indices into the Whitney list
    components: list[list[int]]  # groups of member indices
    nodes: list[np.ndarray] = field(default_factory=list)  # flat node indices per component

    @property
    def n_components(self) -> int:
        return len(self.components)

    def union_nodes(self) -> np.ndarray:
        return np.unique(np.concatenate(self.nodes)) if self.nodes else np.zeros(0, np.int64)


def _enlarged_nodes(domain: Domain, whitney: "Whitney", ids, tau: float) -> np.ndarray:
    """Omega nodes whose centers lie in the open enlarged boxes (1+tau)I."""
    g = domain.grid
    ids = np.asarray(ids, np.int64)
    flat = []
    for s_cells in np.unique([whitney.cubes[i].side_cells for i in ids]):
        grp = [i for i in ids if whitney.cubes[i].side_cells == s_cells]
        grow = tau * s_cells / 2  # in cells
        lo = int(math.floor(-grow - 0.5)) + 1
        hi = int(math.ceil(s_cells + grow - 0.5)) - 1
        rng = np.arange(lo, hi + 1)
        rng = rng[(rng + 0.5 > -grow) & (rng + 0.5 < s_cells + grow)]
        off = np.stack(np.meshgrid(*([rng] * g.dim), indexing="ij"), axis=-1).reshape(-1, g.dim)
        corners = np.array([whitney.cubes[i].corner for i in grp])
        idx = (corners[:, None, :] + off[None, :, :]).reshape(-1, g.dim)
        idx = idx[np.all((idx >= 0) & (idx < np.asarray(g.shape)), axis=1)]
        flat.append(g.ravel(idx))
    if not flat:
        return np.zeros(0, np.int64)
    allf = np.unique(np.concatenate(flat))
    return allf[domain.mask.ravel()[allf]]


def _overlap_components(whitney: "Whitney", members: list[int], tau: float) -> list[list[int]]:
    ids = np.asarray(members, np.int64)
    lo, hi = whitney.lo[ids], whitney.hi[ids]
    centers = (lo + hi) / 2
    halfs = (1 + tau) * whitney.side[ids] / 2
    reach = 2 * halfs.max() * math.sqrt(centers.shape[1])
    pairs = cKDTree(centers).query_pairs(reach, output_type="ndarray")
    if len(pairs):
        gap = np.abs(centers[pairs[:, 0]] - centers[pairs[:, 1]])
        touch = np.all(gap < (halfs[pairs[:, 0]] + halfs[pairs[:, 1]])[:, None], axis=1)
        pairs = pairs[touch]
    n = len(ids)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    _, lab = connected_components(adj, directed=False)
    # order components by their smallest member index
    comps: dict[int, list[int]] = {}
    for a in np.argsort(ids, kind="stable"):
        comps.setdefault(int(lab[a]), []).append(int(ids[a]))
    return sorted(comps.values(), key=lambda c: c[0])


def whitney_region(lattice: Lattice, q: DyadicCube, whitney: Whitney, k0: float, K0: float, tau: float) -> WhitneyRegion:
    """W_Q and the components of the union of enlarged cubes (1+tau)I, I in W_Q."""
    if not (0 < k0 < 1 < K0):
        raise ValueError("need 0 < k0 < 1 < K0")
    if not 0 < tau < 0.5:
        raise ValueError("need 0 < tau < 1/2")
    pts = lattice.set.points[q.members]
    qtree = cKDTree(pts)
    ell = q.side
    lim = K0 * ell * (1 + 1e-12)
    size_ok = (whitney.side * (1 + 1e-12) >= k0 * ell) & (whitney.side <= lim)
    cand = np.nonzero(size_ok)[0]
    dc, _ = qtree.query((whitney.lo[cand] + whitney.hi[cand]) / 2)
    half = whitney.side[cand] * math.sqrt(pts.shape[1]) / 2
    sure = dc <= lim
    maybe = ~sure & (dc - half <= lim)
    members = list(cand[sure])
    for i in cand[maybe]:
        if box_set_distance(whitney.lo[i], whitney.hi[i], qtree, pts) <= lim:
            members.append(i)
    members = sorted(int(i) for i in members)
    if not members:
        raise EmptyRegion(f"no Whitney cube qualifies for cube {q.id}")
    comps = _overlap_components(whitney, members, tau)
    nodes = [_enlarged_nodes(whitney.domain, whitney, comp, tau) for comp in comps]
    return WhitneyRegion(q, k0, K0, tau, members, comps, nodes)


def augmented_component(domain: Domain, nodes: np.ndarray, ell: float, eps: float, M: int = DEFAULT_M,
                        rounds: int | None = None) -> np.ndarray:
    """Approximate the chained enlargement of a region component.

    Runs ``ceil(1/eps)`` rounds (by default) in which every node Z of the
    current set with eps^3 l <= delta(Z) <= eps^-3 l adds the Omega nodes of
    B(Z, (1 - eps^(2M)) delta(Z)/2).  The result contains the input.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    g = domain.grid
    rounds = int(math.ceil(1 / eps)) if rounds is None else int(rounds)
    shrink = 1 - eps ** (2 * M)
    lo_d, hi_d = eps**3 * ell, eps**-3 * ell
    dflat = domain.dist_complement.ravel()
    inside = domain.mask.ravel()
    current = np.zeros(g.size, bool)
    current[np.unique(nodes)] = True
    frontier = np.unique(nodes)
    for _ in range(rounds):
        dz = dflat[frontier]
        ok = (dz >= lo_d) & (dz <= hi_d)
        if not ok.any():
            break
        # Union of balls, bucketed by radius rounded down to whole cells:
        # one distance transform per bucket instead of one query per node.
        radius = shrink * dz[ok] / 2
        level = np.floor(radius / g.h).astype(int)
        seeds = frontier[ok]
        reach = np.zeros(g.size, bool)
        for lv in np.unique(level):
            if lv <= 0:
                reach[seeds[level == lv]] = True
                continue
            seed = np.ones(g.shape, bool)
            seed.flat[seeds[level == lv]] = False
            dist = ndimage.distance_transform_edt(seed)
            reach |= (dist < lv).ravel()
        added = np.flatnonzero(reach & inside & ~current)
        if len(added) == 0:
            break
        current[added] = True
        frontier = added
    return np.flatnonzero(current)


def regions_to_csv(path, regions: list[WhitneyRegion]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cube_id", "component_id", "node_count"])
        for reg in regions:
            for k, nodes in enumerate(reg.nodes):
                w.writerow([reg.cube.id, k, len(nodes)])
