"""Geometric cube classifiers and set-level rectifiability tests.

Plane searches run over a fixed family of unit normals (720 angles in the
plane, 1024 Fibonacci directions in space).  For each normal the best offset
is found exactly from the projections of the set points, so reported
infima are upper bounds whose only error is the angular resolution.

Balls attached to a cube use its nominal radius: ``kB_Q = B(z_Q, k c1 l(Q))``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyIntersection, EmptyRegion, SolutionMissing
from .geometry import BoundarySet, Domain, ad_regularity
from .grid import GridField
from .lattice import DyadicCube, Lattice
from .solver import CoefficientField, local_lipschitz
from .whitney import Whitney, augmented_component, whitney_region

DEFAULT_M_EFF = 4


# ---------------------------------------------------------------------------
# plane families


def normal_family(dim: int, count: int | None = None) -> np.ndarray:
    """Unit normals covering all plane orientations once (up to sign)."""
    if dim == 2:
        k = 720 if count is None else int(count)
        a = np.pi * np.arange(k) / k
        return np.column_stack([np.cos(a), np.sin(a)])
    if dim == 3:
        k = 1024 if count is None else int(count)
        i = np.arange(k) + 0.5
        z = i / k  # upper hemisphere
        phi = math.pi * (3 - math.sqrt(5)) * i
        s = np.sqrt(1 - z**2)
        return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    raise ValueError("ambient dimension must be 2 or 3")


def angular_resolution(normals: np.ndarray) -> float:
    """Largest angle from any unit direction to the family (estimated from nearest-neighbor gaps)."""
    both = np.vstack([normals, -normals])
    d, _ = cKDTree(both).query(both, k=2)
    return float(2 * math.asin(min(d[:, 1].max() / 2, 1.0)))


@dataclass
class PlaneFit:
    normal: np.ndarray
    offset: float
    deviation: float

    def __post_init__(self):
        self.normal = np.asarray(self.normal, float)
        nn = np.linalg.norm(self.normal)
        if abs(nn - 1) > 1e-9:
            raise ValueError("plane normal must be a unit vector")

    def distance(self, pts) -> np.ndarray:
        return np.abs(np.asarray(pts) @ self.normal - self.offset)


def _projections(pts: np.ndarray, normals: np.ndarray, chunk: int = 20000):
    """Per-normal min and max of the projections."""
    lo = np.full(len(normals), np.inf)
    hi = np.full(len(normals), -np.inf)
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk] @ normals.T
        lo = np.minimum(lo, p.min(axis=0))
        hi = np.maximum(hi, p.max(axis=0))
    return lo, hi


def best_plane(pts: np.ndarray, normals: np.ndarray) -> PlaneFit:
    lo, hi = _projections(pts, normals)
    k = int(np.argmin(hi - lo))
    return PlaneFit(normals[k], float((hi[k] + lo[k]) / 2), float((hi[k] - lo[k]) / 2))


def _ball_points(bset: BoundarySet, x, r) -> np.ndarray:
    idx = bset.tree.query_ball_point(np.asarray(x, float), r)
    return np.asarray(idx, np.int64)


def bbeta_infty(bset: BoundarySet, x, r: float, normals: np.ndarray | None = None):
    """r^-1 inf_P sup_{y in B(x,r) cap E} dist(y, P); returns ``(value, PlaneFit)``."""
    pos = _ball_points(bset, x, r)
    if len(pos) == 0:
        raise EmptyIntersection("B(x, r) does not meet the set")
    normals = normal_family(bset.ambient_dim) if normals is None else normals
    fit = best_plane(bset.points[pos], normals)
    return fit.deviation / r, fit


# ---------------------------------------------------------------------------
# WHSA and BATPP


def _plane_samples(normal, offset, center, radius, spacing, box):
    """Points of {y . normal = offset} in B(center, radius) cap box, on a square grid."""
    d = len(normal)
    foot = center + (offset - center @ normal) * normal
    h2 = radius**2 - (offset - center @ normal) ** 2
    if h2 < 0:
        return np.zeros((0, d))
    half = math.sqrt(h2)
    if d == 2:
        tang = [np.array([-normal[1], normal[0]])]
    else:
        a = np.eye(3)[np.argmin(np.abs(normal))]
        t1 = np.cross(normal, a)
        t1 /= np.linalg.norm(t1)
        tang = [t1, np.cross(normal, t1)]
    lo, hi = box
    if d == 2:
        # clip the chord parameter to the box before sampling
        a, b = -half, half
        for k in range(2):
            if abs(tang[0][k]) > 1e-15:
                t1 = (lo[k] - foot[k]) / tang[0][k]
                t2 = (hi[k] - foot[k]) / tang[0][k]
                a, b = max(a, min(t1, t2)), min(b, max(t1, t2))
            elif not lo[k] <= foot[k] <= hi[k]:
                return np.zeros((0, d))
        if a > b:
            return np.zeros((0, d))
        t = np.arange(math.ceil(a / spacing), math.floor(b / spacing) + 1) * spacing
        pts = foot + t[:, None] * tang[0]
        return pts[np.all((pts >= lo) & (pts <= hi), axis=1)]
    n = int(math.ceil(half / spacing))
    t = np.arange(-n, n + 1) * spacing
    mesh = np.meshgrid(*([t] * (d - 1)), indexing="ij")
    coef = np.stack([m.ravel() for m in mesh], axis=-1)
    coef = coef[np.linalg.norm(coef, axis=1) <= half]
    pts = foot + coef @ np.array(tang)
    return pts[np.all((pts >= lo) & (pts <= hi), axis=1)]


def _grid_box(bset: BoundarySet):
    return np.asarray(bset.grid.lo), np.asarray(bset.grid.hi)


def _near_set(bset: BoundarySet, pts: np.ndarray, tol: float) -> bool:
    if len(pts) == 0:
        return True
    # coarse passes first: most failing planes are rejected after a few queries
    for stride in (64, 8, 1):
        d, _ = bset.tree.query(pts[::stride], distance_upper_bound=tol * (1 + 1e-12))
        if not np.all(np.isfinite(d)):
            return False
    return True


@dataclass
class HalfSpaceWitness:
    passed: bool
    plane: PlaneFit | None
    side: int  # +1: the empty half-space is {y . n > offset}; -1: {y . n < offset}
    clipped: bool


def whsa_test(lat: Lattice, q: DyadicCube, eps: float, K0: float, normals: np.ndarray | None = None) -> HalfSpaceWitness:
    """Weak half-space approximation in B(z_Q, eps^-2 l(Q)).

    For every normal the two supporting planes of the set points in the big
    ball are candidates (one per side), so the open half-space beyond them
    misses the set.  A candidate passes when it lies within K0^(3/2) l(Q) of Q
    and every plane point in the ball is within eps l(Q) of the set (tested on
    samples of spacing max(eps l/2, h) with tolerance eps l + h sqrt(d)/2).
    The ball is clipped to the grid box when larger (flagged).
    """
    bset = lat.set
    ell = q.side
    R = ell / eps**2
    box = _grid_box(bset)
    clipped = bool(np.any(q.center - R < box[0]) or np.any(q.center + R > box[1]))
    pos = _ball_points(bset, q.center, R)
    pts = bset.points[pos]
    normals = normal_family(bset.ambient_dim) if normals is None else normals
    lo, hi = _projections(pts, normals)
    qlo, qhi = _projections(bset.points[q.members], normals)
    reach = K0**1.5 * ell
    spacing = max(eps * ell / 2, bset.h)
    tol = eps * ell + bset.h * math.sqrt(bset.ambient_dim) / 2
    cands = []
    for k in range(len(normals)):
        # side +1: plane at the top of the projections, Q lies below it
        cands.append((max(hi[k] - qhi[k], 0.0), hi[k] - lo[k], k, +1, hi[k]))
        cands.append((max(qlo[k] - lo[k], 0.0), hi[k] - lo[k], k, -1, lo[k]))
    cands.sort()
    for dist_q, _, k, side, c in cands:
        if dist_q > reach:
            break
        samp = _plane_samples(normals[k], c, q.center, R, spacing, box)
        if _near_set(bset, samp, tol):
            return HalfSpaceWitness(True, PlaneFit(normals[k], float(c), float(dist_q)), side, clipped)
    return HalfSpaceWitness(False, None, 0, clipped)


@dataclass
class PlanePairWitness:
    passed: bool
    normal: np.ndarray | None
    offsets: tuple | None
    coincident: bool
    clipped: bool


def _two_clusters(p: np.ndarray, w: float):
    """Centers of at most two windows of half-width w covering all projections, or None."""
    p = np.sort(p)
    first = p <= p[0] + 2 * w
    c1 = (p[0] + p[first][-1]) / 2
    rest = p[~first]
    if len(rest) == 0:
        return c1, c1
    if rest[-1] - rest[0] > 2 * w:
        return None
    return c1, (rest[0] + rest[-1]) / 2


def batpp_test(lat: Lattice, q: DyadicCube, eps: float, normals: np.ndarray | None = None) -> PlanePairWitness:
    """Bilateral approximation of E in B(z_Q, 10 l(Q)) by two parallel planes.

    Set points must lie within eps l(Q) of P1 cup P2 and plane points (in the
    ball, clipped to the grid box) within eps l(Q) of the set.
    Coincident planes are allowed.
    """
    bset = lat.set
    ell = q.side
    R = 10 * ell
    box = _grid_box(bset)
    clipped = bool(np.any(q.center - R < box[0]) or np.any(q.center + R > box[1]))
    pts = bset.points[_ball_points(bset, q.center, R)]
    normals = normal_family(bset.ambient_dim) if normals is None else normals
    w = eps * ell
    lo, hi = _projections(pts, normals)
    spacing = max(w / 2, bset.h)
    tol = w + bset.h * math.sqrt(bset.ambient_dim) / 2
    for k in np.argsort(hi - lo, kind="stable"):
        cl = _two_clusters(pts @ normals[k], w)
        if cl is None:
            continue
        ok = True
        for c in sorted(set(cl)):
            if not _near_set(bset, _plane_samples(normals[k], c, q.center, R, spacing, box), tol):
                ok = False
                break
        if ok:
            return PlanePairWitness(True, normals[k], (float(cl[0]), float(cl[1])), bool(cl[0] == cl[1]), clipped)
    return PlanePairWitness(False, None, None, False, clipped)


# ---------------------------------------------------------------------------
# level-set regions and WTS


@dataclass(frozen=True)
class WTSParams:
    A0: float = 40.0
    tau1: float = 0.0025
    p: float = 0.05
    t: float = 0.5
    tau: float = 0.1
    alpha: float = 0.05
    samples: int = 8

    def __post_init__(self):
        if not 0 < self.tau1 < 0.1:
            raise ValueError("tau1 must lie in (0, 1/10)")
        if self.A0 <= 20:
            raise ValueError("A0 must exceed 20")


def _cube_ball_mask(domain: Domain, lat: Lattice, q: DyadicCube, k: float) -> np.ndarray:
    return domain.grid.distance_from(q.center) < k * lat.c1 * q.side


@dataclass
class LevelSetRegions:
    cube: DyadicCube
    thresholds: tuple  # (tau1^(1/2), tau1) in units of l(Q)
    V: dict  # (i, lam) -> flat node indices of V_i^lam
    U: tuple  # (U_1, U_2) flat indices
    U_prime: tuple

    def mask(self, shape, which: str, i: int) -> np.ndarray:
        m = np.zeros(int(np.prod(shape)), bool)
        m[(self.U if which == "U" else self.U_prime)[i - 1]] = True
        return m.reshape(shape)


def _components_hitting(mask: np.ndarray, seed: np.ndarray) -> np.ndarray:
    lab, _ = ndimage.label(mask)
    keep = np.unique(lab[seed & mask])
    keep = keep[keep > 0]
    return np.isin(lab, keep) & mask


def level_set_regions(lat: Lattice, q: DyadicCube, u: GridField, u_star: GridField, domain: Domain,
                      params: WTSParams = WTSParams()) -> LevelSetRegions:
    """V_i^lam = {x in A0 B_Q cap Omega : u_i(x) > lam l(Q)} and the selected components U_i, U_i'."""
    if u is None or u_star is None:
        raise SolutionMissing("both u and u_* are required")
    ell = q.side
    big = _cube_ball_mask(domain, lat, q, params.A0) & domain.mask
    ball20 = _cube_ball_mask(domain, lat, q, 20)
    s = math.sqrt(params.tau1)
    V, U, Up = {}, [], []
    for i, f in ((1, u), (2, u_star)):
        vals = np.nan_to_num(f.values, nan=-np.inf)

        def lvl(lam):
            return big & (vals > lam * ell)

        for lam in (s, 2 * s, params.tau1, 2 * params.tau1):
            V[(i, lam)] = np.flatnonzero(lvl(lam))
        U.append(np.flatnonzero(_components_hitting(lvl(s), lvl(2 * s) & ball20)))
        Up.append(np.flatnonzero(_components_hitting(lvl(params.tau1), lvl(2 * params.tau1) & ball20)))
    return LevelSetRegions(q, (s, params.tau1), V, tuple(U), tuple(Up))


@dataclass
class WTSResult:
    passed: bool
    conditions: dict
    regions: LevelSetRegions
    details: dict = field(default_factory=dict)


def wts_test(lat: Lattice, q: DyadicCube, u: GridField, u_star: GridField, domain: Domain,
             params: WTSParams = WTSParams(), seed: int = 0) -> WTSResult:
    """The four WTS conditions for the level-set regions of (u, u_*)."""
    if u is None or u_star is None:
        raise SolutionMissing("both u and u_* are required")
    g = domain.grid
    ell = q.side
    reg = level_set_regions(lat, q, u, u_star, domain, params)
    shape = g.shape
    U = [reg.mask(shape, "U", i) for i in (1, 2)]
    Up = [reg.mask(shape, "U'", i) for i in (1, 2)]
    dist_E = domain.dist
    ten = _cube_ball_mask(domain, lat, q, 10)
    far = ten & domain.mask & (dist_E > params.tau * ell)
    uncovered = int((far & ~(U[0] | U[1])).sum())
    c1 = uncovered == 0
    incl = all(not np.any(U[i] & ~Up[i]) for i in range(2))
    overlap = int((Up[0] & Up[1]).sum())
    c2 = incl and overlap == 0
    # (3) corkscrew balls of radius p l(Q) in U_i cap B(x, r)
    rng = np.random.default_rng(seed)
    epos = np.asarray(lat.set.tree.query_ball_point(q.center, 10 * lat.c1 * ell), np.int64)
    xs = lat.set.points[rng.choice(epos, min(params.samples, len(epos)), replace=False)] if len(epos) else np.zeros((0, g.dim))
    radii = np.exp(np.linspace(math.log(max(params.t * ell, 2 * g.h)), math.log(10 * ell), 4))
    c3 = True
    worst3 = math.inf
    for i in range(2):
        room = ndimage.distance_transform_edt(U[i]) * g.h
        for x in xs:
            dx = g.distance_from(x)
            for r in radii:
                if r <= params.t * ell:
                    continue
                inside = U[i] & (dx < r)
                best = float(np.max(np.minimum(room, r - dx)[inside])) if inside.any() else 0.0
                worst3 = min(worst3, best / ell)
                if best < params.p * ell:
                    c3 = False
    # (4) each U_i is connected, its alpha-thick part is connected, and no
    # node of U_i comes closer to E than alpha l / 4
    c4 = True
    comps = []
    for i in range(2):
        if not U[i].any():
            c4 = False
            comps.append(0)
            continue
        _, n_all = ndimage.label(U[i])
        _, n = ndimage.label(U[i] & (dist_E >= params.alpha * ell))
        comps.append(int(n))
        if n_all != 1 or n != 1 or float(dist_E[U[i]].min()) < params.alpha * ell / 4:
            c4 = False
    conds = {"coverage": c1, "nested_disjoint": c2, "corkscrew": c3, "connectivity": c4}
    details = {"uncovered_nodes": uncovered, "U_prime_overlap": overlap, "inclusion": incl,
               "min_corkscrew_ratio": worst3, "components": comps}
    return WTSResult(all(conds.values()), conds, reg, details)


def level_set_distance_constant(reg: LevelSetRegions, domain: Domain) -> float:
    """min over (i, lam) of dist(V_i^lam, E) / (lam l(Q)); positive when the level sets stay off E."""
    ell = reg.cube.side
    best = math.inf
    for (i, lam), nodes in reg.V.items():
        if len(nodes):
            best = min(best, float(domain.dist.ravel()[nodes].min() / (lam * ell)))
    return best


def compatibility_check(family, a0: int, domain: Domain, lat: Lattice):
    """Violations of U_i(P) cap 10B_Q inside U_i'(Q) for 2^-a0 l(Q) <= l(P) <= l(Q).

    ``family`` is a list of (cube, LevelSetRegions); returns (P id, Q id, i, count) rows.
    """
    out = []
    for qc, rq in family:
        ten = _cube_ball_mask(domain, lat, qc, 10).ravel()
        for pc, rp in family:
            if not 2.0**-a0 * qc.side <= pc.side <= qc.side:
                continue
            for i in range(2):
                up = np.zeros(ten.shape, bool)
                up[rq.U_prime[i]] = True
                cand = rp.U[i][ten[rp.U[i]]]
                bad = int((~up[cand]).sum())
                if bad:
                    out.append((pc.id, qc.id, i + 1, bad))
    return out


# ---------------------------------------------------------------------------
# cube types


@dataclass(frozen=True)
class TypeParams:
    kappa0: float = 0.1
    theta0: float = 0.1
    tau0: float = 0.1
    eps0: float = 0.1
    M_eff: int = DEFAULT_M_EFF
    k0: float = 0.25
    K0: float = 4.0
    tau: float = 0.1


@dataclass
class TypeResult:
    type: int
    reason: str
    details: dict = field(default_factory=dict)


def _cube_distance(lat: Lattice, a: DyadicCube, b: DyadicCube) -> float:
    pa = lat.set.points[a.members]
    pb = lat.set.points[b.members]
    d, _ = cKDTree(pa).query(pb)
    return float(d.min())


def _box_gap(a: DyadicCube, b: DyadicCube, h: float) -> float:
    lo_a, hi_a = a.corner, a.corner + a.side_cells
    lo_b, hi_b = b.corner, b.corner + b.side_cells
    gap = np.maximum(0, np.maximum(lo_a - hi_b, lo_b - hi_a))
    return float(np.linalg.norm(gap) * h)


def type_classify(lat: Lattice, q: DyadicCube, tree: set, u: GridField, u_star: GridField, domain: Domain,
                  A: CoefficientField | None = None, whitney: Whitney | None = None,
                  params: TypeParams = TypeParams()) -> TypeResult:
    """Type 0 (tree boundary or rough coefficients), 3 (disjoint level sets), else 1/2 by gradient oscillation."""
    if u is None or u_star is None:
        raise SolutionMissing("both u and u_* are required")
    g = domain.grid
    ell = q.side
    k = params.kappa0
    for p in lat.cubes:
        if p.id in tree:
            continue
        if not (k * ell <= p.side * (1 + 1e-12) and p.side <= ell / k * (1 + 1e-12)):
            continue
        if _box_gap(p, q, g.h) > ell / k:
            continue
        if _cube_distance(lat, p, q) <= ell / k:
            return TypeResult(0, "neighbor cube outside the tree", {"cube": p.id})
    if A is not None:
        ball = (g.distance_from(q.center) < lat.c1 * ell / k) & domain.mask & (domain.dist_complement >= k * ell)
        lip = local_lipschitz(A)
        if ball.any() and float(lip[ball].max()) > params.theta0 / ell:
            return TypeResult(0, "coefficient oscillation", {"lipschitz": float(lip[ball].max())})
    ball20 = _cube_ball_mask(domain, lat, q, 20) & domain.mask
    uv = np.nan_to_num(u.values, nan=-np.inf)
    sv = np.nan_to_num(u_star.values, nan=-np.inf)
    triple = ball20 & (uv > params.tau0 * ell) & (sv > params.tau0 * ell)
    if not triple.any():
        return TypeResult(3, "level sets disjoint in 20B_Q")
    score = np.where(triple, np.minimum(uv, sv), -np.inf)
    yq = int(np.argmax(score))
    grad = np.stack(np.gradient(np.where(np.isfinite(sv), sv, np.nan), g.h), axis=-1).reshape(-1, g.dim)
    region = None
    if whitney is not None:
        try:
            reg = whitney_region(lat, q, whitney, params.k0, params.K0, params.tau)
            comps = reg.nodes
            hit = [c for c in comps if yq in set(c.tolist())]
            if not hit:
                yp = g.points(g.unravel(yq))
                hit = [min(comps, key=lambda c: np.min(np.linalg.norm(g.points(g.unravel(c)) - yp, axis=1)))]
            region = augmented_component(domain, hit[0], ell, params.eps0, params.M_eff)
        except EmptyRegion:
            region = None
    if region is None:
        region = np.flatnonzero(triple)
    dg = grad[region] - grad[yq]
    ok = np.all(np.isfinite(dg), axis=1)
    osc = float(np.linalg.norm(dg[ok], axis=1).max()) if ok.any() else 0.0
    thr = params.eps0 ** params.M_eff
    det = {"oscillation": osc, "threshold": thr, "Y_Q": int(yq), "M_eff": params.M_eff}
    return TypeResult(1 if osc > thr else 2, "gradient oscillation", det)


# ---------------------------------------------------------------------------
# augmented set and local symmetry


@dataclass
class AugmentedSet:
    set: BoundarySet
    added_cells: int
    small_cubes: int
    ad_constant: float | None


def augmented_set(bset: BoundarySet, lat: Lattice, bad_cubes, b: float, measure_ad: bool = True,
                  ad_samples: int = 200, seed: int = 0) -> AugmentedSet:
    """E plus the boundaries of the dyadic cubes of side in [b l(Q), 2b l(Q)] meeting 10B_Q, Q bad.

    Small cubes are aligned with the grid in index space; their side is the
    power of two number of cells in that range.  Skeleton cells get weight h^n.
    """
    if not 0 < b < 1:
        raise ValueError("b must lie in (0, 1)")
    bad_cubes = list(bad_cubes)
    if not bad_cubes:
        c0 = ad_regularity(bset, ad_samples, seed)[0] if measure_ad else None
        return AugmentedSet(bset, 0, 0, c0)
    g = bset.grid
    d = g.dim
    cells = []
    n_small = 0
    for q in bad_cubes:
        s = 2 ** int(math.ceil(math.log2(b * q.side_cells)))
        s = max(s, 1)
        R = 10 * lat.c1 * q.side
        lo_pt = q.center - R
        hi_pt = q.center + R
        lo_i = np.floor((np.asarray(g.indices_of(lo_pt)[0])) / s).astype(int)
        hi_i = np.floor((np.asarray(g.indices_of(hi_pt)[0])) / s).astype(int)
        rng = [np.arange(a, c + 1) for a, c in zip(lo_i, hi_i)]
        ks = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, d)
        blo = np.asarray(g.lo) + ks * s * g.h
        bhi = blo + s * g.h
        gap = np.maximum(0, np.maximum(blo - q.center, q.center - bhi))
        ks = ks[np.linalg.norm(gap, axis=1) < R]
        n_small += len(ks)
        t = np.arange(s)
        for kk in ks:
            base = kk * s
            for ax in range(d):
                for face in (0, s - 1):
                    axes = [t if j != ax else np.array([face]) for j in range(d)]
                    m = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d) + base
                    cells.append(m)
    idx = np.unique(np.concatenate(cells), axis=0)
    idx = idx[np.all((idx >= 0) & (idx < np.asarray(g.shape)), axis=1)]
    flat = g.ravel(idx)
    new = ~np.isin(flat, bset.flat)
    idx = idx[new]
    extra = BoundarySet(g, idx, np.full(len(idx), g.h ** (d - 1)), bset.kind, bset.params, bset.feature) if len(idx) else None
    out = bset if extra is None else bset.union(extra, kind=f"{bset.kind}+skeleton")
    c0 = ad_regularity(out, ad_samples, seed)[0] if measure_ad else None
    return AugmentedSet(out, int(len(idx)), int(n_small), c0)


@dataclass
class SymmetryResult:
    passed: bool
    defect: float  # max dist(2x - y, E~) / l(Q)
    worst_pair: tuple | None
    pairs: int
    clipped: int = 0  # pairs dropped because 2x - y left the grid box


def local_symmetry_test(bset: BoundarySet, lat: Lattice, q: DyadicCube, kappa: float, max_pairs: int = 10000,
                        seed: int = 0) -> SymmetryResult:
    """Q in LS_kappa iff dist(2x - y, E~) <= kappa l(Q) for x, y in 2B_Q cap E~."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    pos = np.asarray(bset.tree.query_ball_point(q.center, 2 * lat.c1 * q.side), np.int64)
    pts = bset.points[pos]
    m = len(pts)
    if m == 0:
        return SymmetryResult(True, 0.0, None, 0)
    if m * m <= max_pairs:
        I, J = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        I, J = I.ravel(), J.ravel()
    else:
        rng = np.random.default_rng(seed)
        I = rng.integers(0, m, max_pairs)
        J = rng.integers(0, m, max_pairs)
    refl = 2 * pts[I] - pts[J]
    lo, hi = _grid_box(bset)
    inside = np.all((refl >= lo) & (refl <= hi), axis=1)
    clipped = int((~inside).sum())
    I, J, refl = I[inside], J[inside], refl[inside]
    if len(I) == 0:
        return SymmetryResult(True, 0.0, None, 0, clipped)
    d, _ = bset.tree.query(refl)
    k = int(np.argmax(d))
    defect = float(d[k] / q.side)
    return SymmetryResult(defect <= kappa, defect, (int(pos[I[k]]), int(pos[J[k]])), int(len(I)), clipped)


# ---------------------------------------------------------------------------
# reports


def classification_csv(path, rows) -> None:
    """Rows of (cube id, bbeta, whsa, batpp, wts, type, ls)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cube", "bbeta", "whsa", "batpp", "wts", "type", "ls"])
        for r in rows:
            w.writerow(r)


def witnesses_json(path, witnesses: dict) -> None:
    def enc(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if hasattr(o, "__dict__"):
            return {k: v for k, v in o.__dict__.items()}
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(witnesses, fh, default=enc, indent=2)
