"""Stopping-time corona decompositions driven by elliptic measure.

A *measure oracle* is any callable ``oracle(q) -> array`` returning the
elliptic measure with pole attached to the dyadic cube ``q``, as weights on the
boundary-set cells.  ``MeasureOracle`` is the solver-backed implementation;
tests pass synthetic oracles with the same signature.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LatticeMismatch, MeasureMissing, SolveBudgetExceeded
from .geometry import Domain
from .lattice import DyadicCube, Lattice, dilate
from .solver import CoefficientField, elliptic_measure

DEFAULT_SOLVE_BUDGET = 500


@dataclass(frozen=True)
class StoppingParams:
    A: float = 10.0
    delta: float = 0.1
    eps_pole: float = 0.2
    max_depth: int | None = None

    def __post_init__(self):
        if not self.A > 1:
            raise ValueError("A must exceed 1")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.eps_pole <= 0:
            raise ValueError("eps_pole must be positive")


def pole_for(domain: Domain, q: DyadicCube, eps_pole: float) -> np.ndarray:
    """Node of Omega at height about eps_pole * l(Q) above the center of Q.

    Among nodes within l(Q)/2 of the center (widened if needed) whose distance
    to the boundary is at least max(eps_pole l(Q), 2h), the closest one to the
    center is returned.  Ties go to the first node in C order.
    """
    g = domain.grid
    target = max(eps_pole * q.side, 2 * g.h)
    z = q.center
    reach = max(q.side / 2, 2 * target)
    while True:
        lo = np.maximum(g.indices_of(z - reach)[0], 0)
        hi = np.minimum(g.indices_of(z + reach)[0] + 1, np.asarray(g.shape))
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        cc = np.meshgrid(*[g.axis(k)[sl[k]] for k in range(g.dim)], indexing="ij")
        dz = np.sqrt(sum((c - zk) ** 2 for c, zk in zip(cc, z)))
        ok = domain.mask[sl] & (domain.dist_complement[sl] >= target - 1e-12) & (dz <= reach)
        if ok.any():
            flat = int(np.argmin(np.where(ok, dz, np.inf)))
            local = np.unravel_index(flat, ok.shape)
            return g.points(np.array([a + b for a, b in zip(lo, local)]))
        if np.all(lo == 0) and np.all(hi == np.asarray(g.shape)):
            raise MeasureMissing(f"no admissible pole for cube {q.id}")
        reach *= 2


class MeasureOracle:
    """Solver-backed omega^{p_Q}, cached by pole node, with a solve budget.

    ``store``, if given, is called as ``store(pole_index, compute)`` and must
    return the measure array; it lets a persistent cache answer before any
    solve happens.  Only calls that reach ``compute`` count against the budget.
    """

    def __init__(self, A: CoefficientField, domain: Domain, eps_pole: float = 0.2,
                 budget: int = DEFAULT_SOLVE_BUDGET, store=None):
        self.A = A
        self.store = store
        self.domain = domain
        self.eps_pole = eps_pole
        self.budget = budget
        self.solves = 0
        self._cache: dict = {}
        self.poles: dict = {}

    def pole(self, q: DyadicCube) -> np.ndarray:
        if q.id not in self.poles:
            self.poles[q.id] = pole_for(self.domain, q, self.eps_pole)
        return self.poles[q.id]

    def __call__(self, q: DyadicCube) -> np.ndarray:
        p = self.pole(q)
        key = tuple(int(i) for i in self.domain.grid.index_of(p))
        if key not in self._cache:
            def compute():
                if self.solves >= self.budget:
                    raise SolveBudgetExceeded(f"solve budget of {self.budget} exhausted")
                self.solves += 1
                return elliptic_measure(self.A, self.domain, p).values

            self._cache[key] = compute() if self.store is None else self.store(key, compute)
        return self._cache[key]


def _omega(oracle, q: DyadicCube, n: int) -> np.ndarray:
    w = oracle(q)
    if w is None:
        raise MeasureMissing(f"no measure for cube {q.id}")
    w = np.asarray(w, float)
    if w.shape != (n,):
        raise MeasureMissing(f"measure for cube {q.id} has shape {w.shape}, expected ({n},)")
    return w


def _dilated(lat: Lattice, q: DyadicCube, lam: float) -> np.ndarray:
    cache = lat.__dict__.setdefault("_dilation_cache", {})
    key = (q.id, float(lam))
    if key not in cache:
        cache[key] = dilate(lat, q, lam)
    return cache[key]


def hd_ld_stopping(lat: Lattice, R: DyadicCube, omega: np.ndarray, params: StoppingParams,
                   max_generation: int | None = None):
    """Maximal high- and low-density cubes strictly below R.

    HD: omega(2Q)/mu(2Q) >= A omega(2R)/mu(2R).  LD: omega(Q)/mu(Q) <= delta omega(R)/mu(R).
    Cubes are scanned generation by generation; a cube is only tested when no
    ancestor below R was selected for either family.
    """
    if omega is None:
        raise MeasureMissing(f"no measure for cube {R.id}")
    omega = np.asarray(omega, float)
    mu = lat.set.weights
    last = lat.depth if max_generation is None else min(max_generation, lat.depth)
    d2R = _dilated(lat, R, 2)
    hd_ref = params.A * omega[d2R].sum() / mu[d2R].sum()
    ld_ref = params.delta * omega[R.members].sum() / R.measure
    hd, ld = [], []
    frontier = list(R.children)
    while frontier:
        nxt = []
        for qi in frontier:
            q = lat.cubes[qi]
            d2 = _dilated(lat, q, 2)
            if omega[d2].sum() / mu[d2].sum() >= hd_ref * (1 - 1e-12):
                hd.append(q.id)
            elif params.delta > 0 and q.measure > 0 and omega[q.members].sum() / q.measure <= ld_ref * (1 + 1e-12):
                ld.append(q.id)
            elif q.generation < last:
                nxt.extend(q.children)
        frontier = nxt
    return sorted(hd), sorted(ld)


@dataclass
class CoronaForest:
    lattice: Lattice
    top: list
    tree: dict  # root id -> list of cube ids
    stop: dict
    hd: dict = field(default_factory=dict)
    ld: dict = field(default_factory=dict)
    density: dict = field(default_factory=dict)  # root id -> {cube id: omega(3Q) mu(R)/mu(Q)}
    lemma_stats: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)  # roots at the finest generation (depth exhausted)

    @property
    def owner(self) -> np.ndarray:
        own = np.full(len(self.lattice), -1, np.int64)
        for r, ids in self.tree.items():
            own[ids] = r
        return own

    def packing(self) -> float:
        return packing_constant([self.lattice[i] for i in self.top], self.lattice)

    def check_partition(self) -> bool:
        counts = np.zeros(len(self.lattice), np.int64)
        for ids in self.tree.values():
            np.add.at(counts, ids, 1)
        if not self.top:
            return False
        root = min(self.top, key=lambda i: (self.lattice.cubes[i].generation, i))
        below = [q.id for q in self.lattice.descendants(self.lattice[root])]
        return bool(np.all(counts[below] == 1))

    def roles(self):
        """(cube id, root id, role) rows; a cube can be both a Stop cube of one root and a Top cube."""
        rows = []
        tops = set(self.top)
        for r, ids in self.tree.items():
            hd = set(self.hd.get(r, []))
            ld = set(self.ld.get(r, []))
            for i in ids:
                rows.append((i, r, "top" if i in tops and i == r else "tree"))
            for i in self.stop.get(r, []):
                rows.append((i, r, "hd" if i in hd else "ld" if i in ld else "stop"))
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cube", "root", "role"])
            for row in sorted(self.roles()):
                w.writerow(row)

    def packing_report(self) -> dict:
        return {
            "n_top": len(self.top),
            "packing": self.packing(),
            "flagged_roots": list(self.flagged),
            "lemma": {str(k): v for k, v in self.lemma_stats.items()},
        }

    def write_report(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.packing_report(), fh, indent=2)


def _tree_below(lat: Lattice, R: DyadicCube, stop: list) -> list:
    stopped = set(stop)
    out = [R.id]
    stack = list(R.children)
    while stack:
        i = stack.pop()
        if i in stopped:
            continue
        out.append(i)
        stack.extend(lat.cubes[i].children)
    return sorted(out)


def build_top(lat: Lattice, oracle, params: StoppingParams = StoppingParams(), root: DyadicCube | None = None) -> CoronaForest:
    """Top_0 = {R0}, Top_{k+1} = union of Stop(R) over R in Top_k.

    Tree(R) holds the cubes of D(R) that do not lie inside a Stop(R) cube, so
    the trees partition D(R0).  Stop cubes in the finest generation become
    single-cube trees and are listed in ``flagged``.
    """
    R0 = lat.root if root is None else root
    n = len(lat.set)
    mu = lat.set.weights
    last = lat.depth if params.max_depth is None else min(params.max_depth, lat.depth)
    forest = CoronaForest(lat, [], {}, {})
    queue = [R0.id]
    while queue:
        rid = queue.pop(0)
        R = lat.cubes[rid]
        forest.top.append(rid)
        if R.generation >= last:
            forest.tree[rid] = [rid]
            forest.stop[rid] = []
            if R.children or R.generation == last:
                forest.flagged.append(rid)
            continue
        w = _omega(oracle, R, n)
        hd, ld = hd_ld_stopping(lat, R, w, params, last)
        stop = sorted(hd + ld)
        forest.hd[rid], forest.ld[rid], forest.stop[rid] = hd, ld, stop
        forest.tree[rid] = _tree_below(lat, R, stop)
        dens = {}
        for qi in forest.tree[rid]:
            q = lat.cubes[qi]
            d3 = _dilated(lat, q, 3)
            dens[qi] = float(w[d3].sum() * R.measure / q.measure)
        forest.density[rid] = dens
        bh = np.concatenate([lat.cubes[i].members for i in hd]) if hd else np.zeros(0, np.int64)
        bl = np.concatenate([lat.cubes[i].members for i in ld]) if ld else np.zeros(0, np.int64)
        wR = w[R.members].sum()
        forest.lemma_stats[rid] = {
            "mu_BH_times_A_over_mu_R": float(mu[bh].sum() * params.A / R.measure),
            "omega_BL_over_delta_omega_R": float(w[bl].sum() / (params.delta * wR)) if params.delta > 0 and wR > 0 else 0.0,
        }
        queue.extend(stop)
    forest.top.sort()
    return forest


def packing_constant(family, lat: Lattice) -> float:
    """sup over S of sum_{R in family, R inside S} mu(R) / mu(S), by one bottom-up pass."""
    chosen = np.zeros(len(lat), bool)
    for q in family:
        qid = q.id if isinstance(q, DyadicCube) else int(q)
        if qid < 0 or qid >= len(lat) or (isinstance(q, DyadicCube) and lat.cubes[qid] is not q):
            raise LatticeMismatch("family contains a cube from another lattice")
        chosen[qid] = True
    acc = np.zeros(len(lat))
    best = 0.0
    for j in range(lat.depth, -1, -1):
        for i in lat.generations[j]:
            q = lat.cubes[i]
            acc[i] = (q.measure if chosen[i] else 0.0) + sum(acc[c] for c in q.children)
            if q.measure > 0:
                best = max(best, acc[i] / q.measure)
    return float(best)


@dataclass
class LDIterates:
    families: list  # families[k-1] = LD^k(R) as cube ids
    mass_sum: float  # sum_k sum_{Q in LD^k} mu(Q) / mu(R)
    final_mass: float  # mu(B_L^m(R)) / mu(R)


def ld_iterates(lat: Lattice, R: DyadicCube, oracle, delta: float, m: int) -> LDIterates:
    """LD^1(R) = LD(R) and LD^{k+1}(R) = union of LD(Q) over Q in LD^k(R).

    Each LD(Q) uses the measure with pole attached to Q.  Only the low-density
    rule is applied.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    n = len(lat.set)
    params = StoppingParams(A=math.inf, delta=delta)
    current = [R.id]
    families = []
    for _ in range(m):
        nxt = []
        for qi in current:
            q = lat.cubes[qi]
            if not q.children:
                continue
            _, ld = hd_ld_stopping(lat, q, _omega(oracle, q, n), params)
            nxt.extend(ld)
        families.append(sorted(nxt))
        current = nxt
    masses = [sum(lat.cubes[i].measure for i in fam) / R.measure for fam in families]
    return LDIterates(families, float(sum(masses)), float(masses[-1]))


def mixed_corona(f1: CoronaForest, f2: CoronaForest) -> CoronaForest:
    """Intersect the trees of two forests on the same lattice.

    Each new tree is Tree(R) cap Tree_*(R'); its root is the coarsest cube it
    contains, and the new Top is the union of both Top families.
    """
    lat = f1.lattice
    if f2.lattice is not lat:
        if len(f2.lattice) != len(lat) or f2.lattice.set is not lat.set:
            raise LatticeMismatch("forests are built on different lattices")
    o1, o2 = f1.owner, f2.owner
    groups: dict = {}
    for i in range(len(lat)):
        if o1[i] < 0 or o2[i] < 0:
            continue
        groups.setdefault((int(o1[i]), int(o2[i])), []).append(i)
    tree, stop = {}, {}
    for ids in groups.values():
        root = min(ids, key=lambda i: (lat.cubes[i].generation, i))
        members = sorted(ids)
        inside = set(members)
        tree[root] = members
        stop[root] = sorted(c for i in members for c in lat.cubes[i].children if c not in inside)
    top = sorted(tree)
    out = CoronaForest(lat, top, tree, stop, flagged=sorted(set(f1.flagged) | set(f2.flagged)))
    assert out.packing() <= f1.packing() + f2.packing() + 1e-12
    return out


@dataclass
class WeakAinftyRow:
    ball: int
    mu_ratio: float  # mu(E) / mu(B)
    omega_ratio: float  # omega(E) / omega(B)
    passed: bool
    violator: np.ndarray


def weak_ainfty_check(bset, balls, measures, eps: float, eps_prime: float, block: int = 4) -> list[WeakAinftyRow]:
    """Greedy search for E inside each ball with mu(E) <= eps mu(B) and omega(E) > eps' omega(B).

    ``balls`` is a list of (center, radius); ``measures[i]`` holds omega^{x_B}
    on the set cells for ball i.  Candidate sets E are unions of grid blocks of
    ``block`` cells per side, taken in decreasing order of omega/mu density.
    On a staircase boundary the discrete measure piles onto exposed cells, so
    single-cell densities mean little; ``block=1`` searches cell by cell.
    """
    if block < 1:
        raise ValueError("block must be a positive number of cells")
    mu = bset.weights
    side = block * bset.grid.h
    rows = []
    for b, ((x, r), w) in enumerate(zip(balls, measures)):
        w = np.asarray(w, float)
        inside = np.asarray(bset.tree.query_ball_point(np.asarray(x, float), r), dtype=np.int64)
        muB, omB = mu[inside].sum(), w[inside].sum()
        if len(inside) == 0 or omB <= 0:
            rows.append(WeakAinftyRow(b, 0.0, 0.0, True, np.zeros(0, np.int64)))
            continue
        key = np.floor(bset.points[inside] / side).astype(np.int64)
        _, lab = np.unique(key, axis=0, return_inverse=True)
        lab = lab.ravel()
        bmu, bom = np.bincount(lab, mu[inside]), np.bincount(lab, w[inside])
        order = np.argsort(-bom / bmu, kind="stable")
        k = int(np.searchsorted(np.cumsum(bmu[order]), eps * muB * (1 + 1e-12), side="right"))
        if k:
            # drop trailing blocks that add no omega mass
            cw = np.cumsum(bom[order[:k]])
            k = int(np.searchsorted(cw, cw[-1] * (1 - 1e-12), side="left")) + 1
        E = np.sort(inside[np.isin(lab, order[:k])])
        om_ratio = float(w[E].sum() / omB) if k else 0.0
        rows.append(WeakAinftyRow(b, float(mu[E].sum() / muB), om_ratio, bool(om_ratio <= eps_prime), E))
    return rows


def ball_pole(domain: Domain, x, r: float, c0: float = 0.25) -> np.ndarray:
    """A node of (1/2)B(x, r) with boundary distance at least c0 r, closest to x."""
    g = domain.grid
    x = np.asarray(x, float)
    lo = np.maximum(g.indices_of(x - r / 2)[0], 0)
    hi = np.minimum(g.indices_of(x + r / 2)[0] + 1, np.asarray(g.shape))
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    cc = np.meshgrid(*[g.axis(k)[sl[k]] for k in range(g.dim)], indexing="ij")
    dx = np.sqrt(sum((c - xk) ** 2 for c, xk in zip(cc, x)))
    ok = domain.mask[sl] & (dx < r / 2) & (domain.dist_complement[sl] >= max(c0 * r, 2 * g.h))
    if not ok.any():
        raise MeasureMissing(f"no pole with boundary distance >= {c0} r inside B/2")
    flat = int(np.argmin(np.where(ok, dx, np.inf)))
    local = np.unravel_index(flat, ok.shape)
    return g.points(np.array([a + b for a, b in zip(lo, local)]))
