"""Alt-Caffarelli-Friedman functional on grid fields.

The pair (u1, u2) lives on a single grid.  Energies use the face-difference
density ``e(y) = sum_k ((D_k^+ u)^2 + (D_k^- u)^2) / 2`` so that a kink along
a grid row is split evenly between its two sides.  Balls are integrated with
a fractional boundary weight ``clip((r - |y - x|)/h + 1/2, 0, 1)`` and the
cell containing x is integrated against the exact singular weight by
sub-sampling.

Spherical domains live here too: arcs on the unit circle (ambient dimension
2) and vertex masks on a latitude-longitude mesh of the unit sphere (ambient
dimension 3), together with their principal Dirichlet eigenvalues.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, sparse, stats
from scipy.sparse.linalg import eigsh

from .errors import (DegeneratePair, EmptyDomain, FullSphere, NotNormalized, RadiusTooSmall,
                     ZeroSetConditionFails)
from .grid import Grid, GridField
from .solver import CoefficientField

log = logging.getLogger(__name__)

DEFAULT_C = 64.0


# ---------------------------------------------------------------------------
# pairs and quadrature


@dataclass
class SubharmonicPair:
    u1: GridField
    u2: GridField
    x: np.ndarray
    overlap_nodes: int = 0  # nodes where both functions are positive (flagged, not rejected)

    def __post_init__(self):
        if self.u1.grid != self.u2.grid:
            raise ValueError("u1 and u2 must share a grid")
        self.x = np.asarray(self.x, float)
        v1, v2 = self.u1.values, self.u2.values
        if np.nanmin(v1) < -1e-12 or np.nanmin(v2) < -1e-12:
            raise ValueError("u1 and u2 must be nonnegative")
        scale = max(np.nanmax(v1), np.nanmax(v2), 1e-300)
        both = (v1 > 1e-12 * scale) & (v2 > 1e-12 * scale)
        self.overlap_nodes = int(both.sum())
        if self.overlap_nodes:
            log.warning("u1 * u2 is nonzero at %d nodes", self.overlap_nodes)

    @property
    def grid(self) -> Grid:
        return self.u1.grid

    def scaled(self, c1: float, c2: float) -> "SubharmonicPair":
        return SubharmonicPair(self.u1 * c1, self.u2 * c2, self.x)


def energy_density(u: GridField) -> np.ndarray:
    """Face-difference |grad u|^2 at every node; one-sided where a neighbor is missing."""
    v = u.values
    h = u.grid.h
    out = np.zeros_like(v)
    for k in range(v.ndim):
        d = np.diff(v, axis=k) / h
        sq = d**2
        plus = np.pad(sq, [(0, 1) if i == k else (0, 0) for i in range(v.ndim)], constant_values=np.nan)
        minus = np.pad(sq, [(1, 0) if i == k else (0, 0) for i in range(v.ndim)], constant_values=np.nan)
        both = np.stack([plus, minus])
        cnt = np.isfinite(both).sum(axis=0)
        out += np.where(cnt > 0, np.nansum(both, axis=0) / np.maximum(cnt, 1), np.nan)
    return out


def _ball_weights(grid: Grid, x, r: float):
    """Fractional ball weights and the node index of the cell containing x."""
    dist = grid.distance_from(x)
    w = np.clip((r - dist) / grid.h + 0.5, 0.0, 1.0)
    return w, dist, grid.index_of(x)


def _center_cell_integral(grid: Grid, x, power: float, sub: int = 24) -> float:
    """int over the cell containing x of |y - x|^power, by midpoint sub-sampling."""
    idx = np.asarray(grid.index_of(x))
    c = grid.points(idx)
    t = (np.arange(sub) + 0.5) / sub - 0.5
    mesh = np.meshgrid(*([t * grid.h] * grid.dim), indexing="ij")
    off = np.stack([m.ravel() for m in mesh], axis=-1) + (c - x)
    r = np.linalg.norm(off, axis=1)
    return float(np.mean(r**power) * grid.h**grid.dim)


def weighted_energy(u: GridField, x, r: float) -> float:
    """int_{B(x,r)} |grad u|^2 |y - x|^(1-n) dy."""
    g = u.grid
    n = g.dim - 1
    x = np.asarray(x, float)
    w, dist, ci = _ball_weights(g, x, r)
    e = energy_density(u)
    wt = np.where(dist > 0, dist, 1.0) ** (1 - n) * g.h**g.dim
    wt[ci] = _center_cell_integral(g, x, 1 - n)
    return float(np.nansum(e * w * wt))


def weighted_mass(u: GridField, x, r: float) -> float:
    """int_{B(x,r)} u^2 |y - x|^(-n-1) dy; the center cell uses u ~ grad u . (y - x)."""
    g = u.grid
    n = g.dim - 1
    x = np.asarray(x, float)
    w, dist, ci = _ball_weights(g, x, r)
    wt = np.where(dist > 0, dist, 1.0) ** (-n - 1) * g.h**g.dim
    vals = u.values**2 * wt
    vals[ci] = energy_density(u)[ci] / g.dim * _center_cell_integral(g, x, 1 - n)
    return float(np.nansum(vals * w))


def _check_radius(grid: Grid, x, r: float):
    if r < 4 * grid.h:
        raise RadiusTooSmall(f"r = {r:g} is below 4h = {4 * grid.h:g}")
    if np.any(np.asarray(x) - r < np.asarray(grid.lo)) or np.any(np.asarray(x) + r > np.asarray(grid.hi)):
        raise RadiusTooSmall(f"B(x, {r:g}) leaves the grid")


def acf_J(pair: SubharmonicPair, r: float) -> float:
    """J(x, r) = prod_i r^-2 int_{B(x,r)} |grad u_i|^2 |y - x|^(1-n) dy."""
    _check_radius(pair.grid, pair.x, r)
    return float(np.prod([weighted_energy(u, pair.x, r) / r**2 for u in (pair.u1, pair.u2)]))


@dataclass
class KrResult:
    K: float
    per_function: tuple
    bound_ratio: float | None  # K / (1 + C1 C_w0) when the constants are supplied


def acf_Kr(pair: SubharmonicPair, r: float, C1: float | None = None, Cw0: float | None = None) -> KrResult:
    _check_radius(pair.grid, pair.x, r)
    ks = []
    for u in (pair.u1, pair.u2):
        e = weighted_energy(u, pair.x, r)
        if e <= 0:
            raise DegeneratePair("a gradient integral vanishes")
        ks.append(math.sqrt(weighted_mass(u, pair.x, r) / e))
    K = max(ks)
    ratio = None if C1 is None or Cw0 is None else K / (1 + C1 * Cw0)
    return KrResult(K, tuple(ks), ratio)


# ---------------------------------------------------------------------------
# oscillation modulus and Dini constant


@dataclass
class OscillationModulus:
    radii: np.ndarray
    values: np.ndarray
    terms: dict = field(default_factory=dict)  # name -> per-radius sup of that term alone

    def __call__(self, r) -> np.ndarray:
        """Right-continuous step interpolation on the radius grid."""
        idx = np.searchsorted(self.radii, np.asarray(r, float), side="right") - 1
        return np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 0.0)


def oscillation_w(A: CoefficientField, x, radii) -> OscillationModulus:
    """w(x, r) = sup_{|y-x| <= r} |A(y) - A(x)| + |y-x| (|b| + |e|) + |y-x|^2 |d| over grid nodes."""
    g = A.grid
    x = np.asarray(x, float)
    Ax = A.at(x)
    if np.linalg.norm(Ax - np.eye(g.dim), 2) > 1e-10:
        raise NotNormalized("A(x) must be the identity; apply a pullback first")
    radii = np.sort(np.asarray(radii, float))
    dist = g.distance_from(x).ravel()
    mats = A.A.reshape(-1, g.dim, g.dim) - Ax
    t_mat = np.linalg.norm(mats, ord=2, axis=(1, 2))
    bn = np.zeros_like(dist)
    for vec in (A.b, A.e):
        if vec is not None:
            bn += np.linalg.norm(np.asarray(vec).reshape(-1, g.dim), axis=1)
    t_drift = dist * bn
    t_zero = dist**2 * (np.abs(np.asarray(A.c).ravel()) if A.c is not None else 0.0)
    total = t_mat + t_drift + t_zero
    order = np.argsort(dist, kind="stable")
    ds = dist[order]
    cut = np.searchsorted(ds, radii * (1 + 1e-12), side="right")

    def running(t):
        cm = np.maximum.accumulate(t[order])
        return np.where(cut > 0, cm[np.maximum(cut - 1, 0)], 0.0)

    return OscillationModulus(radii, running(total),
                              {"matrix": running(t_mat), "drift": running(t_drift), "zeroth": running(t_zero)})


@dataclass
class DiniResult:
    value: float
    diverges: bool
    partial_sums: list


def dini_constant(w0, upper: float = 0.5, max_doublings: int = 9) -> DiniResult:
    """C = int_0^upper (w0(t) log(1/t))^2 dt / t.

    ``w0`` is a callable or a pair ``(t_samples, w_samples)``; samples are
    interpolated in log-log and extended below the smallest sample by a power
    law fitted to the three smallest samples.  With t = e^-s the integral is
    int (w0(e^-s) s)^2 ds over [log(1/upper), inf), summed over the doubling
    windows [S_k, 2 S_k].  The window contributions of a convergent integral
    eventually shrink geometrically; when the last ratios do not drop below
    3/4 the integral is flagged divergent.  Otherwise the geometric tail is
    added to the partial sum.
    """
    if callable(w0):
        fn = w0
    else:
        ts, ws = (np.asarray(a, float) for a in w0)
        order = np.argsort(ts)
        ts, ws = ts[order], ws[order]
        if np.any(ws < 0) or np.any(np.diff(ws) < -1e-15):
            raise ValueError("w0 samples must be nonnegative and nondecreasing")
        pos = ws > 0
        if not pos.any():
            return DiniResult(0.0, False, [0.0])
        lt, lw = np.log(ts[pos]), np.log(ws[pos])
        slope = np.polyfit(lt[:3], lw[:3], 1)[0] if len(lt) >= 3 else (lw[-1] - lw[0]) / max(lt[-1] - lt[0], 1e-300)

        def fn(t):
            t = np.asarray(t, float)
            inside = np.exp(np.interp(np.log(t), lt, lw))
            below = np.exp(lw[0] + slope * (np.log(t) - lt[0]))
            return np.where(t < ts[pos][0], below, inside)

    def integrand(s):
        return (float(fn(math.exp(-s))) * s) ** 2

    s0 = math.log(1 / upper)
    a = s0
    b = max(2 * s0, s0 + 1)
    parts = []
    for _ in range(max_doublings):
        val, _ = integrate.quad(integrand, a, b, limit=200)
        parts.append(val)
        a, b = b, 2 * b
    sums = [float(v) for v in np.cumsum(parts)]
    if sums[-1] == 0:
        return DiniResult(0.0, False, sums)
    ratios = [parts[i + 1] / parts[i] if parts[i] > 0 else 0.0 for i in range(len(parts) - 3, len(parts) - 1)]
    rho = max(ratios)
    if rho >= 0.75:
        return DiniResult(float("inf"), True, sums)
    return DiniResult(sums[-1] + parts[-1] * rho / (1 - rho), False, sums)


# ---------------------------------------------------------------------------
# monotonicity and growth


def _trapezoid_w_over_r(w: OscillationModulus, r1: float, r2: float, h: float) -> float:
    n = max(int(math.ceil((r2 - r1) / h)), 1)
    rs = np.linspace(r1, r2, n + 1)
    return float(integrate.trapezoid(w(rs) / rs, rs))


@dataclass
class MonotonicityResult:
    lhs: float
    rhs: float
    passed: bool


def monotonicity_check(pair: SubharmonicPair, w: OscillationModulus | None, r1: float, r2: float,
                       c: float = DEFAULT_C, tol: float = 0.02) -> MonotonicityResult:
    """J(r1) <= J(r2) exp(c int_{r1}^{r2} w(r)/r dr), up to a relative tolerance."""
    h = pair.grid.h
    if not 4 * h <= r1 < r2:
        raise ValueError("need 4h <= r1 < r2")
    lhs = acf_J(pair, r1)
    integral = 0.0 if w is None else _trapezoid_w_over_r(w, r1, r2, h)
    rhs = acf_J(pair, r2) * math.exp(c * integral)
    return MonotonicityResult(lhs, rhs, bool(lhs <= rhs * (1 + tol)))


def log_derivative(pair: SubharmonicPair, r: float) -> float:
    """Centered difference of log J with spacing h."""
    h = pair.grid.h
    return (math.log(acf_J(pair, r + h)) - math.log(acf_J(pair, r - h))) / (2 * h)


def refined_derivative_check(pair: SubharmonicPair, gammas, w: OscillationModulus | None, r: float,
                             c: float = DEFAULT_C, slack: float = 0.1):
    """(log J)'(r) >= (2/r)(g1 + g2 - 2) - c (1 + K_r) w(r)/r, with relative slack.

    Returns ``(measured, bound, passed)``.
    """
    meas = log_derivative(pair, r)
    wr = 0.0 if w is None else float(w(r))
    K = acf_Kr(pair, r).K
    bound = 2 / r * (sum(gammas) - 2) - c * (1 + K) * wr / r
    return meas, bound, bool(meas >= bound - slack * abs(bound))


def operator_residual(u: GridField, A: CoefficientField | None = None) -> np.ndarray:
    """L u = -div(A grad u): compact differences on the diagonal, central ones off it."""
    v = u.values
    g = u.grid
    h = g.h
    d = g.dim
    Am = np.broadcast_to(np.eye(d), g.shape + (d, d)) if A is None else A.A
    out = np.full_like(v, np.nan)
    core = tuple(slice(1, -1) for _ in range(d))
    tot = np.zeros(tuple(s - 2 for s in g.shape))

    def sl(k, a, b):
        s = [slice(1, -1)] * d
        s[k] = slice(a, b if b != 0 else None)
        return tuple(s)

    for k in range(d):
        akk = Am[..., k, k]
        a_plus = 0.5 * (akk[sl(k, 1, -1)] + akk[sl(k, 2, 0)])
        a_minus = 0.5 * (akk[sl(k, 1, -1)] + akk[sl(k, 0, -2)])
        tot += (a_plus * (v[sl(k, 2, 0)] - v[core]) - a_minus * (v[core] - v[sl(k, 0, -2)])) / h**2
    if A is not None:
        grad = [np.gradient(v, h, axis=k) for k in range(d)]
        for k in range(d):
            flux = sum(Am[..., k, l] * grad[l] for l in range(d) if l != k)
            tot += np.gradient(flux, h, axis=k)[core]
    out[core] = -tot
    return out


def is_subharmonic(u: GridField, A: CoefficientField | None = None, tol: float = 1e-8) -> bool:
    """Lu <= tol at every interior node where u > 0 (L = -div A grad)."""
    res = operator_residual(u, A)
    scale = max(np.nanmax(np.abs(u.values)), 1e-300) / u.grid.h**2
    sel = np.isfinite(res) & (u.values > 0)
    return bool(np.all(res[sel] <= tol * scale))


def gradient_energy_bound(u: GridField, x, r: float, A: CoefficientField | None = None, check: bool = True) -> float:
    """int_{B(x,r)} |grad u|^2 |y-x|^(1-n) dy divided by sup_{B(x,2r)} u^2."""
    if check and not is_subharmonic(u, A):
        raise ValueError("u is not subharmonic on its support")
    g = u.grid
    sup = np.nanmax(np.abs(u.values[g.distance_from(np.asarray(x, float)) <= 2 * r * (1 + 1e-12)]), initial=0.0)
    if sup == 0:
        return 0.0
    return weighted_energy(u, x, r) / sup**2


@dataclass
class GrowthResult:
    rho: float
    stderr: float
    passed: bool
    radii: np.ndarray
    J: np.ndarray
    w_max: float | None
    worst_fraction: float


def zero_set_fractions(pair: SubharmonicPair, radii, M: float, tol: float = 0.0) -> np.ndarray:
    """Volume fraction of the common zero set in each annulus A(x, r, Mr)."""
    g = pair.grid
    dist = g.distance_from(pair.x)
    zero = (np.abs(pair.u1.values) <= tol) & (np.abs(pair.u2.values) <= tol)
    out = []
    for r in radii:
        ann = (dist >= r) & (dist < M * r)
        out.append(zero[ann].mean() if ann.any() else 0.0)
    return np.asarray(out)


def growth_lemma_check(pair: SubharmonicPair, r1: float, r2: float, M: float = 2.0, eta: float = 0.25,
                       w: OscillationModulus | None = None, n_radii: int = 8) -> GrowthResult:
    """Fit J(r) ~ r^rho on [r1, r2] after checking the zero-set volume condition."""
    if not r2 > r1:
        raise ValueError("empty radius range")
    radii = np.exp(np.linspace(math.log(r1), math.log(r2), n_radii))
    frac = zero_set_fractions(pair, radii, M)
    worst = int(np.argmin(frac))
    if frac[worst] < eta:
        raise ZeroSetConditionFails(
            f"zero set fills {frac[worst]:.3g} < eta = {eta} of A(x, {radii[worst]:.3g}, {M * radii[worst]:.3g})",
            worst_annulus=(float(radii[worst]), float(M * radii[worst]), float(frac[worst])))
    J = np.array([acf_J(pair, r) for r in radii])
    fit = stats.linregress(np.log(radii), np.log(J))
    w_max = None if w is None else float(w(M * r2))
    return GrowthResult(float(fit.slope), float(fit.stderr), bool(fit.slope - 2 * fit.stderr > 0),
                        radii, J, w_max, float(frac[worst]))


def sweep_csv(path, rows) -> None:
    """Rows of (r, J, K_r, w, lhs, rhs, pass)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "J", "K_r", "w", "lhs", "rhs", "pass"])
        for row in rows:
            wr.writerow(row)


# ---------------------------------------------------------------------------
# spherical domains


def sphere_mesh(n_theta: int = 64, n_phi: int = 128, align=()):
    """Latitude-longitude triangulation of the unit sphere.

    Rings sit at polar angles ``pi i / n_theta``; the ring nearest to each
    angle in ``align`` is moved onto it, so caps bounded by those latitudes
    are resolved exactly.
    """
    thetas = np.pi * np.arange(1, n_theta) / n_theta
    for a in align:
        if 0 < a < np.pi:
            thetas[np.argmin(np.abs(thetas - a))] = a
    thetas = np.sort(thetas)
    phis = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(thetas, phis, indexing="ij")
    ring = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    verts = np.vstack([[0, 0, 1.0], ring, [0, 0, -1.0]])
    south = len(verts) - 1

    def vid(i, j):
        return 1 + i * n_phi + (j % n_phi)

    tris = []
    for j in range(n_phi):
        tris.append((0, vid(0, j), vid(0, j + 1)))
        tris.append((south, vid(n_theta - 2, j + 1), vid(n_theta - 2, j)))
    for i in range(n_theta - 2):
        for j in range(n_phi):
            a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            tris.append((a, c, b))
            tris.append((b, c, d))
    return verts, np.asarray(tris, np.int64)


@dataclass
class SphericalDomain:
    ambient_dim: int
    arcs: list | None = None  # ambient 2: (start, length) pairs
    vertices: np.ndarray | None = None  # ambient 3 mesh
    triangles: np.ndarray | None = None
    inside: np.ndarray | None = None  # vertex mask of Sigma (open set)
    area: float = 0.0  # length (ambient 2) or area (ambient 3)

    @classmethod
    def from_arcs(cls, arcs) -> "SphericalDomain":
        arcs = [(float(a) % (2 * np.pi), float(l)) for a, l in arcs]
        if any(l < 0 for _, l in arcs):
            raise ValueError("arc lengths must be nonnegative")
        return cls(2, arcs=arcs, area=float(sum(l for _, l in arcs)))

    @classmethod
    def from_predicate(cls, pred: Callable, n_theta: int = 64, n_phi: int = 128, align=()) -> "SphericalDomain":
        """Sigma = {p : pred(p)} for unit vectors p (rows); triangles count toward
        the area when their centroid direction satisfies the predicate."""
        V, T = sphere_mesh(n_theta, n_phi, align)
        inside = np.asarray(pred(V), bool)
        cen = V[T].mean(axis=1)
        cen /= np.linalg.norm(cen, axis=1, keepdims=True)
        ar = 0.5 * np.linalg.norm(np.cross(V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]]), axis=1)
        ar *= 4 * np.pi / ar.sum()
        area = float(ar[np.asarray(pred(cen), bool)].sum())
        return cls(3, vertices=V, triangles=T, inside=inside, area=area)

    @classmethod
    def cap(cls, theta0: float, n_theta: int = 64, n_phi: int = 128) -> "SphericalDomain":
        """Polar cap {angle to the north pole < theta0}."""
        return cls.from_predicate(lambda p: np.arccos(np.clip(p[:, 2], -1, 1)) < theta0 - 1e-9,
                                  n_theta, n_phi, align=(theta0,))

    @property
    def total_area(self) -> float:
        return 2 * np.pi if self.ambient_dim == 2 else 4 * np.pi


def _cotangent_matrices(V, T):
    """P1 stiffness and consistent mass matrices of a triangulated surface."""
    n = len(V)
    I, J, K, M = [], [], [], []
    e = [V[T[:, 2]] - V[T[:, 1]], V[T[:, 0]] - V[T[:, 2]], V[T[:, 1]] - V[T[:, 0]]]
    cross = np.cross(e[0], e[1])
    area2 = np.linalg.norm(cross, axis=1)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        # the angle at vertex a is opposite the edge (b, c)
        cot = -np.einsum("ij,ij->i", e[b], e[c]) / area2
        for p, q in ((b, c), (c, b)):
            I.append(T[:, p])
            J.append(T[:, q])
            K.append(-0.5 * cot)
        I.append(T[:, b])
        J.append(T[:, b])
        K.append(0.5 * cot)
        I.append(T[:, c])
        J.append(T[:, c])
        K.append(0.5 * cot)
    S = sparse.csr_matrix((np.concatenate(K), (np.concatenate(I), np.concatenate(J))), shape=(n, n))
    area = area2 / 2
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            rows.append(T[:, a])
            cols.append(T[:, b])
            vals.append(area * (2.0 if a == b else 1.0) / 12)
    Mm = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return S, Mm


def characteristic_constant(sigma: SphericalDomain):
    """(lambda_Sigma, gamma_Sigma) with lambda = gamma (gamma + n - 1)."""
    if sigma.ambient_dim == 2:
        comps = [l for _, l in sigma.arcs if l > 0] if sigma.arcs else []
        if not comps:
            raise EmptyDomain("no arcs")
        if sum(comps) >= 2 * np.pi - 1e-12:
            raise FullSphere("arcs cover the whole circle")
        lam = min((np.pi / l) ** 2 for l in comps)
        n = 1
    else:
        inside = np.asarray(sigma.inside, bool)
        if not inside.any():
            raise EmptyDomain("no interior vertices")
        if inside.all():
            raise FullSphere("Sigma has no Dirichlet boundary")
        S, Mm = _cotangent_matrices(sigma.vertices, sigma.triangles)
        idx = np.nonzero(inside)[0]
        Si = S[idx][:, idx].tocsc()
        Mi = Mm[idx][:, idx].tocsc()
        vals = eigsh(Si, k=1, M=Mi, sigma=0.0, which="LM", return_eigenvectors=False)
        lam = float(np.min(vals))
        n = 2
    gamma = (-(n - 1) + math.sqrt((n - 1) ** 2 + 4 * lam)) / 2
    return float(lam), float(gamma)


def _arcs_overlap(a1, a2) -> bool:
    def pieces(arcs):
        for s, l in arcs:
            e = s + l
            if e <= 2 * np.pi:
                yield s, e
            else:
                yield s, 2 * np.pi
                yield 0.0, e - 2 * np.pi

    return any(min(e1, e2) - max(s1, s2) > 1e-12 for s1, e1 in pieces(a1) for s2, e2 in pieces(a2))


@dataclass
class FHReport:
    gamma_sum: float
    gammas: tuple
    eps: float  # |sigma(Sigma_1) - half| / half
    defect_ratio: float | None  # (gamma_sum - 2) / eps^2


def friedland_hayman_check(s1: SphericalDomain, s2: SphericalDomain) -> FHReport:
    if s1.ambient_dim != s2.ambient_dim:
        raise ValueError("spherical domains live in different dimensions")
    if s1.ambient_dim == 2:
        if _arcs_overlap(s1.arcs, s2.arcs):
            raise ValueError("spherical domains overlap")
    elif np.any(np.asarray(s1.inside) & np.asarray(s2.inside)):
        raise ValueError("spherical domains overlap")
    g1 = characteristic_constant(s1)[1]
    g2 = characteristic_constant(s2)[1]
    half = s1.total_area / 2
    eps = abs(s1.area - half) / half
    total = g1 + g2
    return FHReport(total, (g1, g2), eps, (total - 2) / eps**2 if eps > 1e-12 else None)
