"""Finite-volume divergence-form operators, Dirichlet solves, Green functions
and elliptic measure on cell-centered grids.

Unknowns are the cells of Omega.  Dirichlet nodes are the cells outside Omega
that share a face with it (boundary-set cells, frame cells, cells of other
components).  For a face between cells P and N = P + e_k the flux is

    F = -(A_face grad u) . e_k,   A_face = (A(P) + A(N)) / 2,

with the normal derivative ``(u_N - u_P)/h`` and each tangential derivative
the average of the cell-centered differences at P and N.  Row P of the
assembled matrix is the net outward flux times the face area, so it equals
``h^d (L u)(P)``; for ``A = Id`` it is the standard 2d+1 point Laplacian.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.ndimage import maximum_filter
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu

from .errors import NonPositivityError, NotElliptic, PoleTooClose, SingularMap, SolveFailure
from .geometry import BoundarySet, Domain, face_crossing
from .grid import Grid, GridField

log = logging.getLogger(__name__)

NEG_TOL = 1e-8
DIRECT_LIMIT = {2: 256 * 256, 3: 48 * 48 * 48}


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(eq=False)
class CoefficientField:
    """Matrix field A(x) on every cell of a grid, with optional lower-order terms.

    ``fn`` (if given) evaluates the matrix at arbitrary points and is used by
    pullbacks and by point evaluations off the grid.
    """

    grid: Grid
    A: np.ndarray  # grid.shape + (d, d)
    b: np.ndarray | None = None  # grid.shape + (d,)
    e: np.ndarray | None = None
    c: np.ndarray | None = None  # zeroth-order coefficient d(x)
    fn: Callable | None = None
    tag: str = "custom"

    def __post_init__(self):
        d = self.grid.dim
        self.A = np.asarray(self.A, float)
        if self.A.shape != self.grid.shape + (d, d):
            raise ValueError(f"matrix field shape {self.A.shape} does not match grid {self.grid.shape}")

    @classmethod
    def identity(cls, grid: Grid) -> "CoefficientField":
        return cls.constant(grid, np.eye(grid.dim), tag="identity")

    @classmethod
    def constant(cls, grid: Grid, M, tag="constant") -> "CoefficientField":
        M = np.asarray(M, float)
        A = np.broadcast_to(M, grid.shape + M.shape).copy()
        return cls(grid, A, fn=lambda p: np.broadcast_to(M, np.shape(p)[:-1] + M.shape).copy(), tag=tag)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, tag="function") -> "CoefficientField":
        """``fn`` maps points of shape (..., d) to matrices of shape (..., d, d)."""
        pts = np.stack(grid.centers(), axis=-1)
        return cls(grid, fn(pts), fn=fn, tag=tag)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def transpose(self) -> "CoefficientField":
        fn = None if self.fn is None else (lambda p, f=self.fn: np.swapaxes(f(p), -1, -2))
        return CoefficientField(self.grid, np.swapaxes(self.A, -1, -2).copy(), self.b, self.e, self.c, fn, self.tag + "*")

    def symmetric_part(self) -> np.ndarray:
        return 0.5 * (self.A + np.swapaxes(self.A, -1, -2))

    def at(self, point) -> np.ndarray:
        if self.fn is not None:
            return np.asarray(self.fn(np.asarray(point, float)), float)
        return self.A[self.grid.index_of(point)]


def check_ellipticity(A: CoefficientField, samples: int, seed: int, mask: np.ndarray | None = None) -> float:
    """Ellipticity constant: max of 1/min <A xi, xi> and max <A xi, eta> over unit vectors.

    The sup over vectors is taken exactly at each sampled node (smallest
    eigenvalue of the symmetric part, operator norm).  Every node is checked
    for a non-positive form, sampled or not.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    d = A.dim
    mats = A.A.reshape(-1, d, d)
    if mask is not None:
        mats = mats[np.asarray(mask).ravel()]
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    lam_min = np.linalg.eigvalsh(sym)[:, 0]
    bad = np.nonzero(lam_min <= 0)[0]
    if len(bad):
        raise NotElliptic(f"quadratic form is not positive at {len(bad)} node(s), min eigenvalue {lam_min.min():.3g}")
    rng = np.random.default_rng(seed)
    pick = np.arange(len(mats)) if samples >= len(mats) else rng.choice(len(mats), samples, replace=False)
    norms = np.linalg.norm(mats[pick], ord=2, axis=(1, 2))
    return float(max(np.max(1.0 / lam_min[pick]), np.max(norms)))


# ---------------------------------------------------------------------------
# discrete operator


def _shift_index(shape, flat, axis, step):
    """Flat index of the neighbor along ``axis`` (or -1 outside the grid)."""
    idx = np.array(np.unravel_index(flat, shape))
    idx[axis] += step
    ok = (idx[axis] >= 0) & (idx[axis] < shape[axis])
    out = np.full(flat.shape, -1, np.int64)
    out[ok] = np.ravel_multi_index(tuple(idx[:, ok]), shape)
    return out


class DiscreteOperator:
    """Assembled FV operator for L = -div(A grad .) on a domain."""

    def __init__(self, A: CoefficientField, domain: Domain):
        if A.grid != domain.grid:
            raise ValueError("coefficient field and domain live on different grids")
        self.A = A
        self.domain = domain
        g = domain.grid
        self.grid = g
        mask = domain.mask.ravel()
        bidx = domain.boundary_index
        self.bflat = g.ravel(bidx) if len(bidx) else np.zeros(0, np.int64)
        self.iflat = np.flatnonzero(mask)
        if len(self.iflat) == 0:
            raise ValueError("domain has no interior cells")
        usable = mask.copy()
        usable[self.bflat] = True
        self.usable = usable
        full = self._assemble()
        n = g.size
        self.unknown = -np.ones(n, np.int64)
        self.unknown[self.iflat] = np.arange(len(self.iflat))
        self.bpos = -np.ones(n, np.int64)
        self.bpos[self.bflat] = np.arange(len(self.bflat))
        rows = full[self.iflat]
        self.M_II = rows[:, self.iflat].tocsc()
        self.M_IB = rows[:, self.bflat].tocsr()
        self._lu = None
        self._ilu = None
        # which boundary cells belong to the boundary set
        setpos = -np.ones(n, np.int64)
        setpos[domain.set.flat] = np.arange(len(domain.set))
        self.b_setpos = setpos[self.bflat]

    # -- assembly -----------------------------------------------------------
    def _diff_terms(self, cells, m):
        """Coefficient triplets of the centered derivative along m at ``cells``.

        Returns (row_pos, col_flat, coef) with row_pos indexing ``cells``.
        """
        g = self.grid
        h = g.h
        up = _shift_index(g.shape, cells, m, 1)
        dn = _shift_index(g.shape, cells, m, -1)
        has_up = (up >= 0) & self.usable[np.maximum(up, 0)]
        has_dn = (dn >= 0) & self.usable[np.maximum(dn, 0)]
        pos = np.arange(len(cells))
        both = has_up & has_dn
        only_up = has_up & ~has_dn
        only_dn = has_dn & ~has_up
        r = [pos[both], pos[both], pos[only_up], pos[only_up], pos[only_dn], pos[only_dn]]
        c = [up[both], dn[both], up[only_up], cells[only_up], cells[only_dn], dn[only_dn]]
        v = [np.full(both.sum(), 0.5 / h), np.full(both.sum(), -0.5 / h),
             np.full(only_up.sum(), 1 / h), np.full(only_up.sum(), -1 / h),
             np.full(only_dn.sum(), 1 / h), np.full(only_dn.sum(), -1 / h)]
        return np.concatenate(r), np.concatenate(c), np.concatenate(v)

    def _crossing(self, P, N, mask):
        """Distance fraction to the true surface for faces between Omega and a set cell."""
        theta = np.ones(len(P))
        bset = self.domain.set
        if bset.kind != "sphere":
            return theta
        in_set = np.zeros(self.grid.size, bool)
        in_set[bset.flat] = True
        a = mask[P] & in_set[N]
        b = mask[N] & in_set[P]
        pts = lambda f: self.grid.points(self.grid.unravel(f))
        if a.any():
            theta[a] = face_crossing(bset, pts(P[a]), pts(N[a]))
        if b.any():
            theta[b] = face_crossing(bset, pts(N[b]), pts(P[b]))
        return theta

    def _assemble(self) -> sparse.csr_matrix:
        g = self.grid
        d, h, n = g.dim, g.h, g.size
        Aflat = self.A.A.reshape(n, d, d)
        mask = self.domain.mask.ravel()
        rows, cols, vals = [], [], []
        area = h ** (d - 1)
        for k in range(d):
            P = np.arange(n)
            N = _shift_index(g.shape, P, k, 1)
            ok = N >= 0
            P, N = P[ok], N[ok]
            keep = (mask[P] | mask[N]) & self.usable[P] & self.usable[N]
            P, N = P[keep], N[keep]
            if len(P) == 0:
                continue
            Af = 0.5 * (Aflat[P] + Aflat[N])
            theta = self._crossing(P, N, mask)
            # flux F = -(A_kk (uN - uP)/h + sum_m A_km T_m); face id = position in P
            fr = [np.arange(len(P)), np.arange(len(P))]
            fc = [N, P]
            fv = [-Af[:, k, k] / (theta * h), Af[:, k, k] / (theta * h)]
            for m in range(d):
                if m == k:
                    continue
                coef = Af[:, k, m]
                nz = coef != 0
                if not nz.any():
                    continue
                for cellset in (P, N):
                    r_, c_, v_ = self._diff_terms(cellset[nz], m)
                    face = np.nonzero(nz)[0][r_]
                    fr.append(face)
                    fc.append(c_)
                    fv.append(-0.5 * coef[face] * v_)
            fr, fc, fv = np.concatenate(fr), np.concatenate(fc), np.concatenate(fv)
            flux = sparse.csr_matrix((fv * area, (fr, fc)), shape=(len(P), n))
            inc = sparse.csr_matrix(
                (np.concatenate([np.ones(len(P)), -np.ones(len(P))]),
                 (np.concatenate([P, N]), np.concatenate([np.arange(len(P))] * 2))), shape=(n, len(P)))
            prod = (inc @ flux).tocoo()
            rows.append(prod.row)
            cols.append(prod.col)
            vals.append(prod.data)
        full = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        full.sum_duplicates()
        return full

    # -- linear algebra -------------------------------------------------------
    @property
    def direct(self) -> bool:
        return self.grid.size <= DIRECT_LIMIT.get(self.grid.dim, 0)

    def _solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, float)
        if self.direct:
            if self._lu is None:
                try:
                    self._lu = splu(self.M_II)
                except RuntimeError as exc:
                    raise SolveFailure(f"sparse LU failed: {exc}") from exc
            return self._lu.solve(rhs, trans="T" if transpose else "N")
        return self._krylov(rhs, transpose)

    def _krylov(self, rhs, transpose):
        if self._ilu is None:
            self._ilu = spilu(self.M_II, drop_tol=1e-6, fill_factor=30, permc_spec="MMD_AT_PLUS_A")
        mat = self.M_II.T.tocsr() if transpose else self.M_II
        ilu = self._ilu
        prec = LinearOperator(mat.shape, matvec=(lambda v: ilu.solve(v, trans="T")) if transpose else ilu.solve)
        cols = rhs.reshape(len(rhs), -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            b = cols[:, j]
            if not np.any(b):
                out[:, j] = 0.0
                continue
            x, info = gmres(mat, b, M=prec, rtol=1e-12, atol=0.0, restart=50, maxiter=200)
            if info != 0:
                rel = np.linalg.norm(mat @ x - b) / np.linalg.norm(b)
                if rel > 1e-10:
                    raise SolveFailure(f"GMRES stagnated (info={info}, relative residual {rel:.2e})")
            out[:, j] = x
        return out.reshape(rhs.shape)

    def residual(self, u_int, rhs, transpose=False) -> float:
        mat = self.M_II.T if transpose else self.M_II
        nb = np.linalg.norm(rhs)
        r = np.linalg.norm(mat @ u_int - rhs)
        return float(r / nb) if nb > 0 else float(r)

    # -- helpers --------------------------------------------------------------
    def boundary_values(self, g) -> np.ndarray:
        """Dirichlet data at the boundary cells from a scalar, callable or GridField."""
        if isinstance(g, GridField):
            return g.values.ravel()[self.bflat]
        if callable(g):
            pts = self.grid.points(self.grid.unravel(self.bflat))
            return np.asarray(g(pts), float).reshape(-1)
        arr = np.asarray(g, float)
        if arr.ndim == 0:
            return np.full(len(self.bflat), float(arr))
        if arr.shape == (len(self.bflat),):
            return arr
        if arr.shape == self.grid.shape:
            return arr.ravel()[self.bflat]
        raise ValueError("unsupported boundary data")

    def set_data(self, values_on_set: np.ndarray, frame_value: float = 0.0) -> np.ndarray:
        """Boundary data from per-set-cell values; other boundary cells get ``frame_value``."""
        out = np.full(len(self.bflat), float(frame_value))
        on = self.b_setpos >= 0
        out[on] = np.asarray(values_on_set, float)[self.b_setpos[on]]
        return out

    def node_unknown(self, point) -> int:
        flat = int(self.grid.ravel(np.array(self.grid.index_of(point))[None])[0])
        k = self.unknown[flat]
        if k < 0:
            raise PoleTooClose(f"{tuple(point)} is not an interior node")
        return int(k)

    def to_field(self, u_int, u_b=None) -> np.ndarray:
        vals = np.full(self.grid.size, np.nan)
        vals[self.iflat] = u_int
        vals[self.bflat] = 0.0 if u_b is None else u_b
        return vals.reshape(self.grid.shape)


_OPERATOR_CACHE: dict = {}


def discrete_operator(A: CoefficientField, domain: Domain) -> DiscreteOperator:
    """Assemble (or reuse) the operator for a given field and domain object."""
    key = (id(A), id(domain))
    op = _OPERATOR_CACHE.get(key)
    if op is None or op.A is not A or op.domain is not domain:
        op = DiscreteOperator(A, domain)
        if len(_OPERATOR_CACHE) > 8:
            _OPERATOR_CACHE.clear()
        _OPERATOR_CACHE[key] = op
    return op


# ---------------------------------------------------------------------------
# solves


@dataclass
class DirichletSolution(GridField):
    residual: float = 0.0
    max_principle_violation: float = 0.0


def solve_dirichlet(A: CoefficientField, domain: Domain, g) -> DirichletSolution:
    """Solve L u = 0 in Omega with u = g on the discrete boundary.

    Values outside Omega and its boundary cells are NaN.
    """
    op = discrete_operator(A, domain)
    ub = op.boundary_values(g)
    if not np.all(np.isfinite(ub)):
        raise ValueError("boundary data must be finite")
    rhs = -(op.M_IB @ ub)
    ui = op._solve(rhs)
    res = op.residual(ui, rhs)
    if res > 1e-10 and np.linalg.norm(rhs) > 0:
        raise SolveFailure(f"relative residual {res:.2e} exceeds 1e-10")
    lo, hi = (ub.min(), ub.max()) if len(ub) else (0.0, 0.0)
    scale = max(1.0, abs(lo), abs(hi))
    viol = float(max(0.0, lo - ui.min(), ui.max() - hi))
    if viol > 1e-9 * scale:
        log.warning("discrete maximum principle violated by %.3g", viol)
    return DirichletSolution(op.grid, op.to_field(ui, ub), domain.mask, residual=res, max_principle_violation=viol)


@dataclass
class EllipticMeasure:
    """omega^pole over the boundary-set cells plus the mass carried by other boundary cells."""

    pole: np.ndarray
    values: np.ndarray  # per boundary-set cell (positions of BoundarySet)
    frame_mass: float
    boundary: np.ndarray  # per discrete boundary cell, in operator order
    clamped: float = 0.0

    @property
    def total(self) -> float:
        return float(self.values.sum() + self.frame_mass)

    def of(self, positions) -> float:
        return float(self.values[np.asarray(positions, dtype=np.int64)].sum())


def _check_pole(domain: Domain, pole):
    g = domain.grid
    if not domain.contains(pole):
        raise PoleTooClose(f"pole {tuple(pole)} is not inside the domain")
    if domain.dist_complement[g.index_of(pole)] < 2 * g.h - 1e-12:
        raise PoleTooClose(f"pole {tuple(pole)} is closer than 2h to the boundary")


def elliptic_measure(A: CoefficientField, domain: Domain, pole) -> EllipticMeasure:
    """omega^pole for every boundary cell from one adjoint solve."""
    pole = np.asarray(pole, float)
    _check_pole(domain, pole)
    op = discrete_operator(A, domain)
    e = np.zeros(len(op.iflat))
    e[op.node_unknown(pole)] = 1.0
    y = op._solve(e, transpose=True)
    w = -(op.M_IB.T @ y)
    return _finalize_measure(op, pole, w)


def _finalize_measure(op: DiscreteOperator, pole, w) -> EllipticMeasure:
    worst = w.min() if len(w) else 0.0
    if worst < -NEG_TOL:
        raise NonPositivityError(f"elliptic measure entry {worst:.3g} below -{NEG_TOL:g}")
    clamped = float(-w[w < 0].sum())
    if clamped:
        w = np.where(w < 0, 0.0, w)
        w = w / w.sum()
    on = op.b_setpos >= 0
    vals = np.zeros(len(op.domain.set))
    vals[op.b_setpos[on]] = w[on]
    return EllipticMeasure(np.asarray(pole, float), vals, float(w[~on].sum()), w, clamped)


def elliptic_measure_from_green(A: CoefficientField, domain: Domain, green: "GreenTable") -> EllipticMeasure:
    """omega^p = -M_IB^T G_L(p, .): the same measure read off a Green table."""
    op = discrete_operator(A, domain)
    y = green.values.values.ravel()[op.iflat]
    return _finalize_measure(op, green.pole, -(op.M_IB.T @ y))


@dataclass
class GreenTable:
    pole: np.ndarray
    values: GridField
    operator: str  # "L" or "L*"
    bounds: dict = field(default_factory=dict)

    def at(self, point) -> float:
        return self.values.at(point)


def green_function(A: CoefficientField, domain: Domain, pole, adjoint: bool = False, a: float = 0.5) -> GreenTable:
    """G(pole, .) for L (``adjoint=False``) or for L*.

    For L the table solves ``L* G(pole, .) = delta_pole`` in the second
    variable, so that ``G_L(x, y) = G_{L*}(y, x)`` holds by transposition.
    In ambient dimension 3 the pointwise constants of
    ``G <= C |x-y|^(1-n)`` and ``G >= c |x-y|^(1-n)`` (for |x-y| <= a delta(x))
    are measured and stored in ``bounds``.
    """
    pole = np.asarray(pole, float)
    _check_pole(domain, pole)
    op = discrete_operator(A, domain)
    e = np.zeros(len(op.iflat))
    e[op.node_unknown(pole)] = 1.0
    gi = op._solve(e, transpose=not adjoint)
    vals = op.to_field(gi)
    table = GreenTable(pole, GridField(op.grid, vals, domain.mask), "L*" if adjoint else "L")
    if op.grid.dim == 3:
        n = 2
        pts = op.grid.points(op.grid.unravel(op.iflat))
        r = np.linalg.norm(pts - op.grid.points(np.array(op.grid.index_of(pole))), axis=1)
        away = r > 0
        scaled = gi[away] * r[away] ** (n - 1)
        delta = op.domain.dist_complement[op.grid.index_of(pole)]
        near = away & (r <= a * delta)
        table.bounds = {
            "min_value": float(gi.min()),
            "C_upper": float(scaled.max()),
            "c_lower": float((gi[near] * r[near] ** (n - 1)).min()) if near.any() else float("nan"),
            "a": a,
        }
    return table


# ---------------------------------------------------------------------------
# identities and estimates


def cell_gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Central differences (one-sided at NaN neighbors); shape values.shape + (d,)."""
    d = values.ndim
    out = np.zeros(values.shape + (d,))
    for k in range(d):
        v = np.moveaxis(values, k, 0)
        up = np.full_like(v, np.nan)
        dn = np.full_like(v, np.nan)
        up[:-1] = v[1:]
        dn[1:] = v[:-1]
        cen = (up - dn) / (2 * h)
        fwd = (up - v) / h
        bwd = (v - dn) / h
        gk = np.where(np.isfinite(cen), cen, np.where(np.isfinite(fwd), fwd, np.where(np.isfinite(bwd), bwd, 0.0)))
        out[..., k] = np.moveaxis(gk, 0, k)
    return out


def dual_cell_gradients(values: np.ndarray, h: float):
    """Gradients at the centers of dual cells (boxes spanned by 2^d neighboring nodes).

    Returns ``(grad, valid)`` where ``grad`` has shape (N0-1, ..., d) and a
    dual cell is valid when all of its corner values are finite.
    """
    d = values.ndim
    corners = []
    for bits in np.ndindex(*([2] * d)):
        sl = tuple(slice(b, None if b else -1) for b in bits)
        corners.append((bits, values[sl]))
    valid = np.all([np.isfinite(v) for _, v in corners], axis=0)
    grad = np.zeros(valid.shape + (d,))
    for k in range(d):
        acc = np.zeros(valid.shape)
        for bits, v in corners:
            acc += (1 if bits[k] else -1) * np.nan_to_num(v)
        grad[..., k] = acc / (2 ** (d - 1) * h)
    return grad, valid


def riesz_identity_residual(A: CoefficientField, domain: Domain, pole, phi: Callable) -> float:
    """|(int phi d omega^x - phi(x)) - (-int A* grad_y G(x,y) . grad phi dy)| / max|phi|.

    The left side uses the discrete elliptic measure.  The right side is an
    independent quadrature over dual cells (corners in Omega or on its
    discrete boundary, where G = 0) with multilinear gradients.
    """
    g = domain.grid
    pts = np.stack(g.centers(), axis=-1)
    phiv = np.asarray(phi(pts), float)
    pmax = np.abs(phiv).max()
    if pmax == 0:
        return 0.0
    op = discrete_operator(A, domain)
    om = elliptic_measure(A, domain, pole)
    lhs = float(om.boundary @ phiv.ravel()[op.bflat]) - float(phiv[g.index_of(pole)])
    G = green_function(A, domain, pole).values.values
    G = np.where(domain.mask, G, np.nan)
    G.ravel()[op.bflat] = 0.0
    dG, ok = dual_cell_gradients(G, g.h)
    dphi, _ = dual_cell_gradients(phiv, g.h)
    # coefficients at dual-cell centers: average of the corner nodes
    Ac = np.zeros(ok.shape + (g.dim, g.dim))
    for bits in np.ndindex(*([2] * g.dim)):
        sl = tuple(slice(b, None if b else -1) for b in bits)
        Ac += A.A[sl]
    Ac /= 2**g.dim
    integrand = np.einsum("...ji,...j,...i->...", Ac, dG, dphi)
    rhs = -float(integrand[ok].sum() * g.h**g.dim)
    return abs(lhs - rhs) / pmax


def bourgain_constant(A: CoefficientField, domain: Domain, x, r: float) -> float:
    """inf over nodes y of Omega in B(x, r) of omega^y(B(x, 2r))."""
    op = discrete_operator(A, domain)
    bset = domain.set
    near = np.linalg.norm(bset.points - np.asarray(x, float), axis=1) < 2 * r
    u = solve_dirichlet(A, domain, op.set_data(near.astype(float))).values
    dist = domain.grid.distance_from(np.asarray(x, float))
    sel = domain.mask & (dist < r)
    if not sel.any():
        raise ValueError("no interior node in B(x, r)")
    return float(u[sel].min())


def holder_exponent(A: CoefficientField, domain: Domain, x, r: float, direction=None, n_samples: int = 12):
    """Fit omega^y(B(x,r)^c) ~ (|x-y|/r)^alpha along a ray from x into Omega.

    Returns ``(alpha, distances, values)``.
    """
    g = domain.grid
    x = np.asarray(x, float)
    op = discrete_operator(A, domain)
    far = np.linalg.norm(domain.set.points - x, axis=1) >= r
    u = solve_dirichlet(A, domain, op.set_data(far.astype(float), frame_value=1.0)).values
    if direction is None:
        direction = np.zeros(g.dim)
        direction[-1] = 1.0
    direction = np.asarray(direction, float) / np.linalg.norm(direction)
    ts = np.exp(np.linspace(math.log(4 * g.h), math.log(r / 4), n_samples))
    vals = np.array([u[g.index_of(x + t * direction)] for t in ts])
    ds = np.array([np.linalg.norm(g.points(np.array(g.index_of(x + t * direction))) - x) for t in ts])
    ok = np.isfinite(vals) & (vals > 0)
    alpha = float(np.polyfit(np.log(ds[ok] / r), np.log(vals[ok]), 1)[0])
    return alpha, ds[ok], vals[ok]


def local_lipschitz(A: CoefficientField) -> np.ndarray:
    """Per-node max over entries and face neighbors of |a_ij(P) - a_ij(N)| / h."""
    g = A.grid
    q = np.zeros(g.shape)
    for k in range(g.dim):
        diff = np.abs(np.diff(A.A, axis=k)).max(axis=(-1, -2)) / g.h
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        q[tuple(lo)] = np.maximum(q[tuple(lo)], diff)
        q[tuple(hi)] = np.maximum(q[tuple(hi)], diff)
    return q


def coefficient_carleson_norm(A: CoefficientField, bset: BoundarySet, domain: Domain, ball_samples: int,
                              M: float = 4.0, seed: int = 0, r_max: float | None = None):
    """Sampled sup of r^-n int_{B(x,r) cap Omega} osc(y) dy for the coefficient Carleson condition.

    ``osc(y)`` is the largest local difference quotient of the entries of A
    over nodes z of Omega in the box of half-width M delta(y) around y with
    delta(z) >= delta(y)/4 (dyadic bands in delta).  Returns ``(norm, details)``.
    """
    if M < 4:
        raise ValueError("M must be >= 4")
    g = domain.grid
    q = np.where(domain.mask, local_lipschitz(A), 0.0)
    delta = domain.dist_complement
    osc = np.zeros(g.shape)
    k = 0
    while True:
        lo_b, hi_b = 2**k * g.h, 2 ** (k + 1) * g.h
        band = domain.mask & (delta >= lo_b) & (delta < hi_b)
        if lo_b > delta.max():
            break
        if band.any():
            eligible = np.where(delta >= lo_b / 4, q, 0.0)
            rad = int(math.ceil(M * hi_b / g.h))
            mx = maximum_filter(eligible, size=2 * rad + 1, mode="constant", cval=0.0)
            osc[band] = mx[band]
        k += 1
    rng = np.random.default_rng(seed)
    pts = bset.points
    r_hi = bset.diam / 2 if r_max is None else r_max
    r_lo = 16 * g.h
    best = 0.0
    rows = []
    for _ in range(ball_samples):
        x = pts[rng.integers(len(pts))]
        r = math.exp(rng.uniform(math.log(r_lo), math.log(max(r_hi, r_lo))))
        inside = domain.mask & (g.distance_from(x) < r)
        val = float(osc[inside].sum() * g.h**g.dim / r**bset.n)
        rows.append((x, r, val))
        best = max(best, val)
    return best, rows


# ---------------------------------------------------------------------------
# pullbacks


def _sqrt_spd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if np.any(w <= 0):
        raise NotElliptic("symmetric part is not positive definite")
    return (V * np.sqrt(w)) @ V.T


def pullback_matrix(A: CoefficientField, Phi, grid: Grid | None = None) -> CoefficientField:
    """Coefficients of u o Phi for a linear map Phi: |det Phi| Phi^-1 (A o Phi) Phi^-T.

    The new field lives on ``grid`` (default: the image of A's grid under
    Phi^-1 with the same spacing, rounded to whole cells).
    """
    P = np.asarray(Phi, float)
    det = np.linalg.det(P)
    if abs(det) < 1e-14:
        raise SingularMap("linear map is singular")
    Pinv = np.linalg.inv(P)
    if grid is None:
        corners = np.array(np.meshgrid(*[[l, hgh] for l, hgh in zip(A.grid.lo, A.grid.hi)], indexing="ij"))
        corners = corners.reshape(A.dim, -1).T @ Pinv.T
        grid = Grid.box(corners.min(axis=0), corners.max(axis=0), A.grid.h)

    def fn(p, base=A, P=P, Pinv=Pinv, det=det):
        y = p @ P.T
        if base.fn is not None:
            Ay = base.fn(y)
        else:
            Ay = base.A[tuple(base.grid.indices_of(y.reshape(-1, base.dim)).T)].reshape(y.shape[:-1] + (base.dim, base.dim))
        return abs(det) * np.einsum("ij,...jk,lk->...il", Pinv, Ay, Pinv)

    return CoefficientField.from_function(grid, fn, tag=f"pullback({A.tag})")


def normalize_at(A: CoefficientField, y0, grid: Grid | None = None):
    """Return ``(S, A_tilde)`` with S = sqrt(A_s(y0)) and A_tilde_s(S^-1 y0) = Id.

    A_tilde is the pullback under z -> S z divided by |det S|; a constant
    factor does not change the solutions.
    """
    As = 0.5 * (A.at(y0) + A.at(y0).T)
    S = _sqrt_spd(As)
    pb = pullback_matrix(A, S, grid)
    scale = 1.0 / abs(np.linalg.det(S))
    fn0 = pb.fn
    return S, CoefficientField.from_function(pb.grid, lambda p: scale * fn0(p), tag=f"normalized({A.tag})")
