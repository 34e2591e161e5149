"""Boundary functionals of grid solutions: cones, square and non-tangential
maximal functions, Carleson energies, epsilon-approximability and the
weighted second-derivative Carleson quantity.

Every functional takes the ``Domain`` explicitly because cones and weights
depend on delta(y), the distance from y to the discrete boundary of Omega.
Fields are plain ``GridField`` objects; NaN marks nodes without a value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroDenominator
from .geometry import Domain
from .grid import GridField
from .solver import CoefficientField, solve_dirichlet
from .whitney import Whitney


@dataclass(frozen=True)
class Cone:
    """Gamma(x, alpha) = {y in Omega : |x - y| < alpha delta(y)}, truncated to s <= |y - x| < t."""

    vertex: np.ndarray
    alpha: float
    s: float = 0.0
    t: float = math.inf

    def __post_init__(self):
        if self.alpha < 2:
            raise ValueError("cone aperture must be >= 2")
        if not self.s < self.t:
            raise ValueError("need s < t")
        object.__setattr__(self, "vertex", np.asarray(self.vertex, float))

    def mask(self, domain: Domain) -> np.ndarray:
        r = domain.grid.distance_from(self.vertex)
        delta = domain.dist_complement
        return domain.mask & (r < self.alpha * delta) & (r >= self.s) & (r < self.t)


def gradient(field: GridField | np.ndarray, h: float | None = None) -> np.ndarray:
    """Central-difference gradient, one-sided next to NaN nodes, NaN where neither side exists."""
    if isinstance(field, GridField):
        h = field.grid.h
        v = field.values
    else:
        v = np.asarray(field, float)
    d = v.ndim
    out = np.full(v.shape + (d,), np.nan)
    for k in range(d):
        a = np.moveaxis(v, k, 0)
        up = np.full_like(a, np.nan)
        dn = np.full_like(a, np.nan)
        up[:-1] = a[1:]
        dn[1:] = a[:-1]
        cen = (up - dn) / (2 * h)
        g = np.where(np.isfinite(cen), cen, np.where(np.isfinite(up - a), (up - a) / h, (a - dn) / h))
        out[..., k] = np.moveaxis(g, 0, k)
    return out


def hessian_norm2(field: GridField) -> np.ndarray:
    """|D^2 u|^2 (Frobenius) from second differences; NaN within 2 cells of missing data."""
    v = field.values
    h = field.grid.h
    d = v.ndim

    def sh(arr, shifts):
        out = np.full_like(arr, np.nan)
        src = [slice(None)] * d
        dst = [slice(None)] * d
        for k, s in enumerate(shifts):
            if s > 0:
                src[k], dst[k] = slice(s, None), slice(None, -s)
            elif s < 0:
                src[k], dst[k] = slice(None, s), slice(-s, None)
        out[tuple(dst)] = arr[tuple(src)]
        return out

    tot = np.zeros_like(v)
    for k in range(d):
        e = [0] * d
        e[k] = 1
        m = [-x for x in e]
        dkk = (sh(v, e) - 2 * v + sh(v, m)) / h**2
        tot = tot + dkk**2
        for l in range(k + 1, d):
            pp = [0] * d
            pp[k], pp[l] = 1, 1
            pm = [0] * d
            pm[k], pm[l] = 1, -1
            dkl = (sh(v, pp) - sh(v, pm) - sh(v, [-x for x in pm]) + sh(v, [-x for x in pp])) / (4 * h**2)
            tot = tot + 2 * dkl**2
    return tot


def square_function(u: GridField, domain: Domain, x, alpha: float, truncation=(None, None)) -> float:
    """Truncated S_alpha u(x) = (int_Gamma |grad u|^2 delta^(1-n) dy)^(1/2).

    The default truncation is s = 2h below and no upper cut.
    """
    g = domain.grid
    s, t = truncation
    s = 2 * g.h if s is None else s
    t = math.inf if t is None else t
    cone = Cone(x, alpha, s, t).mask(domain)
    grad = gradient(u)
    n = g.dim - 1
    dens = np.nansum(grad**2, axis=-1) * domain.dist_complement ** (1 - n)
    val = float(np.nansum(dens[cone]) * g.h**g.dim)
    return math.sqrt(max(val, 0.0))


def nontangential_max(u: GridField, domain: Domain, x, alpha: float, s: float = 0.0):
    """sup |u| over the cone; returns ``(value, empty_flag)``."""
    cone = Cone(x, alpha, s).mask(domain)
    vals = np.abs(u.values[cone])
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        return 0.0, True
    return float(vals.max()), False


def carleson_energy(u: GridField, domain: Domain, x, r: float) -> float:
    """r^-n int_{B(x,r) cap Omega} |grad u|^2 delta dy / ||u||_inf^2 (sup over Omega)."""
    g = domain.grid
    vals = u.values[domain.mask]
    sup = np.nanmax(np.abs(vals)) if vals.size else 0.0
    if sup == 0 or np.nanmax(vals) == np.nanmin(vals):
        return 0.0
    ball = domain.mask & (g.distance_from(np.asarray(x, float)) < r)
    grad = gradient(u)
    dens = np.nansum(grad**2, axis=-1) * domain.dist_complement
    return float(np.nansum(dens[ball]) * g.h**g.dim / r ** (g.dim - 1) / sup**2)


def boundary_sample(domain: Domain, window=None, stride: int = 1):
    """Positions (into the boundary set) of cells used as boundary sample points.

    ``window`` = (lo, hi) restricts the first coordinate.
    """
    pts = domain.set.points
    keep = np.ones(len(pts), bool)
    if window is not None:
        keep &= (pts[:, 0] >= window[0]) & (pts[:, 0] <= window[1])
    pos = np.nonzero(keep)[0][::stride]
    return pos


def s_over_n_ratio(A: CoefficientField, domain: Domain, data_family, p: float = 2.0, alpha: float = 2.0,
                   truncation=(None, None), window=None, stride: int = 1):
    """max over the data family of ||S u||_{L^p(mu)} / ||N_* u||_{L^p(mu)}.

    Boundary integrals are mu-weighted sums over the sampled set cells.
    Returns ``(max_ratio, per_datum_ratios)``.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    data_family = list(data_family)
    if not data_family:
        raise ValueError("data family is empty")
    pos = boundary_sample(domain, window, stride)
    w = domain.set.weights[pos]
    xs = domain.set.points[pos]
    g = domain.grid
    ratios = []
    for datum in data_family:
        u = solve_dirichlet(A, domain, datum)
        grad = gradient(u)
        n = g.dim - 1
        dens = np.nansum(grad**2, axis=-1) * domain.dist_complement ** (1 - n) * g.h**g.dim
        s, t = truncation
        s = 2 * g.h if s is None else s
        t = math.inf if t is None else t
        S = np.empty(len(xs))
        N = np.empty(len(xs))
        omega = np.flatnonzero(domain.mask)
        ypts = g.points(g.unravel(omega))
        delta = domain.dist_complement.ravel()[omega]
        dflat = dens.ravel()[omega]
        uflat = np.abs(u.values.ravel()[omega])
        for k, x in enumerate(xs):
            r = np.linalg.norm(ypts - x, axis=1)
            cone = r < alpha * delta
            S[k] = math.sqrt(np.nansum(dflat[cone & (r >= s) & (r < t)]))
            N[k] = np.nanmax(uflat[cone]) if cone.any() else 0.0
        num = (w * S**p).sum() ** (1 / p)
        den = (w * N**p).sum() ** (1 / p)
        if den == 0:
            raise ZeroDenominator("N_* u vanishes on the sampled boundary")
        ratios.append(float(num / den))
    return max(ratios), ratios


@dataclass
class Approximation:
    phi: GridField
    cost: float
    sup_error: float
    success: bool


def epsilon_approximability_cost(u: GridField, domain: Domain, x, r: float, eps: float, whitney: Whitney) -> Approximation:
    """Whitney-average candidate phi and its scaled total variation in B(x, r).

    phi is the average of u over each Whitney cube; nodes outside every cube
    keep phi = u.  The cost is r^-n times the sum over faces inside B cap Omega
    of |jump phi| times the face area.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = domain.grid
    vals = np.where(domain.mask, u.values, np.nan)
    owner = whitney.owner
    phi = vals.copy()
    covered = owner >= 0
    if covered.any():
        sums = np.bincount(owner[covered], weights=vals[covered], minlength=len(whitney))
        cnt = np.bincount(owner[covered], minlength=len(whitney))
        avg = sums / np.maximum(cnt, 1)
        phi[covered] = avg[owner[covered]]
    ball = domain.mask & (g.distance_from(np.asarray(x, float)) < r)
    err = np.abs(vals - phi)[ball]
    sup_err = float(np.nanmax(err)) if err.size else 0.0
    tv = 0.0
    for k in range(g.dim):
        a = [slice(None)] * g.dim
        b = [slice(None)] * g.dim
        a[k] = slice(0, -1)
        b[k] = slice(1, None)
        both = ball[tuple(a)] & ball[tuple(b)]
        jump = np.abs(phi[tuple(b)] - phi[tuple(a)])
        tv += float(np.nansum(jump[both]))
    cost = tv * g.h ** (g.dim - 1) / r ** (g.dim - 1)
    return Approximation(GridField(g, phi, domain.mask), cost, sup_err, sup_err < eps)


def second_derivative_carleson(u_star: GridField, u: GridField, sawtooth: np.ndarray, mu_S: float) -> float:
    """int over the sawtooth of |D^2 u_*|^2 u dy, divided by mu(S).

    ``sawtooth`` is a boolean node mask; nodes without a full second-difference
    stencil are skipped.
    """
    if mu_S <= 0:
        raise ValueError("mu(S) must be positive")
    g = u.grid
    H = hessian_norm2(u_star)
    uv = u.values
    sel = sawtooth & np.isfinite(H) & np.isfinite(uv)
    if np.any(uv[sel] < -1e-12):
        raise ValueError("u must be nonnegative on the sawtooth")
    return float((H[sel] * uv[sel]).sum() * g.h**g.dim / mu_S)


def region_volume_ratio(domain: Domain, x, alpha: float, ell: float) -> float:
    """|Gamma(Q, x)| / l(Q)^(n+1) for the cone piece at scale l: l/2 <= |y - x| < 2l (a proxy for Gamma(Q, x))."""
    g = domain.grid
    m = Cone(x, alpha, ell / 2, 2 * ell).mask(domain)
    return float(m.sum() * g.h**g.dim / ell**g.dim)
