"""Experiment pipelines: generate -> solve -> diagnose -> corona -> acf -> classify -> report.

Each stage writes its tables into the output directory and its scalar
results into ``metrics/<stage>.json``.  The report stage merges those,
evaluates the configured checks and writes ``summary.json`` plus SVG plots.
Nothing time-dependent is written to CSV or JSON, so identical configs give
byte-identical tables.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import operator as op_
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import linregress

from . import acf as acf_mod
from .cache import SolveCache, code_version
from .config import ExperimentConfig, STAGES
from .corona import MeasureOracle, StoppingParams, build_top, ld_iterates, pole_for
from .errors import ConfigInvalid, PipelineStageFailure, UrellipticError
from .estimates import carleson_energy, s_over_n_ratio
from .geometry import ad_regularity, generate_boundary, make_domain, write_set_csv
from .grid import Grid, GridField
from .lattice import build_lattice
from .rectifiability import (batpp_test, bbeta_infty, local_symmetry_test, type_classify, whsa_test,
                             wts_test)
from .report import line_plot, scatter_map, write_csv, write_json
from .solver import CoefficientField, bourgain_constant, discrete_operator, elliptic_measure, green_function
from .whitney import whitney_decompose

log = logging.getLogger(__name__)

DEPENDS = {
    "generate": (),
    "solve": ("generate",),
    "diagnose": ("generate", "solve"),
    "corona": ("generate",),
    "acf": (),
    "classify": ("generate",),
    "report": (),
}


def make_operator(cfg: ExperimentConfig, grid: Grid) -> CoefficientField:
    """Coefficient field from the operator block.

    ``perturbed``: A(y) = I + eps |y - center| E, E the symmetric matrix with
    ones off the diagonal.  ``random``: I plus a seeded smooth symmetric field
    of amplitude ``amp`` (kept below 1/2 so ellipticity survives).
    """
    spec = cfg.operator
    d = grid.dim
    p = spec.params
    if spec.kind == "identity":
        return CoefficientField.identity(grid)
    if spec.kind == "constant":
        M = np.asarray(p.get("matrix", np.eye(d)), float)
        if M.shape != (d, d):
            raise ConfigInvalid("operator.params.matrix", f"must be {d}x{d}")
        return CoefficientField.constant(grid, M)
    if spec.kind == "perturbed":
        return perturbed_identity(grid, float(p.get("eps", 0.05)), p.get("center"))
    amp = float(p.get("amp", 0.2))
    if not 0 <= amp < 0.5:
        raise ConfigInvalid("operator.params.amp", "must lie in [0, 1/2)")
    rng = np.random.default_rng(spec.seed)
    modes = int(p.get("modes", 3))
    freqs = rng.integers(1, 4, size=(modes, d))
    phases = rng.uniform(0, 2 * np.pi, size=modes)
    coef = rng.uniform(-1, 1, size=(modes, d, d))
    coef = 0.5 * (coef + np.swapaxes(coef, 1, 2)) / (modes * d)

    def fn(pts):
        pts = np.asarray(pts, float)
        out = np.broadcast_to(np.eye(d), pts.shape[:-1] + (d, d)).copy()
        for k in range(modes):
            s = np.sin(np.pi * pts @ freqs[k] + phases[k])
            out = out + amp * s[..., None, None] * coef[k]
        return out

    return CoefficientField.from_function(grid, fn, tag="random")


def perturbed_identity(grid: Grid, eps: float, center=None) -> CoefficientField:
    d = grid.dim
    c = np.zeros(d) if center is None else np.asarray(center, float)
    E = np.ones((d, d)) - np.eye(d)

    def fn(pts):
        pts = np.asarray(pts, float)
        r = np.linalg.norm(pts - c, axis=-1)
        return np.eye(d) + eps * r[..., None, None] * E

    return CoefficientField.from_function(grid, fn, tag=f"perturbed({eps})")


def params_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    for k in ("output", "cache", "stages", "checks"):
        d.pop(k, None)
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, out=None, cache=None, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.output)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "metrics").mkdir(exist_ok=True)
        self.cache = SolveCache(cache if cache is not None else cfg.cache)
        self.threads = max(1, int(threads))
        self.state: dict = {}
        self.done: list = []
        self.phash = params_hash(cfg)
        self.version = code_version()
        self.solves = 0

    # -- plumbing ---------------------------------------------------------
    def run(self, stages) -> dict:
        order = []
        for s in stages:
            for dep in DEPENDS[s] + (s,):
                if dep not in order:
                    order.append(dep)
        order.sort(key=STAGES.index)
        summary = None
        for s in order:
            t0 = time.perf_counter()
            try:
                res = getattr(self, f"stage_{s}")()
            except PipelineStageFailure:
                raise
            except (UrellipticError, ValueError, ArithmeticError, KeyError, MemoryError, OSError) as e:
                raise PipelineStageFailure(s, e) from e
            log.info("stage %s finished in %.2fs", s, time.perf_counter() - t0)
            self.done.append(s)
            if s == "report":
                summary = res
        return summary if summary is not None else {}

    def _metrics(self, stage: str, values: dict) -> None:
        write_json(self.out / "metrics" / f"{stage}.json", values)

    def _csv(self, name: str, header, rows) -> None:
        write_csv(self.out / name, list(header) + ["params_hash", "code_version"],
                  [list(r) + [self.phash, self.version] for r in rows])

    def _solve_spec(self, what: dict) -> dict:
        c = self.cfg
        return {"operator": c.operator.__dict__, "fixture": {"kind": c.fixture.kind, "params": c.fixture.params},
                "resolution": c.resolution, "what": what}

    def cached(self, what: dict, compute) -> np.ndarray:
        def counted():
            self.solves += 1
            return compute()

        return self.cache.fetch(self._solve_spec(what), counted)

    # -- stages -------------------------------------------------------------
    def stage_generate(self):
        c = self.cfg
        bset = generate_boundary(c.fixture.kind, c.fixture.params, c.h)
        lat = build_lattice(bset, c.fixture.depth)
        self.state.update(bset=bset, lattice=lat)
        write_set_csv(self.out / "boundary_set.csv", bset)
        ad = ad_regularity(bset, 50, c.seed)
        self._metrics("generate", {
            "cells": len(bset), "total_measure": bset.total_measure, "lattice_cubes": len(lat),
            "lattice_depth": lat.depth, "ad_constant": ad[0],
        })

    def _domain(self):
        """Domain and operator, built on first use (set-only stages never need them)."""
        if "domain" not in self.state:
            bset = self.state["bset"]
            self.state["domain"] = make_domain(bset)
            self.state["A"] = make_operator(self.cfg, bset.grid)
        return self.state["domain"], self.state["A"]

    def stage_solve(self):
        c = self.cfg
        domain, A = self._domain()
        lat = self.state["lattice"]
        g = domain.grid
        pole = pole_for(domain, lat.root, c.stopping.eps_pole)
        pidx = [int(i) for i in g.index_of(pole)]
        w = self.cached({"measure_all_cells": pidx}, lambda: elliptic_measure(A, domain, pole).boundary)
        op = discrete_operator(A, domain)
        on = op.b_setpos >= 0
        set_mass = float(w[on].sum())
        pts = domain.set.points
        split = float(np.median(pts[:, 0]))

        def angle_solution():
            from .solver import solve_dirichlet
            return solve_dirichlet(A, domain, lambda p: (p[:, 0] < split).astype(float)).values

        u = self.cached({"dirichlet": "indicator_x0_below", "split": split}, angle_solution)
        self.state.update(pole=pole, u=GridField(g, u, domain.mask), split=split)
        self._metrics("solve", {"pole": pole, "omega_nodes": int(domain.mask.sum()), "total_mass": float(w.sum()), "set_mass": set_mass,
                                "u_min": float(np.nanmin(u[domain.mask])), "u_max": float(np.nanmax(u[domain.mask]))})

    def stage_diagnose(self):
        c = self.cfg
        domain, u, A = self.state["domain"], self.state["u"], self.state["A"]
        bset = domain.set
        g = domain.grid
        radii = [float(r) for r in c.estimates.radii]
        lo, hi = np.asarray(g.lo), np.asarray(g.hi)
        rmax = max(radii)
        inner = np.all((bset.points - rmax > lo) & (bset.points + rmax < hi), axis=1)
        cand = np.flatnonzero(inner) if inner.any() else np.arange(len(bset))
        rng = np.random.default_rng(c.seed)
        pick = np.sort(rng.choice(cand, min(c.estimates.balls, len(cand)), replace=False))
        rows = []
        for i in pick:
            x = bset.points[i]
            for r in radii:
                rows.append((int(i), *x.tolist(), r, carleson_energy(u, domain, x, r)))
        vals = np.array([r[-1] for r in rows])
        self._csv("carleson_energy.csv", ["cell", *[f"x{k}" for k in range(g.dim)], "r", "energy"], rows)
        stride = max(1, len(bset) // 128)
        split = self.state["split"]
        sn, _ = s_over_n_ratio(A, domain, [lambda p: (p[:, 0] < split).astype(float)],
                               alpha=c.estimates.alpha, window=c.estimates.window, stride=stride)
        x0 = bset.points[pick[0]]
        bc = bourgain_constant(A, domain, x0, min(radii))
        per_r = {f"carleson_mean_r{r:g}": float(np.mean(vals[[k for k, row in enumerate(rows) if row[-2] == r]]))
                 for r in radii}
        self._metrics("diagnose", {"carleson_max": float(vals.max()), "carleson_min": float(vals.min()),
                                   "s_over_n": sn, "bourgain": bc, **per_r})

    def stage_corona(self):
        c = self.cfg
        domain, A = self._domain()
        lat = self.state["lattice"]

        def store(key, compute):
            return self.cached({"measure": list(key)}, compute)

        oracle = MeasureOracle(A, domain, c.stopping.eps_pole, c.stopping.budget, store=store)
        params = StoppingParams(c.stopping.A, c.stopping.delta, c.stopping.eps_pole)
        forest = build_top(lat, oracle, params)
        rows = sorted(forest.roles())
        self._csv("corona.csv", ["cube", "root", "role"], rows)
        ldi = ld_iterates(lat, lat.root, oracle, c.stopping.delta, 3)
        gen_rows = []
        for j in range(lat.depth + 1):
            tops = [i for i in forest.top if lat.cubes[i].generation <= j]
            gen_rows.append((j, len(tops)))
        self._csv("corona_top_by_generation.csv", ["generation", "top_cumulative"], gen_rows)
        self.state["forest"] = forest
        log.info("corona used %d fresh solves", oracle.solves)
        self._metrics("corona", {
            "top_count": len(forest.top), "top": forest.top, "packing": forest.packing(),
            "partition_ok": forest.check_partition(), "flagged_roots": len(forest.flagged),
            "ld_iterate_sum": ldi.mass_sum, "ld_final_mass": ldi.final_mass,
            "hd_count": sum(len(v) for v in forest.hd.values()), "ld_count": sum(len(v) for v in forest.ld.values()),
        })

    def stage_acf(self):
        c = self.cfg.acf
        n = c.cells // 2 + 4
        h = 1.0 / c.cells
        g = Grid((-(n + 0.5) * h,) * 2, h, (2 * n + 1,) * 2)
        X, Y = g.centers()
        x0 = np.zeros(2)
        if c.pair == "half_plane":
            u1, u2 = np.maximum(Y, 0.0), np.maximum(-Y, 0.0)
            g1 = g2 = 1.0
        else:
            theta = c.angle
            R = np.hypot(X, Y)
            F = np.arctan2(Y, X) % (2 * np.pi)
            g1, g2 = np.pi / theta, np.pi / (2 * np.pi - theta)
            u1 = np.where(F < theta, R**g1 * np.sin(g1 * F), 0.0)
            u2 = np.where(F > theta, R**g2 * np.sin(g2 * (F - theta)), 0.0)
            u1, u2 = np.maximum(u1, 0.0), np.maximum(u2, 0.0)
        pair = acf_mod.SubharmonicPair(GridField(g, u1), GridField(g, u2), x0)
        radii = np.geomspace(c.r_min, c.r_max, c.n_radii)
        A = perturbed_identity(g, c.perturbation)
        w = acf_mod.oscillation_w(A, x0, radii)
        rows = []
        for r in radii:
            kr = acf_mod.acf_Kr(pair, float(r))
            rows.append((float(r), acf_mod.acf_J(pair, float(r)), kr.K, w(float(r))))
        J = np.array([r[1] for r in rows])
        fit = linregress(np.log(radii), np.log(J))
        expected = 2 * (g1 + g2 - 2)
        mono_ok, worst = True, 0.0
        for i in range(len(radii)):
            for j in range(i + 1, len(radii)):
                m = acf_mod.monotonicity_check(pair, w, float(radii[i]), float(radii[j]), c=c.c)
                mono_ok &= m.passed
                worst = max(worst, m.lhs / m.rhs if m.rhs > 0 else math.inf)
        self._csv("acf.csv", ["r", "J", "K", "w"], rows)
        # characteristic constants on arcs and Friedland-Hayman on random complementary pairs
        arc_err = 0.0
        for th in (np.pi / 3, np.pi / 2, np.pi, 1.5 * np.pi):
            _, gam = acf_mod.characteristic_constant(acf_mod.SphericalDomain.from_arcs([(0.0, float(th))]))
            arc_err = max(arc_err, abs(gam - np.pi / th))
        rng = np.random.default_rng(self.cfg.seed)
        fh_rows = []
        for _ in range(c.fh_pairs):
            start = float(rng.uniform(0, 2 * np.pi))
            a = float(rng.uniform(0.05, 2 * np.pi - 0.05))
            s1 = acf_mod.SphericalDomain.from_arcs([(start, a)])
            s2 = acf_mod.SphericalDomain.from_arcs([((start + a) % (2 * np.pi), 2 * np.pi - a)])
            rep = acf_mod.friedland_hayman_check(s1, s2)
            fh_rows.append((start, a, rep.gamma_sum))
        if fh_rows:
            self._csv("friedland_hayman.csv", ["start", "length", "gamma_sum"], fh_rows)
        self._metrics("acf", {
            "J_min": float(J.min()), "J_max": float(J.max()), "K_min": min(r[2] for r in rows),
            "K_max": max(r[2] for r in rows), "exponent": float(fit.slope), "exponent_expected": expected,
            "exponent_rel_error": abs(fit.slope - expected) / expected if expected else abs(fit.slope),
            "monotonicity_holds": bool(mono_ok), "monotonicity_worst_ratio": worst,
            "arc_gamma_max_error": arc_err,
            "fh_min_gamma_sum": min((r[2] for r in fh_rows), default=None),
        })

    def _cubes_to_classify(self):
        c = self.cfg.rectifiability
        lat = self.state["lattice"]
        out = []
        for j in range(c.generations[0], min(c.generations[1], lat.depth) + 1):
            gen = lat.generation(j)
            if len(gen) > c.max_cubes:
                idx = np.linspace(0, len(gen) - 1, c.max_cubes).round().astype(int)
                gen = [gen[i] for i in np.unique(idx)]
            out.extend(gen)
        return out

    def _wts_solutions(self, q):
        """u, u_* for cube q: Green functions with poles in the two largest Omega components near q.

        The pole in each component is the node nearest z_Q among those at
        height >= min(l(Q), 0.9 max height) inside B(z_Q, 2 l(Q)); both are
        scaled by mu(R1), R1 the ancestor two generations up.
        """
        domain, A = self._domain()
        lat = self.state["lattice"]
        g = domain.grid
        if "labels" not in self.state:
            self.state["labels"] = ndimage.label(domain.mask)[0]
        lab = self.state["labels"]
        ell = q.side
        dz = g.distance_from(q.center)
        near = (dz < 10 * lat.c1 * ell) & (lab > 0)
        ids, counts = np.unique(lab[near], return_counts=True)
        if len(ids) < 2:
            return None
        comps = ids[np.argsort(-counts, kind="stable")[:2]]
        R1 = lat.ancestor(q, max(q.generation - 2, 0))
        mass = lat.measure_of(R1.members)
        fields = []
        for k, comp in enumerate(sorted(comps)):
            zone = (lab == comp) & (dz < 2 * ell)
            dmax = float(domain.dist_complement[zone].max())
            ok = zone & (domain.dist_complement >= min(ell, 0.9 * dmax))
            flat = int(np.argmin(np.where(ok, dz, np.inf)))
            pole = g.points(g.unravel(flat))
            pidx = [int(i) for i in g.unravel(flat)]
            adj = k == 1
            vals = self.cached({"green": pidx, "adjoint": adj},
                               lambda: green_function(A, domain, pole, adjoint=adj).values.values)
            fields.append(GridField(g, mass * vals, domain.mask))
        return fields

    def stage_classify(self):
        c = self.cfg.rectifiability
        bset, lat = self.state["bset"], self.state["lattice"]
        cubes = self._cubes_to_classify()

        def one(q):
            bb = bbeta_infty(bset, q.center, q.side)[0]
            wh = whsa_test(lat, q, c.eps, c.K0)
            bp = batpp_test(lat, q, c.eps)
            ls = local_symmetry_test(bset, lat, q, c.kappa, seed=self.cfg.seed)
            return bb, wh, bp, ls

        with ThreadPoolExecutor(self.threads) as ex:
            res = list(ex.map(one, cubes))
        wts_col, type_col = [None] * len(cubes), [None] * len(cubes)
        if c.wts:
            domain, A = self._domain()
            W = whitney_decompose(domain)
            tree = set(q.id for q in lat.cubes)
            lo, hi = np.asarray(domain.grid.lo), np.asarray(domain.grid.hi)
            for k, q in enumerate(cubes):
                # cubes whose 20B_Q reaches the Dirichlet frame are left unclassified
                if np.any(q.center - 20 * lat.c1 * q.side < lo) or np.any(q.center + 20 * lat.c1 * q.side > hi):
                    continue
                sols = self._wts_solutions(q)
                if sols is None:
                    wts_col[k] = False
                    continue
                wts_col[k] = bool(wts_test(lat, q, sols[0], sols[1], domain, seed=self.cfg.seed).passed)
                type_col[k] = type_classify(lat, q, tree, sols[0], sols[1], domain, A=A, whitney=W).type
        rows, wit = [], {}
        for k, (q, (bb, wh, bp, ls)) in enumerate(zip(cubes, res)):
            rows.append((q.id, q.generation, bb, wh.passed, bp.passed, wts_col[k], type_col[k], ls.passed, ls.defect))
            wit[str(q.id)] = {"whsa": None if wh.plane is None else {"normal": wh.plane.normal, "offset": wh.plane.offset,
                                                                      "side": wh.side},
                              "batpp": {"normal": bp.normal, "offsets": bp.offsets, "coincident": bp.coincident}}
        self._csv("classification.csv", ["cube", "generation", "bbeta", "whsa", "batpp", "wts", "type", "ls",
                                          "ls_defect"], rows)
        write_json(self.out / "witnesses.json", wit)
        from .corona import packing_constant
        fails = [lat.cubes[r[0]] for r in rows if not r[4]]
        per_gen = {}
        for r in rows:
            per_gen.setdefault(r[1], []).append(r)
        m = {
            "cubes": len(rows),
            "bbeta_max": max(r[2] for r in rows),
            "whsa_fail_fraction": float(np.mean([not r[3] for r in rows])),
            "batpp_fail_fraction": float(np.mean([not r[4] for r in rows])),
            "ls_fail_fraction": float(np.mean([not r[7] for r in rows])),
            "batpp_fail_packing": packing_constant(fails, lat),
        }
        for j, rs in sorted(per_gen.items()):
            m[f"batpp_fail_fraction_g{j}"] = float(np.mean([not r[4] for r in rs]))
            m[f"ls_fail_fraction_g{j}"] = float(np.mean([not r[7] for r in rs]))
        if c.wts:
            judged = [x for x in wts_col if x is not None]
            m["wts_judged"] = len(judged)
            m["wts_pass_fraction"] = float(np.mean(judged)) if judged else None
            types = [t for t in type_col if t is not None]
            for t in range(4):
                m[f"type{t}_count"] = int(sum(1 for x in types if x == t))
        self._metrics("classify", m)

    def stage_report(self):
        mdir = self.out / "metrics"
        metrics = {}
        for stage in STAGES:
            p = mdir / f"{stage}.json"
            if p.exists():
                for k, v in json.loads(p.read_text()).items():
                    metrics[f"{stage}.{k}"] = v
        checks = []
        ops = {"<": op_.lt, "<=": op_.le, "==": op_.eq, ">=": op_.ge, ">": op_.gt}
        for chk in self.cfg.checks:
            val = metrics.get(chk.metric)
            if val is None or isinstance(val, (list, dict)):
                status = "skipped"
            else:
                status = "pass" if ops[chk.op](float(val), chk.value) else "fail"
            checks.append({"metric": chk.metric, "op": chk.op, "value": chk.value, "observed": val, "status": status})
        summary = {
            "name": self.cfg.name,
            "config": self.cfg.to_dict(),
            "params_hash": self.phash,
            "code_version": self.version,
            "metrics": {k: {"value": v, "params_hash": self.phash, "code_version": self.version}
                        for k, v in sorted(metrics.items())},
            "checks": checks,
            "passed": all(ch["status"] != "fail" for ch in checks),
        }
        write_json(self.out / "summary.json", summary)
        self._plots()
        return summary

    def _plots(self):
        import csv
        p = self.out / "acf.csv"
        if p.exists():
            with open(p, newline="") as fh:
                rd = list(csv.DictReader(fh))
            rs = [float(r["r"]) for r in rd]
            line_plot(self.out / "acf_J.svg", {"J(0,r)": (rs, [float(r["J"]) for r in rd])},
                      title="ACF functional", xlabel="r", ylabel="J", logx=True, logy=True)
        p = self.out / "corona_top_by_generation.csv"
        if p.exists():
            with open(p, newline="") as fh:
                rd = list(csv.DictReader(fh))
            line_plot(self.out / "corona_top.svg",
                      {"Top cubes": ([int(r["generation"]) for r in rd], [int(r["top_cumulative"]) for r in rd])},
                      title="Top cubes by generation", xlabel="generation", ylabel="count")
        p = self.out / "classification.csv"
        if p.exists() and "lattice" in self.state:
            lat = self.state["lattice"]
            with open(p, newline="") as fh:
                rd = list(csv.DictReader(fh))
            pts = [lat.cubes[int(r["cube"])].center[:2] for r in rd]
            cls = ["batpp" if r["batpp"] == "True" else "fail" for r in rd]
            scatter_map(self.out / "classification_map.svg", pts, cls, title="BATPP by cube",
                        palette={"batpp": "#2ca02c", "fail": "#d62728"})
