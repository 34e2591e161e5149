import json
import math

import numpy as np
import pytest

from urelliptic.errors import LatticeMismatch, MeasureMissing, SolveBudgetExceeded
from urelliptic.geometry import generate_boundary, make_domain
from urelliptic.lattice import build_lattice, dilate
from urelliptic.solver import CoefficientField, elliptic_measure
from urelliptic.corona import (CoronaForest, MeasureOracle, StoppingParams, build_top, hd_ld_stopping,
                               ld_iterates, mixed_corona, packing_constant, weak_ainfty_check)


@pytest.fixture(scope="module")
def line():
    s = generate_boundary("hyperplane", {"box": 1}, 1 / 256)
    return s, build_lattice(s, 6)


@pytest.fixture(scope="module")
def wide_flat():
    # a central cube far from the frame, so the frame does not bend the measure
    s = generate_boundary("hyperplane", {"box": 4, "below": 0, "above": 4}, 1 / 128)
    d = make_domain(s)
    lat = build_lattice(s, 7)
    R = min(lat.generation(2), key=lambda q: abs(q.center[0]))
    return s, d, lat, R


def uniform(lat):
    w = lat.set.weights / lat.set.total_measure
    return lambda q: w


def brute_force_stopping(lat, R, omega, A, delta):
    """Check every cube below R against both rules, then keep the maximal ones."""
    mu = lat.set.weights
    d2R = dilate(lat, R, 2)
    hd_ref = A * omega[d2R].sum() / mu[d2R].sum()
    ld_ref = delta * omega[R.members].sum() / R.measure
    hits = {}
    for q in lat.descendants(R, include_self=False):
        d2 = dilate(lat, q, 2)
        if omega[d2].sum() / mu[d2].sum() >= hd_ref:
            hits[q.id] = "hd"
        elif delta > 0 and omega[q.members].sum() / q.measure <= ld_ref:
            hits[q.id] = "ld"
    def maximal(i):
        q = lat[i]
        return not any(lat.ancestor(q, j).id in hits for j in range(R.generation + 1, q.generation))
    hd = sorted(i for i, k in hits.items() if k == "hd" and maximal(i))
    ld = sorted(i for i, k in hits.items() if k == "ld" and maximal(i))
    return hd, ld


def test_params_validation():
    with pytest.raises(ValueError):
        StoppingParams(A=1.0)
    with pytest.raises(ValueError):
        StoppingParams(delta=1.0)
    with pytest.raises(ValueError):
        StoppingParams(eps_pole=0.0)


def test_flat_line_has_no_stopping_cubes(wide_flat):
    s, d, lat, R = wide_flat
    params = StoppingParams(A=4, delta=0.25, eps_pole=0.5)
    oracle = MeasureOracle(CoefficientField.identity(s.grid), d, eps_pole=0.5)
    assert hd_ld_stopping(lat, R, oracle(R), params) == ([], [])
    forest = build_top(lat, oracle, params, root=R)
    assert forest.top == [R.id]
    assert forest.check_partition()
    assert forest.tree[R.id] == sorted(q.id for q in lat.descendants(R))
    dens = np.array(list(forest.density[R.id].values()))
    assert dens.min() >= params.delta / 5 and dens.max() <= 5 * params.A


def test_doubled_left_half_matches_brute_force(line):
    s, lat = line
    R = lat.root
    w = s.weights.copy()
    w[s.points[:, 0] < R.center[0]] *= 2
    for A in (1.2, 1.3, 4.0):
        params = StoppingParams(A=A, delta=0.25)
        got = hd_ld_stopping(lat, R, w, params)
        assert got == brute_force_stopping(lat, R, w, A, 0.25)
    assert hd_ld_stopping(lat, R, w, StoppingParams(A=4.0, delta=0.25))[0] == []
    hd, _ = hd_ld_stopping(lat, R, w, StoppingParams(A=1.2, delta=0.25))
    assert hd and all(lat[i].center[0] < R.center[0] for i in hd)


def test_random_measure_brute_force_and_maximality(line):
    s, lat = line
    w = np.random.default_rng(4).gamma(0.5, size=len(s)) * s.weights
    for R in (lat.root, lat.generation(2)[1]):
        hd, ld = hd_ld_stopping(lat, R, w, StoppingParams(A=2.0, delta=0.5))
        assert (hd, ld) == brute_force_stopping(lat, R, w, 2.0, 0.5)
        chosen = set(hd) | set(ld)
        assert not set(hd) & set(ld)
        for i in chosen:
            q = lat[i]
            assert not any(lat.ancestor(q, j).id in chosen for j in range(R.generation + 1, q.generation))


def test_zero_delta_means_no_low_density(line):
    s, lat = line
    w = np.random.default_rng(5).gamma(0.5, size=len(s)) * s.weights
    w[: len(s) // 4] = 0
    assert hd_ld_stopping(lat, lat.root, w, StoppingParams(A=1e9, delta=0.0))[1] == []
    with pytest.raises(MeasureMissing):
        hd_ld_stopping(lat, lat.root, None, StoppingParams())


def test_uniform_oracle_single_tree(line):
    _, lat = line
    forest = build_top(lat, uniform(lat), StoppingParams(A=4, delta=0.25))
    assert forest.top == [lat.root.id]
    assert forest.packing() == pytest.approx(1.0)


def test_density_jump_builds_partitioning_trees(line, tmp_path):
    s, lat = line
    jump = lat.generation(2)[1]

    def oracle(q):
        w = s.weights.copy()
        if not lat.is_descendant(q, jump) and q.id != jump.id:
            w[jump.members] *= 50
        return w

    params = StoppingParams(A=4, delta=0.25)
    forest = build_top(lat, oracle, params)
    assert len(forest.top) >= 2
    assert forest.check_partition()
    owner = forest.owner
    for q in lat:
        assert sum(q.id in ids for ids in forest.tree.values()) == 1
        assert owner[q.id] in forest.top
    for r, stop in forest.stop.items():
        for a in stop:
            for b in stop:
                if a != b:
                    assert not np.intersect1d(lat[a].members, lat[b].members).size
    for stats in forest.lemma_stats.values():
        assert stats["omega_BL_over_delta_omega_R"] <= 1 + 1e-12
    forest.to_csv(tmp_path / "forest.csv")
    rows = (tmp_path / "forest.csv").read_text().splitlines()
    assert rows[0] == "cube,root,role" and len(rows) > len(lat)
    forest.write_report(tmp_path / "forest.json")
    assert json.loads((tmp_path / "forest.json").read_text())["n_top"] == len(forest.top)


def test_depth_exhausted_roots_are_flagged(line):
    s, lat = line
    leaf = lat.generation(lat.depth)[3]

    def oracle(q):
        w = s.weights.copy()
        w[leaf.members] = 0
        return w

    forest = build_top(lat, oracle, StoppingParams(A=1e6, delta=0.25))
    assert leaf.id in forest.top and leaf.id in forest.flagged
    assert forest.tree[leaf.id] == [leaf.id]


def test_missing_measure(line):
    _, lat = line
    with pytest.raises(MeasureMissing):
        build_top(lat, lambda q: None)
    with pytest.raises(MeasureMissing):
        build_top(lat, lambda q: np.ones(3))


def test_packing_examples(line):
    _, lat = line
    assert packing_constant([lat.root], lat) == pytest.approx(1.0)
    assert packing_constant(lat.generation(3), lat) == pytest.approx(1.0)
    for k in range(4):
        fam = [q for j in range(k + 1) for q in lat.generation(j)]
        assert packing_constant(fam, lat) == pytest.approx(k + 1)
    other = build_lattice(generate_boundary("hyperplane", {"box": 1}, 1 / 128), 3)
    with pytest.raises(LatticeMismatch):
        packing_constant([other[len(other) - 1]], lat)


def test_ld_iterates_uniform_is_empty(line):
    _, lat = line
    it = ld_iterates(lat, lat.root, uniform(lat), 0.25, 3)
    assert it.families == [[], [], []]
    assert it.mass_sum == 0.0
    with pytest.raises(ValueError):
        ld_iterates(lat, lat.root, uniform(lat), 0.25, 0)


def test_ld_iterates_one_designated_cube_per_level(line):
    # the measure for Q starves Q's first child and nothing else, so LD^k is one cube
    # of generation k and its share of mu(R) halves at every level
    s, lat = line

    def oracle(q):
        w = s.weights.copy()
        w[lat[q.children[0]].members] *= 0.01
        return w

    m = 4
    it = ld_iterates(lat, lat.root, oracle, 0.25, m)
    assert [len(f) for f in it.families] == [1] * m
    assert it.mass_sum == pytest.approx(sum(2.0**-k for k in range(1, m + 1)))
    assert it.final_mass == pytest.approx(2.0**-m)


def test_ld_iterates_first_level_is_ld(line):
    s, lat = line
    w = np.random.default_rng(6).gamma(0.5, size=len(s)) * s.weights
    it = ld_iterates(lat, lat.root, lambda q: w, 0.5, 1)
    _, ld = hd_ld_stopping(lat, lat.root, w, StoppingParams(A=math.inf, delta=0.5))
    assert it.families[0] == ld
    assert it.mass_sum == pytest.approx(sum(lat[i].measure for i in ld) / lat.root.measure)


def test_solve_budget(wide_flat):
    s, d, lat, R = wide_flat
    oracle = MeasureOracle(CoefficientField.identity(s.grid), d, budget=1)
    oracle(R)
    oracle(R)
    assert oracle.solves == 1
    with pytest.raises(SolveBudgetExceeded):
        oracle(lat[R.children[0]])


def _forest(lat, tops):
    """Trees cut below each Top cube, built directly from the lattice."""
    tops = sorted(tops)
    own = np.full(len(lat), -1)
    for q in sorted((lat[t] for t in tops), key=lambda q: q.generation):
        for c in lat.descendants(q):
            own[c.id] = q.id
    tree = {t: sorted(np.flatnonzero(own == t).tolist()) for t in tops}
    stop = {t: sorted(u for u in tops if lat[u].parent is not None and own[lat[u].parent] == t)
            for t in tops}
    return CoronaForest(lat, tops, tree, stop)


def test_mixed_corona_idempotent(line):
    s, lat = line
    jump = lat.generation(2)[1]

    def oracle(q):
        w = s.weights.copy()
        if not lat.is_descendant(q, jump) and q.id != jump.id:
            w[jump.members] *= 50
        return w

    f = build_top(lat, oracle, StoppingParams(A=4, delta=0.25))
    g = mixed_corona(f, f)
    assert g.top == f.top and g.tree == f.tree


def test_mixed_corona_small_trees(line):
    _, lat = line
    root, c = lat.root, lat.generation(1)[0]
    f1 = _forest(lat, [root.id])
    f2 = _forest(lat, [root.id, c.id])
    out = mixed_corona(f1, f2)
    assert out.top == sorted({root.id, c.id})
    assert out.tree[c.id] == sorted(q.id for q in lat.descendants(c))
    assert out.tree[root.id] == sorted(set(range(len(lat))) - set(out.tree[c.id]))
    assert out.check_partition()
    assert out.packing() <= f1.packing() + f2.packing()
    other = build_lattice(generate_boundary("hyperplane", {"box": 1}, 1 / 128), 3)
    with pytest.raises(LatticeMismatch):
        mixed_corona(f1, _forest(other, [other.root.id]))


@pytest.fixture(scope="module")
def disk():
    h = 1 / 128
    s = generate_boundary("sphere", {"radius": 1}, h)
    d = make_domain(s, seeds=[(0.0, 0.0)])
    om = elliptic_measure(CoefficientField.identity(s.grid), d, (h / 2, h / 2))
    return s, om.values


def test_weak_ainfty_disk_center_pole(disk):
    s, om = disk
    rng = np.random.default_rng(0)
    balls = [(s.points[i], r) for i in rng.choice(len(s), 8, replace=False) for r in (0.25, 0.5, 1.0)]
    rows = weak_ainfty_check(s, balls, [om] * len(balls), 0.1, 0.3)
    assert all(r.passed for r in rows)
    assert all(r.mu_ratio <= 0.1 for r in rows)


def test_weak_ainfty_empty_set_passes(disk):
    s, om = disk
    far = s.points[0] + 10
    rows = weak_ainfty_check(s, [(far, 0.5), (s.points[0], 0.5)], [om, om], 0.0, 0.0)
    assert all(r.passed and len(r.violator) == 0 for r in rows)


def test_weak_ainfty_point_mass_fails(disk):
    s, _ = disk
    w = np.zeros(len(s))
    w[5] = 1.0
    row = weak_ainfty_check(s, [(s.points[5], 0.5)], [w], 0.1, 0.3, block=1)[0]
    assert not row.passed and row.violator.tolist() == [5] and row.omega_ratio == 1.0
    blocky = weak_ainfty_check(s, [(s.points[5], 0.5)], [w], 0.1, 0.3)[0]
    assert not blocky.passed and 5 in blocky.violator
    with pytest.raises(ValueError):
        weak_ainfty_check(s, [], [], 0.1, 0.3, block=0)
