import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from urelliptic.errors import EmptySet, NoCorkscrew, PointOutsideDomain, ResolutionTooCoarse, UnknownKind
from urelliptic.geometry import (ad_regularity, analytic_measure, corkscrew_point, generate_boundary,
                                 harnack_chain, make_domain, read_set_binary, write_set_binary,
                                 write_set_csv)


@pytest.fixture(scope="module")
def line():
    return generate_boundary("hyperplane", {"box": 1}, 1 / 256)


@pytest.fixture(scope="module")
def half_plane():
    s = generate_boundary("hyperplane", {"box": 2, "below": 0}, 1 / 64)
    return s, make_domain(s)


def test_hyperplane_measure(line):
    assert line.total_measure == pytest.approx(2.0, rel=0.01)
    assert np.all(line.weights > 0)
    lo, hi = line.bounding_box
    assert np.all(line.points >= lo) and np.all(line.points <= hi)


def test_parallel_planes_measure():
    s = generate_boundary("parallel_planes", {"box": 1, "separation": 0.1}, 1 / 256)
    assert s.total_measure == pytest.approx(4.0, rel=0.01)
    assert len(np.unique(s.points[:, 1])) == 2


@pytest.mark.parametrize("kind,params,h", [
    ("lipschitz_graph", {"box": 1, "slope": 0.3}, 1 / 256),
    ("sphere", {"radius": 0.5}, 1 / 256),
    ("sphere", {"radius": 0.5, "dim": 3}, 1 / 32),
    ("hyperplane", {"box": 1, "dim": 3}, 1 / 32),
])
def test_measure_matches_analytic(kind, params, h):
    s = generate_boundary(kind, params, h)
    assert s.total_measure == pytest.approx(analytic_measure(kind, params), rel=0.02)


def test_cantor_depth3_squares():
    s = generate_boundary("four_corner_cantor", {"depth": 3}, 1 / 512)
    assert s.total_measure == pytest.approx(1.0, abs=1e-12)
    labels, count = ndimage.label(s.mask())
    assert count == 64
    side_cells = 512 // 64
    sizes = np.bincount(labels.ravel())[1:]
    assert np.all(sizes == side_cells**2)


def test_unknown_kind_and_coarse_resolution():
    with pytest.raises(UnknownKind):
        generate_boundary("torus", {}, 0.1)
    with pytest.raises(ResolutionTooCoarse):
        generate_boundary("parallel_planes", {"separation": 0.1}, 0.05)
    with pytest.raises(ResolutionTooCoarse):
        generate_boundary("four_corner_cantor", {"depth": 3}, 1 / 256)


def test_ad_regularity_line(line):
    c0, ratios = ad_regularity(line, 200, 0, r_max=0.5, interior=0.5)
    assert c0 == pytest.approx(2.0, rel=0.05)
    assert np.allclose(ratios, 2.0, rtol=0.05)


def test_ad_regularity_two_segments():
    s = generate_boundary("parallel_planes", {"box": 1, "separation": 0.25}, 1 / 256)
    c0, _ = ad_regularity(s, 200, 1, r_max=0.1, interior=0.2)
    assert c0 == pytest.approx(2.0, rel=0.05)


def test_ad_regularity_cantor_depth4():
    s = generate_boundary("four_corner_cantor", {"depth": 4}, 1 / 2048)
    c0, _ = ad_regularity(s, 300, 0)
    assert c0 <= 8


def test_ad_regularity_errors(line):
    with pytest.raises(ValueError):
        ad_regularity(line, 0, 0)
    with pytest.raises(EmptySet):
        ad_regularity(line.subset(np.zeros(len(line), bool)), 5, 0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ad_constant_holds_for_fresh_samples(line, seed):
    c0, _ = ad_regularity(line, 50, 7, r_max=0.5, interior=0.5)
    _, ratios = ad_regularity(line, 50, seed, r_max=0.5, interior=0.5)
    # a ball of radius r >= 16h gains or loses at most one cell at each end: slack 2h/r <= 1/8
    slack = 1.125
    assert np.all(ratios <= c0 * slack) and np.all(ratios >= 1 / c0 / slack)


def test_corkscrew_half_plane(half_plane):
    s, d = half_plane
    x = s.points[np.argmin(np.abs(s.points[:, 0]))]
    ck = corkscrew_point(s, d, x, 1.0)
    assert ck.point[0] == pytest.approx(0.0, abs=2 * s.h)
    assert ck.point[1] == pytest.approx(0.5, abs=2 * s.h)
    assert 0.5 - 2 * s.h <= ck.c <= 0.5 + 1e-12
    assert d.dist_complement[ck.index] >= ck.c - 2 * s.h
    assert np.linalg.norm(ck.point - x) <= 1.0


def test_corkscrew_cantor():
    s = generate_boundary("four_corner_cantor", {"depth": 3}, 1 / 512)
    d = make_domain(s)
    ck = corkscrew_point(s, d, s.points[0], 1.0)
    assert ck.c >= 1 / 8


def test_corkscrew_resolution_edge(half_plane):
    s, d = half_plane
    x = s.points[len(s) // 2]
    try:
        ck = corkscrew_point(s, d, x, 2 * s.h)
    except NoCorkscrew:
        return
    assert ck.c == pytest.approx(0.5, abs=0.5)


def test_harnack_chain_half_plane(half_plane):
    _, d = half_plane
    ch = harnack_chain(d, (0.0, 0.5), (1.0, 0.5), 50)
    assert ch is not None and len(ch) <= 6
    assert ch.consecutive_intersect()


def test_harnack_chain_identity(half_plane):
    _, d = half_plane
    assert len(harnack_chain(d, (0.0, 0.5), (0.0, 0.5), 1)) == 1


def test_harnack_chain_separated_sides(line):
    d = make_domain(line)
    assert harnack_chain(d, (0.0, 0.5), (0.0, -0.5), 50) is None
    with pytest.raises(PointOutsideDomain):
        harnack_chain(d, (0.0, 5.0), (0.0, 0.5), 50)


def test_domain_invariants(line):
    d = make_domain(line)
    assert np.all(d.dist >= 0)
    assert not np.any(d.mask & line.mask())
    assert np.all(d.dist[line.mask()] == 0)


def test_binary_and_csv_roundtrip(tmp_path, line):
    write_set_binary(tmp_path / "s.bin", line)
    back = read_set_binary(tmp_path / "s.bin")
    assert np.array_equal(back.index, line.index)
    assert np.array_equal(back.weights, line.weights)
    write_set_csv(tmp_path / "s.csv", line)
    rows = (tmp_path / "s.csv").read_text().strip().splitlines()
    assert len(rows) == len(line) + 1
    assert math.isclose(sum(float(r.split(",")[-1]) for r in rows[1:]), line.total_measure, rel_tol=1e-9)
