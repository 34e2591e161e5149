import numpy as np
import pytest

from urelliptic.errors import DomainTooThin
from urelliptic.geometry import generate_boundary, make_domain
from urelliptic.lattice import build_lattice
from urelliptic.whitney import augmented_component, regions_to_csv, whitney_decompose, whitney_region

H = 1 / 128


@pytest.fixture(scope="module")
def half_plane():
    s = generate_boundary("hyperplane", {"box": 1, "below": 0}, H)
    d = make_domain(s)
    return s, d, build_lattice(s, 5), whitney_decompose(d)


@pytest.fixture(scope="module")
def two_lines():
    s = generate_boundary("parallel_planes", {"box": 1, "separation": 1 / 16}, H)
    d = make_domain(s)
    return s, d, build_lattice(s, 4), whitney_decompose(d)


def test_admissibility_bounds(half_plane):
    _, _, _, W = half_plane
    for c in W:
        assert c.dist >= 8 * c.diam * (1 - 1e-9)
    # maximality keeps cubes from sitting far away from the boundary, except where
    # the box size caps them
    free = [c for c in W if c.side < 0.25]
    assert all(c.dist <= 80 * c.diam for c in free)


def test_interior_coverage_and_disjointness(half_plane):
    _, d, _, W = half_plane
    deep = d.mask & (d.dist_complement >= W.coverage_threshold)
    assert np.all(W.owner[deep] >= 0)
    assert np.all(W.owner[~d.mask] == -1)
    owned = np.bincount(W.owner[W.owner >= 0].ravel(), minlength=len(W))
    assert np.array_equal(owned, [c.side_cells**2 for c in W])


def test_neighbor_sides_comparable(half_plane):
    _, _, _, W = half_plane
    o = W.owner
    for axis in (0, 1):
        a = np.moveaxis(o, axis, 0)
        x, y = a[:-1].ravel(), a[1:].ravel()
        touch = (x >= 0) & (y >= 0) & (x != y)
        ratio = W.side[x[touch]] / W.side[y[touch]]
        assert ratio.max() <= 4 and ratio.min() >= 0.25


def test_count_per_scale_doubles(half_plane):
    _, _, _, W = half_plane
    counts = {}
    for c in W:
        if np.linalg.norm(c.center) < 1:
            counts[c.side_cells] = counts.get(c.side_cells, 0) + 1
    sides = sorted(counts)
    # cubes at height ~2^-k have side ~2^-k/16; over a unit window their number doubles per halving
    for small, big in zip(sides[:-2], sides[1:-1]):
        assert 1.3 <= counts[small] / counts[big] <= 3.0


def test_domain_too_thin():
    s = generate_boundary("parallel_planes", {"box": 1, "separation": 1 / 16, "above": 4 * H, "below": 4 * H}, H)
    with pytest.raises(DomainTooThin):
        whitney_decompose(make_domain(s))


def test_region_half_plane_single_component(half_plane):
    _, _, lat, W = half_plane
    q = lat.generation(3)[3]
    reg = whitney_region(lat, q, W, 1 / 64, 8, 0.1)
    assert reg.n_components == 1
    for i in reg.members:
        assert 1 / 64 * q.side <= W.side[i] * (1 + 1e-12) and W.side[i] <= 8 * q.side


def test_region_two_lines_splits(two_lines):
    _, _, lat, W = two_lines
    q = lat.generation(1)[0]
    reg = whitney_region(lat, q, W, 1 / 64, 4, 0.1)
    assert reg.n_components >= 2
    assert reg.n_components <= len(reg.members)


def test_region_parameter_checks(half_plane):
    _, _, lat, W = half_plane
    with pytest.raises(ValueError):
        whitney_region(lat, lat.root, W, 8, 1 / 64, 0.1)
    with pytest.raises(ValueError):
        whitney_region(lat, lat.root, W, 0.1, 4, 0.6)


def test_shrinking_tau_never_merges(two_lines):
    _, _, lat, W = two_lines
    for q in lat.generation(2)[:3]:
        counts = [whitney_region(lat, q, W, 1 / 16, 4, t).n_components for t in (0.4, 0.2, 0.05)]
        assert counts == sorted(counts)


def test_augmented_component_contains_input(half_plane, tmp_path):
    _, d, lat, W = half_plane
    q = lat.generation(3)[3]
    reg = whitney_region(lat, q, W, 1 / 64, 4, 0.1)
    nodes = reg.nodes[0]
    aug = augmented_component(d, nodes, q.side, 0.25)
    assert np.all(np.isin(nodes, aug))
    assert np.all(d.mask.ravel()[aug])
    assert len(aug) >= len(nodes)
    regions_to_csv(tmp_path / "r.csv", [reg])
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "cube_id,component_id,node_count"
