import math

import numpy as np
import pytest

from urelliptic import acf
from urelliptic.errors import (DegeneratePair, EmptyDomain, FullSphere, NotNormalized, RadiusTooSmall,
                               ZeroSetConditionFails)
from urelliptic.grid import Grid, GridField
from urelliptic.solver import CoefficientField


def centered_grid(cells_per_unit: int, half_width: float) -> Grid:
    n = int(round(half_width * cells_per_unit))
    h = 1.0 / cells_per_unit
    return Grid((-(n + 0.5) * h,) * 2, h, (2 * n + 1,) * 2)


@pytest.fixture(scope="module")
def grid():
    return centered_grid(256, 0.6)


def half_plane_pair(g):
    _, Y = g.centers()
    return acf.SubharmonicPair(GridField(g, np.maximum(Y, 0.0)), GridField(g, np.maximum(-Y, 0.0)), np.zeros(2))


def sector_pair(g, open1, start2, open2):
    """Homogeneous harmonic profiles r^(pi/a) sin(pi (phi - s)/a) on two disjoint sectors."""
    X, Y = g.centers()
    R, F = np.hypot(X, Y), np.arctan2(Y, X) % (2 * np.pi)

    def prof(s, a):
        phi = (F - s) % (2 * np.pi)
        return np.where(phi < a, R ** (np.pi / a) * np.sin(np.pi * np.minimum(phi, a) / a), 0.0).clip(0)

    return acf.SubharmonicPair(GridField(g, prof(0.0, open1)), GridField(g, prof(start2, open2)), np.zeros(2))


def test_pair_validation(grid):
    _, Y = grid.centers()
    with pytest.raises(ValueError):
        acf.SubharmonicPair(GridField(grid, Y), GridField(grid, np.abs(Y)), np.zeros(2))
    both = acf.SubharmonicPair(GridField(grid, np.abs(Y)), GridField(grid, np.abs(Y)), np.zeros(2))
    assert both.overlap_nodes > 0
    assert half_plane_pair(grid).overlap_nodes == 0


def test_oscillation_identity_is_zero(grid):
    w = acf.oscillation_w(CoefficientField.identity(grid), (0.0, 0.0), [0.1, 0.2, 0.4])
    assert np.all(w.values == 0)


def test_oscillation_constant_drift(grid):
    c0 = np.array([0.3, -0.4])
    Id = CoefficientField.identity(grid)
    A = CoefficientField(grid, Id.A, b=np.broadcast_to(c0, grid.shape + (2,)).copy())
    radii = np.array([0.1, 0.2, 0.4])
    w = acf.oscillation_w(A, (0.0, 0.0), radii)
    assert np.all(w.values <= radii * 0.5 + 1e-12)
    assert np.all(w.values >= (radii - grid.h) * 0.5)
    assert np.array_equal(w.terms["drift"], w.values) and np.all(w.terms["matrix"] == 0)


def test_oscillation_linear_matrix_growth(grid):
    th = 0.05
    E = np.array([[0.0, 1.0], [1.0, 0.0]])
    A = CoefficientField.from_function(
        grid, lambda p: np.eye(2) + th * np.linalg.norm(p, axis=-1)[..., None, None] * E)
    radii = np.array([0.05, 0.1, 0.3, 0.5])
    w = acf.oscillation_w(A, (0.0, 0.0), radii)
    assert np.all(w.values <= th * radii + 1e-12)
    assert np.all(w.values >= th * (radii - grid.h))
    assert np.all(np.diff(w.values) >= 0)
    # right-continuous steps between sample radii, zero below the first one
    assert w(0.2) == w.values[1] and w(0.01) == 0.0


def test_oscillation_requires_normalization(grid):
    with pytest.raises(NotNormalized):
        acf.oscillation_w(CoefficientField.constant(grid, 2 * np.eye(2)), (0.0, 0.0), [0.1])


def test_J_zero_function_and_homogeneity(grid):
    pair = half_plane_pair(grid)
    zero = acf.SubharmonicPair(GridField(grid, np.zeros(grid.shape)), pair.u2, pair.x)
    assert acf.acf_J(zero, 0.3) == 0.0
    J = acf.acf_J(pair, 0.3)
    assert acf.acf_J(pair.scaled(2.0, 3.0), 0.3) == pytest.approx(36 * J, rel=1e-12)
    with pytest.raises(RadiusTooSmall):
        acf.acf_J(pair, 2 * grid.h)
    with pytest.raises(RadiusTooSmall):
        acf.acf_J(pair, 1.0)


def test_J_increments_are_controlled(grid):
    pair = sector_pair(grid, math.pi / 2, math.pi / 2, 3 * math.pi / 2)
    h = grid.h
    for r in (0.1, 0.2, 0.4):
        J0, J1 = acf.acf_J(pair, r), acf.acf_J(pair, r + h)
        assert abs(J1 - J0) <= 2 * h / r * J0


def test_Kr_half_plane(grid):
    pair = half_plane_pair(grid)
    for r in (0.2, 0.4):
        assert acf.acf_Kr(pair, r).K == pytest.approx(1 / math.sqrt(2), rel=0.02)
    assert acf.acf_Kr(pair.scaled(2.0, 2.0), 0.3).K == pytest.approx(acf.acf_Kr(pair, 0.3).K, rel=1e-12)


def test_Kr_scale_invariant_on_cones(grid):
    pair = sector_pair(grid, math.pi / 2, math.pi / 2, 3 * math.pi / 2)
    assert acf.acf_Kr(pair, 0.4).K == pytest.approx(acf.acf_Kr(pair, 0.2).K, rel=0.02)


def test_Kr_bound_ratio_and_degenerate(grid):
    cw0 = acf.dini_constant(lambda t: t).value
    pair = half_plane_pair(grid)
    res = acf.acf_Kr(pair, 0.3, C1=1.0, Cw0=cw0)
    assert res.bound_ratio == pytest.approx(res.K / (1 + cw0))
    assert res.bound_ratio <= 10
    assert acf.acf_Kr(pair, 0.3).bound_ratio is None
    zero = acf.SubharmonicPair(GridField(grid, np.zeros(grid.shape)), pair.u2, pair.x)
    with pytest.raises(DegeneratePair):
        acf.acf_Kr(zero, 0.3)


def test_dini_linear_modulus():
    ln2 = math.log(2)
    exact = ln2**2 / 8 + ln2 / 8 + 1 / 16
    res = acf.dini_constant(lambda t: t)
    assert not res.diverges
    assert res.value == pytest.approx(exact, rel=1e-6)
    ts = np.geomspace(1e-4, 0.5, 60)
    assert acf.dini_constant((ts, ts)).value == pytest.approx(exact, rel=1e-3)


def test_dini_divergent_and_zero():
    res = acf.dini_constant(lambda t: 1 / math.log(1 / t))
    assert res.diverges and math.isinf(res.value)
    assert acf.dini_constant(lambda t: 0.0).value == 0.0
    ts = np.geomspace(1e-3, 0.5, 10)
    assert acf.dini_constant((ts, np.zeros_like(ts))).value == 0.0
    with pytest.raises(ValueError):
        acf.dini_constant((ts, ts[::-1]))


def test_monotonicity_equality_case(grid):
    pair = half_plane_pair(grid)
    res = acf.monotonicity_check(pair, None, 0.1, 0.5)
    assert res.passed and res.lhs == pytest.approx(res.rhs, rel=0.02)
    with pytest.raises(ValueError):
        acf.monotonicity_check(pair, None, 0.3, 0.2)


def test_monotonicity_cone_pair_has_slack(grid):
    pair = sector_pair(grid, math.pi / 2, math.pi / 2, 3 * math.pi / 2)
    res = acf.monotonicity_check(pair, None, 0.1, 0.4)
    assert res.passed and res.lhs < 0.5 * res.rhs


def test_monotonicity_with_perturbed_modulus(grid):
    E = np.array([[0.0, 1.0], [1.0, 0.0]])
    A = CoefficientField.from_function(
        grid, lambda p: np.eye(2) + 0.05 * np.linalg.norm(p, axis=-1)[..., None, None] * E)
    radii = np.linspace(0.05, 0.5, 10)
    w = acf.oscillation_w(A, (0.0, 0.0), radii)
    pair = half_plane_pair(grid)
    for r1 in radii[:3]:
        for r2 in radii[-3:]:
            res = acf.monotonicity_check(pair, w, float(r1), float(r2), c=64)
            assert res.passed and res.rhs >= res.lhs


def test_refined_derivative_on_cones(grid):
    pair = sector_pair(grid, math.pi / 2, math.pi / 2, 3 * math.pi / 2)
    gammas = (2.0, 2 / 3)
    for r in (0.15, 0.3):
        meas, bound, ok = acf.refined_derivative_check(pair, gammas, None, r)
        assert ok
        assert meas == pytest.approx(bound, rel=0.05)


def test_gradient_energy_bound_half_plane():
    g = centered_grid(128, 2.2)
    _, Y = g.centers()
    u = GridField(g, np.maximum(Y, 0.0))
    ratio = acf.gradient_energy_bound(u, (0.0, 0.0), 1.0)
    assert ratio == pytest.approx(math.pi / 8, rel=0.02)
    assert acf.gradient_energy_bound(u * 5.0, (0.0, 0.0), 1.0) == pytest.approx(ratio, rel=1e-12)
    assert acf.gradient_energy_bound(GridField(g, np.zeros(g.shape)), (0.0, 0.0), 1.0) == 0.0
    X, _ = g.centers()
    with pytest.raises(ValueError):
        acf.gradient_energy_bound(GridField(g, np.maximum(1 - X**2 - Y**2, 0.0)), (0.0, 0.0), 0.5)


def test_growth_lemma_quadrant_pair(grid):
    pair = sector_pair(grid, math.pi / 2, math.pi, math.pi / 2)
    res = acf.growth_lemma_check(pair, 0.1, 0.25, M=2.0, eta=0.25)
    assert res.passed
    assert res.rho == pytest.approx(4.0, rel=0.1)
    assert res.worst_fraction == pytest.approx(0.5, abs=0.05)


def test_growth_lemma_rejections(grid):
    with pytest.raises(ZeroSetConditionFails):
        acf.growth_lemma_check(half_plane_pair(grid), 0.1, 0.25)
    pair = sector_pair(grid, math.pi / 2, math.pi, math.pi / 2)
    with pytest.raises(ValueError):
        acf.growth_lemma_check(pair, 0.2, 0.2)


def test_sweep_csv(tmp_path):
    acf.sweep_csv(tmp_path / "s.csv", [(0.1, 2.4, 0.7, 0.0, 2.4, 2.4, True)])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "r,J,K_r,w,lhs,rhs,pass" and len(lines) == 2


@pytest.mark.parametrize("theta,gamma", [(math.pi, 1.0), (math.pi / 2, 2.0), (2 * math.pi / 3, 1.5)])
def test_arc_characteristic_constants(theta, gamma):
    lam, g = acf.characteristic_constant(acf.SphericalDomain.from_arcs([(0.3, theta)]))
    assert g == pytest.approx(gamma, rel=1e-12)
    assert lam == pytest.approx(gamma**2, rel=1e-12)


def test_characteristic_constant_errors():
    with pytest.raises(EmptyDomain):
        acf.characteristic_constant(acf.SphericalDomain.from_arcs([]))
    with pytest.raises(FullSphere):
        acf.characteristic_constant(acf.SphericalDomain.from_arcs([(0.0, 2 * math.pi)]))
    with pytest.raises(EmptyDomain):
        acf.characteristic_constant(acf.SphericalDomain.from_predicate(lambda p: np.zeros(len(p), bool), 16, 32))
    with pytest.raises(FullSphere):
        acf.characteristic_constant(acf.SphericalDomain.from_predicate(lambda p: np.ones(len(p), bool), 16, 32))


def test_gamma_decreases_on_larger_domains():
    arcs = [acf.characteristic_constant(acf.SphericalDomain.from_arcs([(0.0, t)]))[1] for t in (0.5, 1.0, 2.0, 4.0)]
    assert arcs == sorted(arcs, reverse=True)
    caps = [acf.characteristic_constant(acf.SphericalDomain.cap(t, 32, 64))[1] for t in (0.5, 1.0, math.pi / 2, 2.2)]
    assert caps == sorted(caps, reverse=True)


def test_hemisphere_coarse_mesh():
    cap = acf.SphericalDomain.cap(math.pi / 2, 48, 96)
    assert cap.area == pytest.approx(2 * math.pi, rel=0.01)
    assert acf.characteristic_constant(cap)[1] == pytest.approx(1.0, abs=0.02)


def test_sphere_mesh_area():
    V, T = acf.sphere_mesh(32, 64)
    assert np.allclose(np.linalg.norm(V, axis=1), 1.0)
    ar = 0.5 * np.linalg.norm(np.cross(V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]]), axis=1)
    assert ar.sum() == pytest.approx(4 * math.pi, rel=0.01)


def test_friedland_hayman_equality_and_quarter():
    half = acf.friedland_hayman_check(acf.SphericalDomain.from_arcs([(0.0, math.pi)]),
                                      acf.SphericalDomain.from_arcs([(math.pi, math.pi)]))
    assert half.gamma_sum == pytest.approx(2.0, abs=1e-12) and half.defect_ratio is None
    q = acf.friedland_hayman_check(acf.SphericalDomain.from_arcs([(0.0, math.pi / 2)]),
                                   acf.SphericalDomain.from_arcs([(math.pi / 2, 3 * math.pi / 2)]))
    assert q.gamma_sum == pytest.approx(2 + 2 / 3, rel=1e-12)
    with pytest.raises(ValueError):
        acf.friedland_hayman_check(acf.SphericalDomain.from_arcs([(0.0, 2.0)]),
                                   acf.SphericalDomain.from_arcs([(1.0, 2.0)]))


def test_friedland_hayman_defect_sweep():
    # gamma_1 + gamma_2 = 1/(1+e) + 1/(1-e) = 2/(1-e^2), so the defect ratio is 2/(1-e^2)
    ratios = []
    for e in (0.05, 0.1, 0.2, 0.3, 0.4):
        a = math.pi * (1 + e)
        rep = acf.friedland_hayman_check(acf.SphericalDomain.from_arcs([(0.0, a)]),
                                         acf.SphericalDomain.from_arcs([(a, 2 * math.pi - a)]))
        assert rep.eps == pytest.approx(e, rel=1e-12)
        assert rep.defect_ratio == pytest.approx(2 / (1 - e**2), rel=1e-9)
        ratios.append(rep.defect_ratio)
    assert min(ratios) >= 2 and ratios == sorted(ratios)
