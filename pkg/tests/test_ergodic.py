"""Eikonal fast sweeping, continuity checks, and ergodic triples."""

import numpy as np
import pytest

from mfglab import (
    DiscreteMeasure,
    ErgodicTriple,
    NodeSet,
    SolverError,
    SpatialGrid,
    StaticResidualError,
    build_ergodic_triple,
    continuity_residual,
    converse_check,
    mather_identity_check,
    residual,
    solve_eikonal,
    solve_static,
    value_function_crosscheck,
)
from mfglab.cost_models import fg_plus_g, quadratic_congestion, separated_kernel, two_wells
from mfglab.eikonal_ergodic import bump_gradient


def grid_1d(n=200, lo=-1.0, hi=1.0):
    return SpatialGrid((lo,), (hi,), (n,))


def origin_set(g):
    return NodeSet.from_points(g, [np.zeros(g.dim)])


class TestEikonal1D:
    def test_unit_speed_gives_distance(self):
        g = grid_1d(200)
        v = solve_eikonal(np.ones(g.shape), origin_set(g), g)
        np.testing.assert_allclose(v, np.abs(g.nodes[:, 0]), atol=1e-12)

    def test_linear_speed_discrete_profile(self):
        # v_i = h^2 i(i+1)/2 = x(x+h)/2 exactly; within h/2 of x^2/2
        g = SpatialGrid((0.0,), (1.0,), (100,))
        h = 0.01
        x = g.nodes[:, 0]
        v = solve_eikonal(x, NodeSet.from_points(g, [[0.0]]), g)
        np.testing.assert_allclose(v, x * (x + h) / 2.0, atol=1e-12)
        assert np.abs(v - x * x / 2.0).max() == pytest.approx(h / 2, abs=1e-12)

    def test_error_halves_with_mesh(self):
        errs = []
        for n in (100, 200):
            g = SpatialGrid((0.0,), (1.0,), (n,))
            x = g.nodes[:, 0]
            v = solve_eikonal(x, NodeSet.from_points(g, [[0.0]]), g)
            errs.append(np.abs(v - x * x / 2.0).max())
        assert errs[0] / errs[1] == pytest.approx(2.0, abs=1e-9)

    def test_homogeneity(self):
        g = grid_1d(160)
        rng = np.random.default_rng(0)
        ell = rng.random(g.shape) + 0.1
        v1 = solve_eikonal(ell, origin_set(g), g)
        v2 = solve_eikonal(2.0 * ell, origin_set(g), g)
        np.testing.assert_allclose(v2, 2.0 * v1, atol=1e-10)

    def test_monotone_in_speed(self):
        g = grid_1d(160)
        rng = np.random.default_rng(1)
        ell = rng.random(g.shape) + 0.1
        bigger = ell + rng.random(g.shape)
        v1 = solve_eikonal(ell, origin_set(g), g)
        v2 = solve_eikonal(bigger, origin_set(g), g)
        assert np.all(v2 >= v1 - 1e-12)

    def test_monotone_in_dirichlet_set(self):
        g = grid_1d(160)
        ell = np.ones(g.shape)
        small = NodeSet.from_points(g, [[0.0]])
        large = NodeSet.from_points(g, [[0.0], [0.5]])
        v_small = solve_eikonal(ell, small, g)
        v_large = solve_eikonal(ell, large, g)
        assert np.all(v_large <= v_small + 1e-12)

    def test_input_validation(self):
        g = grid_1d(10)
        with pytest.raises(ValueError, match="nonnegative"):
            solve_eikonal(-np.ones(g.shape), origin_set(g), g)
        with pytest.raises(ValueError, match="finite"):
            solve_eikonal(np.full(g.shape, np.nan), origin_set(g), g)
        with pytest.raises(ValueError, match="nonempty"):
            solve_eikonal(np.ones(g.shape), NodeSet(g, np.array([], dtype=np.int64)), g)

    def test_sweep_budget_exhaustion(self):
        g = grid_1d(50)
        with pytest.raises(SolverError):
            solve_eikonal(np.ones(g.shape), origin_set(g), g, max_sweeps=1)


class TestEikonal2D:
    def test_unit_speed_approximates_euclidean(self):
        g = SpatialGrid((-1.0, -1.0), (1.0, 1.0), (80, 80))
        v = solve_eikonal(np.ones(g.shape), origin_set(g), g)
        exact = np.sqrt((g.nodes**2).sum(axis=1))
        err = np.abs(v.ravel() - exact).max()
        assert err <= 0.05  # first-order scheme at h = 0.025

    def test_beats_eight_neighbor_dijkstra(self):
        # the chamfer metric overestimates Euclidean length off-axis; the
        # sweeping solution must be at least as accurate at generic points
        g = SpatialGrid((-1.0, -1.0), (1.0, 1.0), (80, 80))
        ell = np.ones(g.shape)
        src = origin_set(g)
        v = solve_eikonal(ell, src, g)
        samples = np.array([[0.5, 0.2], [-0.7, 0.3], [0.4, -0.9]])
        pairs = value_function_crosscheck(ell, src, g, samples)
        for pt, dijkstra_val in pairs:
            exact = float(np.sqrt((pt**2).sum()))
            node = g.nearest_node_index(pt[None, :])[0]
            fsm_val = float(v.ravel()[node])
            assert abs(fsm_val - exact) <= abs(dijkstra_val - exact) + 1e-9

    def test_axis_aligned_rays_exact(self):
        g = SpatialGrid((-1.0, -1.0), (1.0, 1.0), (40, 40))
        v = solve_eikonal(np.ones(g.shape), origin_set(g), g)
        mid = 20
        axis = np.abs(np.linspace(-1.0, 1.0, 41))
        np.testing.assert_allclose(v[mid, :], axis, atol=1e-10)
        np.testing.assert_allclose(v[:, mid], axis, atol=1e-10)


class TestCrosscheck1D:
    def test_line_graph_distance_exact(self):
        g = grid_1d(100)
        pairs = value_function_crosscheck(np.ones(g.shape), origin_set(g), g, [[0.4], [-0.8]])
        assert pairs[0][1] == pytest.approx(0.4, abs=1e-12)
        assert pairs[1][1] == pytest.approx(0.8, abs=1e-12)


class TestContinuityResidual:
    def test_linear_field_unit_pairing(self):
        g = grid_1d(100)
        v = g.nodes[:, 0].reshape(g.shape)
        m = DiscreteMeasure.dirac([0.0])
        unit_grad = lambda pts: np.ones_like(pts)
        worst, family = continuity_residual(v, m, g, test_functions=[unit_grad])
        assert family == 1
        assert worst == pytest.approx(1.0, abs=1e-12)

    def test_constant_field_zero(self):
        g = grid_1d(100)
        v = np.full(g.shape, 3.0)
        m = DiscreteMeasure.uniform([[-0.5], [0.25]])
        worst, family = continuity_residual(v, m, g)
        assert family > 1
        assert worst == pytest.approx(0.0, abs=1e-15)

    def test_bump_gradient_vanishes_at_center_and_outside(self):
        grad = bump_gradient([0.0], 0.5)
        np.testing.assert_allclose(grad([[0.0]]), [[0.0]], atol=1e-15)
        np.testing.assert_allclose(grad([[2.0]]), [[0.0]], atol=1e-15)
        assert grad([[0.2]])[0, 0] != 0.0


def build_triple(F, init_point, g, **kwargs):
    res = solve_static(F, g, DiscreteMeasure.dirac(init_point), eps_min=1e-9)
    assert res.converged
    return build_ergodic_triple(F, res.measure, g, eps_min=1e-9, **kwargs)


class TestErgodicTriple:
    def test_quadratic_congestion_pipeline(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (200,))
        t = build_triple(F, [1.0], g)
        assert t.c == pytest.approx(0.0, abs=1e-12)
        assert t.v.min() == 0.0
        node = g.nearest_node_index([[0.0]])[0]
        assert t.v.ravel()[node] == 0.0
        bound = 10.0 * g.max_spacing
        assert t.residuals["hj_residual"] <= bound
        assert t.residuals["continuity_residual"] <= bound
        assert t.residuals["mather_residual"] <= 1e-12
        assert t.residuals["support_violation"] == 0.0
        assert t.boundary_monotone

    def test_two_wells_pipeline(self):
        F = two_wells(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (200,))
        t = build_triple(F, [0.3], g)
        flat = t.v.ravel()
        for w in (-1.0, 1.0):
            assert flat[g.nearest_node_index([[w]])[0]] == 0.0
        assert t.residuals["hj_residual"] <= 10.0 * g.max_spacing
        assert t.residuals["mather_residual"] <= 1e-12

    def test_2d_pipeline(self):
        F = quadratic_congestion(dim=2)
        g = SpatialGrid((-2.0, -2.0), (2.0, 2.0), (40, 40))
        t = build_triple(F, [1.0, -0.5], g)
        assert t.c == pytest.approx(0.0, abs=1e-12)
        assert t.residuals["hj_residual"] <= 10.0 * g.max_spacing
        assert t.residuals["continuity_residual"] <= 10.0 * g.max_spacing

    def test_non_equilibrium_rejected(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (200,))
        with pytest.raises(StaticResidualError) as err:
            build_ergodic_triple(F, DiscreteMeasure.dirac([0.5]), g)
        assert err.value.residual > err.value.tol


class TestConverseCheck:
    def test_valid_triples_pass(self):
        for F, x0 in (
            (quadratic_congestion(dim=1), [1.0]),
            (two_wells(dim=1), [0.3]),
            (separated_kernel(dim=1), [0.4]),
            (fg_plus_g(dim=1), [0.6]),
        ):
            g = SpatialGrid((-2.0,), (2.0,), (200,))
            t = build_triple(F, x0, g)
            report = converse_check(F, t, g, eps_min=1e-9)
            assert report["passed"], (F.name, report)
            assert report["support_distance"] <= g.max_spacing

    def test_support_violation_flagged(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (200,))
        fake = ErgodicTriple(
            c=0.0, v=np.zeros(g.shape), m=DiscreteMeasure.dirac([0.5]),
            grid=g, dirichlet=origin_set(g),
        )
        report = converse_check(F, fake, g, eps_min=1e-9)
        assert not report["support_ok"]
        assert report["support_distance"] == pytest.approx(0.5, abs=1e-12)
        assert not report["passed"]

    def test_inflated_critical_value_flagged(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (200,))
        fake = ErgodicTriple(
            c=1.0, v=np.zeros(g.shape), m=DiscreteMeasure.dirac([0.0]),
            grid=g, dirichlet=origin_set(g),
        )
        report = converse_check(F, fake, g, eps_min=1e-9)
        assert report["support_ok"]
        assert not report["c_ok"]
        assert report["c_gap"] == pytest.approx(-1.0, abs=1e-12)


class TestMatherIdentity:
    def test_matches_static_residual_exactly(self):
        # both integrate F - c against m with the same reference minimum
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (120,))
        rng = np.random.default_rng(7)
        for _ in range(50):
            size = int(rng.integers(1, 6))
            pts = rng.uniform(-1.5, 1.5, size=(size, 1))
            m = DiscreteMeasure(pts, rng.dirichlet(np.ones(size)))
            assert mather_identity_check(F, m, g) == pytest.approx(
                residual(F, m, g), abs=1e-12
            )
