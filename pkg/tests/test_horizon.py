"""Backward semi-Lagrangian values, forward transport, and the coupled loop."""

import numpy as np
import pytest

from mfglab import (
    CostFunctional,
    DiscreteMeasure,
    DomainEscapeError,
    MeasurePath,
    SpatialGrid,
    a_priori_report,
    control_lattice,
    occupational_fractions,
    occupational_measure,
    solve_hjb_backward,
    solve_mfg,
    transport_forward,
    wasserstein1,
)
from mfglab.cost_models import lqr_oracle, quadratic_congestion, two_wells
from mfglab.finite_horizon import checkpoint_indices, default_control_mesh, default_control_radius


def flat_cost(c, dim=1, box=2.0):
    def ev(pts, m):
        return np.full(pts.shape[0], float(c))

    return CostFunctional(
        name="flat", dim=dim, evaluator=ev, m_bound=abs(float(c)) or 1.0,
        core_lower=(-box,) * dim, core_upper=(box,) * dim, gap=0.0, test_only=True,
    )


def ridge_cost(dim=1):
    """F(x) = 5 - 5 |x|: cost falls away from the origin, pushing mass out."""

    def ev(pts, m):
        return 5.0 - 5.0 * np.sqrt((pts * pts).sum(axis=1))

    return CostFunctional(
        name="ridge", dim=dim, evaluator=ev, m_bound=5.0,
        core_lower=(-1.0,) * dim, core_upper=(1.0,) * dim, gap=0.0, test_only=True,
    )


def constant_path(m, T, dt):
    n_t = int(round(T / dt))
    return MeasurePath.constant(m, np.arange(n_t + 1) * dt)


class TestControlLattice:
    def test_1d_order_oracle(self):
        lat = control_lattice(1, 0.05, 0.02)
        np.testing.assert_allclose(lat.ravel(), [0.0, -0.02, 0.02, -0.04, 0.04])

    def test_2d_order_oracle(self):
        lat = control_lattice(2, 0.1, 0.1)
        expect = [[0.0, 0.0], [-0.1, 0.0], [0.0, -0.1], [0.0, 0.1], [0.1, 0.0]]
        np.testing.assert_allclose(lat, expect)

    def test_radius_filter(self):
        lat = control_lattice(2, 1.0, 0.9)
        norms = np.sqrt((lat * lat).sum(axis=1))
        assert norms.max() <= 1.0 + 1e-12
        assert len(lat) == 5  # diagonal 0.9 sqrt(2) > 1 excluded

    def test_defaults(self):
        F = lqr_oracle(dim=1)
        assert default_control_radius(F) == pytest.approx(np.sqrt(4.0 * F.m_bound) + 1.0)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        assert default_control_mesh(g, 0.01) == pytest.approx(0.5 * max(0.04, 0.1))
        assert default_control_mesh(g, 1e-4) == pytest.approx(0.5 * 0.04)


class TestBackwardValues:
    def test_flat_cost_exact_value_and_policy(self):
        # constant F: waiting is optimal, u(x, t) = c (T - t) everywhere
        c = 0.7
        F = flat_cost(c)
        g = SpatialGrid((-2.0,), (2.0,), (40,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), 1.0, 0.1)
        value = solve_hjb_backward(F, path, g, 0.1)
        for k, t in enumerate(value.times):
            np.testing.assert_allclose(value.values[k], c * (1.0 - t), atol=1e-12)
        moved = value.controls[value.policy]
        np.testing.assert_array_equal(moved, np.zeros_like(moved))

    def test_argmin_tie_breaks_toward_first_lattice_control(self):
        # two symmetric optimal controls at the ridge top: the sorted
        # lattice puts the negative one first and argmin keeps it
        F = ridge_cost()
        g = SpatialGrid((-1.0,), (1.0,), (20,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), 0.2, 0.1)
        value = solve_hjb_backward(F, path, g, 0.1, control_radius=1.0, control_mesh=0.5)
        node0 = g.nearest_node_index([[0.0]])[0]
        alpha = value.controls[value.policy[0, node0]]
        assert alpha[0] == -0.5

    def test_riccati_coarse(self):
        # F = |x|^2/2 has value u(x, t) = |x|^2 tanh(T - t) / 2
        F = lqr_oracle(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), 1.0, 0.01)
        value = solve_hjb_backward(F, path, g, 0.01)
        x = g.nodes[:, 0]
        inner = np.abs(x) <= 1.0
        exact = 0.5 * x[inner] ** 2 * np.tanh(1.0)
        err = np.abs(value.values[0][inner] - exact).max()
        assert err <= 0.02

    def test_riccati_coarse_2d(self):
        F = lqr_oracle(dim=2)
        g = SpatialGrid((-2.0, -2.0), (2.0, 2.0), (40, 40))
        path = constant_path(DiscreteMeasure.dirac([0.0, 0.0]), 0.5, 0.05)
        value = solve_hjb_backward(F, path, g, 0.05, control_radius=2.5, control_mesh=0.25)
        r2 = (g.nodes**2).sum(axis=1)
        inner = r2 <= 1.0
        exact = 0.5 * r2[inner] * np.tanh(0.5)
        err = np.abs(value.values[0].ravel()[inner] - exact).max()
        assert err <= 0.05

    def test_parked_origin_accumulates_exactly(self):
        # zero is a lattice control and the origin a node, so the scheme
        # reproduces u(0, t) = c* (T - t) with no drift at all
        for F, c_star in ((quadratic_congestion(dim=1), 0.0), (lqr_oracle(dim=1, c_star=1.0), 1.0)):
            g = SpatialGrid((-2.0,), (2.0,), (100,))
            path = constant_path(DiscreteMeasure.dirac([0.0]), 2.0, 0.05)
            value = solve_hjb_backward(F, path, g, 0.05)
            node0 = g.nearest_node_index([[0.0]])[0]
            for k, t in enumerate(value.times):
                assert value.values[k].ravel()[node0] == pytest.approx(
                    c_star * (2.0 - t), abs=1e-12
                )

    def test_alignment_errors(self):
        F = lqr_oracle(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (40,))
        bad_T = MeasurePath.constant(DiscreteMeasure.dirac([0.0]), [0.0, 0.3])
        with pytest.raises(ValueError, match="does not divide"):
            solve_hjb_backward(F, bad_T, g, 0.2)
        skewed = MeasurePath.constant(DiscreteMeasure.dirac([0.0]), [0.0, 0.05, 0.2])
        with pytest.raises(ValueError, match="align"):
            solve_hjb_backward(F, skewed, g, 0.1)

    def test_value_field_accessors(self):
        F = flat_cost(1.0)
        g = SpatialGrid((-2.0,), (2.0,), (40,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), 1.0, 0.25)
        value = solve_hjb_backward(F, path, g, 0.25)
        assert value.n_steps == 4
        assert value.dt == pytest.approx(0.25)
        assert value.horizon == pytest.approx(1.0)
        assert value.interpolate([0.37], 0) == pytest.approx(1.0, abs=1e-12)


class TestAPriori:
    def test_structural_bounds_hold(self):
        F = lqr_oracle(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), 1.0, 0.02)
        value = solve_hjb_backward(F, path, g, 0.02)
        report = a_priori_report(value, F)
        assert report["grad_max"] <= report["grad_bound"]
        # discrete sandwich: inf F <= u / (T - t) <= sup F along the path
        assert report["low_gap"] >= -1e-10
        assert report["high_gap"] <= 1e-10
        assert report["eps"] == pytest.approx(10.0 * (g.max_spacing + 0.02))
        assert report["dt_rate_max"] <= report["f_max"] + 1e-10


class TestTransport:
    def make_riccati_value(self, dt=0.02, T=1.0):
        F = lqr_oracle(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (200,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), T, dt)
        return F, g, solve_hjb_backward(F, path, g, dt)

    def test_contraction_toward_origin(self):
        F, g, value = self.make_riccati_value()
        m0 = DiscreteMeasure.uniform([[-1.0], [-0.5], [0.8]])
        path, stats = transport_forward(value, m0)
        start = np.abs(path.positions[0, :, 0])
        end = np.abs(path.positions[-1, :, 0])
        assert np.all(end <= 0.8 * start + g.max_spacing)

    def test_trajectory_stats(self):
        F, g, value = self.make_riccati_value()
        m0 = DiscreteMeasure.uniform([[-1.0], [0.5]])
        path, stats = transport_forward(value, m0, core_box=(F.core_lower, F.core_upper))
        assert stats.chi_hat == pytest.approx(1.0)  # contraction never overshoots
        assert stats.chi_prime_hat <= default_control_radius(F) + 1e-12
        assert stats.sup_position.shape == (2,)
        assert stats.r1_hat == pytest.approx(0.5)  # start at -1, core box radius 0.5

    def test_weights_and_times_preserved(self):
        F, g, value = self.make_riccati_value(dt=0.1, T=1.0)
        m0 = DiscreteMeasure.from_weighted([[-0.7], [0.3]], [0.25, 0.75])
        path, _ = transport_forward(value, m0)
        np.testing.assert_array_equal(path.weights, m0.weights)
        np.testing.assert_allclose(path.times, value.times)
        assert path.positions.shape == (11, 2, 1)

    def test_boundary_margin_guard_at_start(self):
        F, g, value = self.make_riccati_value(dt=0.1, T=0.2)
        with pytest.raises(DomainEscapeError) as err:
            transport_forward(value, DiscreteMeasure.dirac([1.99]))
        assert err.value.time_index == 0
        assert "boundary" in str(err.value)

    def test_boundary_margin_guard_in_flight(self):
        # a ridge cost drives particles outward until the margin trips
        F = ridge_cost()
        g = SpatialGrid((-1.0,), (1.0,), (40,))
        path = constant_path(DiscreteMeasure.dirac([0.0]), 1.0, 0.1)
        value = solve_hjb_backward(F, path, g, 0.1, control_radius=5.0, control_mesh=0.5)
        with pytest.raises(DomainEscapeError) as err:
            transport_forward(value, DiscreteMeasure.dirac([0.5]))
        assert err.value.time_index >= 1


class TestCheckpoints:
    def test_small_step_counts_keep_everything(self):
        np.testing.assert_array_equal(checkpoint_indices(8), np.arange(9))
        np.testing.assert_array_equal(checkpoint_indices(4), np.arange(5))
        np.testing.assert_array_equal(checkpoint_indices(1), [0, 1])

    def test_large_step_counts_subsample(self):
        idx = checkpoint_indices(400)
        assert len(idx) == 9
        assert idx[0] == 0 and idx[-1] == 400
        assert np.all(np.diff(idx) > 0)


class TestSolveMfg:
    def test_measure_independent_cost_converges_in_two_passes(self):
        F = two_wells(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        m0 = DiscreteMeasure.uniform([[-0.4], [0.2], [0.6]])
        eq = solve_mfg(F, m0, 1.0, g, 0.05, tol=1e-9)
        assert eq.converged
        assert eq.iterations == 2
        assert eq.br_residual == 0.0
        assert eq.fixed_point_residual <= 1e-12
        assert len(eq.trace) == 2

    def test_flow_path_is_pure_transport_of_value(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        m0 = DiscreteMeasure.uniform([[-0.5], [0.3]])
        eq = solve_mfg(F, m0, 1.0, g, 0.05)
        regenerated, _ = transport_forward(eq.value, m0, core_box=(F.core_lower, F.core_upper))
        np.testing.assert_array_equal(regenerated.positions, eq.flow_path.positions)

    def test_quadratic_congestion_relaxes_to_origin(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        m0 = DiscreteMeasure.uniform([[-0.8], [0.6]])
        eq = solve_mfg(F, m0, 4.0, g, 0.05, tol=5e-3)
        assert eq.converged
        mid = eq.flow_path.measure_at(eq.flow_path.n_times // 2)
        assert wasserstein1(mid, DiscreteMeasure.dirac([0.0])) <= 0.1

    def test_divisibility_guard(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (40,))
        with pytest.raises(ValueError, match="does not divide"):
            solve_mfg(F, DiscreteMeasure.dirac([0.0]), 1.0, g, 0.3)

    def test_trace_and_metadata(self):
        F = quadratic_congestion(dim=1)
        g = SpatialGrid((-2.0,), (2.0,), (100,))
        eq = solve_mfg(F, DiscreteMeasure.dirac([0.5]), 1.0, g, 0.1, seed=3)
        ks, brs, steps = zip(*eq.trace)
        assert list(ks) == list(range(len(ks)))
        assert eq.metadata["seed"] == 3
        assert eq.metadata["dt"] == 0.1
        assert eq.checkpoints[-1] == eq.value.n_steps


class TestOccupational:
    def setup_method(self):
        self.F = quadratic_congestion(dim=1)
        self.g = SpatialGrid((-2.0,), (2.0,), (100,))
        self.path = constant_path(DiscreteMeasure.dirac([0.0]), 1.0, 0.1)

    def test_parked_at_minimum_never_occupied(self):
        traj = np.zeros((11, 1))
        assert occupational_measure(traj, self.F, self.path, 0.1, self.g) == 0.0

    def test_parked_far_always_occupied(self):
        traj = np.ones((11, 1))
        assert occupational_measure(traj, self.F, self.path, 0.1, self.g) == 1.0

    def test_half_time_fraction(self):
        traj = np.concatenate([np.ones((5, 1)), np.zeros((6, 1))])
        rho = occupational_measure(traj, self.F, self.path, 0.1, self.g)
        assert rho == pytest.approx(0.5)

    def test_quantifies_over_all_sampled_measures(self):
        # occupied means delta-suboptimal against EVERY sampled slice
        def ev(pts, m):
            center = float(m.mean()[0])
            return np.abs(pts[:, 0] - center)

        F = CostFunctional(
            name="mean_chase", dim=1, evaluator=ev, m_bound=4.0,
            core_lower=(-2.0,), core_upper=(2.0,), gap=0.0, test_only=True,
        )
        times = np.array([0.0, 0.5, 1.0])
        pos = np.array([[[0.0]], [[0.5]], [[1.0]]])  # mean drifts 0 -> 1
        path = MeasurePath(times, pos, np.array([1.0]))
        parked_at_one = np.ones((3, 1))
        parked_at_minus_one = -np.ones((3, 1))
        rho_plus = occupational_measure(parked_at_one, F, path, 0.5, self.g, measure_indices=[0, 2])
        rho_minus = occupational_measure(parked_at_minus_one, F, path, 0.5, self.g, measure_indices=[0, 2])
        assert rho_plus == 0.0  # close to the final mean, so not uniformly far
        assert rho_minus == 1.0

    def test_fractions_vector_shape_and_range(self):
        rng = np.random.default_rng(0)
        positions = rng.uniform(-1, 1, size=(11, 7, 1))
        rho = occupational_fractions(positions, self.F, self.path, 0.05, self.g)
        assert rho.shape == (7,)
        assert np.all((0.0 <= rho) & (rho <= 1.0))
