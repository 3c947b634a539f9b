"""
Tests for the SGD engine, pushforward flow, growth bounds and functionals
"""
import numpy as np
import pytest

from config import Config
from core.functionals import (
    make_functional, c_component_at, constant_one, empirical_expectation, sgd_record_steps,
    UnknownFunctionalError,
)
from core.network import make_activation
from core.sgd import (
    sgd_step, simulate_run, simulate_batch, simulate_theta_n, pushforward_eta_n, draw_data_stream,
    draw_initial_measure, empirical_initial_entropy, growth_bound_report, batch_growth_reports,
    assert_growth_bound, dense_record_steps, inverse_cdf, InvariantViolation, c_bar,
)
from models.domain import (
    DataAtomSet, InitialWeightAtomSet, ParamMeasure, SimConfig, TrajectoryMeasure, DataStream,
)

TANH = make_activation("tanh")


@pytest.fixture
def pi():
    return DataAtomSet(z=np.array([[1.0], [-1.0], [0.5]]), y=np.array([1.0, -1.0, 0.3]),
                       probs=np.array([0.4, 0.4, 0.2]))


@pytest.fixture
def nu():
    return InitialWeightAtomSet(atoms=np.array([[0.5, 0.5], [-0.5, 0.2], [0.1, -0.3]]),
                                probs=np.array([0.5, 0.3, 0.2]))


class TestSgdStep:

    def test_hand_value(self):
        state = ParamMeasure(points=np.array([[1.0, 0.0, 0.0]]), weights=np.array([1.0]))
        out = sgd_step(state, (np.array([1.0, 1.0]), 2.0), 0.1, TANH)
        np.testing.assert_allclose(out.points, [[1.0, 0.2, 0.2]], atol=1e-15)
        np.testing.assert_array_equal(out.weights, [1.0])

    def test_fitted_sample_is_fixed_point(self):
        state = ParamMeasure(points=np.array([[0.0, 0.4, -0.1], [0.0, -0.2, 0.3]]), weights=np.array([0.5, 0.5]))
        out = sgd_step(state, (np.array([0.7, -0.3]), 0.0), 0.25, TANH)
        np.testing.assert_array_equal(out.points, state.points)

    def test_rejects_bad_eps(self):
        state = ParamMeasure(points=np.array([[1.0, 0.0]]), weights=np.array([1.0]))
        with pytest.raises(ValueError):
            sgd_step(state, (np.array([1.0]), 1.0), 0.0, TANH)


class TestSampling:

    def test_inverse_cdf_skips_null_atoms(self):
        rows = np.array([0.0, 1.0, 0.0])
        idx = inverse_cdf(rows, np.array([0.0, 0.5, 0.999999]))
        np.testing.assert_array_equal(idx, [1, 1, 1])

    def test_inverse_cdf_without_mass(self):
        with pytest.raises(ValueError):
            inverse_cdf(np.zeros((1, 2)), np.array([0.5]))

    def test_stream_length_and_support(self, pi):
        cfg = SimConfig(n=40, T=1.5, d_in=1, seed=3)
        stream = draw_data_stream(cfg, pi)
        assert len(stream) == 60
        assert set(np.unique(stream.indices)) <= {0, 1, 2}

    def test_step_kernel_streams(self, pi):
        cfg = SimConfig(n=4, T=1.0, d_in=1, seed=3)
        kernels = np.tile([0.0, 0.0, 1.0], (4, 1))
        stream = draw_data_stream(cfg, pi, kernels=kernels)
        assert stream.source == "step_kernels"
        np.testing.assert_array_equal(stream.indices, [2, 2, 2, 2])

    def test_initial_measure(self, nu):
        cfg = SimConfig(n=25, T=1.0, d_in=1, seed=9)
        measure, idx = draw_initial_measure(cfg, nu)
        np.testing.assert_array_equal(measure.points, nu.atoms[idx])
        assert empirical_initial_entropy(idx, nu) >= 0.0


class TestSimulation:

    def test_no_steps_gives_constant_trajectories(self, pi, nu):
        cfg = SimConfig(n=4, T=0.2, d_in=1, seed=1)
        run = simulate_run(cfg, pi, nu, TANH)
        assert cfg.n_prime == 0
        assert len(run.stream) == 0
        np.testing.assert_array_equal(run.trajectory.paths[:, 0, :], run.initial.points)

    def test_same_seed_is_bitwise_identical(self, pi, nu):
        cfg = SimConfig(n=32, T=1.0, d_in=1, seed=5)
        a = simulate_theta_n(cfg, pi, nu, TANH)
        b = simulate_theta_n(cfg, pi, nu, TANH)
        np.testing.assert_array_equal(a.paths, b.paths)
        np.testing.assert_array_equal(a.grid, b.grid)

    def test_different_seeds_differ(self, pi, nu):
        cfg = SimConfig(n=32, T=1.0, d_in=1)
        a = simulate_theta_n(cfg, pi, nu, TANH, seed=1)
        b = simulate_theta_n(cfg, pi, nu, TANH, seed=2)
        assert not np.array_equal(a.paths, b.paths)

    def test_replica_independent_of_batch_layout(self, pi, nu):
        cfg = SimConfig(n=16, T=1.0, d_in=1, seed=4)
        steps = [0, 8, 16]
        together = simulate_batch(cfg, pi, nu, TANH, 4, [0, 1, 2], steps)
        alone = simulate_batch(cfg, pi, nu, TANH, 4, [2], steps)
        np.testing.assert_array_equal(together.snapshots[2], alone.snapshots[0])
        np.testing.assert_array_equal(together.data_indices[2], alone.data_indices[0])

    def test_grid_and_weights(self, pi, nu):
        cfg = SimConfig(n=10, T=0.55, d_in=1, seed=0)
        traj = simulate_theta_n(cfg, pi, nu, TANH)
        assert cfg.n_prime == 5
        np.testing.assert_allclose(traj.grid, np.arange(6) / 10)
        np.testing.assert_allclose(traj.weights, np.full(10, 0.1))
        assert traj.horizon == 0.55

    def test_strided_storage_keeps_last_step(self, pi, nu, monkeypatch):
        monkeypatch.setattr(Config, "TRAJECTORY_MEMORY_BUDGET", 200)
        cfg = SimConfig(n=20, T=1.0, d_in=1, seed=0)
        steps = dense_record_steps(cfg, cfg.n)
        assert steps[0] == 0 and steps[-1] == cfg.n_prime
        assert len(steps) < cfg.n_prime + 1
        run = simulate_run(cfg, pi, nu, TANH)
        report = growth_bound_report(run.trajectory, run.stream, cfg, TANH, pi, nu, run.step_sum)
        assert report.holds


class TestPushforward:

    def test_matches_particle_system_exactly(self, pi, nu):
        cfg = SimConfig(n=24, T=1.0, d_in=1, seed=12)
        run = simulate_run(cfg, pi, nu, TANH)
        eta = pushforward_eta_n(run.initial, run.stream, cfg, TANH, pi)
        np.testing.assert_array_equal(eta.paths, run.trajectory.paths)
        np.testing.assert_array_equal(eta.weights, run.trajectory.weights)

    def test_empty_stream_gives_constant_paths(self, pi, nu):
        cfg = SimConfig(n=4, T=0.1, d_in=1)
        nu0 = ParamMeasure(points=nu.atoms, weights=nu.probs)
        eta = pushforward_eta_n(nu0, DataStream(indices=np.zeros(0)), cfg, TANH, pi)
        np.testing.assert_array_equal(eta.paths[:, 0, :], nu.atoms)
        np.testing.assert_array_equal(eta.weights, nu.probs)

    def test_stream_length_checked(self, pi, nu):
        cfg = SimConfig(n=4, T=1.0, d_in=1)
        nu0 = ParamMeasure(points=nu.atoms, weights=nu.probs)
        with pytest.raises(ValueError):
            pushforward_eta_n(nu0, DataStream(indices=np.zeros(3)), cfg, TANH, pi)


class TestGrowthBound:

    def test_bound_holds_with_slack(self):
        pi = DataAtomSet(z=np.array([[1.0], [-1.0]]), y=np.array([1.0, -1.0]), probs=np.array([0.5, 0.5]))
        nu = InitialWeightAtomSet(atoms=np.array([[0.5, 0.5], [-0.5, 0.2]]), probs=np.array([0.5, 0.5]))
        cfg = SimConfig(n=50, T=1.0, d_in=1, seed=0)
        run = simulate_run(cfg, pi, nu, TANH)
        report = growth_bound_report(run.trajectory, run.stream, cfg, TANH, pi, nu, run.step_sum)
        assert report.holds
        assert report.slack > 10
        assert report.observed_step_sum <= report.chain_bound
        assert_growth_bound(report)

    def test_c_bar_value(self):
        assert c_bar(1.0, 0.0) == 2.0
        assert c_bar(1.0, 1.0) == pytest.approx(4.0 * np.e)

    def test_violation_raises(self, pi, nu):
        cfg = SimConfig(n=8, T=1.0, d_in=1, seed=0)
        run = simulate_run(cfg, pi, nu, TANH)
        report = growth_bound_report(run.trajectory, run.stream, cfg, TANH, pi, nu, run.step_sum)
        report.bound = 0.0
        with pytest.raises(InvariantViolation):
            assert_growth_bound(report)

    def test_batch_reports(self, pi, nu):
        cfg = SimConfig(n=16, T=1.0, d_in=1, seed=2)
        batch = simulate_batch(cfg, pi, nu, TANH, 2, range(4), [cfg.n_prime])
        reports = batch_growth_reports(batch, cfg, TANH, pi, nu)
        assert len(reports) == 4
        assert all(r.holds for r in reports)


class TestFunctionals:

    def constant_path(self, theta):
        return TrajectoryMeasure(grid=np.array([0.0, 1.0]), paths=np.array([[theta, theta]], dtype=float),
                                 weights=np.array([1.0]))

    def test_constant_one(self):
        assert empirical_expectation(self.constant_path([3.0, -2.0]), constant_one()) == 1.0

    def test_tanh_of_c_component(self):
        traj = self.constant_path([1.0, 0.0])
        assert empirical_expectation(traj, c_component_at(1.0)) == pytest.approx(0.761594, abs=1e-6)

    def test_linear_in_measure(self):
        f = make_functional("tanh_marginal", a=0.7, v=(1.0, -0.5), b=0.1, t=0.5)
        rng = np.random.default_rng(0)
        grid = np.linspace(0.0, 1.0, 5)
        p1, p2 = rng.normal(size=(3, 5, 2)), rng.normal(size=(2, 5, 2))
        w1, w2 = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.4])
        m1 = TrajectoryMeasure(grid=grid, paths=p1, weights=w1)
        m2 = TrajectoryMeasure(grid=grid, paths=p2, weights=w2)
        lam = 0.3
        mix = TrajectoryMeasure(grid=grid, paths=np.concatenate([p1, p2]),
                                weights=np.concatenate([lam * w1, (1 - lam) * w2]))
        expected = lam * empirical_expectation(m1, f) + (1 - lam) * empirical_expectation(m2, f)
        assert empirical_expectation(mix, f) == pytest.approx(expected, abs=1e-14)

    def test_window_average(self):
        f = make_functional("tanh_window", window=(0.0, 1.0))
        traj = TrajectoryMeasure(grid=np.array([0.0, 0.5, 1.0]), paths=np.array([[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]]),
                                 weights=np.array([1.0]))
        expected = (np.tanh(0.0) + np.tanh(1.0) + np.tanh(2.0)) / 3
        assert empirical_expectation(traj, f) == pytest.approx(expected, abs=1e-15)

    def test_cadlag_lookup_between_grid_points(self):
        traj = TrajectoryMeasure(grid=np.array([0.0, 0.5, 1.0]), paths=np.array([[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]]),
                                 weights=np.array([1.0]))
        assert empirical_expectation(traj, c_component_at(0.75)) == pytest.approx(np.tanh(1.0), abs=1e-15)

    def test_unknown_kind(self):
        with pytest.raises(UnknownFunctionalError):
            make_functional("quadratic")

    def test_record_steps(self):
        assert sgd_record_steps(c_component_at(1.0), 10, 10) == [10]
        assert sgd_record_steps(constant_one(), 10, 7) == [7]
        assert sgd_record_steps(make_functional("tanh_window", window=(0.2, 0.4)), 10, 10) == [2, 3, 4]
