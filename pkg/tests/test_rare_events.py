"""
Tests for importance sampling, decay curves and the LLN experiment
"""
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from config import Config
from core.functionals import c_component_at, constant_one
from core.network import make_activation
from core.rare_events import (
    weighted_estimate, sample_functional_values, importance_sample, naive_mc, decay_curve, lln_experiment,
)
from core.rates import estimate_I, estimate_J
from core.tilt import base_kernel, constant_kernel, discretize_kernel
from core.validation import desk_instance
from models.domain import (
    DataAtomSet, InitialWeightAtomSet, SimConfig, EventSpec, StepKernelSequence, OptimizerConfig,
)

TANH = make_activation("tanh")


@pytest.fixture
def pi():
    return DataAtomSet(z=np.array([[1.0], [-1.0]]), y=np.array([1.0, -1.0]), probs=np.array([0.5, 0.5]))


@pytest.fixture
def nu():
    return InitialWeightAtomSet(atoms=np.array([[0.3, 0.5], [-0.2, 0.4]]), probs=np.array([0.6, 0.4]))


def event_at(threshold, T=1.0, direction="geq"):
    return EventSpec(functional=c_component_at(T), threshold=threshold, direction=direction)


class TestWeightedEstimate:

    def test_unweighted_hits(self):
        est = weighted_estimate(np.array([1.0, 0.0, 1.0, 1.0]), np.zeros(4))
        assert est.p_hat == 0.75
        assert est.ess == pytest.approx(4.0)
        assert est.hits == 3 and est.replicas == 4
        assert not est.flagged
        expected = 1.959963984540054 * np.std([1.0, 0.0, 1.0, 1.0], ddof=1) / 2.0
        assert est.ci_halfwidth == pytest.approx(expected, rel=1e-9)

    def test_no_hits_flagged(self):
        est = weighted_estimate(np.zeros(5), np.zeros(5))
        assert est.p_hat == 0.0
        assert est.flagged

    def test_weights_applied(self):
        est = weighted_estimate(np.array([1.0, 1.0]), np.log(np.array([0.5, 1.5])))
        assert est.p_hat == pytest.approx(1.0)
        assert est.ess == pytest.approx(4.0 / 2.5)


class TestImportanceSampling:

    def test_identity_tilt_matches_naive_exactly(self, pi, nu):
        cfg = SimConfig(n=16, T=1.0, d_in=1, seed=3)
        event = event_at(0.0)
        seq = discretize_kernel(base_kernel(pi, 1.0), 16)
        tilted = importance_sample(event, seq, cfg, nu, pi, TANH, 40, 3)
        naive = naive_mc(event, cfg, nu, pi, TANH, 40, 3)
        assert tilted.p_hat == naive.p_hat
        assert tilted.ci_halfwidth == naive.ci_halfwidth

    def test_identity_initial_reweighting_is_neutral(self, pi, nu):
        cfg = SimConfig(n=16, T=1.0, d_in=1, seed=3)
        plain = sample_functional_values(event_at(0.0).functional, cfg, nu, pi, TANH, 10, 3)
        annealed = sample_functional_values(event_at(0.0).functional, cfg, nu, pi, TANH, 10, 3,
                                            init_probs=np.array(nu.probs))
        np.testing.assert_array_equal(plain[0], annealed[0])
        np.testing.assert_array_equal(annealed[1], np.zeros(10))

    def test_tilted_estimate_is_unbiased_for_sure_event(self, pi, nu):
        cfg = SimConfig(n=8, T=1.0, d_in=1, seed=1)
        seq = discretize_kernel(constant_kernel(np.array([0.6, 0.4]), 1.0), 8)
        values, log_w = sample_functional_values(c_component_at(1.0), cfg, nu, pi, TANH, 2000, 1, seq=seq)
        # E_tilt[L] = 1
        assert np.exp(log_w).mean() == pytest.approx(1.0, abs=0.1)

    def test_worker_count_and_chunking_do_not_change_results(self, pi, nu, monkeypatch):
        cfg = SimConfig(n=12, T=1.0, d_in=1, seed=8)
        f = c_component_at(1.0)
        serial = sample_functional_values(f, cfg, nu, pi, TANH, 10, 8)
        monkeypatch.setattr(Config, "REPLICA_CHUNK", 3)
        with ThreadPoolExecutor(max_workers=3) as pool:
            parallel = sample_functional_values(f, cfg, nu, pi, TANH, 10, 8, executor=pool)
        np.testing.assert_array_equal(serial[0], parallel[0])
        np.testing.assert_array_equal(serial[1], parallel[1])

    def test_kernel_without_mass_on_sampled_atom(self, pi, nu):
        cfg = SimConfig(n=4, T=1.0, d_in=1, seed=0)
        seq = StepKernelSequence(n=4, horizon=1.0, kernels=np.tile([1.0, 0.0], (4, 1)))
        values, log_w = sample_functional_values(c_component_at(1.0), cfg, nu, pi, TANH, 5, 0, seq=seq)
        assert np.all(np.isfinite(log_w))
        np.testing.assert_allclose(log_w, 4 * np.log(0.5))

    def test_mismatched_kernels_rejected(self, pi, nu):
        cfg = SimConfig(n=8, T=1.0, d_in=1)
        seq = discretize_kernel(base_kernel(pi, 1.0), 4)
        with pytest.raises(ValueError):
            importance_sample(event_at(0.0), seq, cfg, nu, pi, TANH, 4, 0)

    def test_replicas_must_be_positive(self, pi, nu):
        cfg = SimConfig(n=8, T=1.0, d_in=1)
        with pytest.raises(ValueError):
            naive_mc(event_at(0.0), cfg, nu, pi, TANH, 0, 0)


class TestDecayCurve:

    def test_columns_and_sure_event(self, pi, nu):
        frame = decay_curve(event_at(-2.0), [4, 8], "naive", 6, 0, 1.0, nu, pi, TANH)
        assert list(frame.columns) == ["n", "n_prime", "p_hat", "ci_halfwidth", "minus_log_p_over_nprime",
                                       "rate_ci_low", "rate_ci_high", "ess", "flagged"]
        assert list(frame["n_prime"]) == [4, 8]
        assert (frame["p_hat"] == 1.0).all()
        assert (frame["minus_log_p_over_nprime"] == 0.0).all()
        assert not frame["flagged"].any()

    def test_impossible_event_is_flagged(self, pi, nu):
        frame = decay_curve(event_at(2.0), [4], "naive", 6, 0, 1.0, nu, pi, TANH)
        assert bool(frame["flagged"].iloc[0])
        assert math.isnan(frame["minus_log_p_over_nprime"].iloc[0])

    def test_tilted_needs_kernel(self, pi, nu):
        with pytest.raises(ValueError):
            decay_curve(event_at(0.0), [4], "tilted", 6, 0, 1.0, nu, pi, TANH)

    def test_n_list_must_increase(self, pi, nu):
        with pytest.raises(ValueError):
            decay_curve(event_at(0.0), [8, 4], "naive", 6, 0, 1.0, nu, pi, TANH)

    def test_tilted_with_identity_kernel_matches_naive(self, pi, nu):
        naive = decay_curve(event_at(0.0), [4, 8], "naive", 10, 2, 1.0, nu, pi, TANH)
        tilted = decay_curve(event_at(0.0), [4, 8], "tilted", 10, 2, 1.0, nu, pi, TANH, tilt=base_kernel(pi, 1.0))
        np.testing.assert_array_equal(naive["p_hat"].to_numpy(), tilted["p_hat"].to_numpy())


class TestLlnExperiment:

    def test_table(self, pi, nu):
        frame = lln_experiment(c_component_at(0.5), [8, 32], 6, nu, pi, TANH, 1 / 32, 0, 0.5)
        assert list(frame.columns) == ["n", "median_abs_error", "iqr"]
        assert list(frame["n"]) == [8, 32]
        assert (frame["median_abs_error"] >= 0).all()
        assert (frame["iqr"] >= 0).all()

    def test_constant_functional_has_no_error(self, pi, nu):
        frame = lln_experiment(constant_one(), [8, 32], 6, nu, pi, TANH, 1 / 32, 0, 0.5)
        assert (frame["median_abs_error"] == 0.0).all()
        assert (frame["iqr"] == 0.0).all()

    def test_desk_error_shrinks_with_width(self):
        desk_pi, desk_nu = desk_instance(0)
        frame = lln_experiment(c_component_at(0.5), [64, 256, 1024], 32, desk_nu, desk_pi, TANH,
                               Config.DEFAULT_DT, 0, 0.5)
        medians = frame["median_abs_error"].to_numpy()
        assert np.all(np.diff(medians) < 0)
        assert medians[-1] < 0.05


DESK_T = 0.5


@pytest.fixture(scope="module")
def desk_tail():
    """Desk instance with an upper-tail event hit by about 2% of naive runs at n = 64"""
    desk_pi, desk_nu = desk_instance(0)
    f = c_component_at(DESK_T)
    cfg = SimConfig(n=64, T=DESK_T, d_in=desk_pi.dim_in, seed=101)
    values, _ = sample_functional_values(f, cfg, desk_nu, desk_pi, TANH, 4000, 101)
    event = EventSpec(functional=f, threshold=float(np.quantile(values, 0.98)))
    opt = OptimizerConfig(dt=Config.DEFAULT_DT)
    rate_i = estimate_I(event, desk_nu, desk_pi, DESK_T, opt, TANH)
    rate_j = estimate_J(event, desk_nu, desk_pi, DESK_T, opt, TANH, warm_start=rate_i)
    assert rate_j.status == "feasible"
    return desk_pi, desk_nu, event, rate_j


class TestDeskTail:

    def test_tilted_proposal_beats_naive(self, desk_tail):
        desk_pi, desk_nu, event, rate_j = desk_tail
        cfg = SimConfig(n=64, T=DESK_T, d_in=desk_pi.dim_in, seed=7)
        naive = naive_mc(event, cfg, desk_nu, desk_pi, TANH, 10_000, 7)
        assert 0.01 <= naive.p_hat <= 0.05

        tilted = importance_sample(event, discretize_kernel(rate_j.tilt, 64), cfg, desk_nu, desk_pi, TANH,
                                   10_000, 7, init_probs=np.asarray(rate_j.nu0.probs))
        assert not tilted.flagged
        assert 2.0 * tilted.std <= naive.std
        assert abs(tilted.p_hat - naive.p_hat) <= tilted.ci_halfwidth + naive.ci_halfwidth

    def test_tilted_decay_tracks_the_rate(self, desk_tail):
        desk_pi, desk_nu, event, rate_j = desk_tail
        frame = decay_curve(event, [32, 64, 128], "tilted", 4000, 11, DESK_T, desk_nu, desk_pi, TANH,
                            tilt=rate_j.tilt, init_probs=np.asarray(rate_j.nu0.probs))
        assert not frame["flagged"].any()
        rates = frame["minus_log_p_over_nprime"].to_numpy()
        assert np.all(rates > 0)
        assert np.all(rates >= 0.2 * rate_j.value)
        assert np.all(rates <= 5.0 * rate_j.value)
