import numpy as np
import pytest

from conftest import load_finite
from mfctrl import dpp
from mfctrl.cli import _random_lq
from mfctrl.lq import (
    AffinePolicy,
    explicit_control_coefficients,
    mean_variance_model,
    optimal_policy,
    solve_riccati,
)
from mfctrl.moments import exact_cost
from mfctrl.particles import normals, simulate, uniforms
from test_lq import scalar_lq


class TestStreams:
    def test_uniforms_deterministic_and_in_unit_interval(self):
        u1 = uniforms(42, 3, 1000)
        u2 = uniforms(42, 3, 1000)
        assert np.array_equal(u1, u2)
        assert u1.min() > 0.0 and u1.max() < 1.0

    def test_streams_are_distinct(self):
        assert not np.array_equal(uniforms(42, 0, 100), uniforms(42, 1, 100))
        assert not np.array_equal(uniforms(42, 0, 100), uniforms(43, 0, 100))

    def test_prefix_stability(self):
        # a longer draw starts with the shorter draw: particle i keeps its sample
        long = normals(7, 5, 2000)
        short = normals(7, 5, 500)
        assert np.array_equal(long[:500], short)

    def test_normals_are_standard(self):
        z = normals(0, 0, 200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01


class TestLQSimulation:
    def test_seed_determinism_bitwise(self):
        model = mean_variance_model(1.0, 0.5, 1.0, 1.0, 2, 1.0)
        policy = optimal_policy(model, solve_riccati(model))
        a = simulate(model, policy, 5000, seed=9, keep_clouds=True)
        b = simulate(model, policy, 5000, seed=9, keep_clouds=True)
        assert a.estimate == b.estimate
        assert a.std_error == b.std_error
        for ca, cb in zip(a.clouds, b.clouds):
            assert np.array_equal(ca.positions, cb.positions)

    def test_zero_noise_dirac_start_is_deterministic(self):
        model = scalar_lq(n=2, B=1.0, C=1.0, R=1.0, QT=1.0, x0=0.8)
        policy = AffinePolicy(np.full((2, 1, 1), -0.3), np.zeros((2, 1, 1)),
                              np.full((2, 1), 0.1))
        sim = simulate(model, policy, 500, seed=4)
        assert sim.std_error == pytest.approx(0.0, abs=1e-14)
        assert sim.estimate == pytest.approx(exact_cost(model, policy), abs=1e-12)

    def test_estimate_within_four_standard_errors(self):
        model = mean_variance_model(1.0, 0.5, 1.0, 1.0, 2, 1.0)
        policy = optimal_policy(model, solve_riccati(model))
        exact = exact_cost(model, policy)
        sim = simulate(model, policy, 100_000, seed=31)
        assert abs(sim.estimate - exact) <= 4 * sim.std_error

    def test_perturbed_policy_also_agrees(self):
        rng = np.random.default_rng(14)
        model = _random_lq(rng, 2, 2, 3)
        base = optimal_policy(model, solve_riccati(model))
        direction = AffinePolicy(rng.normal(size=base.gain_state.shape),
                                 rng.normal(size=base.gain_mean.shape),
                                 rng.normal(size=base.offset.shape))
        policy = base.perturbed(direction, 0.1)
        sim = simulate(model, policy, 50_000, seed=5)
        assert abs(sim.estimate - exact_cost(model, policy)) <= 4 * sim.std_error

    def test_oracle_law_closure_matches_exact_means(self):
        model = mean_variance_model(1.0, 0.5, 1.0, 1.0, 3, 1.0)
        policy = optimal_policy(model, solve_riccati(model))
        sim = simulate(model, policy, 30_000, seed=6, closure="oracle-law")
        assert abs(sim.estimate - exact_cost(model, policy)) <= 4 * sim.std_error

    def test_cloud_mean_tracks_optimal_mean_flow(self):
        model = mean_variance_model(1.0, 0.5, 1.0, 1.0, 3, 1.0)
        sol = solve_riccati(model)
        policy = optimal_policy(model, sol)
        controls = explicit_control_coefficients(model, sol)
        sim = simulate(model, policy, 50_000, seed=12)
        for k in range(model.horizon + 1):
            tol = 4 * np.sqrt(sim.stage_variances[k]) / np.sqrt(sim.n_particles)
            assert np.all(np.abs(sim.stage_means[k] - controls.state_means[k])
                          <= tol + 1e-12)

    def test_gaussian_initial_law_sampling(self):
        model = _random_lq(np.random.default_rng(23), 2, 1, 2)
        policy = AffinePolicy.zero(2, 2, 1)
        sim = simulate(model, policy, 200_000, seed=8, keep_clouds=True)
        cloud = sim.clouds[0].positions
        assert np.allclose(cloud.mean(axis=0), model.initial_mean, atol=0.02)
        assert np.allclose(np.cov(cloud.T), model.initial_cov, atol=0.02)

    def test_rejects_bad_inputs(self):
        model = mean_variance_model(1.0, 0.5, 1.0, 1.0, 2, 1.0)
        policy = optimal_policy(model, solve_riccati(model))
        with pytest.raises(ValueError, match="particle"):
            simulate(model, policy, 0, seed=1)
        with pytest.raises(ValueError, match="seed"):
            simulate(model, policy, 10, seed=-3)
        with pytest.raises(ValueError, match="closure"):
            simulate(model, policy, 10, seed=1, closure="magic")
        with pytest.raises(TypeError, match="AffinePolicy"):
            simulate(model, "not a policy", 10, seed=1)


class TestFiniteSimulation:
    def test_oracle_law_matches_rollforward_cost(self):
        model, mu0 = load_finite("finite_mean_reverting.json")
        policy = model.tabular_policy([1, 0, 1])
        cost, _ = dpp.rollforward(model, mu0, [policy] * model.horizon)
        sim = simulate(model, policy, 20_000, seed=3, closure="oracle-law",
                       initial_law=mu0)
        assert abs(sim.estimate - cost) <= 4 * sim.std_error

    def test_empirical_closure_close_to_mean_field_cost(self):
        model, mu0 = load_finite("finite_mean_reverting.json")
        policy = model.tabular_policy([0, 1, 1])
        cost, _ = dpp.rollforward(model, mu0, [policy] * model.horizon)
        sim = simulate(model, policy, 40_000, seed=13, initial_law=mu0)
        assert abs(sim.estimate - cost) <= 4 * sim.std_error

    def test_seed_determinism(self):
        model, mu0 = load_finite("finite_mean_clamp.json")
        policy = model.tabular_policy([0, 0])
        a = simulate(model, policy, 5000, seed=2, initial_law=mu0)
        b = simulate(model, policy, 5000, seed=2, initial_law=mu0)
        assert a.estimate == b.estimate
        assert np.array_equal(a.stage_means, b.stage_means)

    def test_requires_initial_law(self):
        model, _ = load_finite("finite_mean_clamp.json")
        with pytest.raises(ValueError, match="initial law"):
            simulate(model, model.tabular_policy([0, 0]), 100, seed=1)

    def test_requires_tabular_policy(self):
        model, mu0 = load_finite("finite_mean_clamp.json")
        with pytest.raises(TypeError, match="TabularMap"):
            simulate(model, AffinePolicy.zero(2, 1, 1), 100, seed=1, initial_law=mu0)


def test_chaos_convergence_no_error_growth():
    # the scaled error sqrt(N) * |estimate - exact| stays bounded across N
    model = mean_variance_model(1.0, 0.5, 1.0, 1.0, 2, 1.0)
    policy = optimal_policy(model, solve_riccati(model))
    exact = exact_cost(model, policy)
    sizes = [100, 1000, 10_000, 100_000]
    rms = []
    for n in sizes:
        errs = [simulate(model, policy, n, seed=s).estimate - exact
                for s in range(12)]
        rms.append(float(np.sqrt(np.mean(np.square(errs)))))
    scaled = np.sqrt(sizes) * np.array(rms)
    assert scaled.max() / scaled.min() < 3.0
